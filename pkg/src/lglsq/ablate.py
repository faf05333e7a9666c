"""Seed-matched comparison of estimator and scale-learning variants."""

import csv
import dataclasses
import os

import numpy as np

from .errors import ConfigError
from .train import train

ABLATION_FIELDS = ("estimator", "scale_learning")
# fields that may differ between variants besides the ablated ones
FREE_FIELDS = ABLATION_FIELDS + ("seed", "out_dir")
TABLE_COLUMNS = ["variant", "estimator", "scale_learning", "seeds", "mean_acc", "min_acc",
                 "max_acc", "range", "per_seed"]


def variant_name(cfg):
    return f"{cfg.estimator}+{cfg.scale_learning}"


def check_comparable(configs):
    base = dataclasses.asdict(configs[0])
    for cfg in configs[1:]:
        other = dataclasses.asdict(cfg)
        diff = sorted(k for k in base if k not in FREE_FIELDS and base[k] != other[k])
        if diff:
            raise ConfigError(f"ablation variants differ outside {ABLATION_FIELDS}: {diff}")


def ablate(configs, seeds=(0, 1, 2), train_ds=None, test_ds=None, out_dir=None):
    """Train every config under every seed; one summary row per config."""
    configs = list(configs)
    if not configs:
        raise ConfigError("ablate needs at least one config")
    check_comparable(configs)
    rows = []
    for cfg in configs:
        accs = []
        for seed in seeds:
            run_dir = os.path.join(out_dir, f"{variant_name(cfg)}_s{seed}") if out_dir else cfg.out_dir
            run = dataclasses.replace(cfg, seed=seed, out_dir=run_dir)
            res = train(run, train_ds, test_ds, save=out_dir is not None)
            accs.append(res["rows"][-1]["test_acc"])
        accs = np.array(accs)
        rows.append({
            "variant": variant_name(cfg),
            "estimator": cfg.estimator,
            "scale_learning": cfg.scale_learning,
            "seeds": " ".join(str(s) for s in seeds),
            "mean_acc": float(accs.mean()),
            "min_acc": float(accs.min()),
            "max_acc": float(accs.max()),
            "range": float(accs.max() - accs.min()),
            "per_seed": " ".join(f"{a:.4f}" for a in accs),
        })
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_table(rows, os.path.join(out_dir, "ablation.csv"))
    return rows


def write_table(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=TABLE_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    return path


def format_table(rows):
    lines = [f"{'variant':<22}{'mean':>8}{'min':>8}{'max':>8}"]
    for r in rows:
        lines.append(f"{r['variant']:<22}{r['mean_acc']:>8.4f}{r['min_acc']:>8.4f}{r['max_acc']:>8.4f}")
    return "\n".join(lines)
