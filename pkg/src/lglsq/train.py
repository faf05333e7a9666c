"""Training, evaluation and checkpointing for quantization-aware runs.

A run is fully described by a :class:`RunConfig`; with the same seed on
one thread it is bit-for-bit repeatable.

Metrics CSV columns, in order::

    epoch, train_loss, train_acc, test_acc, mean_lambda, lr,
    alpha_mean:<quantizer> ... , z_mean:<quantizer> ...

Per-quantizer columns follow the model's quantizer order.
"""

import configparser
import csv
import dataclasses
import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import INPUT_SHAPE_BY_DATASET, iterate_batches, load_dataset
from .errors import ConfigError, DomainError
from .estimators import EstimatorConfig, EstimatorKind, LambdaSchedule
from .models import MODEL_NAMES, QuantConfig, build_model
from .optim import SGD, lr_schedule
from .quantizer import FLOAT_BITS
from .ssg import SCALE_LEARNING_KINDS, default_iter_target, scale_step

log = logging.getLogger(__name__)

BASE_COLUMNS = ["epoch", "train_loss", "train_acc", "test_acc", "mean_lambda", "lr"]
CHECKPOINT_NAME = "checkpoint.npz"
METRICS_NAME = "metrics.csv"


@dataclass
class RunConfig:
    model: str = "mlp256"
    dataset: str = "mnist"
    data_root: str = None
    train_subset: int = None
    test_subset: int = None
    bits_w: int = 4
    bits_a: int = 4
    estimator: str = "asr_mde"
    lambda_initial: float = 5.0
    lambda_growth: float = 1.0
    lambda_cap: float = 50.0
    scale_learning: str = "ssg"
    quantize_first_last: bool = False
    epochs: int = 20
    batch_size: int = 128
    lr: float = 2e-2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    iter_target: int = 0  # 0: one fifth of the iterations per epoch
    augment: bool = None  # None: on for cifar10
    out_dir: str = "runs/default"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.dataset not in INPUT_SHAPE_BY_DATASET:
            raise ConfigError(f"unknown dataset {self.dataset!r}; choose from {sorted(INPUT_SHAPE_BY_DATASET)}")
        if self.model not in MODEL_NAMES:
            raise ConfigError(f"unknown model {self.model!r}; choose from {MODEL_NAMES}")
        for b in (self.bits_w, self.bits_a):
            if b != FLOAT_BITS and not 2 <= b <= 8:
                raise ConfigError(f"bit widths must be in [2, 8] or 32, got {b}")
        try:
            EstimatorKind(self.estimator)
        except ValueError:
            raise ConfigError(f"unknown estimator {self.estimator!r}") from None
        if self.scale_learning not in SCALE_LEARNING_KINDS:
            raise ConfigError(f"unknown scale learning {self.scale_learning!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")

    def quant_config(self, iters_per_epoch=1):
        sched = LambdaSchedule(self.lambda_initial, self.lambda_growth, self.lambda_cap)
        it = self.iter_target or default_iter_target(iters_per_epoch)
        return QuantConfig(self.bits_w, self.bits_a, EstimatorConfig(self.estimator, sched),
                           self.scale_learning, self.quantize_first_last, it)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# ----------------------------------------------------------------------
# config files: INI sections, key = value


def _coerce(field, raw):
    raw = raw.strip()
    if raw.lower() in ("", "none"):
        return None
    if field.type is bool:
        return raw.lower() in ("1", "true", "yes", "on")
    if field.type in (int, float):
        return field.type(raw)
    return raw


def load_config(path, overrides=None):
    """Read a RunConfig from an INI file; section names are ignored."""
    parser = configparser.ConfigParser()
    with open(path) as f:
        parser.read_file(f)
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            key = key.replace("-", "_")
            if key not in fields:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            values[key] = _coerce(fields[key], raw)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig.from_dict(values)


def write_config(cfg, path):
    parser = configparser.ConfigParser()
    d = cfg.to_dict()
    sections = {
        "model": ["model", "bits_w", "bits_a", "quantize_first_last"],
        "data": ["dataset", "data_root", "train_subset", "test_subset", "augment"],
        "quant": ["estimator", "lambda_initial", "lambda_growth", "lambda_cap",
                  "scale_learning", "iter_target"],
        "train": ["epochs", "batch_size", "lr", "momentum", "weight_decay", "seed", "out_dir"],
    }
    for sec, keys in sections.items():
        parser[sec] = {k: "" if d[k] is None else str(d[k]) for k in keys}
    with open(path, "w") as f:
        parser.write(f)


# ----------------------------------------------------------------------
# training


def model_for(cfg, iters_per_epoch=1):
    return build_model(cfg.model, cfg.quant_config(iters_per_epoch), cfg.seed,
                       INPUT_SHAPE_BY_DATASET[cfg.dataset])


def _set_epoch(model, epoch):
    lams = []
    for q in model.quantizers():
        q.estimator.set_epoch(epoch)
        if q.enabled:
            lams.append(q.estimator.lam)
    return float(np.mean(lams)) if lams else float("nan")


def _first_nan(model, logits):
    for name, p in model.parameters():
        if not np.isfinite(p.data).all():
            return f"parameter {name}"
    for q in model.quantizers():
        if q.alpha is not None and not np.isfinite(q.alpha).all():
            return f"quantizer scale {q.name}"
    for q in model.quantizers():
        if q.last_input is not None and not np.isfinite(q.last_input).all():
            return f"input of quantizer {q.name}"
    if logits is not None and not np.isfinite(logits.data).all():
        return "logits"
    return "loss"


def accuracy(model, ds, batch_size=500):
    """Top-1 accuracy with exact rounding in every quantizer."""
    correct = 0
    with T.no_grad():
        for x, y in iterate_batches(ds, batch_size):
            correct += int((model(x, training=False).data.argmax(axis=1) == y).sum())
    return correct / max(len(ds), 1)


def _quant_columns(model):
    qs = [q for q in model.quantizers() if q.enabled]
    return qs, [f"alpha_mean:{q.name}" for q in qs] + [f"z_mean:{q.name}" for q in qs]


def train(cfg, train_ds=None, test_ds=None, save=True):
    """Run one training job. Returns a dict with model, rows and paths."""
    if train_ds is None:
        train_ds = load_dataset(cfg.dataset, cfg.data_root, "train", cfg.train_subset, cfg.seed)
    if test_ds is None:
        test_ds = load_dataset(cfg.dataset, cfg.data_root, "test", cfg.test_subset, cfg.seed)
    iters = -(-len(train_ds) // cfg.batch_size)
    model = model_for(cfg, iters)
    params = [p for _, p in model.parameters()]
    for name, p in model.parameters():
        p.name = p.name or name
    opt = SGD(params, cfg.lr, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    augment = cfg.dataset == "cifar10" if cfg.augment is None else cfg.augment
    quants, qcols = _quant_columns(model)
    rows = []
    for epoch in range(cfg.epochs):
        lam = _set_epoch(model, epoch)
        opt.lr = lr_schedule(epoch, cfg.epochs, cfg.lr)
        loss_sum, correct, seen = 0.0, 0, 0
        for x, y in iterate_batches(train_ds, cfg.batch_size, rng, augment):
            try:
                logits = model(x, training=True)
            except DomainError as e:
                # quantizers refuse NaN input before the loss can show it
                raise FloatingPointError(f"non-finite values at epoch {epoch}: {e}") from e
            loss = T.softmax_cross_entropy(logits, y)
            if not np.isfinite(loss.item()):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}; first bad tensor: {_first_nan(model, logits)}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            for q in quants:
                scale_step(q, q.last_input, opt.lr, cfg.scale_learning)
            loss_sum += loss.item() * len(y)
            correct += int((logits.data.argmax(axis=1) == y).sum())
            seen += len(y)
        row = {
            "epoch": epoch,
            "train_loss": loss_sum / seen,
            "train_acc": correct / seen,
            "test_acc": accuracy(model, test_ds),
            "mean_lambda": lam,
            "lr": opt.lr,
        }
        for q in quants:
            row[f"alpha_mean:{q.name}"] = float(np.mean(q.alpha))
        for q in quants:
            row[f"z_mean:{q.name}"] = float(np.mean(q.ssg.z))
        rows.append(row)
        log.info("epoch %d loss %.4f train %.4f test %.4f", epoch, row["train_loss"],
                 row["train_acc"], row["test_acc"])
    out = {"model": model, "rows": rows, "columns": BASE_COLUMNS + qcols}
    if save:
        os.makedirs(cfg.out_dir, exist_ok=True)
        out["metrics"] = write_metrics(rows, out["columns"], os.path.join(cfg.out_dir, METRICS_NAME))
        out["checkpoint"] = save_checkpoint(model, cfg, os.path.join(cfg.out_dir, CHECKPOINT_NAME))
    return out


def write_metrics(rows, columns, path):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return path


def read_metrics(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in rows]


# ----------------------------------------------------------------------
# checkpoints


def save_checkpoint(model, cfg, path):
    state = model.state_dict()
    np.savez(path, __config__=np.array(json.dumps(cfg.to_dict())), **state)
    return path


def load_checkpoint(path):
    """Rebuild (model, config) from a checkpoint file."""
    with np.load(path) as f:
        cfg = RunConfig.from_dict(json.loads(str(f["__config__"])))
        state = {k: f[k] for k in f.files if k != "__config__"}
    model = model_for(cfg)
    model.load_state_dict(state)
    return model, cfg


def evaluate(checkpoint, ds=None):
    """Top-1 accuracy of a checkpoint (path or model) on ``ds``.

    Defaults to the configured test split when ``ds`` is None.
    """
    model, cfg = load_checkpoint(checkpoint) if isinstance(checkpoint, (str, os.PathLike)) else checkpoint
    if ds is None:
        ds = load_dataset(cfg.dataset, cfg.data_root, "test", cfg.test_subset, cfg.seed)
    expected = INPUT_SHAPE_BY_DATASET[cfg.dataset]
    if tuple(ds.images.shape[1:]) != tuple(expected):
        raise ConfigError(f"dataset images {ds.images.shape[1:]} do not match model input {expected}")
    return accuracy(model, ds)
