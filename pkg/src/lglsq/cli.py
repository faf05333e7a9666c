"""Command-line entry point: ``lglsq {train,eval,export,verify,ablate}``.

Every RunConfig field has a flag (``--bits-w 4`` etc.) that overrides the
value from ``--config``. The dataset root defaults to ``$LGLSQ_DATA``.
"""

import argparse
import dataclasses
import logging
import sys

from .ablate import ablate, format_table
from .data import load_dataset
from .errors import ConfigError
from .export import export_int, load_int, verify_int
from .train import RunConfig, evaluate, load_checkpoint, load_config, train


def _bool(s):
    return s.lower() in ("1", "true", "yes", "on")


def _add_run_flags(p):
    p.add_argument("--config", help="INI file with RunConfig keys")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        kind = f.type if f.type in (int, float) else (_bool if f.type is bool else str)
        p.add_argument(flag, dest=f.name, type=kind, default=None)


def _run_config(args):
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(RunConfig)}
    if args.config:
        return load_config(args.config, overrides)
    return RunConfig.from_dict({k: v for k, v in overrides.items() if v is not None})


def cmd_train(args):
    cfg = _run_config(args)
    out = train(cfg)
    last = out["rows"][-1]
    print(f"final test accuracy {last['test_acc']:.4f}")
    print(f"metrics: {out['metrics']}\ncheckpoint: {out['checkpoint']}")


def cmd_eval(args):
    model, cfg = load_checkpoint(args.checkpoint)
    ds = load_dataset(cfg.dataset, args.data_root or cfg.data_root, args.split,
                      cfg.test_subset if args.split == "test" else cfg.train_subset, cfg.seed)
    print(f"{args.split} accuracy {evaluate((model, cfg), ds):.4f}")


def cmd_export(args):
    model, cfg = load_checkpoint(args.checkpoint)
    qm = export_int(model, cfg, args.output)
    n_int = sum(1 for r in qm.records if r.codes is not None)
    print(f"wrote {args.output}: {len(qm.records)} records, {n_int} integer tensors")


def cmd_verify(args):
    qm = load_int(args.model)
    cfg = RunConfig.from_dict(qm.meta["config"])
    ds = load_dataset(cfg.dataset, args.data_root or cfg.data_root, "test")
    report = verify_int(qm, ds.images[:args.samples])
    print(report)
    return 0 if report.ok else 1


def cmd_ablate(args):
    base = _run_config(args)
    configs = []
    for v in args.variants.split(","):
        est, _, sl = v.partition("+")
        configs.append(dataclasses.replace(base, estimator=est, scale_learning=sl or base.scale_learning))
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = ablate(configs, seeds, out_dir=args.ablate_dir)
    print(format_table(rows))


def build_parser():
    parser = argparse.ArgumentParser(prog="lglsq", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write metrics + checkpoint")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="top-1 accuracy of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--data-root")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="write integer codes to an LGQ1 file")
    p.add_argument("checkpoint")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("verify", help="integer vs fake-quant inference agreement")
    p.add_argument("model")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--data-root")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("ablate", help="seed-matched comparison of estimator variants")
    _add_run_flags(p)
    p.add_argument("--variants", default="ste+ssg,asr+ssg,asr_mde+ssg",
                   help="comma list of estimator[+scale_learning]")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--ablate-dir", default="runs/ablation")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args) or 0
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
