"""Command-line entry point: ``uwaloc <subcommand> [--config PATH] [--seed N] [--out DIR]``.

Subcommands
-----------
gen-data   synthesize the training set or one test cell and save it as ``.npz``
train      train the range classifier and save ``model.uwar`` plus ``train_log.csv``
adapt      adapt a checkpoint to one test cell with ``--method shot|jsea``
eval       evaluate the configured methods on one (SNR, sound-speed offset) cell
sweep      evaluate every (SNR, sound-speed offset, realization) cell
plot       render a summary CSV as an SVG line plot
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..adaptation import jsea_adapt, shot_adapt
from ..features import stack_channels
from ..labels import estimate_range
from ..localizer import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config
from .experiment import (
    generate_test_set,
    generate_training_set,
    mae,
    pcl,
    run_experiment,
    train_model,
    write_train_log,
)
from .plot import AxisSpec, emit_plot

log = logging.getLogger("uwaloc")


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "checkpoint", None):
        cfg = dataclasses.replace(cfg, checkpoint=args.checkpoint)
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _test_cell(cfg: ExperimentConfig, args):
    snr = cfg.signal.snr_db[0] if args.snr is None else args.snr
    dc = cfg.signal.delta_c[0] if args.delta_c is None else args.delta_c
    return snr, dc, generate_test_set(cfg, snr, dc, args.realization)


def cmd_gen_data(args) -> int:
    cfg, out = _load(args), _out_dir(args)
    if args.kind == "train":
        feats = generate_training_set(cfg)
        path = out / "train.npz"
    else:
        snr, dc, feats = _test_cell(cfg, args)
        path = out / f"test_snr{snr:g}_dc{dc:g}_r{args.realization}.npz"
    np.savez(path, x=stack_channels(feats),
             energy=np.array([f.energy for f in feats]),
             true_range=np.array([f.true_range for f in feats]))
    print(f"wrote {len(feats)} samples to {path}")
    return 0


def cmd_train(args) -> int:
    cfg, out = _load(args), _out_dir(args)
    model, history = train_model(cfg)
    save_checkpoint(out / "model.uwar", model, {"seed": cfg.seed, "best_epoch": history.best_epoch})
    write_train_log(out / "train_log.csv", history)
    print(f"best epoch {history.best_epoch}, validation JSD {min(history.val_loss):.6f}; wrote {out / 'model.uwar'}")
    return 0


def _require_checkpoint(cfg: ExperimentConfig):
    if not cfg.checkpoint:
        raise SystemExit("a checkpoint is required (--checkpoint or 'checkpoint = ...' in the config)")
    return load_checkpoint(cfg.checkpoint)[0]


def cmd_adapt(args) -> int:
    cfg, out = _load(args), _out_dir(args)
    model = _require_checkpoint(cfg)
    snr, dc, feats = _test_cell(cfg, args)
    adapt = shot_adapt if args.method == "shot" else jsea_adapt
    adapted, report = adapt(model, feats, cfg.adapt, cfg.grid)
    truth = np.array([f.true_range for f in feats])
    before = estimate_range(model.predict(feats), cfg.grid)
    after = estimate_range(adapted.predict(feats), cfg.grid)
    save_checkpoint(out / f"model_{args.method}.uwar", adapted,
                    {"method": args.method, "snr_db": snr, "delta_c": dc, "realization": args.realization})
    report.write_csv(out / f"adapt_{args.method}.csv")
    summary = {"method": args.method, "snr_db": snr, "delta_c": dc, "confident": len(report.confident),
               "mae_before": mae(truth, before), "mae_after": mae(truth, after),
               "pcl_before": pcl(truth, before), "pcl_after": pcl(truth, after)}
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    cfg, out = _load(args), _out_dir(args)
    snr = cfg.signal.snr_db[0] if args.snr is None else args.snr
    dc = cfg.signal.delta_c[0] if args.delta_c is None else args.delta_c
    cfg = dataclasses.replace(cfg, signal=dataclasses.replace(cfg.signal, snr_db=(snr,), delta_c=(dc,)))
    return _run(cfg, out)


def cmd_sweep(args) -> int:
    cfg, out = _load(args), _out_dir(args)
    return _run(cfg, out)


def _run(cfg: ExperimentConfig, out: Path) -> int:
    rows = run_experiment(cfg, out)
    print(f"wrote {len(rows)} rows to {out / 'results.csv'} and {out / 'summary.csv'}")
    return 0


def cmd_plot(args) -> int:
    out = _out_dir(args)
    summary = Path(args.summary) if args.summary else out / "summary.csv"
    spec = AxisSpec(x=args.x, metric=args.metric, fixed=args.fixed)
    path = emit_plot(summary, out / f"{args.metric}_vs_{args.x}.svg", spec)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uwaloc", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value configuration file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", default="out", help="output directory (default: %(default)s)")
    cell = argparse.ArgumentParser(add_help=False)
    cell.add_argument("--snr", type=float, help="SNR in dB, 'inf' for noise free (default: first configured)")
    cell.add_argument("--delta-c", type=float, help="sound-speed offset in m/s (default: first configured)")
    cell.add_argument("--realization", type=int, default=0)
    ckpt = argparse.ArgumentParser(add_help=False)
    ckpt.add_argument("--checkpoint", help="pre-trained model (.uwar); trains from scratch when absent")

    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("gen-data", parents=[common, cell], help="synthesize a dataset")
    p.add_argument("--kind", choices=("train", "test"), default="train")
    p.set_defaults(func=cmd_gen_data)
    p = sub.add_parser("train", parents=[common], help="train the range classifier")
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("adapt", parents=[common, cell, ckpt], help="source-free adaptation of a checkpoint")
    p.add_argument("--method", choices=("shot", "jsea"), required=True)
    p.set_defaults(func=cmd_adapt)
    p = sub.add_parser("eval", parents=[common, cell, ckpt], help="evaluate one test cell")
    p.set_defaults(func=cmd_eval)
    p = sub.add_parser("sweep", parents=[common, ckpt], help="full SNR and mismatch sweep")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("plot", parents=[common], help="plot a summary CSV")
    p.add_argument("--summary", help="summary CSV (default: OUT/summary.csv)")
    p.add_argument("--x", choices=("snr", "delta_c"), default="snr")
    p.add_argument("--metric", choices=("pcl", "mae"), default="pcl")
    p.add_argument("--fixed", type=float, help="value of the other sweep variable to slice at")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
