"""Command-line interface.

Subcommands:

* ``run --config cfg.json --out DIR [--seed N] [--fast]`` executes an
  experiment; ``--fast`` caps deep-model training at 8000 iterations.
* ``report --results results.csv --out DIR`` renders Markdown + SVGs.
* ``predict --checkpoint ckpt.json --input points.csv --fidelity T`` prints
  per-point mean/variance from a saved deep model; the input CSV header is
  ``x1,...,xd`` for the target fidelity's dimension.

Exit codes: 0 success, 2 configuration/schema error, 3 numerical failure
of every experiment cell.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys

import numpy as np

from .errors import ConfigError, MultifidError, SchemaMismatch

FAST_ITERATIONS = 8000


def _cmd_run(args) -> int:
    from .experiment import load_config, run_experiment

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=int(args.seed))
        if args.fast and cfg.train.iterations > FAST_ITERATIONS:
            cfg = dataclasses.replace(
                cfg, train=dataclasses.replace(cfg.train, iterations=FAST_ITERATIONS)
            )
        out_dir = args.out or cfg.output_dir
        if out_dir is None:
            raise ConfigError("no output directory (use --out or config output_dir)")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    info = run_experiment(cfg, out_dir)
    print(json.dumps(info))
    if info["total"] > 0 and info["failed"] == info["total"]:
        return 3
    return 0


def _cmd_report(args) -> int:
    from .report import render_report

    try:
        produced = render_report(args.results, args.out)
    except SchemaMismatch as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(produced))
    return 0


def _cmd_predict(args) -> int:
    from .mfdgp import load_checkpoint, predict

    try:
        model = load_checkpoint(args.checkpoint)
    except (OSError, ValueError, KeyError) as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 2
    t = args.fidelity
    dim = model.arch.dims[t] if 0 <= t < model.arch.s else -1
    if dim < 0:
        print(f"fidelity {t} out of range", file=sys.stderr)
        return 2
    try:
        with open(args.input, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        expected = [f"x{i + 1}" for i in range(dim)]
        if not rows or [h.strip() for h in rows[0]] != expected:
            raise SchemaMismatch(
                f"{args.input}: header must be {','.join(expected)}"
            )
        pts = np.asarray([[float(v) for v in r] for r in rows[1:]], dtype=float)
        if pts.ndim != 2 or pts.shape[1] != dim:
            raise SchemaMismatch(f"{args.input}: expected {dim} columns")
    except (OSError, ValueError, SchemaMismatch) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    try:
        mean, var = predict(model, pts, fidelity=t)
    except MultifidError as exc:
        print(f"prediction failed: {exc}", file=sys.stderr)
        return 3

    def write(fh):
        writer = csv.writer(fh)
        writer.writerow(["mean", "var"])
        for m, v in zip(mean, var):
            writer.writerow([repr(float(m)), repr(float(v))])

    if args.out is None:
        write(sys.stdout)
    else:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            write(fh)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multifid", description="multi-fidelity surrogate experiments"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--fast", action="store_true",
                       help=f"cap deep-model training at {FAST_ITERATIONS} iterations")
    p_run.set_defaults(func=_cmd_run)

    p_rep = sub.add_parser("report", help="render tables and plots from results")
    p_rep.add_argument("--results", required=True)
    p_rep.add_argument("--out", required=True)
    p_rep.set_defaults(func=_cmd_report)

    p_pred = sub.add_parser("predict", help="predict from a saved checkpoint")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--input", required=True)
    p_pred.add_argument("--fidelity", type=int, required=True)
    p_pred.add_argument("--out", default=None)
    p_pred.set_defaults(func=_cmd_predict)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
