"""Command line entry point: ``python -m monouda <command> ...``.

Exit codes: 0 on success, 2 for configuration or usage errors, 3 when
training diverges (the last finite model is kept on disk).
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import harness
from .evalkit import EvalConfig
from .synthworld import DomainConfig, WorldConfigError, generate_dataset, save_dataset, source_domain, target_domain

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _domain(source: str) -> DomainConfig:
    if source == "src":
        return source_domain()
    if source == "tgt":
        return target_domain()
    try:
        with open(source) as fh:
            return DomainConfig.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
        raise harness.ConfigError(f"cannot load domain config {source!r}: {err}") from err


def cmd_gen_data(args) -> int:
    if args.n < 0:
        raise harness.ConfigError("--n must be non-negative")
    if args.seed < 0:
        raise harness.ConfigError("--seed must be non-negative")
    domain = _domain(args.domain)
    try:
        scenes = generate_dataset(args.seed, domain, args.n, workers=args.workers)
    except WorldConfigError as err:
        raise harness.ConfigError(str(err)) from err
    save_dataset(args.out, scenes)
    print(f"wrote {len(scenes)} scenes to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = harness.ExperimentConfig.load(args.config, mode=args.mode)
    try:
        report = harness.run(cfg, args.out)
    except harness.DivergedRun as err:
        print(f"training diverged: {err}; last model kept in {args.out}", file=sys.stderr)
        return EXIT_DIVERGED
    line = f"{cfg.mode}: done in {report.runtime:.1f}s"
    if report.results:
        line += "  " + "  ".join(f"{k}={v['ap']:.4f}" for k, v in report.results.items())
    print(line)
    return EXIT_OK


def cmd_eval(args) -> int:
    for p in (args.model, args.data):
        if not os.path.exists(p):
            raise harness.ConfigError(f"not found: {p}")
    try:
        cfg = EvalConfig(iou_threshold=args.iou)
    except ValueError as err:
        raise harness.ConfigError(str(err)) from err
    doc = harness.eval_checkpoint(args.model, args.data, args.out, cfg)
    print("  ".join(f"{k}={v['ap']:.4f}" for k, v in doc["metrics"].items()))
    return EXIT_OK


def cmd_report(args) -> int:
    for d in args.runs:
        if not os.path.exists(os.path.join(d, "report.json")):
            raise harness.ConfigError(f"{d} has no report.json")
    doc = harness.write_report(args.runs, args.out)
    for role, row in doc["closed_gap"].items():
        print(role, "  ".join(f"{k}={'n/a' if v is None else f'{v:.1f}%'}" for k, v in row.items()))
    return EXIT_OK


def cmd_diagnostics(args) -> int:
    from .detector import load_checkpoint, load_checkpoint_extra
    from .synthworld import load_dataset
    for p in (args.model, args.data):
        if not os.path.exists(p):
            raise harness.ConfigError(f"not found: {p}")
    c = load_checkpoint_extra(args.model).get("depth_constant")
    kw = {"c": c} if c is not None else {}
    harness.export_diagnostics(load_checkpoint(args.model), load_dataset(args.data), args.out, **kw)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="monouda", description="Synthetic monocular 3D domain adaptation experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a JSONL scene dataset")
    g.add_argument("--domain", required=True, help="src, tgt, or a DomainConfig JSON file")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--workers", type=int, default=1)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one experiment mode")
    t.add_argument("--mode", required=True, choices=harness.TRAIN_MODES)
    t.add_argument("--config", required=True, help="flat JSON experiment config")
    t.add_argument("--out", required=True, help="run directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a labelled dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--iou", type=float, default=0.5)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="closed-gap report over run directories")
    r.add_argument("--runs", nargs="+", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)

    d = sub.add_parser("diagnostics", help="score/IoU scatter and score histogram CSVs")
    d.add_argument("--model", required=True)
    d.add_argument("--data", required=True)
    d.add_argument("--out", required=True, help="output directory")
    d.set_defaults(func=cmd_diagnostics)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except harness.ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
