"""Command line pipeline driver.

Exit codes: 0 success, 2 config error, 3 missing artifact, 4 runtime
failure. Failures print a single machine-parsable line to stderr.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import pipeline
from .config import ConfigError, RunConfig

_STAGES = (
    "gen-synth",
    "convert",
    "train-docranker",
    "simulate-log",
    "train-retriever",
    "estimate",
    "train-ranker",
    "evaluate",
    "ablate",
    "size-curve",
    "full-run",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qacbench", description="Utility-aware QAC training and evaluation pipeline")
    parser.add_argument("--print-config", action="store_true", help="print the default config and exit")
    sub = parser.add_subparsers(dest="command")
    for name in _STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", required=True, help="path to the run config (INI)")
        p.add_argument("--threads", type=int, default=None, help="bound on worker count (does not affect outputs)")
        if name == "simulate-log":
            p.add_argument("--split", choices=("retriever", "ranker", "test", "all"), default="all")
        if name in ("estimate", "train-ranker"):
            p.add_argument("--variant", default="unbiased", help="estimator variant label, e.g. prescient@5")
        if name == "train-retriever":
            p.add_argument("--candidates", type=int, default=None, help="override [retriever] m_candidates")
            p.add_argument("--tau", type=float, default=None, help="override [retriever] tau")
    return parser


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_ini(args.config)
    workdir_env = os.environ.get("QACBENCH_WORKDIR")
    if workdir_env:
        cfg.workdir = workdir_env
    threads_env = os.environ.get("QACBENCH_THREADS")
    if threads_env:
        cfg.threads = int(threads_env)
    if getattr(args, "threads", None):
        cfg.threads = args.threads
    if getattr(args, "candidates", None):
        cfg.m_candidates = args.candidates
    if getattr(args, "tau", None) is not None:
        cfg.tau = args.tau
    cfg.validate()
    return cfg


def _dispatch(args, cfg: RunConfig) -> None:
    command = args.command
    if command == "gen-synth":
        pipeline.stage_gen_synth(cfg)
    elif command == "convert":
        pipeline.stage_convert(cfg)
    elif command == "train-docranker":
        pipeline.stage_train_docranker(cfg)
    elif command == "simulate-log":
        splits = ("retriever", "ranker", "test") if args.split == "all" else (args.split,)
        pipeline.stage_simulate_logs(cfg, splits)
    elif command == "train-retriever":
        pipeline.stage_train_retriever(cfg)
    elif command == "estimate":
        pipeline.stage_estimate(cfg, args.variant)
    elif command == "train-ranker":
        pipeline.stage_train_ranker(cfg, args.variant)
    elif command == "evaluate":
        report = pipeline.run_experiment(cfg)
        print(report.to_markdown(), end="")
    elif command == "ablate":
        report = pipeline.run_ablations(cfg)
        print(report.to_markdown(), end="")
    elif command == "size-curve":
        pipeline.data_size_curve(cfg)
    elif command == "full-run":
        report = pipeline.full_run(cfg)
        print(report.to_markdown(), end="")
    else:
        raise ConfigError(f"unknown command {command!r}")
    pipeline.emit_manifest(cfg.workdir, cfg)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        print(RunConfig().to_ini(), end="")
        return 0
    if not args.command:
        parser.print_help()
        return 2
    try:
        cfg = _load_config(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    try:
        _dispatch(args, cfg)
    except pipeline.MissingArtifactError as exc:
        print(f"error: missing-artifact: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: runtime: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
