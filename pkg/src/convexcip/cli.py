"""Command-line entry point: ``convexcip <command> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import verify
from .model import ConfigError, RunConfig, load_config
from .pipeline import STAGES, PipelineError, describe_config, run_pipeline

log = logging.getLogger("convexcip")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg.with_overrides(
        seed=args.seed, kappa1=args.kappa1, sigma=args.sigma, lambda_=args.lambda_,
        n_src=args.nsrc, N=args.nbasis, max_iter=args.max_iter,
    )


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int, help="seed for noise and random ensembles")
    p.add_argument("--out-dir", default="out", help="artifact directory (default: out)")
    p.add_argument("--kappa1", type=float, help="truncation level in (0, 1)")
    p.add_argument("--sigma", type=float, help="Gaussian smoothing width in lattice steps")
    p.add_argument("--lambda", dest="lambda_", type=float, help="Carleman parameter")
    p.add_argument("--nsrc", type=int, help="number of source positions")
    p.add_argument("--nbasis", type=int, help="number N of basis functions")
    p.add_argument("--max-iter", type=int, help="iteration cap of the descent")
    p.add_argument("--reference", help="measurement CSV subtracted before propagation")
    p.add_argument("--force", action="store_true", help="rerun stages even when inputs are unchanged")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convexcip", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        _common(sub.add_parser(stage, help=f"run the {stage} stage"))
    p = sub.add_parser("run", help="run several stages in order")
    _common(p)
    p.add_argument("--stages", default=",".join(STAGES), help="comma-separated subset (default: all)")
    p = sub.add_parser("verify", help="numerical self-checks")
    p.add_argument("suite", choices=sorted(verify.SUITES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=200, help="trials per lambda for the convexity suite")
    p = sub.add_parser("describe-config", help="print every resolved parameter")
    _common(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "verify":
            fn = verify.SUITES[args.suite]
            if args.suite == "basis":
                rep = fn()
            elif args.suite == "convexity":
                rep = fn(seed=args.seed, trials=args.trials)
            else:
                rep = fn(seed=args.seed)
            print(rep.text())
            return 0 if rep.passed else 1
        cfg = _config(args)
        if args.command == "describe-config":
            sys.stdout.write(describe_config(cfg))
            return 0
        stages = [s.strip() for s in args.stages.split(",")] if args.command == "run" else [args.command]
        for rec in run_pipeline(cfg, args.out_dir, stages, reference=args.reference, force=args.force):
            status = "cached" if rec.cached else f"{rec.wall_time:.1f} s"
            print(f"{rec.stage}: {', '.join(rec.outputs)} ({status})")
    except (ConfigError, PipelineError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
