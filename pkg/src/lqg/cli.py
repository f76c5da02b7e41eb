"""Command line interface.

    lqg <experiment> [--config FILE] [--seed N] [--out DIR] [experiment flags]
    lqg validate --config FILE

Exit codes: 0 success, 1 gated check failed, 2 usage/config error.
Worker count comes from LQG_THREADS (default 1); results are byte-identical
for any worker count.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, EXPERIMENTS, ExperimentConfig, parse_config
from .harness import run, validate

EXIT_OK = 0
EXIT_GATE_FAILED = 1
EXIT_USAGE = 2


def _load_config(args, experiment: str | None) -> ExperimentConfig:
    if args.config:
        text = Path(args.config).read_text()
        cfg = parse_config(text)
        if experiment and cfg.experiment != experiment:
            cfg.experiment = experiment
    else:
        cfg = ExperimentConfig()
        if experiment:
            cfg.experiment = experiment
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    if getattr(args, "gamma", None) is not None:
        cfg.gamma_list = [args.gamma]
    if getattr(args, "x", None) is not None:
        cfg.x_list = [args.x]
    if getattr(args, "A", None) is not None:
        cfg.A_list = [args.A]
    if getattr(args, "dt", None) is not None:
        cfg.dt = args.dt
    if getattr(args, "n_paths", None) is not None:
        cfg.n_paths = args.n_paths
    if getattr(args, "t_max", None) is not None:
        cfg.t_max = args.t_max
    if getattr(args, "hit_times", False):
        cfg.dump_hit_times = True
    return cfg


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lqg", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int, help="override config seed")
        sp.add_argument("--out", help="override output directory")

    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        common(sp)
        if name == "fpt-run":
            sp.add_argument("--gamma", type=float, help="single gamma")
            sp.add_argument("--x", type=float, help="single x weight")
            sp.add_argument("--A", type=float, help="single barrier level")
            sp.add_argument("--dt", type=float, help="Euler step")
            sp.add_argument("--n-paths", dest="n_paths", type=int)
            sp.add_argument("--t-max", dest="t_max", type=float)
            sp.add_argument("--hit-times", dest="hit_times", action="store_true",
                            help="also dump raw hit times as CSV")
    sp = sub.add_parser("validate", help="check a config without running")
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int)
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "validate":
            cfg = _load_config(args, None)
            diags = validate(cfg)
            for d in diags:
                print(f"{d.severity}: {d.message}")
            has_err = any(d.severity == "error" for d in diags)
            return EXIT_USAGE if has_err else EXIT_OK
        cfg = _load_config(args, args.command)
        manifest = run(cfg)
        for g in manifest.gates:
            status = "PASS" if g["passed"] else "FAIL"
            print(f"[{status}] {g['name']}: {g['detail']}")
        print(f"results in {cfg.output_dir} (manifest.json)")
        return EXIT_OK if manifest.all_gates_passed else EXIT_GATE_FAILED
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
