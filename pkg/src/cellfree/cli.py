"""``cellfree`` command line: ``run``, ``flops`` and ``timing``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import (ConfigurationError, ContractError, DimensionError, NumericalError,
                     ProtocolError, StateError)
from .harness import (ALGOS, RUN_LENGTHS, ExperimentConfig, flops_report, parse_sweep, run_experiment,
                      timing_report)


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def _split_algos(values) -> list[str]:
    out = []
    for v in values:
        out += [a for a in v.split(",") if a]
    return out


# CLI flag -> ExperimentConfig field
_RUN_FLAGS = {
    "episodes": "episodes", "steps": "steps_per_episode", "batch": "batch", "sigma": "sigma",
    "actors": "actors", "nstep": "nstep", "atoms": "atoms", "vmin": "vmin", "vmax": "vmax",
    "t_target": "t_target", "t_actors": "t_actors", "rounds": "rounds", "transport": "transport",
    "csi_mode": "csi_mode", "penalty": "penalty", "normalizer": "normalizer",
    "ga_iters": "ga_iters", "ga_lr": "ga_lr", "final_window": "final_window",
    "workers": "workers",
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cellfree", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train / evaluate algorithms and write metrics")
    run.add_argument("--config", help="JSON experiment config; flags below override it")
    run.add_argument("--scenario", help="preset name (small, large) or 'custom' with --config")
    run.add_argument("--algo", action="append", help=f"one of {', '.join(ALGOS)}; repeat or comma-separate")
    run.add_argument("--seed", action="append", type=int, help="repeatable")
    run.add_argument("--seeds", type=_int_list, help="comma-separated seeds")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--length", choices=sorted(RUN_LENGTHS),
                     help="run-length preset; explicit flags override it")
    run.add_argument("--episodes", type=int)
    run.add_argument("--steps", type=int, help="steps per episode")
    run.add_argument("--batch", type=int)
    run.add_argument("--sigma", type=float, help="initial exploration noise")
    run.add_argument("--actors", type=int, help="D4PG actor count (default M)")
    run.add_argument("--nstep", type=int)
    run.add_argument("--atoms", type=int)
    run.add_argument("--vmin", type=float)
    run.add_argument("--vmax", type=float)
    run.add_argument("--t-target", type=int)
    run.add_argument("--t-actors", type=int)
    run.add_argument("--rounds", type=int, help="distributed horizon (default: episodes)")
    run.add_argument("--transport", choices=["inproc", "socket"])
    run.add_argument("--workers", type=int, help="threads for distributed agents")
    run.add_argument("--csi-mode", choices=["fixed-block", "per-episode"])
    run.add_argument("--penalty", type=float)
    run.add_argument("--normalizer", choices=["mmse", "mmse-sic"])
    run.add_argument("--ga-iters", type=int)
    run.add_argument("--ga-lr", type=float)
    run.add_argument("--final-window", type=int)
    run.add_argument("--hidden", type=_int_list, help="e.g. 256,128")
    sic = run.add_mutually_exclusive_group()
    sic.add_argument("--enforce-sic", dest="enforce_sic", action="store_true", default=None)
    sic.add_argument("--no-enforce-sic", dest="enforce_sic", action="store_false")
    run.add_argument("--free-running", action="store_true",
                     help="threaded D4PG actors (not reproducible)")

    fl = sub.add_parser("flops", help="feed-forward FLOPs of the policies")
    fl.add_argument("--M", type=int, required=True)
    fl.add_argument("--K", type=int, required=True)
    fl.add_argument("--hidden", type=_int_list, default=[256, 128])
    fl.add_argument("--json", action="store_true")

    tm = sub.add_parser("timing", help="inference vs gradient-ascent wall-clock, K = M/3")
    tm.add_argument("--sweep", default="15:150:15", help="start:stop:step over M (inclusive)")
    tm.add_argument("--hidden", type=_int_list, default=[256, 128])
    tm.add_argument("--ga-iters", type=int, default=100)
    tm.add_argument("--seed", type=int, default=0)
    tm.add_argument("--out", help="CSV path")
    return ap


def config_from_args(args) -> ExperimentConfig:
    data = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.length:
        data.update(RUN_LENGTHS[args.length])
    if args.scenario:
        data["scenario"] = args.scenario
    if args.algo:
        data["algos"] = _split_algos(args.algo)
    seeds = (args.seed or []) + (args.seeds or [])
    if seeds:
        data["seeds"] = seeds
    for flag, name in _RUN_FLAGS.items():
        v = getattr(args, flag)
        if v is not None:
            data[name] = v
    if args.hidden:
        data["hidden"] = args.hidden
    if args.enforce_sic is not None:
        data["enforce_sic"] = args.enforce_sic
    if args.free_running:
        data["deterministic"] = False
    data["out_dir"] = args.out
    return ExperimentConfig.from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cfg = config_from_args(args)
            summary = run_experiment(cfg)
            print(f"{'algo':<12} {'n':>3} {'norm mean':>10} {'norm std':>9} {'reward':>9}")
            for algo, agg in summary["aggregate"].items():
                print(f"{algo:<12} {agg['n']:>3} {agg['normalized_mean']:>10.4f} "
                      f"{agg['normalized_std']:>9.4f} {agg['reward_mean']:>9.3f}")
            print(f"wrote {cfg.out_dir}")
        elif args.command == "flops":
            rep = flops_report(args.M, args.K, args.hidden)
            if args.json:
                print(json.dumps(rep, sort_keys=True))
            else:
                print(f"M={rep['M']} K={rep['K']} hidden={rep['hidden']}")
                print(f"centralized DDPG  {rep['centralized']:>12,d}")
                print(f"D4PG              {rep['d4pg']:>12,d}")
                print(f"distributed agent {rep['distributed']:>12,d}")
                print(f"MMSE order (MK)^2 {rep['mmse_order']:>12,d}")
        else:
            rows = timing_report(parse_sweep(args.sweep), args.hidden, args.ga_iters,
                                 seed=args.seed, out=args.out)
            print(f"{'M':>4} {'K':>4} {'t_inference':>12} {'t_gradascent':>13}")
            for r in rows:
                print(f"{r['M']:>4} {r['K']:>4} {r['t_inference']:>12.6f} {r['t_gradascent']:>13.4f}")
    except (ConfigurationError, ContractError, DimensionError, NumericalError, ProtocolError,
            StateError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
