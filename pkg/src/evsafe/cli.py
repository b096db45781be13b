"""``evsafe`` command line: train, evaluate, compare, beta-sweep, powerflow-check."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from . import config as cfgmod
from . import harness
from .agents import ALGORITHMS
from .network import BUNDLED_33BUS, NetworkError
from .scenario import ScenarioError

EXIT_USAGE = 2


def _seeds(args, cfg) -> list:
    seeds = args.seeds if args.seeds else cfg.get("seeds", [0])
    return [int(s) for s in seeds]


def _common(p: argparse.ArgumentParser, out_default: str = "runs") -> None:
    p.add_argument("--config", help="YAML experiment config (defaults are used when omitted)")
    p.add_argument("--seed", "--seeds", dest="seeds", type=int, nargs="+", help="seed list")
    p.add_argument("--out", default=out_default, help="output directory")


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="evsafe", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one algorithm for each seed")
    _common(p)
    p.add_argument("--algorithm", choices=ALGORITHMS)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("evaluate", help="greedy evaluation of trained checkpoints")
    _common(p)
    p.add_argument("--algorithm", choices=ALGORITHMS)

    p = sub.add_parser("compare", help="evaluate several algorithms and tabulate")
    _common(p)
    p.add_argument("--algorithms", nargs="+", choices=ALGORITHMS, default=list(ALGORITHMS))
    p.add_argument("--train", action="store_true", help="train missing runs first")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("beta-sweep", help="train/evaluate across trade-off weights")
    _common(p)
    p.add_argument("--betas", type=float, nargs="+", default=[0.0, 0.5, 1.0])
    p.add_argument("--algorithm", choices=ALGORITHMS, default="sacl")
    p.add_argument("--bin-width", type=float, default=0.005)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("powerflow-check", help="solve the linearized feeder for given injections")
    _common(p, out_default="")
    p.add_argument("--case", default=str(BUNDLED_33BUS))
    p.add_argument("--injections", help="CSV with columns bus,p_pu,q_pu")
    p.add_argument("--replay", help="eval.json whose logged voltages should be reproduced")
    return ap


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (FileNotFoundError, cfgmod.ConfigError, ScenarioError, NetworkError, ValueError,
            yaml.YAMLError) as exc:
        print(f"evsafe {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def _dispatch(args) -> int:
    if args.command == "powerflow-check":
        res = harness.cmd_powerflow_check(args.case, args.injections, args.replay)
        if args.replay:
            print(f"replayed {res['steps']} steps, max |dv| = {res['max_abs_diff']:.3e}")
            return 0 if res["max_abs_diff"] == 0.0 else 1
        for bus, v in enumerate(res["voltages"]):
            print(f"{bus:3d} {v:.6f}")
        print(f"VVN {res['vvn']}  VVA {res['vva']:.6f}")
        if args.out:
            harness.write_csv(Path(args.out) / "powerflow.csv", ["bus", "v_pu"],
                              [[b, repr(v)] for b, v in enumerate(res["voltages"])])
        return 0

    cfg = cfgmod.load_config(args.config)
    seeds = _seeds(args, cfg)
    algorithm = getattr(args, "algorithm", None) or cfg["train"].get("algorithm", "sacl")

    if args.command == "train":
        for res in harness.cmd_train(cfg, algorithm, seeds, args.out, jobs=args.jobs):
            last = res["metrics"][-1] if res["metrics"] else None
            ev = res["eval"]
            msg = f"{algorithm} seed {res['seed']}: "
            if last:
                msg += f"final episode reward {last['reward']:.3f}; "
            msg += f"eval cost {ev['cost']:.2f} $, UD {ev['ud']:.1f} kWh, VVN {ev['vvn']}, VVA {ev['vva']:.4f}"
            print(msg)
        return 0
    if args.command == "evaluate":
        for s, ev in zip(seeds, harness.cmd_evaluate(cfg, algorithm, seeds, args.out)):
            print(f"{algorithm} seed {s}: cost {ev['cost']:.2f} $, UD {ev['ud']:.1f} kWh, "
                  f"VVN {ev['vvn']}, VVA {ev['vva']:.4f} over {ev['horizon_steps']} steps")
        return 0
    if args.command == "compare":
        if args.train:
            for algo in args.algorithms:
                missing = [s for s in seeds
                           if not (harness.run_dir(args.out, algo, s) / "checkpoints" / "final.npz").is_file()]
                if missing:
                    harness.cmd_train(cfg, algo, missing, args.out, jobs=args.jobs)
        report = harness.cmd_compare(cfg, args.algorithms, seeds, args.out)
        print(harness.format_table(report), end="")
        return 0
    if args.command == "beta-sweep":
        summary = harness.cmd_beta_sweep(cfg, args.betas, seeds, args.out, algorithm=args.algorithm,
                                         bin_width=args.bin_width, jobs=args.jobs)
        for b, s in summary.items():
            print(f"beta {b:g}: mean VVN {s['vvn_mean']:.1f}, max step VVA {s['max_step_vva']:.4f}")
        return 0
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
