"""Experiment orchestration behind the command-line interface.

Every command writes plain-text outputs under ``--out``; the layout is::

    <out>/<algorithm>/seed_<s>/metrics.jsonl       per-episode training log
    <out>/<algorithm>/seed_<s>/checkpoints/*.npz
    <out>/<algorithm>/seed_<s>/eval.json           greedy evaluation + traces
    <out>/compare.csv, compare.txt                 comparison table
    <out>/beta_sweep/hist_beta_<b>.csv             per-step VVA histograms
    <out>/beta_sweep/summary.csv
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .agents import ALGORITHMS, METRIC_FIELDS, evaluate, load_agent, make_agent, train
from .env import ChargingEnv
from .network import InjectionProfile, VoltageSolution, load_network, solve_distflow, violation_metrics
from .scenario import split_scenarios

log = logging.getLogger(__name__)

SUMMARY_FIELDS = ("cost", "ud", "vvn", "vva")


# --- file formats ---------------------------------------------------------

def write_jsonl(path, records) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path) -> list:
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# --- building blocks ------------------------------------------------------

def build(cfg: dict):
    """Instantiate the environment and the train/eval scenario split."""
    net = cfgmod.network(cfg)
    env = ChargingEnv(net, cfgmod.stations(cfg), cfgmod.env_config(cfg))
    days = cfgmod.scenarios(cfg)
    train_days, eval_days = split_scenarios(days, cfg["env"].get("train_fraction", 0.8))
    return env, train_days, eval_days


def run_dir(out, algorithm: str, seed: int) -> Path:
    return Path(out) / algorithm / f"seed_{seed}"


def train_one(cfg: dict, algorithm: str, seed: int, out, **train_overrides) -> dict:
    """Train one (algorithm, seed) run, write its files, and evaluate it greedily."""
    env, train_days, eval_days = build(cfg)
    tcfg = cfgmod.train_config(cfg, seed=seed, **train_overrides)
    agent = make_agent(algorithm, env.obs_dim, env.act_dim, tcfg)
    rdir = run_dir(out, algorithm, seed)
    metrics, checkpoints = train(agent, env, tcfg, train_days, checkpoint_dir=rdir / "checkpoints")
    write_jsonl(rdir / "metrics.jsonl", metrics)
    result = evaluate_checkpoint(cfg, checkpoints[-1], rdir / "eval.json", seed=seed, built=(env, eval_days))
    return {"algorithm": algorithm, "seed": seed, "run_dir": str(rdir), "metrics": metrics,
            "eval": result}


def evaluate_checkpoint(cfg: dict, checkpoint, out_path=None, seed: int = 0, built=None) -> dict:
    if built is None:
        env, _, eval_days = build(cfg)
    else:
        env, eval_days = built
    checkpoint = Path(checkpoint)
    if not checkpoint.is_file():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    agent = load_agent(checkpoint)
    res = evaluate(agent, env, eval_days, seed=seed, trace=True)
    # relative to the run directory so identical runs under different --out match byte for byte
    try:
        res["checkpoint"] = str(checkpoint.relative_to(checkpoint.parent.parent))
    except ValueError:
        res["checkpoint"] = checkpoint.name
    res["horizon_steps"] = res.pop("steps")
    res["n_days"] = len(eval_days)
    if out_path is not None:
        write_json(out_path, res)
    return res


def _pool_map(fn, jobs, n_jobs: int):
    if n_jobs <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        futures = [pool.submit(fn, *job) for job in jobs]
        return [f.result() for f in futures]


# --- commands -------------------------------------------------------------

def cmd_train(cfg: dict, algorithm: str, seeds, out, jobs: int = 1) -> list:
    if algorithm not in ALGORITHMS:
        raise cfgmod.ConfigError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
    build(cfg)  # fail fast on config/data errors before spawning runs
    results = _pool_map(train_one, [(cfg, algorithm, s, out) for s in seeds], jobs)
    return results


def cmd_evaluate(cfg: dict, algorithm: str, seeds, out) -> list:
    env, _, eval_days = build(cfg)
    results = []
    for s in seeds:
        rdir = run_dir(out, algorithm, s)
        results.append(evaluate_checkpoint(cfg, rdir / "checkpoints" / "final.npz", rdir / "eval.json",
                                           seed=s, built=(env, eval_days)))
    return results


def summarize(rows) -> dict:
    """Mean and min-max spread of each Table-1 column over seeds."""
    out = {}
    for key in SUMMARY_FIELDS:
        vals = np.array([r[key] for r in rows], dtype=float)
        out[key] = {"mean": float(vals.mean()), "min": float(vals.min()), "max": float(vals.max())}
    return out


def cmd_compare(cfg: dict, algorithms, seeds, out) -> dict:
    """Evaluate trained checkpoints on identical held-out days and tabulate."""
    env, _, eval_days = build(cfg)
    raw = []
    for algo in algorithms:
        for s in seeds:
            rdir = run_dir(out, algo, s)
            ckpt = rdir / "checkpoints" / "final.npz"
            res = evaluate_checkpoint(cfg, ckpt, seed=s, built=(env, eval_days))
            raw.append({"algorithm": algo, "seed": s, "run_id": f"{algo}/seed_{s}",
                        **{k: res[k] for k in SUMMARY_FIELDS}})
    report = {
        "horizon_steps": len(eval_days) * env.config.horizon,
        "n_days": len(eval_days),
        "rows": raw,
        "summary": {algo: summarize([r for r in raw if r["algorithm"] == algo]) for algo in algorithms},
    }
    write_csv(Path(out) / "compare_raw.csv", ["run_id", "algorithm", "seed", *SUMMARY_FIELDS],
              [[r["run_id"], r["algorithm"], r["seed"], *(repr(float(r[k])) for k in SUMMARY_FIELDS)]
               for r in raw])
    write_csv(Path(out) / "compare.csv",
              ["algorithm"] + [f"{k}_{stat}" for k in SUMMARY_FIELDS for stat in ("mean", "min", "max")],
              [[algo] + [repr(report["summary"][algo][k][stat]) for k in SUMMARY_FIELDS
                         for stat in ("mean", "min", "max")] for algo in algorithms])
    (Path(out) / "compare.txt").write_text(format_table(report))
    return report


def format_table(report: dict) -> str:
    lines = [
        f"Greedy evaluation over {report['n_days']} held-out days ({report['horizon_steps']} steps), "
        "mean [min, max] over seeds",
        f"{'Algorithm':<10} {'Cost ($)':>26} {'UD (kWh)':>26} {'VVN':>22} {'VVA (p.u.)':>26}",
    ]
    for algo, s in report["summary"].items():
        cells = []
        for key, fmt in (("cost", ".1f"), ("ud", ".1f"), ("vvn", ".1f"), ("vva", ".3f")):
            c = s[key]
            cells.append(f"{c['mean']:{fmt}} [{c['min']:{fmt}}, {c['max']:{fmt}}]")
        lines.append(f"{algo.upper():<10} {cells[0]:>26} {cells[1]:>26} {cells[2]:>22} {cells[3]:>26}")
    return "\n".join(lines) + "\n"


def vva_histogram(step_vva, bin_width: float = 0.005) -> list:
    """Histogram rows ``(bin_lo, bin_hi, count)`` over steps with a violation."""
    vals = np.array([v for v in step_vva if v > 0.0])
    if vals.size == 0:
        return []
    n_bins = max(1, int(math.ceil(vals.max() / bin_width - 1e-12)))
    idx = np.minimum((vals / bin_width).astype(int), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    return [(round(k * bin_width, 12), round((k + 1) * bin_width, 12), int(c)) for k, c in enumerate(counts)]


def cmd_beta_sweep(cfg: dict, betas, seeds, out, algorithm: str = "sacl", bin_width: float = 0.005,
                   jobs: int = 1) -> dict:
    betas = [float(b) for b in betas]
    for b in betas:
        if not 0.0 <= b <= 1.0:
            raise cfgmod.ConfigError(f"beta must lie in [0, 1], got {b}")
    jobs_list = []
    for b in betas:
        bcfg = _with_beta(cfg, b)
        for s in seeds:
            jobs_list.append((bcfg, algorithm, s, Path(out) / f"beta_{b:g}"))
    results = _pool_map(train_one, jobs_list, jobs)
    summary = {}
    rows = []
    k = 0
    for b in betas:
        step_vva, vvn = [], []
        for s in seeds:
            res = results[k]["eval"]
            k += 1
            vvn.append(res["vvn"])
            step_vva.extend(st["vva"] for ep in res["episodes"] for st in ep["steps"])
        hist = vva_histogram(step_vva, bin_width)
        write_csv(Path(out) / "beta_sweep" / f"hist_beta_{b:g}.csv", ["bin_lo", "bin_hi", "count"], hist)
        summary[b] = {"vvn_mean": float(np.mean(vvn)), "vvn_per_seed": vvn,
                      "max_step_vva": float(max(step_vva, default=0.0)), "histogram": hist}
        rows.append([repr(b), repr(float(np.mean(vvn))), repr(float(max(step_vva, default=0.0)))])
    write_csv(Path(out) / "beta_sweep" / "summary.csv", ["beta", "vvn_mean", "max_step_vva"], rows)
    return summary


def _with_beta(cfg: dict, beta: float) -> dict:
    new = dict(cfg)
    new["env"] = {**cfg["env"], "beta": beta}
    return new


def read_injections(path, n_bus: int) -> InjectionProfile:
    """Read ``bus,p_pu,q_pu`` rows (unlisted buses default to zero)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"injections file not found: {path}")
    p = np.zeros(n_bus)
    q = np.zeros(n_bus)
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            b = int(row["bus"])
            if not 0 <= b < n_bus:
                raise ValueError(f"{path}: bus {b} out of range")
            p[b] = float(row["p_pu"])
            q[b] = float(row.get("q_pu") or 0.0)
    return InjectionProfile(p, q)


def cmd_powerflow_check(case_path, injections_path=None, replay_path=None) -> dict:
    net = load_network(case_path)
    if replay_path is not None:
        ev = json.loads(Path(replay_path).read_text())
        worst = 0.0
        n = 0
        for ep in ev["episodes"]:
            for st in ep["steps"]:
                sol = solve_distflow(net, InjectionProfile(np.array(st["injections_p"]),
                                                           np.array(st["injections_q"])))
                worst = max(worst, float(np.max(np.abs(sol.v - np.array(st["voltages"])))))
                n += 1
        return {"steps": n, "max_abs_diff": worst}
    inj = (read_injections(injections_path, net.n_bus) if injections_path is not None
           else InjectionProfile.zeros(net.n_bus))
    sol = solve_distflow(net, inj)
    vvn, vva = violation_metrics(sol, net)
    return {"voltages": sol.v.tolist(), "vvn": vvn, "vva": vva}


def load_metrics(path) -> list:
    recs = read_jsonl(path)
    for r in recs:
        missing = [f for f in METRIC_FIELDS if f not in r]
        if missing:
            raise ValueError(f"{path}: record missing {missing}")
    return recs
