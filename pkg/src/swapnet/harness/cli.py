"""Command line entry point: ``swapnet <command> ...``."""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from ..asymptotics import (
    diffusion_alpha,
    diffusion_cdf,
    diffusion_density,
    diffusion_spec,
    expected_wait_limit,
    fluid_network_integrate,
    interchange_check,
    scaled_wait_constant,
    wait_probability_limit,
)
from ..exactss import (
    arrival_wait_probability,
    expected_waiting,
    steady_state,
    steady_state_infinite_F,
    wait_probability_exact,
)
from ..metrics import summarize_arrivals, utilization, wait_stats
from ..model import ConfigError, NetworkConfig, Regime, load_config
from ..sim import ChargingDist, check_invariants, run_ctmc, run_des, run_replications
from .presets import PRESETS, load_experiment
from .runner import ExperimentError, dump_json, run_experiment, write_csv


def _float_or_inf(text: str) -> float:
    return math.inf if text.strip().lower() in ("inf", "infinity") else float(text)


def _network(args) -> NetworkConfig:
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.config:
        net, _ = load_config(args.config)
        if args.r is not None:
            raise ConfigError("--r only applies to presets; edit r in the config file")
        return net
    name = args.preset or "five_station"
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    return PRESETS[name]().network(r=args.r)


def _q0(text: str | None, net: NetworkConfig, preset: str | None, fractions: bool = False) -> np.ndarray:
    """Initial state from 'loads', 'zero', 'preset' or comma-separated numbers."""
    S = net.n_stations
    if text is None or text == "loads":
        q = net.station_loads if not fractions else net.p * net.lam / net.mu
    elif text == "zero":
        q = np.zeros(S)
    elif text == "preset":
        spec = PRESETS[preset or "five_station"]()
        q = spec.q0_at(net.r).astype(float)
        if fractions:
            q = q / net.r
    else:
        q = np.array([float(x) for x in text.split(",")])
        if q.size == 1:
            q = np.full(S, q[0])
    if q.size != S:
        raise ConfigError(f"--q0 needs {S} values")
    return q if fractions else np.round(q).astype(np.int64)


def _add_network_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON network file (1-based station labels)")
    p.add_argument("--preset", help=f"preset network: {', '.join(sorted(PRESETS))}")
    p.add_argument("--r", type=int, help="population override for a preset")


def _add_limit_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--gamma", type=_float_or_inf, default=0.0)
    p.add_argument("--regime", default="limited", help="limited, unlimited or swap_unconstrained")


def cmd_simulate(args) -> int:
    net = _network(args)
    q0 = _q0(args.q0, net, args.preset)
    law = ChargingDist.parse(args.charging, net.mu)
    horizon = math.inf if args.horizon is None else args.horizon
    if not math.isfinite(horizon) and args.max_arrivals is None:
        raise ConfigError("give --horizon or --max-arrivals")
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    S = net.n_stations
    if args.reps < 1:
        raise ValueError("no replications requested")
    kw = dict(q0=q0, horizon=horizon, sample_dt=args.sample_dt, max_arrivals=args.max_arrivals)
    if law.kind == "exp" and not args.des:
        paths = run_replications(run_ctmc, [args.seed] * args.reps, args.threads, config=net, **kw)
    else:
        paths = run_replications(run_des, [args.seed] * args.reps, args.threads, config=net, charging=law, **kw)
    summaries, waits = [], []
    for k, path in enumerate(paths):
        tag = f"{prefix}_rep{k}" if args.reps > 1 else str(prefix)
        cols = (["t"] + [f"q_{j + 1}" for j in range(S)] + [f"charging_{j + 1}" for j in range(S)]
                + [f"waiting_{j + 1}" for j in range(S)] + ["driving"])
        rows = ([t, *path.q[i], *path.charging[i], *path.waiting[i], path.driving[i]]
                for i, t in enumerate(path.sample_times))
        write_csv(Path(f"{tag}_path.csv"), cols, rows, f"sampled state, seed {args.seed}, replication {k}")
        a = path.arrivals
        write_csv(Path(f"{tag}_arrivals.csv"), ["time", "edge", "station", "waited", "wait"],
                  zip(a.time, a.edge + 1, a.station + 1, a.waited, a.wait),
                  "one row per swap request; wait is nan if still waiting at the end")
        w = summarize_arrivals(a, S, k, args.warmup)
        waits.append(w)
        rho_F, rho_B = utilization(path, net)
        summaries.append({
            "rep": k,
            "end_time": path.end_time,
            "events": path.event_count,
            "arrivals": int(w.arrivals.sum()),
            "wait_probability": [None if math.isnan(x) else float(x) for x in w.wait_fraction],
            "mean_wait": [None if math.isnan(x) else float(x) for x in w.mean_wait],
            "rho_F": [None if math.isnan(x) else float(x) for x in rho_F],
            "rho_B": [float(x) for x in rho_B],
            "invariant_violations": check_invariants(path).total + path.event_violations,
        })
    stats = wait_stats(waits, S)
    summary = {
        "network": net.to_dict(),
        "charging": str(law),
        "seed": args.seed,
        "q0": q0.tolist(),
        "replications": summaries,
        "wait_probability": [{"station": j + 1, "estimate": e.value, "half_width": e.half_width}
                             for j, e in enumerate(stats.wait_prob)],
    }
    dump_json(Path(f"{prefix}_summary.json"), _clean(summary))
    print(json.dumps(_clean(summary["wait_probability"])))
    return 0


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else str(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def cmd_analytic(args) -> int:
    if math.isinf(args.F):
        dist = steady_state_infinite_F(args.B, args.r, args.lam, args.mu)
    else:
        dist = steady_state(args.B, int(args.F), args.r, args.lam, args.mu)
    e_qw, e_w = expected_waiting(dist)
    out = {
        "B": args.B, "F": args.F, "r": args.r, "lambda": args.lam, "mu": args.mu,
        "wait_probability": wait_probability_exact(dist),
        "arrival_wait_probability": arrival_wait_probability(dist),
        "mean_queue": dist.mean(),
        "mean_waiting_evs": e_qw,
        "mean_wait": e_w,
    }
    print(json.dumps(_clean(out), indent=2))
    if args.out:
        write_csv(Path(args.out), ["k", "probability"], zip(dist.states, dist.pi), "stationary distribution")
    return 0


def cmd_fluid(args) -> int:
    net = _network(args)
    q0 = _q0(args.q0, net, args.preset, fractions=True)
    grid = np.round(np.arange(0.0, args.t_end + args.dt / 2, args.dt), 12)
    traj = fluid_network_integrate(net, q0, grid)
    cols = ["t"] + [f"q_{j + 1}" for j in range(net.n_stations)]
    rows = ([t, *(traj.qbar[k] * net.r)] for k, t in enumerate(traj.times))
    if args.out:
        write_csv(Path(args.out), cols, rows, "fluid queue lengths r*qbar(t)")
    else:
        print(",".join(cols))
        for row in rows:
            print(",".join("%.10g" % v for v in row))
    for e in traj.events:
        print(f"# {e.kind} at t={float(e.time):.6f}: stations {', '.join(str(s + 1) for s in e.stations)}",
              file=sys.stderr)
    return 0


def cmd_density(args) -> int:
    spec = diffusion_spec(args.lam, args.mu, args.beta, args.gamma, Regime.parse(args.regime))
    x = np.linspace(args.x_min, args.x_max, args.n)
    rows = zip(x, diffusion_density(x, spec), diffusion_cdf(x, spec))
    if args.out:
        write_csv(Path(args.out), ["x", "density", "cdf"], rows, "stationary density of the scaled queue length")
    else:
        print("x,density,cdf")
        for row in rows:
            print(",".join("%.10g" % v for v in row))
    return 0


def cmd_limits(args) -> int:
    regime = Regime.parse(args.regime)
    out = {
        "alpha": list(diffusion_alpha(args.lam, args.mu, args.beta, args.gamma, regime)),
        "wait_probability": wait_probability_limit(args.lam, args.mu, args.beta, args.gamma, regime),
        "scaled_wait_constant": scaled_wait_constant(args.lam, args.mu, args.beta, args.gamma, regime),
    }
    if args.r is not None:
        e_qw, e_w = expected_wait_limit(args.lam, args.mu, args.beta, args.gamma, regime, args.r)
        out.update(r=args.r, mean_waiting_evs=e_qw, mean_wait=e_w)
    print(json.dumps(_clean(out), indent=2))
    return 0


def cmd_interchange(args) -> int:
    grid = [int(float(x)) for x in args.r_grid.split(",")]
    pts = interchange_check(args.lam, args.mu, args.beta, args.gamma, grid)
    rows = [[p.r, p.B, p.F, p.distance] for p in pts]
    if args.out:
        write_csv(Path(args.out), ["r", "B", "F", "distance"], rows, "sup-CDF distance to the limit")
    for r, B, F, d in rows:
        print(f"r={r} B={B} F={F} distance={d:.6g}")
    return 0


def cmd_experiment(args) -> int:
    spec = load_experiment(args.experiment)
    try:
        res = run_experiment(spec, args.out, threads=args.threads)
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for c in res.checks:
        flag = "PASS" if c.passed else "FAIL"
        print(f"{flag} {c.metric}: {c.value:.6g} {c.op} {c.threshold:g}  {c.detail}")
    print(f"artifacts in {res.out_dir} (content hash {res.content_hash})")
    return 0 if res.passed else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="swapnet", description="Battery-swapping network simulator and analytics.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a network and write path, arrivals and summary files")
    _add_network_args(p)
    p.add_argument("--q0", help="'loads' (default), 'zero', 'preset' or comma-separated queue lengths")
    p.add_argument("--horizon", type=float)
    p.add_argument("--max-arrivals", type=int)
    p.add_argument("--sample-dt", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--charging", default="exp", help="exp, exp:RATE, det:V or unif:LO,HI")
    p.add_argument("--des", action="store_true", help="use the event-driven engine even for exponential charging")
    p.add_argument("--warmup", type=float, default=0.0, help="ignore arrivals before this time in the summary")
    p.add_argument("--out", default="swapnet", help="output file prefix")
    p.add_argument("--threads", type=int, default=1, help="replications run in parallel; results do not depend on it")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analytic", help="exact stationary quantities for one station")
    p.add_argument("--B", type=int, required=True)
    p.add_argument("--F", type=_float_or_inf, required=True)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--out", help="write the distribution to this CSV")
    p.set_defaults(func=cmd_analytic)

    p = sub.add_parser("fluid", help="integrate the network fluid model")
    _add_network_args(p)
    p.add_argument("--q0", default="preset", help="'preset', 'loads', 'zero' or fractions of r")
    p.add_argument("--t-end", type=float, default=3.0)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fluid)

    p = sub.add_parser("density", help="tabulate the limiting stationary density")
    _add_limit_args(p)
    p.add_argument("--x-min", type=float, default=-4.0)
    p.add_argument("--x-max", type=float, default=8.0)
    p.add_argument("--n", type=int, default=241)
    p.add_argument("--out")
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("limits", help="limiting waiting probability and mean wait")
    _add_limit_args(p)
    p.add_argument("--r", type=int, help="population for the unscaled mean wait")
    p.set_defaults(func=cmd_limits)

    p = sub.add_parser("interchange", help="distance between exact and limiting laws over a grid of r")
    _add_limit_args(p)
    p.add_argument("--r-grid", default="1000,10000,100000")
    p.add_argument("--out")
    p.set_defaults(func=cmd_interchange)

    p = sub.add_parser("experiment", help="run a preset or experiment file and check it")
    p.add_argument("experiment", help=f"preset ({', '.join(sorted(PRESETS))}) or JSON file")
    p.add_argument("--out", help="artifact directory")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_experiment)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
