"""Run an experiment end to end and write its artifact directory.

Every run writes CSV tables (a ``#`` comment line naming the columns, then a
header row), ``report.json`` with one record per acceptance check and
``manifest.json`` with the spec echo, seeds and content hashes.  Nothing
time-dependent is written, so reruns of the same spec are byte-identical.
"""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import jsonschema
import numpy as np

from .. import __version__
from ..asymptotics import (
    fluid_network_integrate,
    interchange_check,
    wait_probability_limit,
)
from ..metrics import diffusion_scale, single_arrival_shift, ssc_gaps, summarize_arrivals, utilization, wait_stats
from ..model import NetworkConfig, Regime
from ..sim import ChargingDist, check_invariants, run_ctmc, run_des
from .presets import REFERENCES, ExperimentSpec

FLUID_DT = 1e-3
# scaled single-arrival shift at station 1 of the five-station preset
GRANULARITY_REFERENCE = 0.5657

METRICS = (
    "breakpoint_error",
    "fluid_pointwise_error",
    "fluid_band_fraction",
    "ssc_max_gap_decreasing",
    "ssc_granularity_error",
    "nonexp_band",
    "nonexp_max_gap_decreasing",
    "wait_prob_error",
    "wait_prob_above_limit",
    "interchange_distance",
    "interchange_decreasing",
    "utilization_slope_F",
    "utilization_slope_B",
    "invariant_violations",
)

REPORT_SCHEMA = {
    "type": "object",
    "required": ["experiment", "status", "passed", "checks"],
    "additionalProperties": False,
    "properties": {
        "experiment": {"type": "string"},
        "status": {"enum": ["complete", "incomplete"]},
        "passed": {"type": "boolean"},
        "failed_stage": {"type": "string"},
        "error": {"type": "string"},
        "checks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["metric", "value", "op", "threshold", "passed"],
                "additionalProperties": False,
                "properties": {
                    "metric": {"enum": list(METRICS)},
                    "stage": {"type": "string"},
                    "value": {"type": ["number", "null"]},
                    "op": {"enum": ["<=", ">=", "<"]},
                    "threshold": {"type": "number"},
                    "passed": {"type": "boolean"},
                    "detail": {"type": "string"},
                },
            },
        },
    },
}


class ExperimentError(RuntimeError):
    """A stage raised; the artifact directory is marked incomplete."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Check:
    metric: str
    value: float
    op: str
    threshold: float
    stage: str = ""
    detail: str = ""

    @property
    def passed(self) -> bool:
        v = self.value
        if v is None or math.isnan(v):
            return False
        if self.op == "<=":
            return v <= self.threshold
        if self.op == ">=":
            return v >= self.threshold
        return v < self.threshold

    def as_dict(self) -> dict:
        v = None if self.value is None or not math.isfinite(self.value) else float(self.value)
        d = {"metric": self.metric, "stage": self.stage, "value": v, "op": self.op,
             "threshold": float(self.threshold), "passed": self.passed}
        if self.detail:
            d["detail"] = self.detail
        return d


@dataclass
class ExperimentResult:
    out_dir: Path
    checks: list[Check]
    status: str
    files: dict[str, str] = field(default_factory=dict)
    content_hash: str = ""

    @property
    def passed(self) -> bool:
        return self.status == "complete" and all(c.passed for c in self.checks)

    def check(self, metric: str) -> Check:
        for c in self.checks:
            if c.metric == metric:
                return c
        raise KeyError(metric)


# ---------------------------------------------------------------- file output

def _fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence[Any]], comment: str) -> None:
    lines = [f"# {comment}; columns: {', '.join(columns)}", ",".join(columns)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def blob_hash(data: bytes) -> str:
    """Git's object id for a blob with these contents."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _json_default(o: Any) -> Any:
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def dump_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


# --------------------------------------------------------------- simulations

@dataclass(frozen=True)
class _GapRun:
    """What a transient run contributes; the path itself is discarded."""

    seed: int
    max_gap: float
    avg_gap: float
    unscaled_avg_gap: float
    band_inside: int  # samples with every station inside the band
    band_total: int
    band_max: float  # largest deviation in units of sqrt(lambda r / mu)
    violations: int


def _pmap(fn: Callable[[int], Any], n: int, threads: int) -> list:
    if threads <= 1 or n <= 1:
        return [fn(k) for k in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


def _violations(path, net: NetworkConfig) -> int:
    total = check_invariants(path).total + int(path.event_violations)
    if path.q.shape[0]:
        total += diffusion_scale(path, net).sandwich_violations()
    return total


class _Context:
    def __init__(self, spec: ExperimentSpec, out: Path, threads: int):
        self.spec = spec
        self.out = out
        self.threads = max(1, int(threads))
        self.checks: list[Check] = []
        self.violations = 0
        self._fluid = None
        self._gap_runs: dict[tuple[str, int], list[_GapRun]] = {}

    def add(self, stage: str, metric: str, value: float, op: str, threshold: float, detail: str = "") -> None:
        self.checks.append(Check(metric, float(value), op, float(threshold), stage, detail))

    # fluid path from the spec's initial state, in fractions of r
    def fluid(self):
        if self._fluid is None:
            spec = self.spec
            grid = np.round(np.arange(0.0, spec.horizon + FLUID_DT / 2, FLUID_DT), 12)
            q0 = spec.q0_at(spec.r) / spec.r
            self._fluid = fluid_network_integrate(spec.network(), q0, grid)
        return self._fluid

    def ssc_window(self) -> tuple[float, float]:
        if self.spec.window is not None:
            return tuple(self.spec.window)
        merges = [e.time for e in self.fluid().events if e.kind == "merge"]
        start = float(merges[-1]) if merges else 0.0
        return start, min(start + 1.0, self.spec.horizon)

    def gap_runs(self, law: str, r: int) -> list[_GapRun]:
        key = (law, r)
        if key not in self._gap_runs:
            self._gap_runs[key] = self._run_gaps(law, r)
        return self._gap_runs[key]

    def _run_gaps(self, law: str, r: int) -> list[_GapRun]:
        spec = self.spec
        net = spec.network(r=r)
        scale = math.sqrt(net.offered_load)
        dt = spec.horizon / spec.gap_samples
        if law == "exp":
            q0 = spec.q0_at(r)
            window = self.ssc_window()
            fl = self.fluid()
            band_lo, band_hi, band = 0.0, spec.horizon, spec.band_width
        else:
            q0 = np.zeros(net.n_stations, dtype=np.int64)
            window = tuple(spec.nonexp_window)
            band_lo, band_hi = window
            band = spec.threshold("nonexp_band")
            charging = ChargingDist.parse(law, spec.mu)

        def one(k: int) -> _GapRun:
            seed = spec.seeds[k]
            if law == "exp":
                path = run_ctmc(net, q0=q0, horizon=spec.horizon, sample_dt=dt, seed=seed, rep=k)
                centre = np.column_stack([np.interp(path.sample_times, fl.times, fl.qbar[:, j])
                                          for j in range(net.n_stations)]) * r
            else:
                path = run_des(net, charging, q0=q0, horizon=spec.horizon, sample_dt=dt, seed=seed, rep=k)
                centre = np.broadcast_to(net.station_loads, path.q.shape)
            g = ssc_gaps(diffusion_scale(path, net), window)
            sel = (path.sample_times >= band_lo - 1e-12) & (path.sample_times <= band_hi + 1e-12)
            dev = np.abs(path.q[sel] - centre[sel]).max(axis=1) / scale
            return _GapRun(seed, g.max_gap, g.avg_gap, g.unscaled_avg_gap, int((dev <= band).sum()), int(dev.size),
                           float(dev.max()), _violations(path, net))

        runs = _pmap(one, len(spec.seeds), self.threads)
        self.violations += sum(x.violations for x in runs)
        return runs


# -------------------------------------------------------------------- stages

def _stage_fluid(ctx: _Context) -> None:
    spec = ctx.spec
    traj = ctx.fluid()
    S = traj.qbar.shape[1]
    Q = traj.qbar * spec.r
    cols = ["t"] + [f"q_{j + 1}" for j in range(S)]
    ref = None
    if spec.reference is not None:
        ref_fn, ref_breaks = REFERENCES[spec.reference]
        ref = ref_fn(traj.times)
        cols += [f"reference_{j + 1}" for j in range(S)]
    rows = []
    for k, t in enumerate(traj.times):
        row = [t, *Q[k]]
        if ref is not None:
            row += list(ref[k])
        rows.append(row)
    write_csv(ctx.out / "fluid.csv", cols, rows, "fluid queue lengths r*qbar(t)")
    write_csv(ctx.out / "fluid_events.csv", ["index", "time", "kind", "stations"],
              [[k + 1, float(e.time), e.kind, ";".join(str(s + 1) for s in e.stations)]
               for k, e in enumerate(traj.events)],
              "fluid mode changes")
    if ref is None:
        return
    times = [float(e.time) for e in traj.events]
    if len(times) < len(ref_breaks):
        err = math.inf
        detail = f"found {len(times)} mode changes, expected {len(ref_breaks)}"
    else:
        found = times[: len(ref_breaks)]
        err = max(abs(a - b) for a, b in zip(found, ref_breaks))
        detail = "breakpoints " + ", ".join(f"{t:.4f}" for t in found)
    ctx.add("fluid", "breakpoint_error", err, "<=", spec.threshold("breakpoint_error"), detail)
    ctx.add("fluid", "fluid_pointwise_error", float(np.abs(Q - ref).max()), "<=",
            spec.threshold("fluid_pointwise_error"))


def _gap_rows(ctx: _Context, law: str) -> tuple[list[list], list[float]]:
    rows, means = [], []
    for r in ctx.spec.r_grid:
        runs = ctx.gap_runs(law, r)
        for x in runs:
            rows.append([r, x.seed, x.max_gap, x.avg_gap, x.unscaled_avg_gap] if law == "exp"
                        else [law, r, x.seed, x.max_gap, x.avg_gap, x.unscaled_avg_gap])
        means.append(math.fsum(x.max_gap for x in runs) / len(runs))
    return rows, means


def _decrease(means: Sequence[float]) -> float:
    """Largest step up along the grid; negative iff strictly decreasing."""
    return max(b - a for a, b in zip(means, means[1:])) if len(means) > 1 else math.nan


def _stage_fluid_band(ctx: _Context) -> None:
    spec = ctx.spec
    runs = ctx.gap_runs("exp", spec.r)
    inside = sum(x.band_inside for x in runs)
    total = sum(x.band_total for x in runs)
    ctx.add("fluid_band", "fluid_band_fraction", inside / total, ">=", spec.threshold("fluid_band_fraction"),
            f"within {spec.band_width:g}*sqrt(lambda r/mu) of the fluid path at r={spec.r}")


def _stage_ssc(ctx: _Context) -> None:
    spec = ctx.spec
    rows, means = _gap_rows(ctx, "exp")
    write_csv(ctx.out / "gaps.csv", ["r", "seed", "max_gap", "avg_gap", "unscaled_avg_gap"], rows,
              f"diffusion-scaled spread over window {ctx.ssc_window()}")
    ctx.add("ssc", "ssc_max_gap_decreasing", _decrease(means), "<", 0.0,
            "mean max gap by r: " + ", ".join(f"{m:.4f}" for m in means))
    net = spec.network()
    j = int(np.argmin(net.p))
    shift = single_arrival_shift(net, j)
    if spec.reference == "five_station":
        ctx.add("ssc", "ssc_granularity_error", abs(shift - GRANULARITY_REFERENCE), "<=",
                spec.threshold("ssc_granularity_error"), f"one arrival at station {j + 1} moves it by {shift:.6f}")


def _stage_nonexp(ctx: _Context) -> None:
    spec = ctx.spec
    laws = [c for c in spec.charging if c.split(":")[0] != "exp"]
    rows = []
    for law in laws:
        law_rows, means = _gap_rows(ctx, law)
        rows += law_rows
        ctx.add("nonexp", "nonexp_max_gap_decreasing", _decrease(means), "<", 0.0,
                f"{law}: mean max gap by r: " + ", ".join(f"{m:.4f}" for m in means))
        worst = max(x.band_max for x in ctx.gap_runs(law, spec.r))
        ctx.add("nonexp", "nonexp_band", worst, "<=", spec.threshold("nonexp_band"),
                f"{law}: largest |Q_j - load_j| / sqrt(lambda r/mu) on {tuple(spec.nonexp_window)} at r={spec.r}")
    write_csv(ctx.out / "nonexp.csv", ["charging", "r", "seed", "max_gap", "avg_gap", "unscaled_avg_gap"], rows,
              f"non-exponential charging from empty queues, window {tuple(spec.nonexp_window)}")


def _stage_waits(ctx: _Context) -> None:
    spec = ctx.spec
    net = spec.network()
    if spec.arrivals_per_rep <= 0:
        raise ValueError("arrivals_per_rep must be positive for the waiting stage")
    reps = min(spec.wait_reps, len(spec.seeds))
    q0 = np.round(net.station_loads).astype(np.int64)

    def one(k: int):
        path = run_ctmc(net, q0=q0, horizon=math.inf, sample_dt=None, seed=spec.seeds[k], rep=k,
                        max_arrivals=spec.arrivals_per_rep)
        return summarize_arrivals(path.arrivals, net.n_stations, k, spec.warmup), _violations(path, net)

    res = _pmap(one, reps, ctx.threads)
    ctx.violations += sum(v for _, v in res)
    stats = wait_stats([w for w, _ in res], net.n_stations)
    limit = wait_probability_limit(spec.lam, spec.mu, spec.beta, spec.gamma, Regime.parse(spec.regime))
    rows = [[j + 1, e.value, e.lo, e.hi, limit] for j, e in enumerate(stats.wait_prob)]
    write_csv(ctx.out / "waits.csv", ["station", "estimate", "ci_lo", "ci_hi", "asymptote"], rows,
              f"waiting probability, {reps} replications of {spec.arrivals_per_rep} arrivals, r={spec.r}")
    err = max(abs(e.value - limit) for e in stats.wait_prob)
    above = max(e.value - limit - e.half_width for e in stats.wait_prob)
    worst = int(np.argmax([abs(e.value - limit) for e in stats.wait_prob]))
    ctx.add("waits", "wait_prob_error", err, "<=", spec.threshold("wait_prob_error"),
            f"asymptote {limit:.4f}; worst station {worst + 1}")
    ctx.add("waits", "wait_prob_above_limit", above, "<=", 0.0, "estimate minus asymptote minus CI half-width")


def _stage_interchange(ctx: _Context) -> None:
    spec = ctx.spec
    grid = spec.interchange_r_grid or spec.r_grid
    pts = interchange_check(spec.lam, spec.mu, spec.beta, spec.gamma, grid)
    write_csv(ctx.out / "interchange.csv", ["r", "B", "F", "distance"], [[p.r, p.B, p.F, p.distance] for p in pts],
              "sup-CDF distance between the scaled stationary law and its limit")
    ctx.add("interchange", "interchange_distance", pts[-1].distance, "<=", spec.threshold("interchange_distance"),
            f"at r={pts[-1].r}")
    ctx.add("interchange", "interchange_decreasing", _decrease([p.distance for p in pts]), "<", 0.0)


def _stage_utilization(ctx: _Context) -> None:
    spec = ctx.spec
    if len(spec.r_grid) < 2:
        raise ValueError("utilization slope needs at least two values in r_grid")
    r_pair = (spec.r_grid[0], spec.r_grid[-1])
    reps = min(spec.utilization_reps, len(spec.seeds))
    rows, idle = [], {}
    for r in r_pair:
        net = spec.network(r=r)
        q0 = np.round(net.station_loads).astype(np.int64)

        def one(k: int):
            path = run_ctmc(net, q0=q0, horizon=spec.utilization_horizon, sample_dt=None, seed=spec.seeds[k], rep=k)
            return utilization(path, net), _violations(path, net)

        res = _pmap(one, reps, ctx.threads)
        ctx.violations += sum(v for _, v in res)
        rho_F = np.mean([u[0] for u, _ in res], axis=0)
        rho_B = np.mean([u[1] for u, _ in res], axis=0)
        for j in range(net.n_stations):
            rows.append([r, j + 1, rho_F[j], rho_B[j]])
        F = net.F
        agg_F = float(np.dot(rho_F, F) / F.sum()) if np.all(np.isfinite(F)) else math.nan
        agg_B = float(np.dot(rho_B, net.B) / net.B.sum())
        idle[r] = (1.0 - agg_F, 1.0 - agg_B)
        rows.append([r, "all", agg_F, agg_B])
    write_csv(ctx.out / "utilization.csv", ["r", "station", "rho_F", "rho_B"], rows,
              f"time-averaged utilization over [0, {spec.utilization_horizon:g}], {reps} replications")
    span = math.log(r_pair[1] / r_pair[0])
    tol = spec.threshold("utilization_slope_tol")
    for k, metric in enumerate(("utilization_slope_F", "utilization_slope_B")):
        a, b = idle[r_pair[0]][k], idle[r_pair[1]][k]
        if math.isnan(a):
            continue
        slope = math.log(b / a) / span if a > 0 and b > 0 else math.nan
        ctx.add("utilization", metric, abs(slope + 0.5), "<=", tol, f"log-log slope of 1-rho: {slope:.4f}")


STAGE_FUNCS = {
    "fluid": _stage_fluid,
    "fluid_band": _stage_fluid_band,
    "ssc": _stage_ssc,
    "nonexp": _stage_nonexp,
    "waits": _stage_waits,
    "interchange": _stage_interchange,
    "utilization": _stage_utilization,
}


def _write_capacities(spec: ExperimentSpec, out: Path) -> None:
    rs = sorted({spec.r, *spec.r_grid, *spec.interchange_r_grid})
    rows = []
    for r in rs:
        net = spec.network(r=r)
        for j, c in enumerate(net.capacities):
            rows.append([r, j + 1, float(net.station_loads[j]), c.B, c.F, c.G])
    write_csv(out / "capacities.csv", ["r", "station", "load", "B", "F", "G"], rows,
              "raw loads p_j*lambda*r/mu and the rounded capacities")


# ------------------------------------------------------------------ frontend

def _finish(spec: ExperimentSpec, out: Path, checks: list[Check], status: str,
            failure: ExperimentError | None) -> ExperimentResult:
    passed = status == "complete" and all(c.passed for c in checks)
    report: dict[str, Any] = {
        "experiment": spec.name,
        "status": status,
        "passed": passed,
        "checks": [c.as_dict() for c in checks],
    }
    if failure is not None:
        report["failed_stage"] = failure.stage
        report["error"] = f"{type(failure.cause).__name__}: {failure.cause}"
    jsonschema.validate(report, REPORT_SCHEMA)
    dump_json(out / "report.json", report)
    files = {}
    for f in sorted(out.iterdir()):
        if f.is_file() and f.name != "manifest.json":
            files[f.name] = blob_hash(f.read_bytes())
    overall = hashlib.sha1("".join(f"{h} {n}\n" for n, h in files.items()).encode()).hexdigest()
    manifest = {
        "experiment": spec.to_dict(),
        "seeds": list(spec.seeds),
        "status": status,
        "version": __version__,
        "files": files,
        "content_hash": overall,
    }
    dump_json(out / "manifest.json", manifest)
    return ExperimentResult(out, checks, status, files, overall)


def run_experiment(spec: ExperimentSpec, out_dir: str | Path | None = None, threads: int = 1) -> ExperimentResult:
    """Run every stage of ``spec`` in order and write the artifact directory.

    Raises ``ExperimentError`` (after writing an ``incomplete`` report) if a
    stage fails.
    """
    if not spec.seeds:
        raise ValueError("no replications: the experiment has an empty seed list")
    out = Path(out_dir or spec.output_dir or f"{spec.name}_out")
    out.mkdir(parents=True, exist_ok=True)
    for f in out.iterdir():
        if f.is_file() and (f.suffix in (".csv", ".json")):
            f.unlink()
    ctx = _Context(spec, out, threads)
    stage = "setup"
    try:
        _write_capacities(spec, out)
        for stage in spec.stages:
            STAGE_FUNCS[stage](ctx)
        if any(s in spec.stages for s in ("fluid_band", "ssc", "nonexp", "waits", "utilization")):
            stage = "invariants"
            ctx.add("invariants", "invariant_violations", ctx.violations, "<=", 0.0,
                    "conservation, station-state and sandwich checks over every sampled instant")
    except Exception as exc:
        failure = ExperimentError(stage, exc)
        _finish(spec, out, ctx.checks, "incomplete", failure)
        raise failure from exc
    return _finish(spec, out, ctx.checks, "complete", None)
