"""Fluid (law of large numbers) dynamics of the network, in units of r.

An arriving EV that chose pair {i, j} is sent to the station with the lower
relative load u = q/p.  In the fluid picture a whole flow of EVs arrives, so
stations whose relative loads coincide share it.  The sharing rule used here
is the unique one under which tied stations stay tied exactly as long as the
flow allows it:

* edges joining stations at different relative loads feed the lower one;
* within a set of tied stations, repeatedly take the largest subset U that
  minimises (fixed inflow + inflow of all edges touching U - service) / P(U);
  those stations move together with that common rate of change of u, and the
  edges touching U are consumed.

Between events the right-hand side is affine in q, so the integrator freezes
the routing mode, takes fixed RK4 steps, and locates events (two adjacent
groups meeting, a station crossing its load, or a tied group splitting) by
bisection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..model import NetworkConfig

TIE_TOL = 1e-9
EVENT_TIME_TOL = 1e-9
MAX_EVENTS = 100_000


class FluidIntegrationError(RuntimeError):
    """Raised when event handling fails to make progress."""


@dataclass(frozen=True)
class FluidState:
    qbar: np.ndarray
    time: float

    def driving(self, loads: np.ndarray) -> float:
        """Fraction of EVs on the road: 1 - sum of excess over the loads."""
        return 1.0 - float(np.sum(np.maximum(self.qbar - loads, 0.0)))


@dataclass(frozen=True)
class FluidEvent:
    time: float
    kind: str  # "merge", "load", or "split"
    stations: tuple[int, ...]


@dataclass
class FluidTrajectory:
    times: np.ndarray
    qbar: np.ndarray  # shape (len(times), S)
    p: np.ndarray
    loads: np.ndarray  # p_j * lambda / mu
    events: list[FluidEvent] = field(default_factory=list)

    def states(self) -> list[FluidState]:
        return [FluidState(q.copy(), float(t)) for t, q in zip(self.times, self.qbar)]

    def driving(self) -> np.ndarray:
        return 1.0 - np.maximum(self.qbar - self.loads, 0.0).sum(axis=1)

    def relative(self) -> np.ndarray:
        return self.qbar / self.p

    def ssc_g(self) -> np.ndarray:
        u = self.relative()
        return u.max(axis=1) - u.min(axis=1)

    def merge_times(self) -> list[float]:
        return [e.time for e in self.events if e.kind == "merge"]


def fluid_single(q0: float, lam: float, mu: float, t):
    """Closed-form fluid path of one isolated station.

    Below the load lambda/mu the queue relaxes at rate mu; above it the
    waiting EVs are what drains, so the relaxation rate is lambda.
    """
    if q0 < 0:
        raise ValueError("q0 must be nonnegative")
    t = np.asarray(t, dtype=float)
    load = lam / mu
    rate = mu if q0 <= load else lam
    out = load + (q0 - load) * np.exp(-rate * t)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class _Mode:
    groups: tuple[tuple[int, ...], ...]
    above: tuple[bool, ...]
    M: np.ndarray
    b: np.ndarray

    @property
    def key(self):
        return (self.groups, self.above)


class _NetworkRhs:
    def __init__(self, p: np.ndarray, edges: Sequence[tuple[int, int, float]], lam: float, mu: float):
        self.p = np.asarray(p, dtype=float)
        self.S = self.p.size
        self.edges = [(int(i), int(j), float(w)) for i, j, w in edges]
        self.lam = float(lam)
        self.mu = float(mu)
        self.loads = self.p * lam / mu
        self.scale = max(lam / mu, 1e-300)
        self.cross_edges = [(i, j) for i, j, _ in self.edges if i != j]

    # -- routing structure -------------------------------------------------
    def _levels(self, u: np.ndarray) -> list[list[int]]:
        order = np.argsort(u, kind="stable")
        levels: list[list[int]] = [[int(order[0])]]
        for k in order[1:]:
            prev = levels[-1][-1]
            if abs(u[k] - u[prev]) <= TIE_TOL * max(self.scale, abs(u[k])):
                levels[-1].append(int(k))
            else:
                levels.append([int(k)])
        return levels

    def _split_level(self, members: list[int], fixed: dict[int, float], inner: list[tuple[int, int, float]],
                     flow: float, service: np.ndarray) -> list[tuple[tuple[int, ...], float]]:
        """Greedy min-ratio decomposition of one tie set.

        Returns (group, edge weight routed into the group) pairs in order of
        increasing rate of change of the common relative load.
        """
        remaining = list(members)
        edges = list(inner)
        out = []
        while remaining:
            m = len(remaining)
            if m > 20:
                raise FluidIntegrationError(f"tie set of {m} stations is too large to decompose")
            best_val = math.inf
            best: tuple[int, ...] = ()
            best_w = 0.0
            pos = {s: k for k, s in enumerate(remaining)}
            masks = [((1 << pos[i]) | (1 << pos[j]), w) for i, j, w in edges]
            for mask in range(1, 1 << m):
                sub = [remaining[k] for k in range(m) if mask >> k & 1]
                w = sum(fixed.get(s, 0.0) for s in sub)
                w += sum(we for em, we in masks if em & mask)
                P = sum(self.p[s] for s in sub)
                val = (flow * w - sum(service[s] for s in sub)) / P
                tol = 1e-12 * (abs(val) + abs(best_val) + 1e-300) if best_val < math.inf else 0.0
                if val < best_val - tol or (abs(val - best_val) <= tol and len(sub) > len(best)):
                    best_val, best, best_w = val, tuple(sub), w
            out.append((best, best_w))
            chosen = set(best)
            remaining = [s for s in remaining if s not in chosen]
            edges = [(i, j, w) for i, j, w in edges if i not in chosen and j not in chosen]
        return out

    def mode(self, q: np.ndarray, prev_above: Sequence[bool] | None = None) -> _Mode:
        u = q / self.p
        excess = q - self.loads
        tol = TIE_TOL * np.maximum(self.loads, 1e-300)
        above = []
        for j in range(self.S):
            if excess[j] > tol[j]:
                above.append(True)
            elif excess[j] < -tol[j]:
                above.append(False)
            else:
                above.append(bool(prev_above[j]) if prev_above is not None else False)
        above_arr = np.array(above)
        L = 1.0 - float(np.sum(np.where(above_arr, excess, 0.0)))
        service = self.mu * np.where(above_arr, self.loads, q)
        flow = self.lam * L

        levels = self._levels(u)
        level_of = np.empty(self.S, dtype=int)
        for k, lev in enumerate(levels):
            level_of[lev] = k

        groups: list[tuple[tuple[int, ...], float]] = []
        for k, lev in enumerate(levels):
            fixed: dict[int, float] = {}
            inner = []
            for i, j, w in self.edges:
                li, lj = level_of[i], level_of[j]
                if li == k and lj == k:
                    inner.append((i, j, w))
                elif li == k and lj > k:
                    fixed[i] = fixed.get(i, 0.0) + w
                elif lj == k and li > k:
                    fixed[j] = fixed.get(j, 0.0) + w
            if len(lev) == 1:
                s = lev[0]
                w = fixed.get(s, 0.0) + sum(we for _, _, we in inner)
                groups.append(((s,), w))
            else:
                groups.extend(self._split_level(lev, fixed, inner, flow, service))

        # affine right-hand side for the frozen mode
        M = np.zeros((self.S, self.S))
        b = np.zeros(self.S)
        above_idx = np.flatnonzero(above_arr)
        for members, w in groups:
            P = float(sum(self.p[s] for s in members))
            for j in members:
                c = self.p[j] / P
                # lambda*L*w part, with L = 1 - sum_{above}(q_k - load_k)
                M[j, above_idx] -= c * self.lam * w
                b[j] += c * self.lam * w * (1.0 + float(self.loads[above_idx].sum()))
                for s in members:
                    if above_arr[s]:
                        b[j] -= c * self.mu * self.loads[s]
                    else:
                        M[j, s] -= c * self.mu
        key_groups = tuple(tuple(sorted(g)) for g, _ in groups)
        return _Mode(key_groups, tuple(above), M, b)

    # -- event functionals ---------------------------------------------------
    def functionals(self, mode: _Mode) -> tuple[np.ndarray, np.ndarray, list[tuple[str, tuple[int, ...]]]]:
        """Linear forms c.q + d whose sign changes end the current mode."""
        group_of = {}
        for g, members in enumerate(mode.groups):
            for s in members:
                group_of[s] = g
        rows, offs, tags = [], [], []
        for i, j in self.cross_edges:
            if group_of[i] != group_of[j]:
                c = np.zeros(self.S)
                c[i] = 1.0 / self.p[i]
                c[j] = -1.0 / self.p[j]
                rows.append(c)
                offs.append(0.0)
                tags.append(("merge", (i, j)))
        for j in range(self.S):
            c = np.zeros(self.S)
            c[j] = 1.0
            rows.append(c)
            offs.append(-self.loads[j])
            tags.append(("load", (j,)))
        C = np.array(rows) if rows else np.zeros((0, self.S))
        return C, np.array(offs), tags


def _rk4(q: np.ndarray, M: np.ndarray, b: np.ndarray, h: float) -> np.ndarray:
    k1 = M @ q + b
    k2 = M @ (q + 0.5 * h * k1) + b
    k3 = M @ (q + 0.5 * h * k2) + b
    k4 = M @ (q + h * k3) + b
    return q + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _signs(v: np.ndarray, scale: np.ndarray) -> np.ndarray:
    s = np.sign(v)
    s[np.abs(v) <= TIE_TOL * scale] = 0.0
    return s


class _Integrator:
    def __init__(self, rhs: _NetworkRhs, q0: np.ndarray, step: float):
        self.rhs = rhs
        self.step = step
        self.q = np.array(q0, dtype=float)
        self.t = 0.0
        self.events: list[FluidEvent] = []
        self._snap_initial_ties()
        self._enter_mode(None)

    def _snap_initial_ties(self) -> None:
        u = self.q / self.rhs.p
        for lev in self.rhs._levels(u):
            if len(lev) > 1:
                self._snap(lev)

    def _snap(self, members: Sequence[int]) -> None:
        idx = list(members)
        common = self.q[idx].sum() / self.rhs.p[idx].sum()
        self.q[idx] = common * self.rhs.p[idx]

    def _enter_mode(self, prev_above) -> None:
        self.mode = self.rhs.mode(self.q, prev_above)
        self.C, self.d, self.tags = self.rhs.functionals(self.mode)
        self.fscale = np.array([self.rhs.scale if tag == "merge" else max(self.rhs.loads[m[0]], 1e-300)
                                for tag, m in self.tags])
        self.ref = _signs(self.C @ self.q + self.d, self.fscale)
        self.check_split = any(len(g) > 1 for g in self.mode.groups) or self._shared_levels()

    def _shared_levels(self) -> bool:
        return len(self.rhs._levels(self.q / self.rhs.p)) < len(self.mode.groups)

    def _fired(self, q_new: np.ndarray) -> tuple[np.ndarray, bool]:
        s = _signs(self.C @ q_new + self.d, self.fscale)
        crossed = (self.ref != 0) & (s == -self.ref)
        split = False
        if self.check_split:
            split = self.rhs.mode(q_new, self.mode.above).groups != self.mode.groups
        return crossed, split

    def advance(self, target: float) -> None:
        while self.t < target - 1e-14:
            h = min(self.step, target - self.t)
            q_new = _rk4(self.q, self.mode.M, self.mode.b, h)
            crossed, split = self._fired(q_new)
            if not crossed.any() and not split:
                self.t += h
                self.q = np.maximum(q_new, 0.0)
                s = _signs(self.C @ self.q + self.d, self.fscale)
                self.ref = np.where(self.ref == 0, s, self.ref)
                continue
            lo, hi = 0.0, h
            while hi - lo > EVENT_TIME_TOL:
                mid = 0.5 * (lo + hi)
                c_mid, s_mid = self._fired(_rk4(self.q, self.mode.M, self.mode.b, mid))
                if c_mid.any() or s_mid:
                    hi = mid
                else:
                    lo = mid
            q_hit = np.maximum(_rk4(self.q, self.mode.M, self.mode.b, hi), 0.0)
            crossed, split = self._fired(q_hit)
            self.q = q_hit
            self.t += hi
            self._handle(crossed, split)
            if len(self.events) > MAX_EVENTS:
                raise FluidIntegrationError(f"more than {MAX_EVENTS} events by t={self.t}; step size failure")

    def _handle(self, crossed: np.ndarray, split: bool) -> None:
        prev_above = list(self.mode.above)
        load_hits = []
        for k in np.flatnonzero(crossed):
            tag, stations = self.tags[k]
            if tag == "load":
                prev_above[stations[0]] = not prev_above[stations[0]]
                load_hits.append(stations[0])
            else:
                # bisection stops just past the crossing; pull the pair (and
                # anything caught between them) back onto one relative load
                u = self.q / self.rhs.p
                lo, hi = sorted(u[list(stations)])
                self._snap(np.flatnonzero((u >= lo) & (u <= hi)))
        # stations that now share a relative load are snapped onto it exactly
        for lev in self.rhs._levels(self.q / self.rhs.p):
            if len(lev) > 1:
                self._snap(lev)
        old = self.mode.groups
        self._enter_mode(prev_above)
        old_of = {s: g for g, members in enumerate(old) for s in members}
        for members in self.mode.groups:
            if len({old_of[s] for s in members}) > 1:
                self.events.append(FluidEvent(self.t, "merge", members))
        new_of = {s: g for g, members in enumerate(self.mode.groups) for s in members}
        for members in old:
            if len({new_of[s] for s in members}) > 1:
                self.events.append(FluidEvent(self.t, "split", members))
        if load_hits:
            self.events.append(FluidEvent(self.t, "load", tuple(sorted(load_hits))))


def fluid_network_integrate(config: NetworkConfig, q0, t_grid, step: float | None = None) -> FluidTrajectory:
    """Integrate the network fluid model and report q-bar on ``t_grid``.

    ``q0`` is a ``FluidState`` or per-station values in fractions of r.
    """
    if isinstance(q0, FluidState):
        q_init = np.asarray(q0.qbar, dtype=float)
        t0 = q0.time
    else:
        q_init = np.asarray(q0, dtype=float)
        t0 = 0.0
    if q_init.shape != (config.n_stations,):
        raise ValueError(f"q0 needs {config.n_stations} entries")
    if np.any(q_init < 0):
        raise ValueError("q0 must be nonnegative")
    times = np.asarray(t_grid, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) < 0) or times[0] < t0:
        raise ValueError("t_grid must be a nondecreasing sequence starting at or after q0's time")
    h = step if step is not None else 1e-3 / max(config.lam, config.mu)
    rhs = _NetworkRhs(config.p, [(e.i, e.j, e.p) for e in config.edges], config.lam, config.mu)
    integ = _Integrator(rhs, q_init, h)
    integ.t = t0
    out = np.empty((times.size, config.n_stations))
    for k, t in enumerate(times):
        integ.advance(t)
        out[k] = integ.q
    return FluidTrajectory(times, out, rhs.p.copy(), rhs.loads.copy(), integ.events)


def ssc_g(q, p) -> np.ndarray | float:
    """Spread of relative loads, max_j q_j/p_j - min_j q_j/p_j (row-wise for 2-D input)."""
    u = np.asarray(q, dtype=float) / np.asarray(p, dtype=float)
    out = u.max(axis=-1) - u.min(axis=-1)
    return out if np.ndim(out) else float(out)


def ssc_rate(config: NetworkConfig) -> float:
    """Guaranteed contraction speed of the relative-load spread.

    Minimum over disjoint nonempty station sets I, J of
    lambda/P(I) * (mass of pairs touching I) - lambda/P(J) * (mass of pairs inside J).
    The most-loaded set J can only receive from pairs fully inside J while the
    least-loaded set I receives every pair touching it, so this is positive on
    a connected network.
    """
    S = config.n_stations
    if S > 12:
        raise ValueError("set enumeration limited to 12 stations")
    p = config.p
    edges = [(e.i, e.j, e.p) for e in config.edges]
    best = math.inf
    labels = range(S)
    # assign each station to I (1), J (2) or neither (0)
    for code in range(3**S):
        x = code
        I, J = [], []
        for s in labels:
            x, d = divmod(x, 3)
            if d == 1:
                I.append(s)
            elif d == 2:
                J.append(s)
        if not I or not J:
            continue
        Iset, Jset = set(I), set(J)
        touch = sum(w for i, j, w in edges if i in Iset or j in Iset)
        inside = sum(w for i, j, w in edges if i in Jset and j in Jset)
        val = config.lam * (touch / p[I].sum() - inside / p[J].sum())
        best = min(best, val)
    return best


def ssc_bound(g0: float, rate: float, t) -> np.ndarray | float:
    """Linear upper envelope (g0 - rate*t)^+ for the spread."""
    out = np.maximum(g0 - rate * np.asarray(t, dtype=float), 0.0)
    return out if np.ndim(out) else float(out)


__all__ = [
    "FluidEvent",
    "FluidIntegrationError",
    "FluidState",
    "FluidTrajectory",
    "fluid_network_integrate",
    "fluid_single",
    "ssc_bound",
    "ssc_g",
    "ssc_rate",
]

