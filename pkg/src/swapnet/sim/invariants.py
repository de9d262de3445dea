"""Independent checks of the bookkeeping identities on recorded samples."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import SimPath


@dataclass
class InvariantReport:
    samples: int = 0
    conservation: int = 0
    charging: int = 0
    waiting: int = 0
    spares_and_waiting: int = 0
    bounds: int = 0
    population: int = 0
    in_loop: int = 0
    messages: list[str] = field(default_factory=list)

    @property
    def total(self) -> int:
        return (self.conservation + self.charging + self.waiting + self.spares_and_waiting + self.bounds
                + self.population + self.in_loop)

    def merge(self, other: "InvariantReport") -> "InvariantReport":
        out = InvariantReport()
        for name in ("samples", "conservation", "charging", "waiting", "spares_and_waiting", "bounds",
                     "population", "in_loop"):
            setattr(out, name, getattr(self, name) + getattr(other, name))
        out.messages = (self.messages + other.messages)[:20]
        return out

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if k != "messages"} | {"total": self.total}


def check_invariants(path: SimPath) -> InvariantReport:
    """Count identity violations over every sampled instant.

    Conservation: batteries on EVs on the road (one each), plus batteries held
    at stations, equal r + sum(B).  A station holds max(q_j, B_j) batteries:
    q_j depleted ones plus (B_j - q_j)^+ full spares; EVs waiting there hold none.
    """
    rep = InvariantReport(samples=int(path.sample_times.size), in_loop=path.event_violations)
    if path.sample_times.size == 0:
        return rep
    B = path.B[None, :]
    F = np.where(np.isfinite(path.F), path.F, np.inf)[None, :]
    q, busy, wait, L = path.q, path.charging, path.waiting, path.driving
    spares = np.maximum(B - q, 0)

    held = np.maximum(q, B).sum(axis=1)
    bad = L + held != path.r + path.B.sum()
    rep.conservation = int(bad.sum())
    rep.charging = int((busy != np.minimum(q, F)).sum())
    rep.waiting = int((wait != np.maximum(q - B, 0)).sum())
    rep.spares_and_waiting = int(((spares > 0) & (wait > 0)).sum())
    rep.bounds = int(((q < 0) | (q > B + path.r)).sum())
    rep.population = int(((L < 0) | (L + wait.sum(axis=1) != path.r)).sum())
    if rep.total:
        rows = np.flatnonzero(bad | (busy != np.minimum(q, F)).any(axis=1) | (wait != np.maximum(q - B, 0)).any(axis=1))
        for k in rows[:5]:
            rep.messages.append(f"t={path.sample_times[k]:.6g}: q={q[k].tolist()} L={int(L[k])}")
    return rep
