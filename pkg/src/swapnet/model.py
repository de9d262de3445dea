"""Network description, square-root capacity provisioning and validation.

Stations are indexed from 0 inside the library.  Config files and CSV
headers use 1-based station labels because that is how networks are usually
written down by hand.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import jsonschema
import numpy as np

PROB_TOL = 1e-12
INF = math.inf


class ConfigError(ValueError):
    """Raised for structurally invalid networks or capacity choices."""


class Regime(str, enum.Enum):
    LIMITED_CHARGERS = "limited"
    UNLIMITED_CHARGERS = "unlimited"
    SWAP_UNCONSTRAINED = "swap_unconstrained"

    @classmethod
    def parse(cls, value: "Regime | str") -> "Regime":
        if isinstance(value, Regime):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {
            "limited": cls.LIMITED_CHARGERS,
            "limited_chargers": cls.LIMITED_CHARGERS,
            "main": cls.LIMITED_CHARGERS,
            "unlimited": cls.UNLIMITED_CHARGERS,
            "unlimited_chargers": cls.UNLIMITED_CHARGERS,
            "swap_unconstrained": cls.SWAP_UNCONSTRAINED,
            "unconstrained": cls.SWAP_UNCONSTRAINED,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ConfigError(f"unknown regime {value!r}") from None


@dataclass(frozen=True)
class Edge:
    """Unordered station pair chosen by an arriving EV with probability ``p``.

    ``i == j`` is allowed and means the EV can only go to that station, which
    is how a single isolated station is expressed.
    """

    i: int
    j: int
    p: float

    def __post_init__(self) -> None:
        if self.i > self.j:
            a, b = self.j, self.i
            object.__setattr__(self, "i", a)
            object.__setattr__(self, "j", b)
        if not (0.0 < self.p <= 1.0):
            raise ConfigError(f"pair probability must lie in (0, 1], got {self.p}")


@dataclass(frozen=True)
class StationCapacity:
    B: int
    F: float  # int, or math.inf when chargers never bind
    G: float = 1  # int, or math.inf when swap servers never bind

    def __post_init__(self) -> None:
        for name in ("B", "F", "G"):
            v = getattr(self, name)
            if v != INF and (v < 0 or int(v) != v):
                raise ConfigError(f"{name} must be a nonnegative integer or inf, got {v}")
        if self.B == INF:
            raise ConfigError("B must be finite")


@dataclass(frozen=True)
class QedParams:
    beta: float
    gamma: float
    regime: Regime = Regime.LIMITED_CHARGERS

    def __post_init__(self) -> None:
        regime = Regime.parse(self.regime)
        object.__setattr__(self, "regime", regime)
        if not (math.isfinite(self.beta) and math.isfinite(self.gamma)):
            raise ConfigError("beta and gamma must be finite")
        if regime is Regime.LIMITED_CHARGERS and self.gamma > self.beta:
            raise ConfigError("limited-chargers regime needs gamma <= beta")
        if regime is Regime.SWAP_UNCONSTRAINED and not self.gamma > self.beta:
            raise ConfigError("swap-unconstrained regime needs gamma > beta")


def _exact(x: float | int | Fraction) -> Fraction:
    """Decimal reading of a user-facing number, so 0.1 means 1/10."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(repr(float(x)))


def _exact_effective_probs(edges: Sequence[Edge], n_stations: int) -> list[Fraction]:
    p = [Fraction(0)] * n_stations
    for e in edges:
        half = _exact(e.p) / 2
        p[e.i] += half
        p[e.j] += half
    return p


def _check_connected(edges: Sequence[Edge], n_stations: int) -> None:
    parent = list(range(n_stations))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for e in edges:
        parent[find(e.i)] = find(e.j)
    roots = {find(k) for k in range(n_stations)}
    if len(roots) > 1:
        raise ConfigError(
            f"station graph is disconnected ({len(roots)} components); "
            "every pair of stations must be linked through chosen pairs"
        )


def _check_edges(edges: Sequence[Edge], n_stations: int) -> None:
    if n_stations < 1:
        raise ConfigError("need at least one station")
    if not edges:
        raise ConfigError("no station pairs given")
    seen = set()
    for e in edges:
        if not (0 <= e.i < n_stations and 0 <= e.j < n_stations):
            raise ConfigError(f"pair ({e.i}, {e.j}) references a station outside 0..{n_stations - 1}")
        if (e.i, e.j) in seen:
            raise ConfigError(f"pair ({e.i}, {e.j}) listed twice")
        seen.add((e.i, e.j))
    total = math.fsum(e.p for e in edges)
    if abs(total - 1.0) > PROB_TOL:
        raise ConfigError(f"pair probabilities sum to {total!r}, expected 1")
    _check_connected(edges, n_stations)


def effective_probs(edges: Iterable[Edge], n_stations: int | None = None) -> np.ndarray:
    """Per-station arrival probability: half the mass of every pair touching it."""
    edges = tuple(edges)
    if n_stations is None:
        n_stations = 1 + max(max(e.i, e.j) for e in edges) if edges else 0
    _check_edges(edges, n_stations)
    return np.array([float(x) for x in _exact_effective_probs(edges, n_stations)])


def _route_weights(edges: Sequence[Edge], n_stations: int, max_queue: int) -> np.ndarray:
    """Integers proportional to p_j, so routing compares q_i*w_j with q_j*w_i exactly."""
    exact = _exact_effective_probs(edges, n_stations)
    for limit in (None, 10**6, 10**4):
        fr = exact if limit is None else [x.limit_denominator(limit) for x in exact]
        lcm = 1
        for x in fr:
            lcm = lcm * x.denominator // math.gcd(lcm, x.denominator)
        w = [int(x * lcm) for x in fr]
        if max(w) * max(max_queue, 1) < 2**62:
            return np.array(w, dtype=np.int64)
    raise ConfigError("station probabilities too finely resolved for exact routing comparisons")


@dataclass(frozen=True)
class NetworkConfig:
    n_stations: int
    edges: tuple[Edge, ...]
    lam: float
    mu: float
    r: int
    capacities: tuple[StationCapacity, ...]
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "capacities", tuple(self.capacities))
        validate(self)

    @cached_property
    def p(self) -> np.ndarray:
        return effective_probs(self.edges, self.n_stations)

    @property
    def B(self) -> np.ndarray:
        return np.array([c.B for c in self.capacities], dtype=np.int64)

    @property
    def F(self) -> np.ndarray:
        """Charger counts as floats (``inf`` when unlimited)."""
        return np.array([c.F for c in self.capacities], dtype=float)

    @property
    def G(self) -> np.ndarray:
        return np.array([c.G for c in self.capacities], dtype=float)

    @property
    def offered_load(self) -> float:
        return float(_exact(self.lam) * self.r / _exact(self.mu))

    @property
    def station_loads(self) -> np.ndarray:
        """p_j * lambda * r / mu, the invariant queue length at each station."""
        load = _exact(self.lam) * self.r / _exact(self.mu)
        return np.array([float(x * load) for x in _exact_effective_probs(self.edges, self.n_stations)])

    @cached_property
    def route_weights(self) -> np.ndarray:
        return _route_weights(self.edges, self.n_stations, int(self.B.max()) + self.r)

    def finite_F(self) -> np.ndarray:
        """Charger counts with ``inf`` replaced by a bound that can never bind."""
        F = self.F
        cap = self.B + self.r
        return np.where(np.isfinite(F), np.minimum(F, cap), cap).astype(np.int64)

    def station_label(self, j: int) -> str:
        return self.labels[j] if self.labels else str(j + 1)

    def to_dict(self) -> dict:
        def num(v: float) -> float | str:
            return "inf" if v == INF else int(v)

        return {
            "lambda": self.lam,
            "mu": self.mu,
            "r": self.r,
            "stations": self.n_stations,
            "edges": [{"i": e.i + 1, "j": e.j + 1, "p": e.p} for e in self.edges],
            "B": [c.B for c in self.capacities],
            "F": [num(c.F) for c in self.capacities],
            "G": [num(c.G) for c in self.capacities],
        }


def validate(config: NetworkConfig) -> None:
    """Raise ``ConfigError`` unless the network is well formed."""
    _check_edges(config.edges, config.n_stations)
    if not (config.lam > 0 and config.mu > 0 and math.isfinite(config.lam) and math.isfinite(config.mu)):
        raise ConfigError("lambda and mu must be positive and finite")
    if int(config.r) != config.r or config.r < 1:
        raise ConfigError("r must be a positive integer")
    if len(config.capacities) != config.n_stations:
        raise ConfigError(f"expected {config.n_stations} capacity records, got {len(config.capacities)}")
    for j, c in enumerate(config.capacities):
        if c.F < 1:
            raise ConfigError(f"station {j + 1} has no charging points")
        if c.F > c.B + c.G:
            raise ConfigError(
                f"station {j + 1}: F={c.F} exceeds B+G={c.B + c.G}; "
                "chargers beyond spare batteries plus swap servers can never all be used"
            )


def provision(
    lam: float,
    mu: float,
    r: int,
    qed: QedParams,
    p: Sequence[float] | Sequence[Fraction],
    G: int | float | Sequence[int | float] = 1,
) -> tuple[StationCapacity, ...]:
    """Square-root staffing of spare batteries and chargers per station.

    The deterministic part p_j*lambda*r/mu is evaluated in exact rational
    arithmetic so that an integral load is never bumped up by a stray ulp
    before the ceiling.
    """
    if not (lam > 0 and mu > 0):
        raise ConfigError("lambda and mu must be positive")
    if int(r) != r or r < 1:
        raise ConfigError("r must be a positive integer")
    n = len(p)
    if isinstance(G, (int, float)):
        G_list = [G] * n
    else:
        G_list = list(G)
        if len(G_list) != n:
            raise ConfigError("G must be a scalar or one value per station")
    if qed.regime is not Regime.LIMITED_CHARGERS:
        # both alternative regimes assume every battery in need can reach a charger
        G_list = [INF] * n

    load = _exact(lam) * int(r) / _exact(mu)
    root = math.sqrt(load)
    caps = []
    for j, pj in enumerate(p):
        pj_exact = _exact(pj)
        base = pj_exact * load

        def level(coef: float) -> int:
            slack = float(pj_exact) * coef * root
            return math.ceil(base + Fraction(slack))

        B = level(qed.beta)
        if B < 0:
            raise ConfigError(f"station {j + 1}: beta={qed.beta} gives a negative spare-battery level at r={r}")
        if qed.regime is Regime.UNLIMITED_CHARGERS:
            F: float = INF
        else:
            F = level(qed.gamma)
            if F < 1:
                raise ConfigError(f"station {j + 1}: gamma={qed.gamma} leaves no chargers at r={r}")
            if F > B + G_list[j]:
                raise ConfigError(
                    f"station {j + 1}: rounding gives F={F} > B+G={B + G_list[j]}; raise G or adjust beta/gamma"
                )
        caps.append(StationCapacity(B=B, F=F, G=G_list[j]))
    return tuple(caps)


def build_network(
    edges: Iterable[Edge | tuple[int, int, float]],
    lam: float,
    mu: float,
    r: int,
    qed: QedParams,
    G: int | float | Sequence[int | float] = 1,
    n_stations: int | None = None,
) -> NetworkConfig:
    """Assemble a provisioned network from 0-based pairs."""
    edge_list = tuple(e if isinstance(e, Edge) else Edge(int(e[0]), int(e[1]), float(e[2])) for e in edges)
    if n_stations is None:
        n_stations = 1 + max(max(e.i, e.j) for e in edge_list)
    exact_p = _exact_effective_probs(edge_list, n_stations)
    _check_edges(edge_list, n_stations)
    caps = provision(lam, mu, r, qed, exact_p, G)
    return NetworkConfig(n_stations, edge_list, lam, mu, int(r), caps)


def single_station(lam: float, mu: float, r: int, B: int, F: float, G: float = INF) -> NetworkConfig:
    """One isolated station with explicit capacities."""
    return NetworkConfig(1, (Edge(0, 0, 1.0),), lam, mu, int(r), (StationCapacity(B, F, G),))


CONFIG_SCHEMA = {
    "type": "object",
    "required": ["lambda", "mu", "r", "stations", "edges", "beta", "gamma"],
    "additionalProperties": False,
    "properties": {
        "lambda": {"type": "number", "exclusiveMinimum": 0},
        "mu": {"type": "number", "exclusiveMinimum": 0},
        "r": {"type": "integer", "minimum": 1},
        "stations": {"type": "integer", "minimum": 1},
        "edges": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["i", "j", "p"],
                "additionalProperties": False,
                "properties": {
                    "i": {"type": "integer", "minimum": 1},
                    "j": {"type": "integer", "minimum": 1},
                    "p": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                },
            },
        },
        "beta": {"type": "number"},
        "gamma": {"type": "number"},
        "regime": {"type": "string", "enum": ["limited", "unlimited", "swap_unconstrained"]},
        "G": {
            "oneOf": [
                {"type": "integer", "minimum": 0},
                {"type": "array", "items": {"type": "integer", "minimum": 0}},
            ]
        },
    },
}


def config_from_mapping(data: Mapping) -> tuple[NetworkConfig, QedParams]:
    try:
        jsonschema.validate(dict(data), CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {path}: {exc.message}") from None
    qed = QedParams(float(data["beta"]), float(data["gamma"]), data.get("regime", "limited"))
    edges = [Edge(e["i"] - 1, e["j"] - 1, float(e["p"])) for e in data["edges"]]
    G = data.get("G", 1)
    net = build_network(edges, data["lambda"], data["mu"], data["r"], qed, G=G, n_stations=data["stations"])
    return net, qed


def load_config(path: str | Path) -> tuple[NetworkConfig, QedParams]:
    """Read a JSON network description (1-based station labels)."""
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return config_from_mapping(data)
