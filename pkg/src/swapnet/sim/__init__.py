"""Seeded simulation of the closed swapping network."""
from .engine import (
    ArrivalRecords,
    ChargingDist,
    SimPath,
    StationState,
    route,
    run_ctmc,
    run_des,
    run_replications,
    sample_grid,
)
from .invariants import InvariantReport, check_invariants
from .rng import UniformStream, replication_generator

__all__ = [
    "ArrivalRecords",
    "ChargingDist",
    "InvariantReport",
    "SimPath",
    "StationState",
    "UniformStream",
    "check_invariants",
    "replication_generator",
    "route",
    "run_ctmc",
    "run_des",
    "run_replications",
    "sample_grid",
]
