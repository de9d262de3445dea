"""Closed battery-swapping networks: exact, asymptotic and simulated behaviour."""
from .model import (
    ConfigError,
    Edge,
    NetworkConfig,
    QedParams,
    Regime,
    StationCapacity,
    build_network,
    effective_probs,
    load_config,
    provision,
    single_station,
    validate,
)

__version__ = "0.1.0"
