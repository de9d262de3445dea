"""Fluid paths, diffusion densities and limiting performance measures."""
from .diffusion import (
    DiffusionSpec,
    LimitPath,
    diffusion_alpha,
    diffusion_cdf,
    diffusion_density,
    diffusion_spec,
    expected_wait_limit,
    scaled_wait_constant,
    simulate_limit_diffusion,
    spec_from_qed,
    tail_integral,
    tail_mass,
    wait_probability_limit,
)
from .fluid import (
    FluidEvent,
    FluidIntegrationError,
    FluidState,
    FluidTrajectory,
    fluid_network_integrate,
    fluid_single,
    ssc_bound,
    ssc_g,
    ssc_rate,
)
from .interchange import InterchangePoint, interchange_check

__all__ = [name for name in dir() if not name.startswith("_")]
