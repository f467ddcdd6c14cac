"""Numerics for the deterministic chordal Loewner equation on the real line.

Drivers in, hitting times, conformal weldings, and traced curves out, plus
experiment helpers built on top: welding perturbation sweeps, mesh welders,
and a Loewner-energy minimiser over partition welding constraints.
"""

from .drivers import (
    ConstantSegment,
    Driver,
    LinearSegment,
    Orientation,
    PartitionWeldingProblem,
    SampledSegment,
    SqrtSegment,
    constant_driver,
    driver_from_spec,
    driver_to_spec,
    piecewise_linear,
    sampled_driver,
    sqrt_slit,
    sqrt_slit_coefficient,
    steep_dip_pair,
    sup_distance,
    zoo,
)
from .flow import (
    BoundaryTrajectory,
    Hit,
    StepPolicy,
    evolve_interior,
    evolve_many,
    evolve_point,
    rk4_oracle,
    step_constant,
)

__version__ = "0.1.0"
