"""One-dimensional Hughes evacuation model: particle and front-tracking solvers."""
from .model import (
    CostModel,
    FluxModel,
    PiecewiseConstantDensity,
    Scenario,
    VelocityModel,
    check_hypotheses,
    cost_eval,
    critical_density,
    density_cost_integral,
    density_mass,
    flux_eval,
)

__version__ = "0.1.0"
