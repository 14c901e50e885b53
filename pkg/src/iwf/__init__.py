"""Nash equilibria of the multiuser frequency-selective power-control game.

Iterative waterfilling and gradient-projection algorithms, exact capped-simplex
projections, sufficient conditions for convergence, and the experiments that
probe them.
"""

from .algorithms import AlgorithmConfig, RunTrace, ne_residual, rate_gradient, run
from .conditions import build_hmax, check_all, estimate_usable_carriers, spectral_radius
from .errors import DomainError, EstimationError, FeasibilityError, IWFError, MatrixError
from .model import PhysicalScenario, Scenario, normalize, rate, rates, sinr, snr_gap_from_ser
from .projection import (
    CappedSimplex,
    WaterfillingResult,
    project_capped_simplex,
    project_metric,
    water_level,
    waterfill_response,
)

__version__ = "0.1.0"

__all__ = [
    "AlgorithmConfig",
    "RunTrace",
    "run",
    "ne_residual",
    "rate_gradient",
    "build_hmax",
    "check_all",
    "estimate_usable_carriers",
    "spectral_radius",
    "IWFError",
    "DomainError",
    "EstimationError",
    "FeasibilityError",
    "MatrixError",
    "PhysicalScenario",
    "Scenario",
    "normalize",
    "rate",
    "rates",
    "sinr",
    "snr_gap_from_ser",
    "CappedSimplex",
    "WaterfillingResult",
    "project_capped_simplex",
    "project_metric",
    "water_level",
    "waterfill_response",
]
