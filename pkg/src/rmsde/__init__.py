"""Mechanistic stochastic Rosenzweig-MacArthur predator-prey toolkit.

Exact jump-process simulation of the four-channel event model, the deterministic
mean-field ODE, and the absorbed chemical-Langevin diffusion with event,
Cholesky and diagonal noise factorizations, plus a Monte Carlo harness.
"""

__version__ = "0.1.0"

from rmsde.errors import (
    BlowupError,
    BudgetExceededError,
    DegenerateCovarianceError,
    DivergenceError,
    EnsembleError,
    InputDomainError,
    StiffnessError,
)
from rmsde.model import (
    DensityState,
    ModelParams,
    Regime,
    RegimeReport,
    classify_regime,
    cholesky_factor,
    covariance,
    diagonal_factor,
    drift,
    event_factor,
    jacobian,
    rates,
)

__all__ = [
    "__version__",
    "BlowupError",
    "BudgetExceededError",
    "DegenerateCovarianceError",
    "DivergenceError",
    "EnsembleError",
    "InputDomainError",
    "StiffnessError",
    "DensityState",
    "ModelParams",
    "Regime",
    "RegimeReport",
    "classify_regime",
    "cholesky_factor",
    "covariance",
    "diagonal_factor",
    "drift",
    "event_factor",
    "jacobian",
    "rates",
]
