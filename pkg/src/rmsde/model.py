"""Closed-form model quantities for the four-channel predator-prey system.

Channels, in the fixed order used everywhere in the package::

    B  prey birth                 (+1,  0)   N
    C  prey competition death     (-1,  0)   N^2 / k
    D  predator death             ( 0, -1)   c P
    E  predation + conversion     (-1, +1)   m N P / (1 + N)

The ``*_array`` functions are unvalidated and broadcast over numpy arrays; the
simulation engines call them directly. The scalar functions validate their
input and return small numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np

from rmsde.errors import DegenerateCovarianceError, InputDomainError

CHANNELS = ("B", "C", "D", "E")
INCREMENTS = np.array([[1, 0], [-1, 0], [0, -1], [-1, 1]], dtype=np.int64)

# Cancellation below zero smaller than this is clamped; anything larger is a bug.
RADICAND_TOL = 1e-14


@dataclass(frozen=True)
class ModelParams:
    """Parameters ``(k, m, c)`` plus the system size.

    ``omega`` is the primary noise parameter and ``rho = omega ** -0.5`` is
    derived from it. ``omega = inf`` (``rho = 0``) switches the demographic
    noise off, which the engines treat as the deterministic limit.
    """

    k: float
    m: float
    c: float
    omega: float = 100.0
    rho: Optional[float] = None

    def __post_init__(self):
        for name in ("k", "m", "c"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float, np.floating)) and math.isfinite(value) and value > 0):
                raise InputDomainError(f"{name} must be a finite positive number, got {value!r}")
            object.__setattr__(self, name, float(value))
        omega = float(self.omega)
        if math.isnan(omega) or omega < 1.0:
            raise InputDomainError(f"omega must be >= 1, got {self.omega!r}")
        object.__setattr__(self, "omega", omega)
        derived = 0.0 if math.isinf(omega) else omega ** -0.5
        if self.rho is None:
            object.__setattr__(self, "rho", derived)
        else:
            rho = float(self.rho)
            if not math.isclose(rho, derived, rel_tol=1e-15, abs_tol=0.0):
                raise InputDomainError(f"rho={rho!r} disagrees with omega={omega!r} (expected {derived!r})")
            object.__setattr__(self, "rho", rho)

    @classmethod
    def from_rho(cls, k, m, c, rho):
        """Build parameters from the noise amplitude; ``omega = rho ** -2``."""
        rho = float(rho)
        if not math.isfinite(rho) or rho < 0 or rho > 1:
            raise InputDomainError(f"rho must lie in [0, 1], got {rho!r}")
        omega = math.inf if rho == 0 else rho ** -2
        return cls(k, m, c, omega, rho)

    def with_omega(self, omega):
        return ModelParams(self.k, self.m, self.c, omega)

    def with_rho(self, rho):
        return ModelParams.from_rho(self.k, self.m, self.c, rho)

    def to_dict(self):
        return {"k": self.k, "m": self.m, "c": self.c, "omega": self.omega, "rho": self.rho}


class DensityState(NamedTuple):
    """Prey and predator densities."""

    N: float
    P: float


def as_state(z, what="state"):
    """Validate a density pair and return it as two floats."""
    try:
        n, p = (float(v) for v in z)
    except (TypeError, ValueError) as exc:
        raise InputDomainError(f"{what} must be a pair of numbers, got {z!r}") from exc
    if not (math.isfinite(n) and math.isfinite(p)):
        raise InputDomainError(f"{what} must be finite, got ({n!r}, {p!r})")
    if n < 0 or p < 0:
        raise InputDomainError(f"{what} must be nonnegative, got ({n!r}, {p!r})")
    return n, p


def guarded_sqrt(x):
    """Square root that absorbs tiny negative round-off.

    Values in ``[-RADICAND_TOL, 0)`` are treated as zero; anything more
    negative raises ``FloatingPointError``.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < -RADICAND_TOL):
        raise FloatingPointError(f"negative radicand {x.min()!r} below -{RADICAND_TOL}")
    return np.sqrt(np.maximum(x, 0.0))


# -- vectorised kernels ------------------------------------------------------


def rates_array(k, m, c, N, P):
    """Density-level channel rates ``(lam_B, lam_C, lam_D, lam_E)``."""
    return N, N * N / k, c * P, m * N * P / (1.0 + N)


def drift_array(k, m, c, N, P):
    predation = m * N * P / (1.0 + N)
    return N - N * N / k - predation, predation - c * P


def covariance_array(k, m, c, N, P):
    """Entries ``(s11, s12, s22)`` of the symmetric covariance."""
    predation = m * N * P / (1.0 + N)
    return N + N * N / k + predation, -predation, c * P + predation


def event_factor_array(k, m, c, N, P):
    """Square roots of the channel rates; column e of the factor is ``sqrt(lam_e) * Delta_e``."""
    lb, lc, ld, le = rates_array(k, m, c, N, P)
    return guarded_sqrt(lb), guarded_sqrt(lc), guarded_sqrt(ld), guarded_sqrt(le)


def cholesky_array(k, m, c, N, P):
    """Entries ``(l11, l21, l22)`` of the lower-triangular factor. Needs ``s11 > 0``."""
    s11, s12, s22 = covariance_array(k, m, c, N, P)
    l11 = guarded_sqrt(s11)
    l21 = s12 / l11
    l22 = guarded_sqrt(s22 - s12 * s12 / s11)
    return l11, l21, l22


def diagonal_array(k, m, c, N, P):
    s11, _, s22 = covariance_array(k, m, c, N, P)
    return guarded_sqrt(s11), guarded_sqrt(s22)


# -- validated scalar API ----------------------------------------------------


def rates(params: ModelParams, z) -> np.ndarray:
    """Channel rates ``(lam_B, lam_C, lam_D, lam_E)`` at density state ``z``."""
    N, P = as_state(z)
    return np.array(rates_array(params.k, params.m, params.c, N, P), dtype=float)


def drift(params: ModelParams, z) -> np.ndarray:
    """Rosenzweig-MacArthur vector field at ``z``."""
    N, P = as_state(z)
    return np.array(drift_array(params.k, params.m, params.c, N, P), dtype=float)


def covariance(params: ModelParams, z) -> np.ndarray:
    N, P = as_state(z)
    s11, s12, s22 = covariance_array(params.k, params.m, params.c, N, P)
    return np.array([[s11, s12], [s12, s22]], dtype=float)


def stoichiometric_drift(params: ModelParams, z) -> np.ndarray:
    """Drift assembled as ``sum_e Delta_e lam_e``; independent of the closed form."""
    lam = rates(params, z)
    return INCREMENTS.T.astype(float) @ lam


def stoichiometric_covariance(params: ModelParams, z) -> np.ndarray:
    """Covariance assembled as ``sum_e lam_e Delta_e Delta_e^T``."""
    lam = rates(params, z)
    out = np.zeros((2, 2))
    for rate, inc in zip(lam, INCREMENTS.astype(float)):
        out += rate * np.outer(inc, inc)
    return out


def event_factor(params: ModelParams, z) -> np.ndarray:
    """The 2x4 event factor, one column per channel."""
    N, P = as_state(z)
    sb, sc, sd, se = event_factor_array(params.k, params.m, params.c, N, P)
    return np.array([[sb, -sc, 0.0, -se], [0.0, 0.0, -sd, se]], dtype=float)


def cholesky_factor(params: ModelParams, z) -> np.ndarray:
    """Lower-triangular factor with positive diagonal; interior states only."""
    N, P = as_state(z)
    if N <= 0 or P <= 0:
        raise DegenerateCovarianceError(
            f"covariance is singular on the boundary (N={N!r}, P={P!r}); use event_factor"
        )
    l11, l21, l22 = cholesky_array(params.k, params.m, params.c, N, P)
    return np.array([[l11, 0.0], [l21, l22]], dtype=float)


def diagonal_factor(params: ModelParams, z) -> np.ndarray:
    """Factor of the diagonal surrogate: matched variances, zero cross-covariance."""
    N, P = as_state(z)
    d1, d2 = diagonal_array(params.k, params.m, params.c, N, P)
    return np.array([[d1, 0.0], [0.0, d2]], dtype=float)


def jacobian(params: ModelParams, z) -> np.ndarray:
    """Analytic Jacobian of the drift."""
    N, P = as_state(z)
    k, m, c = params.k, params.m, params.c
    q = 1.0 + N
    return np.array(
        [
            [1.0 - 2.0 * N / k - m * P / (q * q), -m * N / q],
            [m * P / (q * q), ((m - c) * N - c) / q],
        ],
        dtype=float,
    )


class Regime(str, Enum):
    PREDATOR_EXTINCTION = "PredatorExtinction"
    STABLE_COEXISTENCE = "StableCoexistence"
    LIMIT_CYCLE = "LimitCycle"


@dataclass(frozen=True)
class RegimeReport:
    regime: Regime
    n_star: Optional[float] = None
    p_star: Optional[float] = None
    hopf_k: Optional[float] = None
    jac_trace_k3: Optional[float] = None

    def to_dict(self):
        return {
            "regime": self.regime.value,
            "n_star": self.n_star,
            "p_star": self.p_star,
            "hopf_k": self.hopf_k,
            "jac_trace_k3": self.jac_trace_k3,
        }


def classify_regime(params: ModelParams) -> RegimeReport:
    """Equilibria, Hopf threshold and long-run regime of the deterministic backbone.

    ``m == c`` and ``k == N*`` both count as predator extinction; ``k == 1 + 2 N*``
    is still stable coexistence.
    """
    k, m, c = params.k, params.m, params.c
    if m <= c:
        return RegimeReport(Regime.PREDATOR_EXTINCTION)
    n_star = c / (m - c)
    hopf_k = 1.0 + 2.0 * n_star
    if k <= n_star:
        return RegimeReport(Regime.PREDATOR_EXTINCTION, n_star=n_star, hopf_k=hopf_k)
    p_star = (1.0 + n_star) / m * (1.0 - n_star / k)
    trace = float(np.trace(jacobian(params, (n_star, p_star))))
    regime = Regime.STABLE_COEXISTENCE if k <= hopf_k else Regime.LIMIT_CYCLE
    return RegimeReport(regime, n_star=n_star, p_star=p_star, hopf_k=hopf_k, jac_trace_k3=trace)
