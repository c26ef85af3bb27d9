"""Adaptive Dormand-Prince integration of the Rosenzweig-MacArthur ODE."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from rmsde.errors import DivergenceError, InputDomainError, StiffnessError
from rmsde.model import ModelParams, as_state, drift_array

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# difference between the 5th and embedded 4th order weights
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

# Shampine's 4th order continuous extension; row i multiplies stage i,
# columns multiply theta, theta^2, theta^3, theta^4.
_P = np.array(
    [
        [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
# PI controller exponents for an order-4 error estimate
_BETA = 0.04
_ALPHA = 0.2 - 0.75 * _BETA


@dataclass
class OdeTrajectory:
    """Solution of the ODE on a time grid.

    ``error_estimate`` accumulates the absolute local error estimates of every
    accepted step, a crude global error bound for the final state.
    """

    times: np.ndarray
    states: np.ndarray
    tolerances: tuple
    error_estimate: np.ndarray = field(default_factory=lambda: np.zeros(2))
    n_steps: int = 0
    n_rejected: int = 0

    @property
    def final_state(self):
        return self.states[-1]

    def to_csv(self, path):
        write_state_csv(path, self.times, self.states)


def write_state_csv(path, times, states, header="t,N,P"):
    """Write ``t,N,P`` rows with round-trip (17 significant digit) floats."""
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for t, (n, p) in zip(times, states):
            fh.write(f"{t:.17g},{n:.17g},{p:.17g}\n")


def _rhs(params, y):
    n, p = drift_array(params.k, params.m, params.c, y[0], y[1])
    return np.array([n, p])


def _initial_step(params, y0, f0, rel_tol, abs_tol, horizon):
    scale = abs_tol + np.abs(y0) * rel_tol
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, horizon)
    y1 = y0 + h0 * f0
    f1 = _rhs(params, y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, horizon)


def integrate(
    params: ModelParams,
    z0,
    horizon: float,
    rel_tol: float = 1e-8,
    abs_tol: float = 1e-10,
    output_grid=None,
) -> OdeTrajectory:
    """Integrate the Rosenzweig-MacArthur ODE from ``z0`` over ``[0, horizon]``.

    Without ``output_grid`` the accepted solver steps are returned; otherwise
    the dense output is evaluated on the grid (which must start at 0 or later
    and end no later than ``horizon``).
    """
    n0, p0 = as_state(z0, "z0")
    if not (horizon > 0 and math.isfinite(horizon)):
        raise InputDomainError(f"horizon must be positive, got {horizon!r}")
    for name, tol in (("rel_tol", rel_tol), ("abs_tol", abs_tol)):
        if not (0 < tol <= 1e-2):
            raise InputDomainError(f"{name} must lie in (0, 1e-2], got {tol!r}")
    grid = None
    if output_grid is not None:
        grid = np.asarray(output_grid, dtype=float)
        if grid.ndim != 1 or grid.size == 0:
            raise InputDomainError("output_grid must be a non-empty 1-D sequence")
        if np.any(np.diff(grid) <= 0) or grid[0] < 0 or grid[-1] > horizon * (1 + 1e-12):
            raise InputDomainError("output_grid must be strictly increasing within [0, horizon]")

    y = np.array([n0, p0])
    t = 0.0
    f = _rhs(params, y)
    h = _initial_step(params, y, f, rel_tol, abs_tol, horizon)
    h_min = 1e-14 * horizon
    err_prev = 1e-4
    total_err = np.zeros(2)
    n_steps = n_rejected = 0

    times = [0.0]
    states = [y.copy()]
    out_states = []
    gi = 0
    if grid is not None:
        while gi < grid.size and grid[gi] <= 0.0:
            out_states.append(y.copy())
            gi += 1

    K = np.empty((7, 2))
    while t < horizon:
        if h < h_min:
            raise StiffnessError(f"step size {h!r} underflowed at t={t!r}")
        last = t + h >= horizon
        if last:
            h = horizon - t
        K[0] = f
        for s in range(1, 7):
            K[s] = _rhs(params, y + h * (np.asarray(_A[s]) @ K[:s]))
        y_new = y + h * (_B[:6] @ K[:6])
        K[6] = _rhs(params, y_new)
        err_vec = h * (_E @ K)
        scale = abs_tol + np.maximum(np.abs(y), np.abs(y_new)) * rel_tol
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
        if not np.all(np.isfinite(y_new)):
            if h <= h_min * 10:
                raise DivergenceError(f"non-finite state at t={t!r}")
            h *= _MIN_FACTOR
            n_rejected += 1
            continue
        # small negative excursions are discretization noise; larger ones shrink the step
        if np.any(y_new < -abs_tol):
            h *= 0.5
            n_rejected += 1
            continue
        if err <= 1.0:
            y_clamped = np.maximum(y_new, 0.0)
            if grid is not None:
                while gi < grid.size and grid[gi] <= t + h * (1 + 1e-15):
                    theta = min((grid[gi] - t) / h, 1.0)
                    powers = theta ** np.arange(1, 5)
                    out_states.append(np.maximum(y + h * (K.T @ (_P @ powers)), 0.0))
                    gi += 1
            t = horizon if last else t + h
            f = _rhs(params, y_clamped) if np.any(y_clamped != y_new) else K[6]
            y = y_clamped
            total_err += np.abs(err_vec)
            n_steps += 1
            times.append(t)
            states.append(y.copy())
            factor = _SAFETY * max(err, 1e-10) ** -_ALPHA * err_prev**_BETA
            factor = min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
            err_prev = max(err, 1e-4)
            h *= factor
        else:
            n_rejected += 1
            h *= max(_MIN_FACTOR, _SAFETY * err ** -_ALPHA)

    if grid is not None:
        while gi < grid.size:
            out_states.append(y.copy())
            gi += 1
        times_out, states_out = grid.copy(), np.array(out_states)
    else:
        times_out, states_out = np.array(times), np.array(states)
    return OdeTrajectory(
        times=times_out,
        states=states_out,
        tolerances=(rel_tol, abs_tol),
        error_estimate=total_err,
        n_steps=n_steps,
        n_rejected=n_rejected,
    )


@dataclass
class DissipativityReport:
    entered: bool
    entry_time: Optional[float]
    violations_after_entry: int
    bound: float

    def to_dict(self):
        return {
            "entered": self.entered,
            "entry_time": self.entry_time,
            "violations_after_entry": self.violations_after_entry,
            "bound": self.bound,
        }


def absorbing_set_bound(params: ModelParams):
    """Level ``k (1 + c)^2 / (4 c)`` of the absorbing half-space for ``N + beta P``."""
    return params.k * (1 + params.c) ** 2 / (4 * params.c)


def dissipativity_check(
    traj: OdeTrajectory, params: ModelParams, beta: float = 1.0, eps: float = 0.1, delta: float = 0.1
) -> DissipativityReport:
    """Track the trajectory against the set ``{N <= k + delta, N + beta P <= bound + eps}``.

    Entry is the first time the path is inside; any later exit beyond
    ``10 * abs_tol`` counts as a violation.
    """
    if not (0 < beta <= 1):
        raise InputDomainError(f"beta must lie in (0, 1], got {beta!r}")
    if eps <= 0 or delta <= 0:
        raise InputDomainError("eps and delta must be positive")
    slack = 10 * traj.tolerances[1]
    level = absorbing_set_bound(params) + eps
    N, P = traj.states[:, 0], traj.states[:, 1]
    inside = (N <= params.k + delta) & (N + beta * P <= level)
    hits = np.flatnonzero(inside)
    if hits.size == 0:
        return DissipativityReport(False, None, 0, level)
    first = int(hits[0])
    after_n, after_s = N[first:], N[first:] + beta * P[first:]
    violations = int(np.count_nonzero((after_n > params.k + delta + slack) | (after_s > level + slack)))
    return DissipativityReport(True, float(traj.times[first]), violations, level)


def linear_functional_envelope(params: ModelParams, s0: float, times):
    """Upper envelope ``s0 e^{-ct} + bound (1 - e^{-ct})`` for ``N + beta P``."""
    decay = np.exp(-params.c * np.asarray(times, dtype=float))
    return s0 * decay + absorbing_set_bound(params) * (1 - decay)
