"""Absorbed Euler-Maruyama integration of the chemical-Langevin diffusion.

A step is ``z + mu(z) dt + rho L(z) dB`` with ``dB ~ Normal(0, dt I)`` and
``L`` one of three factors of the covariance. At the first step where a
coordinate is ``<= 0`` both coordinates are clipped at zero and the path is
frozen there for the rest of the horizon.

The batched engines advance many paths at once but each path consumes only
its own generator, so a path's trajectory does not depend on which batch it
ran in.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from rmsde.errors import BlowupError, DegenerateCovarianceError, InputDomainError
from rmsde.model import (
    ModelParams,
    as_state,
    cholesky_array,
    diagonal_array,
    drift_array,
    event_factor_array,
    guarded_sqrt,
)
from rmsde.streams import as_generator

# normals are drawn per path in blocks of this many steps
NOISE_BLOCK = 1000


class FactorizationKind(str, Enum):
    EVENT4D = "Event4D"
    CHOLESKY2D = "Cholesky2D"
    DIAGONAL2D = "Diagonal2D"

    @property
    def noise_dim(self):
        return 4 if self is FactorizationKind.EVENT4D else 2

    @property
    def short_name(self):
        return {"Event4D": "event", "Cholesky2D": "cholesky", "Diagonal2D": "diagonal"}[self.value]

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        for kind in cls:
            if key in (kind.value.lower(), kind.short_name):
                return kind
        raise InputDomainError(f"unknown factorization {value!r}; expected event, cholesky or diagonal")


class AbsorbedAxis(str, Enum):
    PREY_ZERO = "PreyZero"
    PREDATOR_ZERO = "PredatorZero"
    BOTH = "Both"


# integer codes used by the batched engine
AXIS_NONE, AXIS_PREY, AXIS_PREDATOR, AXIS_BOTH = 0, 1, 2, 3
_AXIS_FROM_CODE = {AXIS_PREY: AbsorbedAxis.PREY_ZERO, AXIS_PREDATOR: AbsorbedAxis.PREDATOR_ZERO, AXIS_BOTH: AbsorbedAxis.BOTH}


def n_steps_for(dt, horizon):
    """``ceil(horizon / dt)``, ignoring round-off in the ratio."""
    if not (dt > 0 and math.isfinite(dt)):
        raise InputDomainError(f"dt must be positive, got {dt!r}")
    if not (horizon > 0 and math.isfinite(horizon)):
        raise InputDomainError(f"horizon must be positive, got {horizon!r}")
    if dt > horizon:
        raise InputDomainError(f"dt={dt!r} exceeds horizon={horizon!r}")
    return max(1, math.ceil(horizon / dt - 1e-9))


@dataclass
class AbsorbedPath:
    """Uniform-grid EM path; states after ``absorption_time`` repeat the clipped state."""

    dt: float
    times: np.ndarray
    states: np.ndarray
    absorption_time: Optional[float] = None
    absorbed_axis: Optional[AbsorbedAxis] = None
    absorption_index: Optional[int] = None

    @property
    def final_state(self):
        return self.states[-1]

    def absorbed_flags(self):
        flags = np.zeros(self.times.size, dtype=np.int64)
        if self.absorption_index is not None:
            flags[self.absorption_index :] = 1
        return flags

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("t,N,P,absorbed\n")
            for t, (n, p), a in zip(self.times, self.states, self.absorbed_flags()):
                fh.write(f"{t:.17g},{n:.17g},{p:.17g},{a}\n")

    def summary(self):
        return {
            "absorption_time": self.absorption_time,
            "absorbed_axis": None if self.absorbed_axis is None else self.absorbed_axis.value,
            "final_state": [float(self.states[-1, 0]), float(self.states[-1, 1])],
        }

    def write_summary(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass
class AxisPath:
    """One-dimensional absorbed path on a boundary axis."""

    dt: float
    times: np.ndarray
    values: np.ndarray
    absorption_time: Optional[float] = None
    absorption_index: Optional[int] = None


def em_update(kind, params, N, P, dt, dB):
    """EM update of arrays ``N, P`` with raw increments ``dB[..., j]``; no clipping."""
    k, m, c, rho = params.k, params.m, params.c, params.rho
    muN, muP = drift_array(k, m, c, N, P)
    if kind is FactorizationKind.EVENT4D:
        sb, sc, sd, se = event_factor_array(k, m, c, N, P)
        dN = sb * dB[..., 0] - sc * dB[..., 1] - se * dB[..., 3]
        dP = -sd * dB[..., 2] + se * dB[..., 3]
    elif kind is FactorizationKind.CHOLESKY2D:
        l11, l21, l22 = cholesky_array(k, m, c, N, P)
        dN = l11 * dB[..., 0]
        dP = l21 * dB[..., 0] + l22 * dB[..., 1]
    else:
        d1, d2 = diagonal_array(k, m, c, N, P)
        dN = d1 * dB[..., 0]
        dP = d2 * dB[..., 1]
    return N + muN * dt + rho * dN, P + muP * dt + rho * dP


def em_step(params: ModelParams, z, dt: float, noise, kind) -> np.ndarray:
    """One unclipped EM step from ``z`` with Brownian increment ``noise``."""
    kind = FactorizationKind.parse(kind)
    N, P = as_state(z)
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (kind.noise_dim,):
        raise InputDomainError(f"{kind.value} needs a noise vector of length {kind.noise_dim}, got shape {noise.shape}")
    if not dt > 0:
        raise InputDomainError(f"dt must be positive, got {dt!r}")
    if kind is FactorizationKind.CHOLESKY2D and (N <= 0 or P <= 0):
        raise DegenerateCovarianceError("Cholesky factor is undefined on the boundary")
    n_new, p_new = em_update(kind, params, np.float64(N), np.float64(P), dt, noise)
    return np.array([n_new, p_new], dtype=float)


def _draw_block(rngs, live, b, dim, out):
    for j in live:
        out[:b, j, :] = rngs[j].standard_normal((b, dim))


def run_absorbed_batch(params, z0, dt, n_steps, kind, rngs, stride=1, index_offset=0):
    """Advance a batch of absorbed EM paths.

    ``z0`` is a pair or an ``(M, 2)`` array. Returns ``(record, tau_index,
    axis_code)``: states at every ``stride``-th step including step 0 with
    shape ``(n_steps // stride + 1, M, 2)``, the absorption step (-1 if none)
    and the absorbed-axis code per path.
    """
    kind = FactorizationKind.parse(kind)
    M = len(rngs)
    z0 = np.broadcast_to(np.asarray(z0, dtype=float), (M, 2))
    if np.any(~np.isfinite(z0)) or np.any(z0 <= 0):
        raise InputDomainError("initial states must be strictly interior")
    if stride < 1:
        raise InputDomainError("stride must be positive")
    dim = kind.noise_dim
    sqrt_dt = math.sqrt(dt)
    noisy = params.rho != 0.0

    N = z0[:, 0].copy()
    P = z0[:, 1].copy()
    tau = np.full(M, -1, dtype=np.int64)
    axis = np.zeros(M, dtype=np.int8)
    record = np.empty((n_steps // stride + 1, M, 2))
    record[0, :, 0] = N
    record[0, :, 1] = P

    live = np.arange(M)
    n_live, p_live = N.copy(), P.copy()
    noise = np.zeros((min(NOISE_BLOCK, n_steps), M, dim))
    block_end = 0
    for step in range(1, n_steps + 1):
        if step > block_end:
            b = min(NOISE_BLOCK, n_steps - block_end)
            block_start, block_end = block_end, block_end + b
            if noisy and live.size:
                _draw_block(rngs, live, b, dim, noise)
        if live.size:
            dB = noise[step - 1 - block_start, live] * sqrt_dt
            n_new, p_new = em_update(kind, params, n_live, p_live, dt, dB)
            bad = ~(np.isfinite(n_new) & np.isfinite(p_new))
            if np.any(bad):
                j = int(live[np.flatnonzero(bad)[0]])
                N[live], P[live] = n_live, p_live
                raise BlowupError(
                    f"non-finite state on path {j + index_offset} at step {step}",
                    partial_path=record[: (step - 1) // stride + 1, j].copy(),
                    path_index=j + index_offset,
                )
            prey_hit = n_new <= 0
            pred_hit = p_new <= 0
            hit = prey_hit | pred_hit
            if np.any(hit):
                n_new = np.maximum(n_new, 0.0)
                p_new = np.maximum(p_new, 0.0)
                dead = live[hit]
                tau[dead] = step
                axis[dead] = np.where(
                    prey_hit[hit] & pred_hit[hit], AXIS_BOTH, np.where(prey_hit[hit], AXIS_PREY, AXIS_PREDATOR)
                )
                N[dead] = n_new[hit]
                P[dead] = p_new[hit]
                keep = ~hit
                live, n_live, p_live = live[keep], n_new[keep], p_new[keep]
            else:
                n_live, p_live = n_new, p_new
        if step % stride == 0:
            N[live], P[live] = n_live, p_live
            r = step // stride
            record[r, :, 0] = N
            record[r, :, 1] = P
    return record, tau, axis


def simulate_absorbed(params: ModelParams, z0, dt: float, horizon: float, kind, rng_stream) -> AbsorbedPath:
    """Single absorbed EM path on the grid ``0, dt, ..., ceil(horizon/dt) dt``."""
    kind = FactorizationKind.parse(kind)
    N0, P0 = as_state(z0, "z0")
    if N0 <= 0 or P0 <= 0:
        raise InputDomainError(f"z0 must be strictly interior, got ({N0!r}, {P0!r})")
    n_steps = n_steps_for(dt, horizon)
    rng = as_generator(rng_stream)
    times = np.arange(n_steps + 1) * dt
    try:
        record, tau, axis = run_absorbed_batch(params, (N0, P0), dt, n_steps, kind, [rng])
    except BlowupError as exc:
        partial = exc.partial_path
        exc.partial_path = AbsorbedPath(dt, times[: len(partial)], partial)
        raise
    states = record[:, 0, :]
    if tau[0] < 0:
        return AbsorbedPath(dt, times, states)
    j = int(tau[0])
    return AbsorbedPath(dt, times, states, absorption_time=j * dt, absorbed_axis=_AXIS_FROM_CODE[int(axis[0])], absorption_index=j)


# -- boundary-axis diffusions ----------------------------------------------------


def run_axis_batch(drift, diffusion_sq, x0, dt, n_steps, rngs, stride=1):
    """Absorbed scalar EM ``x + drift(x) dt + sqrt(diffusion_sq(x)) dB``, frozen at 0.

    Returns ``(record, tau_index)`` as :func:`run_absorbed_batch`.
    """
    M = len(rngs)
    x = np.broadcast_to(np.asarray(x0, dtype=float), (M,)).copy()
    if np.any(~np.isfinite(x)) or np.any(x < 0):
        raise InputDomainError("initial values must be finite and nonnegative")
    tau = np.where(x <= 0, 0, -1).astype(np.int64)
    x = np.maximum(x, 0.0)
    record = np.empty((n_steps // stride + 1, M))
    record[0] = x
    sqrt_dt = math.sqrt(dt)
    live = np.flatnonzero(tau < 0)
    noise = np.zeros((min(NOISE_BLOCK, n_steps), M))
    block_end = 0
    for step in range(1, n_steps + 1):
        if step > block_end:
            b = min(NOISE_BLOCK, n_steps - block_end)
            block_start, block_end = block_end, block_end + b
            for j in live:
                noise[:b, j] = rngs[j].standard_normal(b)
        if live.size:
            xl = x[live]
            new = xl + drift(xl) * dt + guarded_sqrt(diffusion_sq(xl)) * (noise[step - 1 - block_start, live] * sqrt_dt)
            if not np.all(np.isfinite(new)):
                j = int(live[np.flatnonzero(~np.isfinite(new))[0]])
                raise BlowupError(f"non-finite state on path {j} at step {step}", partial_path=record[:, j].copy(), path_index=j)
            hit = new <= 0
            x[live] = np.maximum(new, 0.0)
            if np.any(hit):
                tau[live[hit]] = step
                live = live[~hit]
        if step % stride == 0:
            record[step // stride] = x
    return record, tau


def _axis_path(record, tau, dt, n_steps):
    times = np.arange(n_steps + 1) * dt
    j = int(tau[0])
    if j < 0:
        return AxisPath(dt, times, record[:, 0])
    return AxisPath(dt, times, record[:, 0], absorption_time=j * dt, absorption_index=j)


def prey_axis_coefficients(params: ModelParams):
    """Drift and squared diffusion of the prey-only diffusion (predator absent)."""
    k, rho = params.k, params.rho
    return (lambda x: x - x * x / k), (lambda x: rho * rho * (x + x * x / k))


def predator_axis_coefficients(params: ModelParams):
    """Drift and squared diffusion of the predator-only (square-root) diffusion."""
    c, rho = params.c, params.rho
    return (lambda x: -c * x), (lambda x: rho * rho * (c * x))


def _axis_single(coeffs, x0, dt, horizon, rng_stream, what):
    x0 = float(x0)
    if not (math.isfinite(x0) and x0 >= 0):
        raise InputDomainError(f"{what} must be finite and nonnegative, got {x0!r}")
    n_steps = n_steps_for(dt, horizon)
    record, tau = run_axis_batch(*coeffs, x0, dt, n_steps, [as_generator(rng_stream)])
    return _axis_path(record, tau, dt, n_steps)


def simulate_axis_prey(params: ModelParams, n0: float, dt: float, horizon: float, rng_stream) -> AxisPath:
    """Absorbed EM for ``dN = (N - N^2/k) dt + rho sqrt(N + N^2/k) dB``."""
    return _axis_single(prey_axis_coefficients(params), n0, dt, horizon, rng_stream, "n0")


def simulate_axis_predator(params: ModelParams, p0: float, dt: float, horizon: float, rng_stream) -> AxisPath:
    """Absorbed EM for ``dP = -c P dt + rho sqrt(c P) dB``."""
    return _axis_single(predator_axis_coefficients(params), p0, dt, horizon, rng_stream, "p0")
