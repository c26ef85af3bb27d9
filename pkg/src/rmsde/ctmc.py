"""Exact (Gillespie direct method) simulation of the count-level event model.

Counts live on the nonnegative integer lattice and the intensities carry
Kurtz density-dependent scaling, ``Lambda_e(x) = omega * lam_e(x / omega)``.
Each axis absorbs on its own: once ``n = 0`` it stays there while the predator
keeps dying out, and once ``p = 0`` the prey follows a logistic birth-death
chain. This differs from the diffusion, which freezes the whole state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np

from rmsde.errors import BudgetExceededError, InputDomainError
from rmsde.model import CHANNELS, INCREMENTS, ModelParams, rates_array
from rmsde.streams import as_generator

DEFAULT_JUMP_BUDGET = 10**9

_STATUS_OK = 0
_STATUS_BUDGET = 1


class CountState(NamedTuple):
    n: int
    p: int


@dataclass
class JumpPath:
    """One exact sample path.

    ``states[i]`` is the state right after the jump at ``jump_times[i]`` fired
    by channel ``channels[i]`` (an index into ``CHANNELS``).
    """

    x0: CountState
    jump_times: np.ndarray
    states: np.ndarray
    channels: np.ndarray
    omega: float
    horizon: float

    @property
    def n_jumps(self):
        return int(self.jump_times.size)

    def state_at_index(self, i):
        """State after ``i`` jumps (``i = 0`` is the initial state)."""
        return tuple(self.x0) if i == 0 else tuple(int(v) for v in self.states[i - 1])

    def to_csv(self, path):
        """Write ``t,n,p,channel`` rows; the initial state has an empty channel."""
        with open(path, "w", newline="") as fh:
            fh.write("t,n,p,channel\n")
            fh.write(f"{0.0:.17g},{self.x0[0]},{self.x0[1]},\n")
            for t, (n, p), ch in zip(self.jump_times, self.states, self.channels):
                fh.write(f"{t:.17g},{n},{p},{CHANNELS[ch]}\n")


def _check_count_state(x):
    try:
        n, p = x
    except (TypeError, ValueError) as exc:
        raise InputDomainError(f"count state must be a pair, got {x!r}") from exc
    for v in (n, p):
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 0:
            raise InputDomainError(f"count state must hold nonnegative integers, got {x!r}")
    return int(n), int(p)


def scaled_intensities(params: ModelParams, x) -> np.ndarray:
    """Channel intensities ``omega * lam_e(x / omega)`` at count state ``x``."""
    n, p = _check_count_state(x)
    omega = params.omega
    if math.isinf(omega):
        raise InputDomainError("count-level intensities need a finite omega")
    return omega * np.array(rates_array(params.k, params.m, params.c, n / omega, p / omega), dtype=float)


@numba.njit(cache=True)
def _intensities(k, m, c, omega, n, p, out):
    N = n / omega
    P = p / omega
    out[0] = omega * N
    out[1] = omega * (N * N / k)
    out[2] = omega * (c * P)
    out[3] = omega * (m * N * P / (1.0 + N))


@numba.njit(cache=True)
def _ssa_kernel(rng, k, m, c, omega, n0, p0, horizon, max_jumps, store, grid):
    """Direct-method SSA.

    Returns jump times, post-jump states, channels, the number of jumps, grid
    samples of the counts and a status flag.
    """
    cap = 1024 if store else 1
    times = np.empty(cap)
    states = np.empty((cap, 2), dtype=np.int64)
    chans = np.empty(cap, dtype=np.int8)
    samples = np.empty((grid.size, 2), dtype=np.int64)
    lam = np.empty(4)
    inc = np.array([[1, 0], [-1, 0], [0, -1], [-1, 1]], dtype=np.int64)

    n = n0
    p = p0
    t = 0.0
    gi = 0
    count = 0
    status = 0
    while True:
        _intensities(k, m, c, omega, n, p, lam)
        total = lam[0] + lam[1] + lam[2] + lam[3]
        if total <= 0.0:
            break
        u = rng.random()
        t_new = t - math.log1p(-u) / total
        if t_new > horizon:
            break
        if count >= max_jumps:
            status = 1
            break
        target = rng.random() * total
        acc = 0.0
        e = -1
        for j in range(4):
            acc += lam[j]
            if acc > target:
                e = j
                break
        if e < 0:
            # target landed on the rounding edge; take the last channel with positive rate
            for j in range(3, -1, -1):
                if lam[j] > 0.0:
                    e = j
                    break
        while gi < grid.size and grid[gi] < t_new:
            samples[gi, 0] = n
            samples[gi, 1] = p
            gi += 1
        n += inc[e, 0]
        p += inc[e, 1]
        t = t_new
        if store:
            if count == cap:
                cap *= 2
                new_times = np.empty(cap)
                new_states = np.empty((cap, 2), dtype=np.int64)
                new_chans = np.empty(cap, dtype=np.int8)
                new_times[:count] = times[:count]
                new_states[:count] = states[:count]
                new_chans[:count] = chans[:count]
                times, states, chans = new_times, new_states, new_chans
            times[count] = t
            states[count, 0] = n
            states[count, 1] = p
            chans[count] = e
        count += 1
    while gi < grid.size:
        samples[gi, 0] = n
        samples[gi, 1] = p
        gi += 1
    return times, states, chans, count, samples, status


def _check_sim_args(params, horizon, max_jumps):
    if not (horizon > 0 and math.isfinite(horizon)):
        raise InputDomainError(f"horizon must be positive, got {horizon!r}")
    if math.isinf(params.omega):
        raise InputDomainError("exact simulation needs a finite omega")
    if max_jumps < 1:
        raise InputDomainError("max_jumps must be positive")


def simulate(params: ModelParams, x0, horizon: float, rng_stream, max_jumps: int = DEFAULT_JUMP_BUDGET) -> JumpPath:
    """Simulate one exact path on ``[0, horizon]``.

    Stops early once every intensity vanishes (only at the origin). Raises
    ``BudgetExceededError`` carrying the partial path if more than
    ``max_jumps`` jumps would be needed.
    """
    n0, p0 = _check_count_state(x0)
    _check_sim_args(params, horizon, max_jumps)
    rng = as_generator(rng_stream)
    times, states, chans, count, _, status = _ssa_kernel(
        rng, params.k, params.m, params.c, params.omega, n0, p0, float(horizon), int(max_jumps), True, np.empty(0)
    )
    path = JumpPath(
        x0=CountState(n0, p0),
        jump_times=times[:count].copy(),
        states=states[:count].copy(),
        channels=chans[:count].copy(),
        omega=params.omega,
        horizon=float(horizon),
    )
    if status == _STATUS_BUDGET:
        raise BudgetExceededError(f"jump budget of {max_jumps} exhausted at t={path.jump_times[-1]!r}", path)
    return path


def simulate_on_grid(params: ModelParams, x0, horizon: float, grid, rng_stream, max_jumps: int = DEFAULT_JUMP_BUDGET):
    """Counts sampled on ``grid`` without storing the jumps.

    Consumes the stream exactly like :func:`simulate`, so for the same stream
    the result equals ``density_path(simulate(...), grid) * omega``.
    """
    n0, p0 = _check_count_state(x0)
    _check_sim_args(params, horizon, max_jumps)
    grid = _check_grid(grid, horizon)
    rng = as_generator(rng_stream)
    _, _, _, count, samples, status = _ssa_kernel(
        rng, params.k, params.m, params.c, params.omega, n0, p0, float(horizon), int(max_jumps), False, grid
    )
    if status == _STATUS_BUDGET:
        raise BudgetExceededError(f"jump budget of {max_jumps} exhausted", None)
    return samples


def _check_grid(grid, horizon):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1:
        raise InputDomainError("grid must be one-dimensional")
    if grid.size and (np.any(np.diff(grid) <= 0) or grid[0] < 0 or grid[-1] > horizon):
        raise InputDomainError(f"grid must be increasing within [0, {horizon!r}]")
    return grid


def density_path(path: JumpPath, grid) -> np.ndarray:
    """Right-continuous density ``x / omega`` evaluated on ``grid``; shape ``(len(grid), 2)``."""
    grid = _check_grid(grid, path.horizon)
    idx = np.searchsorted(path.jump_times, grid, side="right")
    all_states = np.vstack([np.asarray(path.x0, dtype=np.int64)[None, :], path.states.reshape(-1, 2)])
    return all_states[idx] / path.omega


def replay(x0, channels) -> np.ndarray:
    """States obtained by applying the channel increments in order from ``x0``."""
    x0 = np.asarray(x0, dtype=np.int64)
    return x0 + np.cumsum(INCREMENTS[np.asarray(channels, dtype=np.int64)], axis=0)
