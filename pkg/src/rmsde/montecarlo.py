"""Monte Carlo ensembles of absorbed EM paths and exact CTMC paths.

Paths are cut into fixed chunks that can run in worker processes. Each path
owns the stream ``path_stream(master_seed, tag, index)`` and all reductions
run over path index in a fixed order, so output bits do not depend on the
number of workers.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import multiprocessing
import numpy as np

from rmsde import __version__
from rmsde.ctmc import simulate_on_grid
from rmsde.errors import BlowupError, EnsembleError, InputDomainError
from rmsde.model import ModelParams, as_state
from rmsde.ode import integrate
from rmsde.sde import AXIS_PREDATOR, AXIS_PREY, AXIS_BOTH, FactorizationKind, n_steps_for, run_absorbed_batch
from rmsde.streams import check_seed, path_stream

CHUNK_SIZE = 500
HIST_BINS = 30


@dataclass(frozen=True)
class EnsembleConfig:
    params: ModelParams
    z0: tuple = (0.8, 0.6)
    dt: float = 1e-2
    horizon: float = 100.0
    kind: FactorizationKind = FactorizationKind.CHOLESKY2D
    n_paths: int = 2000
    master_seed: int = 42
    output_grid_stride: int = 10
    experiment_tag: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", FactorizationKind.parse(self.kind))
        N, P = as_state(self.z0, "z0")
        if N <= 0 or P <= 0:
            raise InputDomainError(f"z0 must be strictly interior, got {self.z0!r}")
        object.__setattr__(self, "z0", (N, P))
        if isinstance(self.n_paths, bool) or int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise InputDomainError(f"n_paths must be a positive integer, got {self.n_paths!r}")
        if int(self.output_grid_stride) != self.output_grid_stride or self.output_grid_stride < 1:
            raise InputDomainError(f"output_grid_stride must be a positive integer, got {self.output_grid_stride!r}")
        object.__setattr__(self, "n_paths", int(self.n_paths))
        object.__setattr__(self, "output_grid_stride", int(self.output_grid_stride))
        object.__setattr__(self, "master_seed", check_seed(self.master_seed))
        n_steps_for(self.dt, self.horizon)

    @property
    def n_steps(self):
        return n_steps_for(self.dt, self.horizon)

    @property
    def stream_tag(self):
        return self.experiment_tag or self.kind.short_name

    @property
    def grid(self):
        """Record times: every stride-th step, truncated to the last full stride."""
        stride = self.output_grid_stride
        return np.arange(self.n_steps // stride + 1) * stride * self.dt

    def to_dict(self):
        return {
            "params": self.params.to_dict(),
            "z0": list(self.z0),
            "dt": self.dt,
            "horizon": self.horizon,
            "kind": self.kind.value,
            "n_paths": self.n_paths,
            "master_seed": self.master_seed,
            "output_grid_stride": self.output_grid_stride,
            "experiment_tag": self.stream_tag,
        }


@dataclass
class RawEnsemble:
    """Per-path outputs in path-index order."""

    config: EnsembleConfig
    record: np.ndarray  # (grid, paths, 2)
    tau_index: np.ndarray  # absorption step or -1
    axis_code: np.ndarray


@dataclass
class EnsembleStats:
    grid: np.ndarray
    survival: np.ndarray
    mean_N: np.ndarray
    mean_P: np.ndarray
    hist_edges: np.ndarray
    hist_counts: np.ndarray
    survivor_fraction: float
    n_paths: int
    terminal_survivors: np.ndarray = field(repr=False)
    axis_counts: dict = field(default_factory=dict)
    config: Optional[EnsembleConfig] = field(default=None, repr=False)

    def to_dict(self):
        out = {
            "grid": self.grid.tolist(),
            "survival": self.survival.tolist(),
            "mean_N": self.mean_N.tolist(),
            "mean_P": self.mean_P.tolist(),
            "terminal_conditional_N": {"bin_edges": self.hist_edges.tolist(), "counts": self.hist_counts.tolist()},
            "survivor_fraction": self.survivor_fraction,
            "n_paths": self.n_paths,
            "absorbed_axis_counts": dict(self.axis_counts),
            "toolkit_version": __version__,
        }
        if self.config is not None:
            out["config"] = self.config.to_dict()
        return out

    def write_json(self, path):
        write_json(path, self.to_dict())

    def write_survival_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("t,survival\n")
            for t, s in zip(self.grid, self.survival):
                fh.write(f"{t:.17g},{s:.17g}\n")

    def write_cloud_csv(self, path):
        write_cloud_csv(path, self.terminal_survivors)


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_cloud_csv(path, cloud):
    with open(path, "w", newline="") as fh:
        fh.write("N,P\n")
        for n, p in cloud:
            fh.write(f"{n:.17g},{p:.17g}\n")


# -- execution -----------------------------------------------------------------


def _map(fn, tasks, workers):
    if workers is None or workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        return list(pool.map(fn, tasks))


def _em_chunk(task):
    config, start, stop = task
    rngs = [path_stream(config.master_seed, config.stream_tag, i) for i in range(start, stop)]
    try:
        return run_absorbed_batch(
            config.params, config.z0, config.dt, config.n_steps, config.kind, rngs,
            stride=config.output_grid_stride, index_offset=start,
        )
    except (BlowupError, FloatingPointError) as exc:
        index = getattr(exc, "path_index", None)
        return exc, index


def _chunks(n, size=CHUNK_SIZE):
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def simulate_ensemble(config: EnsembleConfig, workers: int = 1) -> RawEnsemble:
    """Run every path of ``config`` and collect raw per-path outputs."""
    tasks = [(config, s, e) for s, e in _chunks(config.n_paths)]
    results = _map(_em_chunk, tasks, workers)
    for (_, start, stop), res in zip(tasks, results):
        if isinstance(res[0], BaseException):
            exc, index = res
            index = start if index is None else index
            seed = {"master_seed": config.master_seed, "tag": config.stream_tag, "path_index": index}
            raise EnsembleError(f"path {index} failed ({exc}); stream {seed}", path_index=index, seed=seed) from exc
    record = np.concatenate([r[0] for r in results], axis=1)
    tau = np.concatenate([r[1] for r in results])
    axis = np.concatenate([r[2] for r in results])
    return RawEnsemble(config, record, tau, axis)


def ordered_mean(values):
    """Mean over axis 0 by compensated (Neumaier) summation in index order."""
    values = np.asarray(values, dtype=float)
    total = np.zeros(values.shape[1:])
    comp = np.zeros(values.shape[1:])
    for row in values:
        t = total + row
        comp += np.where(np.abs(total) >= np.abs(row), (total - t) + row, (row - t) + total)
        total = t
    return (total + comp) / values.shape[0]


def summarize(raw: RawEnsemble) -> EnsembleStats:
    config = raw.config
    stride = config.output_grid_stride
    grid = config.grid
    steps = np.arange(grid.size) * stride
    M = config.n_paths
    absorbed = raw.tau_index >= 0
    # survival[i] = fraction of paths with tau > grid[i]
    alive = (~absorbed[None, :]) | (raw.tau_index[None, :] > steps[:, None])
    survival = alive.sum(axis=1) / M
    means = ordered_mean(np.transpose(raw.record, (1, 0, 2)))
    survivors = alive[-1]
    terminal = raw.record[-1, survivors]
    if terminal.shape[0]:
        counts, edges = np.histogram(terminal[:, 0], bins=HIST_BINS)
    else:
        counts, edges = np.zeros(0, dtype=np.int64), np.zeros(0)
    axis_counts = {
        "PreyZero": int(np.count_nonzero(raw.axis_code == AXIS_PREY)),
        "PredatorZero": int(np.count_nonzero(raw.axis_code == AXIS_PREDATOR)),
        "Both": int(np.count_nonzero(raw.axis_code == AXIS_BOTH)),
    }
    return EnsembleStats(
        grid=grid,
        survival=survival,
        mean_N=means[:, 0],
        mean_P=means[:, 1],
        hist_edges=edges,
        hist_counts=counts.astype(np.int64),
        survivor_fraction=float(survival[-1]),
        n_paths=M,
        terminal_survivors=terminal,
        axis_counts=axis_counts,
        config=config,
    )


def run_ensemble(config: EnsembleConfig, workers: int = 1) -> EnsembleStats:
    """Survival curve, unconditional means and survivor histogram of an ensemble."""
    return summarize(simulate_ensemble(config, workers))


# -- comparisons -----------------------------------------------------------------


def histogram_overlap(a, b, bins=HIST_BINS):
    """Overlap ``sum_i min(p_i, q_i)`` of two samples on shared uniform bins."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 and b.size == 0:
        return 1.0
    if a.size == 0 or b.size == 0:
        return 0.0
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    edges = np.histogram_bin_edges(np.concatenate([a, b]), bins=bins, range=(lo, hi))
    pa = np.histogram(a, bins=edges)[0] / a.size
    pb = np.histogram(b, bins=edges)[0] / b.size
    return float(np.minimum(pa, pb).sum())


@dataclass
class FactorizationComparison:
    stats_event: EnsembleStats
    stats_cholesky: EnsembleStats
    survival_sup_diff: float
    terminal_hist_overlap: float

    @property
    def survivor_fraction_diff(self):
        return abs(self.stats_event.survivor_fraction - self.stats_cholesky.survivor_fraction)

    def to_dict(self):
        return {
            "survivor_fraction_event": self.stats_event.survivor_fraction,
            "survivor_fraction_cholesky": self.stats_cholesky.survivor_fraction,
            "survivor_fraction_diff": self.survivor_fraction_diff,
            "survival_sup_diff": self.survival_sup_diff,
            "terminal_hist_overlap": self.terminal_hist_overlap,
            "toolkit_version": __version__,
        }


def compare_factorizations(base: EnsembleConfig, workers: int = 1) -> FactorizationComparison:
    """Event (4-D noise) versus Cholesky (2-D noise) runs on independent streams."""
    ev = run_ensemble(replace(base, kind=FactorizationKind.EVENT4D, experiment_tag=None), workers)
    ch = run_ensemble(replace(base, kind=FactorizationKind.CHOLESKY2D, experiment_tag=None), workers)
    sup_diff = float(np.max(np.abs(ev.survival - ch.survival)))
    overlap = histogram_overlap(ev.terminal_survivors[:, 0], ch.terminal_survivors[:, 0])
    return FactorizationComparison(ev, ch, sup_diff, overlap)


@dataclass
class CovarianceComparison:
    stats_full: EnsembleStats
    stats_diagonal: EnsembleStats

    @property
    def survivor_fractions(self):
        return {"full": self.stats_full.survivor_fraction, "diagonal": self.stats_diagonal.survivor_fraction}

    @property
    def terminal_cloud_full(self):
        return self.stats_full.terminal_survivors

    @property
    def terminal_cloud_diag(self):
        return self.stats_diagonal.terminal_survivors

    def to_dict(self):
        return {
            "survivor_fractions": self.survivor_fractions,
            "survival_sup_diff": float(np.max(np.abs(self.stats_full.survival - self.stats_diagonal.survival))),
            "toolkit_version": __version__,
        }


def compare_covariance(base: EnsembleConfig, workers: int = 1) -> CovarianceComparison:
    """Full covariance (Cholesky factor) versus the zero-correlation diagonal surrogate."""
    full = run_ensemble(replace(base, kind=FactorizationKind.CHOLESKY2D, experiment_tag=None), workers)
    diag = run_ensemble(replace(base, kind=FactorizationKind.DIAGONAL2D, experiment_tag=None), workers)
    return CovarianceComparison(full, diag)


# -- law of large numbers ----------------------------------------------------------


def _ssa_chunk(task):
    params, x0, horizon, grid, seed, tag, start, stop = task
    out = np.empty((stop - start, grid.size, 2))
    for row, i in enumerate(range(start, stop)):
        out[row] = simulate_on_grid(params, x0, horizon, grid, path_stream(seed, tag, i)) / params.omega
    return out


@dataclass
class LLNReport:
    omegas: list
    deviations: list
    grid: np.ndarray
    mean_paths: list
    ode_paths: list

    def to_dict(self):
        return {
            "omegas": list(self.omegas),
            "deviations": list(self.deviations),
            "toolkit_version": __version__,
        }


def lln_diagnostic(
    params: ModelParams,
    z0,
    omegas,
    horizon: float = 10.0,
    replicates: int = 500,
    grid=None,
    master_seed: int = 42,
    workers: int = 1,
) -> LLNReport:
    """Sup-norm gap between the CTMC ensemble-mean density and the ODE, per system size.

    Each ensemble starts from ``x0 = round(omega * z0)`` and is compared with the
    ODE started from ``x0 / omega``.
    """
    N0, P0 = as_state(z0, "z0")
    omegas = [float(o) for o in omegas]
    if any(b <= a for a, b in zip(omegas, omegas[1:])):
        raise InputDomainError("omegas must be strictly increasing")
    if replicates < 100:
        raise InputDomainError("replicates must be at least 100")
    if grid is None:
        grid = np.linspace(0.0, horizon, 101)
    grid = np.asarray(grid, dtype=float)
    master_seed = check_seed(master_seed)
    deviations, means, odes = [], [], []
    for omega in omegas:
        p_omega = params.with_omega(omega)
        x0 = (int(math.floor(omega * N0 + 0.5)), int(math.floor(omega * P0 + 0.5)))
        tag = f"ssa/omega={omega:.17g}"
        tasks = [(p_omega, x0, horizon, grid, master_seed, tag, s, e) for s, e in _chunks(replicates, 25)]
        dens = np.concatenate(_map(_ssa_chunk, tasks, workers), axis=0)
        mean = ordered_mean(dens)
        ode = integrate(params, (x0[0] / omega, x0[1] / omega), horizon, output_grid=grid).states
        deviations.append(float(np.max(np.abs(mean - ode))))
        means.append(mean)
        odes.append(ode)
    return LLNReport(omegas, deviations, grid, means, odes)


# -- extinction and moments -----------------------------------------------------------


@dataclass
class ExtinctionReport:
    extinct_fraction: float
    predator_axis_fraction: Optional[float]
    mean_absorption_time_conditional: Optional[float]
    n_paths: int

    def to_dict(self):
        return {
            "extinct_fraction": self.extinct_fraction,
            "predator_axis_fraction": self.predator_axis_fraction,
            "mean_absorption_time_conditional": self.mean_absorption_time_conditional,
            "n_paths": self.n_paths,
            "toolkit_version": __version__,
        }


def extinction_probe(
    params: ModelParams,
    z0,
    dt: float,
    horizon: float,
    M: int,
    master_seed: int,
    workers: int = 1,
) -> ExtinctionReport:
    """Fraction of absorbed Cholesky paths, and how many of those lost the predator."""
    n_steps = n_steps_for(dt, horizon)
    config = EnsembleConfig(
        params, z0, dt, horizon, FactorizationKind.CHOLESKY2D, M, master_seed,
        output_grid_stride=n_steps, experiment_tag="extinction",
    )
    raw = simulate_ensemble(config, workers)
    extinct = raw.tau_index >= 0
    n_ext = int(np.count_nonzero(extinct))
    if n_ext == 0:
        return ExtinctionReport(0.0, None, None, M)
    pred = int(np.count_nonzero(raw.axis_code[extinct] == AXIS_PREDATOR))
    mean_tau = float(ordered_mean(raw.tau_index[extinct].astype(float)[:, None])[0]) * dt
    return ExtinctionReport(n_ext / M, pred / n_ext, mean_tau, M)


def moment_sups(raw: RawEnsemble, exponents=(2, 4)):
    """``sup_t mean_paths |Z(t ^ tau)|^p`` for each exponent."""
    record = raw.record
    if not np.all(np.isfinite(record)):
        raise BlowupError("non-finite state in ensemble")
    sq = record[..., 0] ** 2 + record[..., 1] ** 2  # (grid, paths)
    out = {}
    for p in exponents:
        mean = ordered_mean((sq ** (p / 2)).T)
        out[p] = float(np.max(mean))
    return out


def moment_probe(config: EnsembleConfig, p_exponent: int, workers: int = 1) -> float:
    """Largest ensemble mean of ``|Z|^p`` over the record grid, ``p`` in ``{2, 4}``."""
    if p_exponent not in (2, 4):
        raise InputDomainError(f"p_exponent must be 2 or 4, got {p_exponent!r}")
    value = moment_sups(simulate_ensemble(config, workers), (p_exponent,))[p_exponent]
    if not math.isfinite(value):
        raise BlowupError(f"moment of order {p_exponent} is not finite")
    return value
