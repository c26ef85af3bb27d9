"""End-to-end acceptance checks.

Each test records one PASS/FAIL line that is printed in the terminal summary.
The ensembles are shared through session fixtures so the whole module runs in
about a minute on a single core.
"""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from rmsde.cli import main as cli_main
from rmsde.ctmc import simulate
from rmsde.errors import BudgetExceededError
from rmsde.model import (
    INCREMENTS,
    ModelParams,
    Regime,
    cholesky_array,
    classify_regime,
    covariance_array,
    event_factor_array,
)
from rmsde.montecarlo import (
    EnsembleConfig,
    compare_covariance,
    compare_factorizations,
    extinction_probe,
    lln_diagnostic,
    moment_probe,
    simulate_ensemble,
)
from rmsde.ode import integrate
from rmsde.streams import path_stream


def record(number, name, passed, detail):
    ACCEPTANCE_LINES.append((number, name, bool(passed), detail))
    assert passed, f"criterion {number} ({name}) failed: {detail}"


@pytest.fixture(scope="session")
def base():
    return ModelParams(3.0, 2.0, 0.8, 100.0)


@pytest.fixture(scope="session")
def base_config(base):
    return EnsembleConfig(base, z0=(0.8, 0.6), dt=1e-2, horizon=100.0, n_paths=2000, master_seed=42)


@pytest.fixture(scope="session")
def random_sample():
    rng = np.random.default_rng(20240601)
    sets = np.column_stack([rng.uniform(0.5, 10, 20), rng.uniform(0.2, 5, 20), rng.uniform(0.1, 3, 20)])
    states = np.exp(rng.uniform(math.log(1e-3), math.log(10), (20, 1000, 2)))
    k = np.repeat(sets[:, 0:1], 1000, axis=1)
    m = np.repeat(sets[:, 1:2], 1000, axis=1)
    c = np.repeat(sets[:, 2:3], 1000, axis=1)
    return k.ravel(), m.ravel(), c.ravel(), states[..., 0].ravel(), states[..., 1].ravel()


@pytest.fixture(scope="session")
def factorization_run(base_config):
    start = time.perf_counter()
    result = compare_factorizations(base_config)
    return result, time.perf_counter() - start


def test_01_factorization_identity(random_sample):
    start = time.perf_counter()
    k, m, c, N, P = random_sample
    s11, s12, s22 = covariance_array(k, m, c, N, P)
    sigma = np.stack([np.stack([s11, s12], -1), np.stack([s12, s22], -1)], -2)
    roots = np.stack(event_factor_array(k, m, c, N, P), -1)  # (n, 4)
    L_ev = roots[:, None, :] * INCREMENTS.T[None, :, :]  # (n, 2, 4)
    l11, l21, l22 = cholesky_array(k, m, c, N, P)
    zero = np.zeros_like(l11)
    L_ch = np.stack([np.stack([l11, zero], -1), np.stack([l21, l22], -1)], -2)
    err_ev = float(np.max(np.abs(L_ev @ np.swapaxes(L_ev, 1, 2) - sigma)))
    err_ch = float(np.max(np.abs(L_ch @ np.swapaxes(L_ch, 1, 2) - sigma)))
    elapsed = time.perf_counter() - start
    record(
        1,
        "factorization identity",
        err_ev <= 1e-12 and err_ch <= 1e-10 and elapsed < 1.0,
        f"event {err_ev:.2e} <= 1e-12, cholesky {err_ch:.2e} <= 1e-10 over {N.size} states, {elapsed:.3f}s",
    )


def test_02_covariance_structure(random_sample):
    k, m, c, N, P = random_sample
    s11, s12, s22 = covariance_array(k, m, c, N, P)
    det = s11 * s22 - s12 * s12
    E = m * N * P / (1 + N)
    expansion = (N + N * N / k) * (c * P + E) + E * c * P
    rel = float(np.max(np.abs(det - expansion) / expansion))
    ok = bool(np.all(s12 < 0) and np.all(det > 0) and rel <= 1e-12)
    record(2, "covariance structure", ok, f"offdiag<0 and det>0 on all {N.size} states, expansion rel err {rel:.2e}")


def test_03_equilibria_and_thresholds(base):
    r = classify_regime(base)
    ok = (
        r.regime is Regime.LIMIT_CYCLE
        and abs(r.n_star - 0.666667) <= 1e-6
        and abs(r.p_star - 0.648148) <= 1e-6
        and abs(r.hopf_k - 2.333333) <= 1e-6
        and abs(r.jac_trace_k3 - 8.89e-2) <= 1e-3
    )
    detail = f"N*={r.n_star:.6f} P*={r.p_star:.6f} hopf_k={r.hopf_k:.6f} trJ={r.jac_trace_k3:.4e}"
    record(3, "equilibria and thresholds", ok, detail)


def test_04_subcritical_ode():
    start = time.perf_counter()
    N, P = integrate(ModelParams(1.0, 0.8, 0.8), (0.5, 0.5), 200.0).final_state
    elapsed = time.perf_counter() - start
    ok = abs(N - 1) <= 1e-3 and P <= 1e-6 and elapsed < 1.0
    record(4, "subcritical ODE", ok, f"N(200)={N:.9f} P(200)={P:.2e}, {elapsed:.3f}s")


def test_05_sustained_oscillation(base):
    start = time.perf_counter()
    grid = np.linspace(100, 200, 10001)
    states = integrate(base, (0.8, 0.6), 200.0, output_grid=grid).states
    prey = states[:, 0]
    peaks = np.flatnonzero((prey[1:-1] > prey[:-2]) & (prey[1:-1] >= prey[2:])) + 1
    amp = prey[peaks]
    drift = float((amp.max() - amp.min()) / amp.mean()) if amp.size else math.inf
    elapsed = time.perf_counter() - start
    ok = amp.size >= 5 and drift < 0.05 and elapsed < 1.0
    record(5, "sustained oscillation", ok, f"{amp.size} prey maxima in [100,200], amplitude drift {drift:.2%}, {elapsed:.3f}s")


def test_06_survival_fractions(factorization_run):
    result, elapsed = factorization_run
    ev = result.stats_event.survivor_fraction
    ch = result.stats_cholesky.survivor_fraction
    ok = 0.205 <= ev <= 0.285 and 0.205 <= ch <= 0.285 and abs(ev - ch) <= 0.03 and elapsed < 30
    record(6, "survival fractions", ok, f"event {ev:.4f}, cholesky {ch:.4f}, diff {abs(ev - ch):.4f}, {elapsed:.1f}s")


def test_07_covariance_role(base_config):
    result = compare_covariance(base_config)
    full = result.survivor_fractions["full"]
    diag = result.survivor_fractions["diagonal"]
    ok = 0.215 <= full <= 0.295 and 0.207 <= diag <= 0.287
    record(7, "covariance role", ok, f"full {full:.4f} in [0.215,0.295], diagonal {diag:.4f} in [0.207,0.287]")


def test_08_subcritical_extinction():
    start = time.perf_counter()
    report = extinction_probe(ModelParams(1.0, 0.8, 0.8, 100.0), (0.8, 0.6), 1e-2, 500.0, 2000, 42)
    elapsed = time.perf_counter() - start
    pred = report.predator_axis_fraction or 0.0
    ok = report.extinct_fraction >= 0.99 and pred >= 0.95 and elapsed < 120
    record(8, "subcritical extinction", ok, f"extinct {report.extinct_fraction:.4f}, predator axis {pred:.4f}, {elapsed:.1f}s")


def test_09_positive_extinction_probability(base):
    report = extinction_probe(base, (0.8, 0.6), 1e-2, 100.0, 2000, 42)
    ok = 0.5 < report.extinct_fraction < 0.9
    record(9, "positive extinction probability", ok, f"extinct fraction {report.extinct_fraction:.4f} in (0.5, 0.9)")


def test_10_lln_convergence(base):
    start = time.perf_counter()
    report = lln_diagnostic(base, (0.8, 0.6), [1e2, 1e3, 1e4], horizon=10.0, replicates=500, master_seed=42)
    elapsed = time.perf_counter() - start
    d = report.deviations
    ok = d[0] > d[1] > d[2] and d[2] <= 0.05 and elapsed < 300
    record(10, "LLN convergence", ok, "sup deviations " + ", ".join(f"{x:.4f}" for x in d) + f", {elapsed:.1f}s")


def test_11_absorbing_axes():
    start = time.perf_counter()
    rng = np.random.default_rng(11)
    total = paths = 0
    violations = 0
    while total < 100_000:
        params = ModelParams(rng.uniform(0.5, 5), rng.uniform(0.5, 4), rng.uniform(0.2, 2), float(rng.choice([10, 30, 100])))
        x0 = (int(rng.integers(0, 40)), int(rng.integers(0, 40)))
        try:
            path = simulate(params, x0, 50.0, path_stream(11, "axes", paths), max_jumps=1000)
        except BudgetExceededError as exc:
            path = exc.partial_path
        paths += 1
        total += path.n_jumps
        for col in (0, 1):
            series = np.concatenate([[x0[col]], path.states[:, col]])
            hit = np.flatnonzero(series == 0)
            if hit.size and np.any(series[hit[0]:] != 0):
                violations += 1
    elapsed = time.perf_counter() - start
    ok = violations == 0 and elapsed < 10
    record(11, "absorbing axes", ok, f"{total} jumps over {paths} paths, {violations} axis exits, {elapsed:.1f}s")


def test_12_moment_boundedness(base_config):
    raw = simulate_ensemble(base_config)
    finite = bool(np.all(np.isfinite(raw.record)))
    p2 = moment_probe(base_config, 2)
    p4 = moment_probe(base_config, 4)
    ok = finite and math.isfinite(p2) and math.isfinite(p4)
    record(12, "moment boundedness", ok, f"sup E|Z|^2={p2:.4f}, sup E|Z|^4={p4:.4f}, all states finite={finite}")


def test_13_determinism(tmp_path):
    runs = {}
    for workers in (1, 8):
        out = tmp_path / f"w{workers}"
        code = cli_main(["survival", "--seed", "42", "--workers", str(workers), "--out-dir", str(out)])
        assert code == 0
        runs[workers] = {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.suffix in (".csv", ".json") and "manifest" not in p.name}
    same = runs[1].keys() == runs[8].keys() and all(runs[1][n] == runs[8][n] for n in runs[1])
    record(13, "determinism", same and len(runs[1]) >= 3, f"{len(runs[1])} CSV/JSON files byte-identical across 1 and 8 workers: {same}")
