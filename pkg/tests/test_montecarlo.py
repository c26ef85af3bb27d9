import json
import math

import numpy as np
import pytest

from rmsde.errors import InputDomainError
from rmsde.model import ModelParams, drift
from rmsde.montecarlo import (
    EnsembleConfig,
    compare_covariance,
    compare_factorizations,
    extinction_probe,
    histogram_overlap,
    lln_diagnostic,
    moment_sups,
    ordered_mean,
    run_ensemble,
    simulate_ensemble,
)


@pytest.fixture(scope="module")
def small_config(base_params):
    return EnsembleConfig(base_params, horizon=20.0, n_paths=600, master_seed=5)


@pytest.fixture(scope="module")
def base_params():
    return ModelParams(3.0, 2.0, 0.8, 100.0)


def test_config_defaults(base_params):
    cfg = EnsembleConfig(base_params)
    assert cfg.n_steps == 10_000 and cfg.grid.size == 1001 and cfg.grid[-1] == pytest.approx(100.0)
    assert cfg.stream_tag == "cholesky"
    assert EnsembleConfig(base_params, kind="event").stream_tag == "event"
    assert EnsembleConfig(base_params, experiment_tag="x").stream_tag == "x"


@pytest.mark.parametrize(
    "kwargs",
    [dict(z0=(0.0, 0.6)), dict(n_paths=0), dict(dt=0.0), dict(output_grid_stride=0), dict(master_seed=-1)],
)
def test_config_rejects(base_params, kwargs):
    with pytest.raises(InputDomainError):
        EnsembleConfig(base_params, **kwargs)


def test_worker_count_does_not_change_results(small_config):
    a = run_ensemble(small_config, workers=1)
    b = run_ensemble(small_config, workers=3)
    assert a.to_dict() == b.to_dict()


def test_survival_curve_shape(small_config):
    stats = run_ensemble(small_config)
    assert stats.survival[0] == 1.0
    assert np.all(np.diff(stats.survival) <= 0)
    assert stats.hist_counts.sum() == stats.terminal_survivors.shape[0]
    assert stats.terminal_survivors.shape[0] == round(stats.survivor_fraction * stats.n_paths)
    extinct = sum(stats.axis_counts.values())
    assert extinct + stats.terminal_survivors.shape[0] == stats.n_paths
    assert np.all(stats.terminal_survivors > 0)


def test_unconditional_means_include_frozen_paths(small_config):
    raw = simulate_ensemble(small_config)
    stats = run_ensemble(small_config)
    np.testing.assert_allclose(stats.mean_N, raw.record[..., 0].mean(axis=1), rtol=1e-12)
    np.testing.assert_allclose(stats.mean_P, raw.record[..., 1].mean(axis=1), rtol=1e-12)
    # means move continuously on the record grid
    assert np.max(np.abs(np.diff(stats.mean_N))) < 0.2


def test_noise_free_single_path(base_params):
    params = ModelParams.from_rho(3.0, 2.0, 0.8, 0.0)
    cfg = EnsembleConfig(params, horizon=5.0, n_paths=1, output_grid_stride=1)
    stats = run_ensemble(cfg)
    assert np.all(stats.survival == 1.0)
    z = np.array([0.8, 0.6])
    for step in range(1, 501):
        z = z + 0.01 * drift(params, z)
    assert stats.mean_N[-1] == z[0] and stats.mean_P[-1] == z[1]


def test_noise_free_freeze_counts():
    params = ModelParams.from_rho(3.0, 2.0, 0.8, 0.0)
    stats = run_ensemble(EnsembleConfig(params, z0=(0.1, 50.0), dt=0.1, horizon=1.0, n_paths=1, output_grid_stride=1))
    assert stats.survival.tolist() == [1.0] + [0.0] * 10
    assert stats.axis_counts["PreyZero"] == 1 and stats.hist_counts.size == 0


def one_step_increments(params, kind, n):
    cfg = EnsembleConfig(params, z0=(1.0, 1.0), dt=0.01, horizon=0.01, n_paths=n, kind=kind, output_grid_stride=1)
    raw = simulate_ensemble(cfg)
    return raw.record[1] - raw.record[0]


def test_diagonal_surrogate_decorrelates(base_params):
    n = 4000
    inc = one_step_increments(base_params, "diagonal", n)
    r = np.corrcoef(inc[:, 0], inc[:, 1])[0, 1]
    assert abs(r) <= 3 / math.sqrt(n)
    full = one_step_increments(base_params, "cholesky", n)
    r_full = np.corrcoef(full[:, 0], full[:, 1])[0, 1]
    assert r_full == pytest.approx(-1 / math.sqrt(7 / 3 * 1.8), abs=3 / math.sqrt(n))


def test_ordered_mean():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1000, 3)) * 1e8 + 1
    np.testing.assert_allclose(ordered_mean(x), x.mean(axis=0), rtol=1e-9)
    assert ordered_mean(np.array([[1e16], [1.0], [-1e16]]))[0] == pytest.approx(1 / 3)


def test_histogram_overlap():
    a = np.linspace(0, 1, 100)
    assert histogram_overlap(a, a) == pytest.approx(1.0)
    assert histogram_overlap(a, a + 10) == 0.0
    assert histogram_overlap([], []) == 1.0
    assert histogram_overlap(a, []) == 0.0


def test_comparisons_share_streams(base_params):
    base = EnsembleConfig(base_params, horizon=10.0, n_paths=200)
    fact = compare_factorizations(base)
    cov = compare_covariance(base)
    assert cov.stats_full.to_dict() == fact.stats_cholesky.to_dict()
    assert 0.0 <= fact.terminal_hist_overlap <= 1.0
    assert set(fact.to_dict()) >= {"survivor_fraction_event", "survivor_fraction_cholesky", "survival_sup_diff"}
    assert set(cov.survivor_fractions) == {"full", "diagonal"}


def test_survival_scatter_across_seeds(base_params):
    # survivor fractions from independent seeds scatter like binomial proportions
    M = 300
    fractions = [
        run_ensemble(EnsembleConfig(base_params, horizon=30.0, n_paths=M, master_seed=s)).survivor_fraction
        for s in range(6)
    ]
    p = float(np.mean(fractions))
    se = math.sqrt(p * (1 - p) / M)
    assert np.std(fractions, ddof=1) < 3 * se


def test_extinction_probe_small(subcritical_params):
    report = extinction_probe(subcritical_params, (0.8, 0.6), 0.01, 100.0, 200, 1)
    assert report.extinct_fraction > 0.9
    assert report.predator_axis_fraction > 0.9
    assert report.mean_absorption_time_conditional > 0


def test_moment_sups(small_config):
    raw = simulate_ensemble(small_config)
    sups = moment_sups(raw)
    assert np.isfinite(sups[2]) and np.isfinite(sups[4]) and sups[4] >= sups[2] ** 2 * 0.99


def test_lln_argument_checks(base_params):
    with pytest.raises(InputDomainError):
        lln_diagnostic(base_params, (0.8, 0.6), [1000, 100])
    with pytest.raises(InputDomainError):
        lln_diagnostic(base_params, (0.8, 0.6), [100], replicates=10)


def test_json_outputs(tmp_path, small_config):
    stats = run_ensemble(small_config)
    stats.write_json(tmp_path / "s.json")
    stats.write_survival_csv(tmp_path / "s.csv")
    data = json.loads((tmp_path / "s.json").read_text())
    assert data["config"]["master_seed"] == 5
    assert len(data["terminal_conditional_N"]["counts"]) == stats.hist_counts.size
    rows = np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(rows[:, 1], stats.survival)
