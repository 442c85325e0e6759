import numpy as np
import pytest

from dwcount.errors import DataError
from dwcount.simulation import (
    SimulationStudyConfig,
    dispersion_map,
    fit_nb_sample,
    run_simulation_study,
    simulate_regression_data,
)


def test_config_validation():
    with pytest.raises(DataError):
        SimulationStudyConfig(true_alpha=(0.5, 0.4))
    with pytest.raises(DataError):
        SimulationStudyConfig(n_obs=3)
    with pytest.raises(DataError):
        SimulationStudyConfig(covariates=(("cauchy", 0, 1), ("uniform", 0, 10)))


def test_simulated_data_deterministic():
    cfg = SimulationStudyConfig(master_seed=42)
    a = simulate_regression_data(cfg, 3)
    b = simulate_regression_data(cfg, 3)
    np.testing.assert_array_equal(a.response, b.response)
    np.testing.assert_array_equal(a.covariates, b.covariates)
    c = simulate_regression_data(cfg, 4)
    assert not np.array_equal(a.response, c.response)


def test_extreme_predictor_gives_all_zeros():
    cfg = SimulationStudyConfig(true_alpha=(10.0, 0.0, 0.0), replicate_count=1)
    assert np.all(simulate_regression_data(cfg, 0).response == 0)


def test_study_summary_recomputes():
    cfg = SimulationStudyConfig(n_obs=200, replicate_count=6, master_seed=1)
    res = run_simulation_study(cfg)
    assert res.failed_count == 0
    for j, name in enumerate(cfg.parameter_names):
        s = res.summary(name)
        dev = res.estimates[:, j] - cfg.truth[j]
        assert s.bias == pytest.approx(dev.mean(), abs=1e-15)
        assert s.mse == pytest.approx(np.mean(dev**2), abs=1e-15)
        assert s.mean_ci_length == pytest.approx(res.ci_lengths[:, j].mean(), abs=1e-15)


def test_parallel_equals_serial():
    cfg = SimulationStudyConfig(n_obs=150, replicate_count=4, master_seed=3)
    serial = run_simulation_study(cfg, workers=1)
    parallel = run_simulation_study(cfg, workers=2)
    np.testing.assert_array_equal(serial.estimates, parallel.estimates)
    np.testing.assert_array_equal(serial.ci_lengths, parallel.ci_lengths)


def test_large_sample_single_replicate_is_nearly_unbiased():
    cfg = SimulationStudyConfig(n_obs=100_000, replicate_count=1, master_seed=4)
    res = run_simulation_study(cfg)
    assert np.all(np.abs(res.estimates[0] - cfg.truth) < 0.02)


def test_zero_slopes_unbiased():
    cfg = SimulationStudyConfig(n_obs=300, replicate_count=60, true_alpha=(0.5, 0.0, 0.0), master_seed=6)
    res = run_simulation_study(cfg)
    for name in ("alpha1", "alpha2"):
        s = res.summary(name)
        assert abs(s.bias) < 3 * s.mc_standard_error


def test_fit_nb_sample_boundary_on_underdispersion():
    mean, k, boundary = fit_nb_sample(np.array([1, 2, 1, 2, 1, 2, 1, 2]))
    assert boundary and np.isinf(k) and mean == 1.5


def test_fit_nb_sample_recovers_k(rng):
    y = rng.negative_binomial(3.0, 3.0 / (3.0 + 4.0), 20000)
    mean, k, boundary = fit_nb_sample(y)
    assert not boundary
    assert k == pytest.approx(3.0, rel=0.1)


def test_dispersion_map_rows():
    m = dispersion_map([0.3, 0.6, 0.9], [0.5, 1.0, 2.5], n_per_cell=20000, seed=0)
    assert m.vr_poisson.shape == (3, 3)
    assert np.all(m.vr_poisson[:2] > 1)
    assert np.all(m.vr_poisson[2] < 1)
    assert np.all(m.nb_boundary[2])
    again = dispersion_map([0.3, 0.6, 0.9], [0.5, 1.0, 2.5], n_per_cell=20000, seed=0)
    np.testing.assert_array_equal(m.vr_poisson, again.vr_poisson)


def test_dispersion_map_validation():
    with pytest.raises(DataError):
        dispersion_map([1.0], [1.0], 100, 0)
    with pytest.raises(DataError):
        dispersion_map([0.5], [1.0], 1, 0)
