"""Predictive density evaluation and the normalizer guard."""

import numpy as np
import pytest
from scipy.special import logsumexp

from gpdense.base_measure import Dataset, StandardNormal
from gpdense.density import (
    DensityEstimate,
    FlaggedEstimateError,
    log_expected_test_likelihood,
    per_sample_log_likelihoods,
    posterior_density_samples,
)
from gpdense.gibbs import GibbsConfig, run_chain
from gpdense.kernel_gp import KernelParams
from gpdense.variational import VBConfig, run_vb


def _estimate(log_unnorm, log_z, rel_std, jac=0.0):
    log_unnorm = np.asarray(log_unnorm, float)
    return DensityEstimate(
        eval_points=np.zeros((log_unnorm.shape[1], 1)),
        log_unnorm=log_unnorm,
        log_z=np.asarray(log_z, float),
        z_rel_std=np.asarray(rel_std, float),
        log_jacobian=jac,
    )


def test_density_estimate_arithmetic():
    est = _estimate([[0.0, -1.0], [1.0, 0.0]], [0.5, 1.0],
                    [0.001, 0.002], jac=0.25)
    expected = (np.array([[0.0, -1.0], [1.0, 0.0]])
                - np.array([[0.5], [1.0]]) + 0.25)
    np.testing.assert_allclose(est.log_densities(), expected)
    np.testing.assert_allclose(
        est.mean_density(), np.exp(expected).mean(axis=0)
    )
    per = per_sample_log_likelihoods(est)
    np.testing.assert_allclose(per, expected.sum(axis=1))
    direct = logsumexp(per) - np.log(2)
    assert log_expected_test_likelihood(est) == pytest.approx(direct)


def test_flag_guard():
    est = _estimate([[0.0]], [0.0], [0.02])
    assert est.flagged
    with pytest.raises(FlaggedEstimateError, match="1%"):
        log_expected_test_likelihood(est)
    ok = _estimate([[0.0]], [0.0], [0.005])
    assert not ok.flagged


def _small_data(n=40, seed=0):
    return Dataset(points=np.random.default_rng(seed).standard_normal((n, 1)))


def test_vb_density_integrates_to_one():
    data = _small_data()
    cfg = VBConfig(n_inducing=15, n_integration=1000, max_iters=25,
                   update_hyper=False)
    result = run_vb(data, cfg, KernelParams.create(1.0, [0.5]), 0.0,
                    StandardNormal(1), np.random.default_rng(1))
    grid = np.linspace(-5, 5, 400)[:, None]
    est = posterior_density_samples(result.state, grid,
                                    np.random.default_rng(2),
                                    n_samples=60, n_normalizer=20000)
    mass = np.trapezoid(est.mean_density(), grid[:, 0])
    assert mass == pytest.approx(1.0, abs=0.05)


def test_gibbs_density_shapes_and_guard():
    data = _small_data(25, seed=3)
    cfg = GibbsConfig(n_samples=30, burn_in=10, sample_hyper=False)
    chain = run_chain(data, cfg, KernelParams.create(1.0, [0.5]), 0.0,
                      StandardNormal(1), np.random.default_rng(4))
    grid = np.linspace(-3, 3, 50)[:, None]
    est = posterior_density_samples(chain, grid, np.random.default_rng(5),
                                    n_samples=10, n_normalizer=8000)
    assert est.log_unnorm.shape == (10, 50)
    assert est.log_z.shape == (10,)
    assert np.all(np.isfinite(est.log_densities()))
    # few normalizer points: the 1% MC guard must trip
    tiny = posterior_density_samples(chain, grid, np.random.default_rng(6),
                                     n_samples=5, n_normalizer=30)
    assert tiny.flagged
    with pytest.raises(FlaggedEstimateError):
        log_expected_test_likelihood(tiny)


def test_posterior_density_samples_validation():
    with pytest.raises(TypeError):
        posterior_density_samples(object(), np.zeros((2, 1)),
                                  np.random.default_rng(0))
    data = _small_data(20, seed=7)
    cfg = VBConfig(n_inducing=8, n_integration=200, max_iters=3,
                   update_hyper=False)
    result = run_vb(data, cfg, KernelParams.create(1.0, [0.5]), 0.0,
                    StandardNormal(1), np.random.default_rng(8))
    with pytest.raises(ValueError):
        posterior_density_samples(result.state, np.zeros((2, 1)),
                                  np.random.default_rng(9), n_normalizer=0)


def test_log_jacobian_shifts_likelihood():
    est_a = _estimate([[0.0, 0.0]], [0.0], [0.001], jac=0.0)
    est_b = _estimate([[0.0, 0.0]], [0.0], [0.001], jac=0.5)
    la = log_expected_test_likelihood(est_a)
    lb = log_expected_test_likelihood(est_b)
    assert lb - la == pytest.approx(2 * 0.5)
