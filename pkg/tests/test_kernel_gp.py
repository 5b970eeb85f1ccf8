"""Kernel, jittered Cholesky and GP conditional machinery."""

import numpy as np
import pytest

from gpdense.kernel_gp import (
    NUGGET,
    CholeskyError,
    KernelParams,
    chol_jitter,
    conditional_prior,
    conditional_prior_diag,
    kernel_matrix,
    sample_mvn,
    sparse_predictive_moments,
)


def test_kernel_params_round_trip():
    p = KernelParams.create(2.0, [0.5, 1.5])
    assert p.amplitude == pytest.approx(2.0)
    np.testing.assert_allclose(p.lengthscales, [0.5, 1.5])
    q = KernelParams.from_vector(p.as_vector())
    assert q.log_amplitude == p.log_amplitude
    np.testing.assert_array_equal(q.log_lengthscales, p.log_lengthscales)
    with pytest.raises(ValueError):
        KernelParams.create(-1.0, [1.0])


def test_kernel_matrix_values():
    p = KernelParams.create(3.0, [2.0])
    x = np.array([[0.0], [1.0]])
    k = kernel_matrix(x, x, p)
    assert k[0, 0] == pytest.approx(3.0)
    assert k[0, 1] == pytest.approx(3.0 * np.exp(-1.0 / 8.0))
    # ARD: per-dimension scaling
    p2 = KernelParams.create(1.0, [1.0, 10.0])
    a = np.array([[0.0, 0.0]])
    b = np.array([[1.0, 1.0]])
    expected = np.exp(-0.5 * (1.0 + 0.01))
    assert kernel_matrix(a, b, p2)[0, 0] == pytest.approx(expected)


def test_kernel_matrix_dimension_check():
    p = KernelParams.create(1.0, [1.0])
    with pytest.raises(ValueError):
        kernel_matrix(np.zeros((2, 2)), np.zeros((2, 2)), p)


def test_chol_jitter_pd_and_failure():
    k = np.array([[2.0, 0.5], [0.5, 1.0]])
    fac = chol_jitter(k)
    assert fac.jitter == 0.0
    np.testing.assert_allclose(fac.lower @ fac.lower.T, k, atol=1e-12)
    assert fac.log_det() == pytest.approx(np.linalg.slogdet(k)[1])
    np.testing.assert_allclose(fac.solve(np.array([1.0, 0.0])),
                               np.linalg.solve(k, [1.0, 0.0]), atol=1e-12)
    with pytest.raises(CholeskyError, match="eigenvalue"):
        chol_jitter(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_chol_jitter_near_singular_uses_ladder():
    x = np.linspace(0, 1, 30)[:, None]
    k = kernel_matrix(x, x, KernelParams.create(1.0, [5.0]))
    fac = chol_jitter(k)
    assert fac.jitter > 0.0


def test_conditional_prior_interpolates():
    p = KernelParams.create(1.5, [0.7])
    xk = np.array([[0.0], [1.0], [2.5]])
    g = np.array([0.3, -1.0, 2.0])
    mean, cov = conditional_prior(g, xk, xk, p, mu0=0.5)
    np.testing.assert_allclose(mean, g, atol=1e-4)
    assert np.all(np.diag(cov) < 1e-4)


def test_conditional_prior_matches_direct_formula():
    p = KernelParams.create(1.0, [1.0])
    xk = np.array([[0.0], [2.0]])
    xq = np.array([[0.5], [3.0]])
    g = np.array([1.0, -0.5])
    mu0 = 0.2
    nug = NUGGET * p.amplitude
    kaa = kernel_matrix(xk, xk, p) + nug * np.eye(2)
    kqa = kernel_matrix(xq, xk, p)
    kqq = kernel_matrix(xq, xq, p) + nug * np.eye(2)
    inv = np.linalg.inv(kaa)
    mean_d = mu0 + kqa @ inv @ (g - mu0)
    cov_d = kqq - kqa @ inv @ kqa.T
    mean, cov = conditional_prior(g, xk, xq, p, mu0)
    np.testing.assert_allclose(mean, mean_d, atol=1e-10)
    np.testing.assert_allclose(cov, cov_d, atol=1e-10)
    m2, v2 = conditional_prior_diag(g, xk, xq, p, mu0)
    np.testing.assert_allclose(m2, mean_d, atol=1e-10)
    np.testing.assert_allclose(v2, np.diag(cov_d), atol=1e-10)


def test_conditional_prior_empty_conditioning():
    p = KernelParams.create(1.0, [1.0])
    with pytest.raises(ValueError):
        conditional_prior(np.empty(0), np.empty((0, 1)),
                          np.zeros((1, 1)), p, 0.0)


def test_sample_mvn_moments():
    mean = np.array([1.0, -2.0])
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    rng = np.random.default_rng(8)
    draws = sample_mvn(mean, cov, rng, size=40_000)
    np.testing.assert_allclose(draws.mean(axis=0), mean, atol=0.03)
    np.testing.assert_allclose(np.cov(draws, rowvar=False), cov, atol=0.05)


def test_sparse_predictive_moments_against_dense():
    p = KernelParams.create(1.2, [0.8])
    rng = np.random.default_rng(9)
    inducing = rng.standard_normal((6, 1))
    mu2s = rng.standard_normal(6)
    a = rng.standard_normal((6, 6)) * 0.1
    sigma2s = a @ a.T + 0.5 * np.eye(6)
    xq = rng.standard_normal((4, 1))
    mu0 = 0.3

    ks = kernel_matrix(inducing, inducing, p) + NUGGET * p.amplitude * np.eye(6)
    kqs = kernel_matrix(xq, inducing, p)
    inv = np.linalg.inv(ks)
    mean_d = mu0 + kqs @ inv @ (mu2s - mu0)
    var_d = (p.amplitude * (1.0 + NUGGET) - np.sum(kqs @ inv * kqs, axis=1)
             + np.sum(kqs @ inv @ sigma2s @ inv * kqs, axis=1))
    mean, var, tilt = sparse_predictive_moments(inducing, mu2s, sigma2s,
                                                p, mu0, xq)
    np.testing.assert_allclose(mean, mean_d, atol=1e-8)
    np.testing.assert_allclose(var, var_d, atol=1e-8)
    np.testing.assert_allclose(tilt, np.sqrt(mean_d**2 + var_d), atol=1e-8)
