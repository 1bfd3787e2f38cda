import math

import numpy as np
import pytest

from conftest import random_orthogonal, random_unit
from ellipsoid_gaussian.special import bessel_ratio, log_vmf_const
from ellipsoid_gaussian.vmf import VMFParams, uniform_sphere, vmf_limit_residuals, vmf_log_density, vmf_sample

N = 1_000_000


def test_params_validation():
    with pytest.raises(ValueError):
        VMFParams(np.array([1.0, 1.0]), 1.0)
    with pytest.raises(ValueError):
        VMFParams(np.array([1.0, 0.0]), -1.0)
    with pytest.raises(ValueError):
        VMFParams(np.array([1.0]), 1.0)
    assert VMFParams(np.array([0.0, 0.0, 1.0]), 2).k == 3


def test_density_trivial_values():
    mu = np.array([0.6, 0.8])
    assert vmf_log_density(mu, VMFParams(mu, 0.0)) == 0.0
    for tau in [0.5, 7.0, 300.0]:
        assert vmf_log_density(mu, VMFParams(mu, tau)) == pytest.approx(log_vmf_const(2, tau) + tau, rel=1e-14)


def test_density_rejects_non_unit():
    with pytest.raises(ValueError):
        vmf_log_density(np.array([1.0, 1e-3]), VMFParams(np.array([1.0, 0.0]), 1.0))


@pytest.mark.parametrize("k, tau", [(2, 3.0), (3, 2.0), (5, 4.0)])
def test_density_integrates_to_one(k, tau, rng):
    params = VMFParams(random_unit(k, rng), tau)
    z = uniform_sphere(N, k, rng)
    assert abs(np.mean(np.exp(vmf_log_density(z, params))) - 1.0) < 0.005


def test_uniform_when_tau_zero(rng):
    eta = vmf_sample(VMFParams(random_unit(4, rng), 0.0), N, rng)
    assert np.linalg.norm(eta.mean(axis=0)) <= 0.005


@pytest.mark.parametrize("k, tau", [(2, 0.5), (3, 1.0), (4, 10.0), (10, 5.0), (3, 1e4)])
def test_mean_resultant_matches_bessel_ratio(k, tau, rng):
    mu = random_unit(k, rng)
    eta = vmf_sample(VMFParams(mu, tau), N, rng)
    rho = bessel_ratio(k, tau)
    assert np.allclose(np.linalg.norm(eta, axis=1), 1.0, atol=1e-12)
    assert np.linalg.norm(eta.mean(axis=0) - rho * mu) <= 0.005 * rho


def test_langevin_mean_cosine(rng):
    mu = np.array([0.0, 0.0, 1.0])
    eta = vmf_sample(VMFParams(mu, 10.0), N, rng)
    expected = 1.0 / math.tanh(10.0) - 0.1
    assert np.mean(eta @ mu) == pytest.approx(expected, rel=1e-3)


def test_sampler_deterministic_given_seed():
    params = VMFParams(np.array([0.0, 1.0, 0.0]), 3.0)
    a = vmf_sample(params, 100, np.random.default_rng(7))
    b = vmf_sample(params, 100, np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_sample_at_north_pole_and_n_validation(rng):
    eta = vmf_sample(VMFParams(np.array([1.0, 0.0, 0.0]), 50.0), 1000, rng)
    assert np.all(eta[:, 0] > 0.5)
    with pytest.raises(ValueError):
        vmf_sample(VMFParams(np.array([1.0, 0.0]), 1.0), 0, rng)


@pytest.mark.parametrize("k, tau", [(3, 4.0), (5, 20.0)])
def test_rotation_equivariance(k, tau, rng):
    mu = random_unit(k, rng)
    G = random_orthogonal(k, rng)
    a = vmf_sample(VMFParams(mu, tau), N, rng) @ G.T
    b = vmf_sample(VMFParams(G @ mu, tau), N, rng)
    assert np.max(np.abs(a.mean(axis=0) - b.mean(axis=0))) < 0.005
    assert np.max(np.abs(np.cov(a.T) - np.cov(b.T))) < 0.005


def test_limit_residual_covariance(rng):
    mu = random_unit(3, rng)
    tau = 1e4
    r = vmf_limit_residuals(VMFParams(mu, tau), N, rng)
    cov = np.cov(r.T)
    assert np.max(np.abs(cov - (np.eye(3) - np.outer(mu, mu)))) < 5e-2
    assert mu @ cov @ mu <= 1e-2


def test_limit_residual_mean_exact_bias(rng):
    # E sqrt(tau)(eta - mu) = sqrt(tau)(rho - 1) mu, about -(k-1)/(2 sqrt(tau)) mu
    mu = random_unit(3, rng)
    tau = 1e4
    r = vmf_limit_residuals(VMFParams(mu, tau), N, rng)
    exact = math.sqrt(tau) * (bessel_ratio(3, tau) - 1.0) * mu
    assert np.max(np.abs(r.mean(axis=0) - exact)) < 5e-3
    r6 = vmf_limit_residuals(VMFParams(mu, 1e6), N, rng)
    assert np.max(np.abs(r6.mean(axis=0))) < 5e-3


def test_limit_residuals_reject_zero_tau(rng):
    with pytest.raises(ValueError):
        vmf_limit_residuals(VMFParams(np.array([1.0, 0.0]), 0.0), 10, rng)


def test_limit_residuals_consistent_with_samples():
    params = VMFParams(np.array([0.6, 0.0, 0.8]), 40.0)
    r = vmf_limit_residuals(params, 50, np.random.default_rng(3))
    eta = vmf_sample(params, 50, np.random.default_rng(3))
    assert np.allclose(r, math.sqrt(40.0) * (eta - params.mu), atol=1e-12)
