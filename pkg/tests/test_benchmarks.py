import numpy as np
import pytest

from ellipsoid_gaussian.benchmarks import (
    SETTINGS,
    HybridRosenbrockParams,
    build_fixture,
    gen_setting,
    hybrid_rosenbrock_log_density,
    hybrid_rosenbrock_sample,
    load_fixture,
    standardize_params,
)
from ellipsoid_gaussian.core import EGParams, GaussianFactorModel, Standardization, eg_cov, eg_log_density, eg_mean


@pytest.mark.parametrize("name", [s for s in SETTINGS if s != "hybrid_rosenbrock_3d"])
def test_committed_fixtures_match_their_recipe(name):
    assert load_fixture(name) == build_fixture(name)


def test_fixture_constants():
    vc = EGParams.from_dict(load_fixture("very_curved_8d"))
    assert (vc.p, vc.k, vc.tau) == (8, 4, 3.0)
    assert np.all(vc.sigma2 == 0.01) and np.all(vc.c == 0)
    ag = EGParams.from_dict(load_fixture("approx_gaussian_6d"))
    assert (ag.p, ag.k, ag.tau) == (6, 2, 30.0) and np.all(ag.sigma2 == 0.4)
    gf = load_fixture("gaussian_factor_6d")
    assert (gf["p"], gf["k"]) == (6, 3) and gf["sigma2"] == [0.01] * 6
    with pytest.raises(ValueError):
        load_fixture("hybrid_rosenbrock_3d")
    with pytest.raises(ValueError):
        build_fixture("hybrid_rosenbrock_3d")


def test_unknown_setting_and_bad_n(rng):
    with pytest.raises(ValueError, match="unknown setting"):
        gen_setting("banana", 10, rng)
    with pytest.raises(ValueError):
        gen_setting("very_curved_8d", 0, rng)
    with pytest.raises(ValueError):
        gen_setting("approx_gaussian_6d", 1, rng)


def test_gaussian_factor_covariance(rng):
    sim = gen_setting("gaussian_factor_6d", 100_000, rng)
    model = sim.raw_params
    X = sim.data.raw_values()
    C = model.loadings @ model.loadings.T + 0.01 * np.eye(6)
    assert np.linalg.norm(np.cov(X.T) - C, 2) < 0.02 * np.linalg.norm(C, 2)
    # standardized data and parameters agree
    Z = sim.data.values
    assert np.allclose(Z.std(axis=0, ddof=1), 1.0)
    assert np.linalg.norm(np.cov(Z.T) - sim.params.cov(), 2) < 0.02 * np.linalg.norm(sim.params.cov(), 2)


def test_very_curved_mean_and_no_standardization(rng):
    sim = gen_setting("very_curved_8d", 100_000, rng)
    assert sim.data.standardization is None and sim.params is sim.raw_params
    X = sim.data.values
    scale = np.sqrt(np.trace(eg_cov(sim.params)))
    assert np.linalg.norm(X.mean(axis=0) - eg_mean(sim.params)) < 0.01 * scale
    C = eg_cov(sim.params)
    assert np.linalg.norm(np.cov(X.T) - C, 2) < 0.02 * np.linalg.norm(C, 2)


def test_approx_gaussian_standardized_moments(rng):
    sim = gen_setting("approx_gaussian_6d", 100_000, rng)
    assert sim.data.standardization is not None
    Z = sim.data.values
    C = eg_cov(sim.params)
    assert np.linalg.norm(Z.mean(axis=0) - eg_mean(sim.params)) < 0.01 * np.sqrt(np.trace(C))
    assert np.linalg.norm(np.cov(Z.T) - C, 2) < 0.02 * np.linalg.norm(C, 2)


def test_standardize_params_density_jacobian(rng):
    raw = EGParams.from_dict(load_fixture("approx_gaussian_6d"))
    rec = Standardization(mean=rng.standard_normal(6), sd=rng.uniform(0.5, 2, 6))
    z_params = standardize_params(raw, rec)
    x = rng.standard_normal((5, 6)) * 2
    lhs = eg_log_density(x, raw)
    rhs = eg_log_density(rec.apply(x), z_params) + rec.log_jacobian()
    assert np.allclose(lhs, rhs, atol=1e-8)
    gf = GaussianFactorModel(np.zeros(6), rng.standard_normal((6, 3)), np.full(6, 0.5))
    zf = standardize_params(gf, rec)
    assert np.allclose(gf.log_density(x), zf.log_density(rec.apply(x)) + rec.log_jacobian())


def test_rosenbrock_defaults_and_validation():
    params = HybridRosenbrockParams.default_3d()
    assert (params.a, float(params.b[0, 0]), params.nu) == (0.2, 0.05, 1.0)
    assert params.dim == 3
    sim = gen_setting("hybrid_rosenbrock_3d", 10, np.random.default_rng(0))
    assert sim.params.a == 0.2 and sim.data.p == 3
    with pytest.raises(ValueError):
        HybridRosenbrockParams(a=0.2, b=np.ones((2, 2)), nu=1.0, n1=3, n2=1)
    with pytest.raises(ValueError):
        HybridRosenbrockParams(a=-1.0, b=0.05, nu=1.0, n1=3, n2=1)
    with pytest.raises(ValueError):
        hybrid_rosenbrock_log_density(np.zeros(4), params)


def test_rosenbrock_mode():
    params = HybridRosenbrockParams.default_3d()
    assert hybrid_rosenbrock_log_density(np.array([1.0, 1.0, 1.0]), params) == 0.0
    p2 = HybridRosenbrockParams(a=1.0, b=np.array([[1.0, 2.0, 3.0], [0.5, 0.5, 0.5]]), nu=1.3, n1=4, n2=2)
    chain = [1.3, 1.3 ** 2, 1.3 ** 4, 1.3 ** 8]
    x = np.array(chain + chain[1:])
    assert hybrid_rosenbrock_log_density(x, p2) == pytest.approx(0.0, abs=1e-12)


def direct_rosenbrock(x, a, b, nu, n1, n2):
    """Term-by-term loop; x = (x_1, x_{1,2..n1}, x_{2,2..n1}, ...)."""
    total = -a * (x[0] - nu) ** 2
    pos = 1
    for j in range(n2):
        prev = x[0]
        for i in range(n1 - 1):
            cur = x[pos]
            total -= b[j][i] * (cur - prev ** 2) ** 2
            prev = cur
            pos += 1
    return total


def test_rosenbrock_matches_direct_loop(rng):
    b = rng.uniform(0.1, 2, (3, 2))
    params = HybridRosenbrockParams(a=0.7, b=b, nu=-0.4, n1=3, n2=3)
    X = rng.standard_normal((20, params.dim))
    got = hybrid_rosenbrock_log_density(X, params)
    for x, g in zip(X, got):
        assert g == pytest.approx(direct_rosenbrock(x, 0.7, b, -0.4, 3, 3), rel=1e-13)


def test_rosenbrock_sampler_moments():
    params = HybridRosenbrockParams.default_3d()
    X = hybrid_rosenbrock_sample(params, 1_000_000, np.random.default_rng(11)).values
    assert abs(X[:, 0].mean() - 1.0) < 0.01
    assert X[:, 0].var() == pytest.approx(2.5, rel=0.02)
    assert np.var(X[:, 1] - X[:, 0] ** 2) == pytest.approx(10.0, rel=0.02)
    assert np.var(X[:, 2] - X[:, 1] ** 2) == pytest.approx(10.0, rel=0.02)


def test_rosenbrock_importance_weights_constant(rng):
    params = HybridRosenbrockParams(a=0.3, b=np.array([[0.2, 0.9], [1.5, 0.4]]), nu=0.5, n1=3, n2=2)
    data = hybrid_rosenbrock_sample(params, 200, rng)
    assert data.column_names == ("x1", "x1.2", "x1.3", "x2.2", "x2.3")
    X = data.values
    # log of the ancestral Gaussian kernels, without normalizing constants
    kernel = -params.a * (X[:, 0] - params.nu) ** 2
    for j in range(2):
        prev = X[:, 0]
        for i in range(2):
            cur = X[:, 1 + 2 * j + i]
            kernel = kernel - params.b[j, i] * (cur - prev ** 2) ** 2
            prev = cur
    w = hybrid_rosenbrock_log_density(X, params) - kernel
    assert np.ptp(w) < 1e-10


def test_generators_are_deterministic():
    for name in SETTINGS:
        a = gen_setting(name, 50, np.random.default_rng(4)).data.values
        b = gen_setting(name, 50, np.random.default_rng(4)).data.values
        assert np.array_equal(a, b)
