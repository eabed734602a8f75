import math

import numpy as np
import pytest

from maxstable.gaussian import QmcSettings
from maxstable.mu import (BoundaryWarning, MuStrategy, SharedMcSample, default_strategy, grad_mu, log_mu_batch,
                          mu, p_b_weights, v_b_star, v_star, v_star_monte_carlo)
from maxstable.spectral import ArchimedeanClusterSpec, ClusteredArchimedean, GaussianSpectral, logistic_model


def _strategies(model):
    out = [MuStrategy("quadrature"), default_strategy(model)]
    return out


def test_univariate_reduces_to_frechet_density():
    models = [GaussianSpectral(np.eye(1)), logistic_model(1, 2.0)]
    for model in models:
        for st in _strategies(model):
            assert mu(model, [0], [1.7], st) == pytest.approx(1.7 ** -2, rel=1e-6)


def test_strategies_agree(model3, rng):
    quad = MuStrategy("quadrature", QmcSettings(4096))
    ref = default_strategy(model3, QmcSettings(4096))
    Z = rng.uniform(0.4, 2.5, (4, 3))
    for B in ([0], [1, 2], [0, 1, 2]):
        a = log_mu_batch(model3, B, Z, quad)
        b = log_mu_batch(model3, B, Z, ref)
        assert np.allclose(a, b, atol=2e-3)


def test_homogeneity(model3, rng):
    z = rng.uniform(0.5, 2.0, 3)
    for B in ([1], [0, 2], [0, 1, 2]):
        b = len(B)
        base = mu(model3, B, z)
        for t in (0.01, 3.0, 250.0):
            assert mu(model3, B, t * z) == pytest.approx(t ** -(b + 1) * base, rel=1e-6)


def test_euler_identity_against_direct_mc(model3, rng):
    z = rng.uniform(0.5, 2.0, 3)
    mc, se = v_star_monte_carlo(model3, z, n=400_000, seed=7)
    assert v_star(model3, z) == pytest.approx(mc, abs=4 * se)


@pytest.mark.parametrize("rho", [0.0, 0.5, 0.9])
def test_schlather_bivariate(rho):
    model = GaussianSpectral(np.array([[1.0, rho], [rho, 1.0]]))
    assert v_star(model, [1.0, 1.0]) == pytest.approx(1 + math.sqrt((1 - rho) / 2), abs=1e-5)


def test_logistic_closed_form(rng):
    r = 2.3
    model = logistic_model(3, r)
    z = rng.uniform(0.5, 2.0, 3)
    s = np.sum(z ** -r)
    assert v_star(model, z) == pytest.approx(s ** (1 / r), rel=1e-7)
    # mu({0}; z) = z_0^(-r-1) s^(1/r - 1)
    assert mu(model, [0], z) == pytest.approx(z[0] ** (-r - 1) * s ** (1 / r - 1), rel=1e-7)


def test_v_b_star_sums_to_v_star(model3, rng):
    z = rng.uniform(0.5, 2.0, 3)
    raw = sum(v_b_star(model3, B, z, qmc=QmcSettings(512)) for B in range(1, 8))
    assert raw == pytest.approx(v_star(model3, z), rel=5e-4)


def test_p_b_weights_normalized(clustered3):
    w = p_b_weights(clustered3, [0.7, 1.0, 1.4])
    assert sorted(w) == list(range(1, 8)) and sum(w.values()) == pytest.approx(1.0)
    assert all(v >= 0 for v in w.values())


def test_v_b_star_independent_clusters_against_quad():
    from scipy import integrate
    model = ClusteredArchimedean([ArchimedeanClusterSpec((0,), "gumbel", 1.0, "frechet", 2.0),
                                  ArchimedeanClusterSpec((1,), "clayton", 0.5, "lognormal", 0.8)])
    (_, m0), (_, m1) = model.parts
    z = np.array([0.5, 2.0])

    def surv(mar, x):
        return -math.expm1(float(mar.logcdf(np.array(x))))
    both, _ = integrate.quad(lambda g: surv(m0, g * z[0]) * surv(m1, g * z[1]), 0, np.inf, limit=400)
    only0, _ = integrate.quad(lambda g: surv(m0, g * z[0]) * (1 - surv(m1, g * z[1])), 0, np.inf, limit=400)
    assert v_b_star(model, [0, 1], z) == pytest.approx(both, rel=1e-6)
    assert v_b_star(model, [0], z) == pytest.approx(only0, rel=1e-6)


def test_p_b_symmetric_gaussian():
    rho = 0.5
    model = GaussianSpectral(np.array([[1.0, rho], [rho, 1.0]]))
    w = p_b_weights(model, [1.0, 1.0])
    vs = 1 + math.sqrt((1 - rho) / 2)
    assert w[3] == pytest.approx((2 - vs) / vs, abs=1e-4)
    assert w[1] == pytest.approx(w[2], abs=1e-4)


def test_monte_carlo_is_unbiased(clustered3):
    z = np.array([0.8, 1.2, 1.5])
    exact = mu(clustered3, [0, 1], z)
    est = [mu(clustered3, [0, 1], z, MuStrategy("monte_carlo", sample=SharedMcSample.create(2000, s)))
           for s in range(40)]
    se = np.std(est, ddof=1) / math.sqrt(len(est))
    assert np.mean(est) == pytest.approx(exact, abs=4 * se)


def test_grad_mu_against_five_point_stencil(clustered3):
    z = np.array([0.8, 1.2, 1.5])
    g = grad_mu(clustered3, [0, 2], z)
    th = clustered3.theta.values
    for i in range(len(th)):
        h = 1e-3 * max(1.0, abs(th[i]))

        def f(d):
            v = th.copy()
            v[i] += d
            return mu(clustered3.with_theta(v), [0, 2], z)
        fd = (-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h)
        assert g[i] == pytest.approx(fd, rel=1e-4, abs=1e-9)


def test_boundary_warning():
    model = logistic_model(2, 2.0)
    with pytest.warns(BoundaryWarning):
        g = grad_mu(model, [0], [1.0, 1.0])
    assert np.all(np.isfinite(g))


def test_input_validation(gaussian3):
    with pytest.raises(ValueError):
        mu(gaussian3, [0], [1.0, -1.0, 1.0])
    with pytest.raises(ValueError):
        mu(gaussian3, [], [1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        mu(gaussian3, [0], [1.0, 1.0])
    with pytest.raises(TypeError):
        mu(gaussian3, [0], [1.0, 1.0, 1.0], MuStrategy("analytic_lognormal"))
    with pytest.raises(ValueError):
        MuStrategy("monte_carlo")
