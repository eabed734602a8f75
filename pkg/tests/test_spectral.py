import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import kendalltau

from maxstable.spatial import MaternParams, SiteSet
from maxstable.spectral import (ArchimedeanClusterSpec, ClaytonCopula, ClusteredArchimedean, GumbelCopula,
                                LogNormalSpectral, MARGINS, ThetaVector, lambda_kernel, logistic_model,
                                psi_derivatives, sample_spectral)


def test_theta_vector_roundtrip_and_bounds():
    th = ThetaVector(("a", "b", "c"), [2.0, 0.3, -1.0], [1.0, 0.0, -np.inf], [np.inf, 1.0, np.inf])
    x = th.to_unconstrained()
    assert np.allclose(th.from_unconstrained(x), th.values)
    assert th.as_dict() == {"a": 2.0, "b": 0.3, "c": -1.0}
    with pytest.raises(ValueError):
        th.replace([0.5, 0.3, 0.0])
    with pytest.raises(ValueError):
        ThetaVector(("a",), [1.0, 2.0], [0.0], [1.0])


@pytest.mark.parametrize("name,alpha", [("lognormal", 0.9), ("weibull", 1.5), ("frechet", 1.7)])
def test_margins_have_mean_one(name, alpha):
    mar = MARGINS[name](alpha)
    val, _ = integrate.quad(lambda u: u * math.exp(float(mar.logpdf(np.array(u)))), 0, np.inf, limit=400)
    assert val == pytest.approx(1.0, rel=1e-6)
    lc = np.log(np.array([0.1, 0.5, 0.9]))
    assert np.allclose(mar.logcdf(mar.from_logcdf(lc)), lc)


def test_model_means_are_one(model3, rng):
    U = model3.sample(200_000, rng)
    assert np.allclose(np.maximum(U, 0).mean(axis=0), 1.0, atol=0.03)


@pytest.mark.parametrize("copula,theta", [("gumbel", 1.7), ("clayton", 0.4), ("gumbel", 1.2)])
def test_sampled_kendall_tau(copula, theta, rng):
    m = ClusteredArchimedean([ArchimedeanClusterSpec((0, 1), copula, theta, "lognormal", 0.9)])
    U = m.sample(20_000, rng)
    tau = kendalltau(U[:, 0], U[:, 1])[0]
    expected = m.parts[0][0].kendall_tau()
    assert tau == pytest.approx(expected, abs=0.02)


def test_psi_derivative_values():
    assert psi_derivatives(ClaytonCopula(1.0), 1, 1.0) == pytest.approx(-0.25)
    assert psi_derivatives(GumbelCopula(1.0), 1, 1.0) == pytest.approx(-math.exp(-1))
    assert psi_derivatives(GumbelCopula(1.0), 0, 0.0) == 1.0


@pytest.mark.parametrize("cop", [GumbelCopula(1.7), GumbelCopula(1.2), ClaytonCopula(0.4), ClaytonCopula(2.0)])
@pytest.mark.parametrize("t", [0.3, 1.0, 4.0])
def test_psi_derivatives_signs_and_fd(cop, t):
    h = 1e-5 * t
    for k in range(0, 6):
        d = psi_derivatives(cop, k, t)
        assert math.copysign(1, d) == (-1) ** k
        fd = (psi_derivatives(cop, k, t + h) - psi_derivatives(cop, k, t - h)) / (2 * h)
        assert psi_derivatives(cop, k + 1, t) == pytest.approx(fd, rel=1e-5)


def test_psi_derivative_rejections():
    with pytest.raises(ValueError):
        psi_derivatives(GumbelCopula(1.5), 13, 1.0)
    with pytest.raises(ValueError):
        psi_derivatives(GumbelCopula(1.5), 1, 0.0)
    with pytest.raises(ValueError):
        psi_derivatives(ClaytonCopula(0.5), 1, -1.0)
    with pytest.raises(ValueError):
        GumbelCopula(0.9)
    with pytest.raises(ValueError):
        ClaytonCopula(0.0)


def test_full_set_kernel_is_density(gaussian3, rng):
    z = rng.uniform(0.5, 2.0, 3)
    g = np.array([0.3, 1.0, 2.5])
    lam = lambda_kernel(gaussian3, g, [0, 1, 2], z)
    dens = np.exp(gaussian3.log_density(g[:, None] * z[None, :]))
    assert np.allclose(lam, dens, rtol=1e-12)


def test_clustered_full_kernel_is_density_for_independent_frechet():
    # theta = 1 Gumbel: independent Frechet components, density is a product
    m = logistic_model(2, 2.5)
    mar = m.parts[0][1]
    z = np.array([0.7, 1.6])
    g = 1.3
    want = float(np.sum(mar.logpdf(g * z)))
    assert math.log(lambda_kernel(m, g, [0, 1], z)) == pytest.approx(want, rel=1e-12)


def test_fast_path_matches_generic_kernel():
    z = np.array([[0.8, 1.3, 2.0]])
    g = np.array([[0.2, 1.0, 3.0]])
    fast = logistic_model(3, 1.8)
    generic = ClusteredArchimedean([ArchimedeanClusterSpec((0, 1, 2), "gumbel", 1.0 + 1e-13, "frechet", 1.8)])
    for mask in (1, 3, 5, 7):
        assert np.allclose(fast.log_kernel(mask, z, g), generic.log_kernel(mask, z, g), rtol=1e-9)


def test_lognormal_families():
    sites = SiteSet([[0.5, 0.2], [1, 0.4], [0.3, 1]])
    geo = LogNormalSpectral.geometric(sites, 0.7, MaternParams(1.0, 1.0))
    assert np.allclose(np.diag(geo.cov), 0.7)
    br = LogNormalSpectral.brown_resnick(sites, 1.0, 1.0)
    assert br.theta.names == ("c", "kappa")
    assert np.min(np.linalg.eigvalsh(br.cov)) > 0
    with pytest.raises(ValueError):
        # the variogram vanishes at the origin: degenerate component
        LogNormalSpectral.brown_resnick(SiteSet([[0, 0], [1, 0]]), 1.0, 1.0)


def test_model_rejections():
    with pytest.raises(ValueError):
        ClusteredArchimedean([ArchimedeanClusterSpec((0, 1), "gumbel", 1.5, "frechet", 2.0),
                              ArchimedeanClusterSpec((1,), "gumbel", 1.5, "frechet", 2.0)])
    with pytest.raises(ValueError):
        ArchimedeanClusterSpec((0,), "frank", 1.5, "frechet", 2.0)
    with pytest.raises(ValueError):
        ArchimedeanClusterSpec((0,), "gumbel", 1.5, "frechet", 1.0)
    with pytest.raises(ValueError):
        sample_spectral(logistic_model(2, 2.0), 0)


def test_sampling_is_deterministic(model3):
    a = sample_spectral(model3, 50, seed=4)
    b = sample_spectral(model3, 50, seed=4)
    assert np.array_equal(a, b)
