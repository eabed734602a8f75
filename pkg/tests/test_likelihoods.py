import numpy as np
import pytest
import sympy as sp

from _quad import censored_mass, full_density_mass
from maxstable.combinatorics import ComponentSet, Partition, enumerate_partitions
from maxstable.likelihoods import (BlockMaximaRecord, ExceedanceRecord, LikelihoodCapWarning, LikelihoodKind,
                                   evaluate, loglik_censored, loglik_full, loglik_maxima_occurrence,
                                   loglik_pairwise, loglik_partition, score)
from maxstable.mu import v_star
from maxstable.spatial import MaternParams, SiteSet
from maxstable.spectral import (ArchimedeanClusterSpec, ClusteredArchimedean, GaussianSpectral, LogNormalSpectral,
                                logistic_model)
from maxstable.combinatorics import CombinatorialExplosion


def _bivariate_models():
    sites = SiteSet([[0.0, 0.0], [0.7, 0.2]])
    return [GaussianSpectral.from_sites(sites, MaternParams(1.0, 1.0)),
            LogNormalSpectral.geometric(sites, 1.0, MaternParams(1.0, 1.0)),
            ClusteredArchimedean([ArchimedeanClusterSpec((0, 1), "gumbel", 1.7, "lognormal", 0.9)])]


@pytest.mark.parametrize("model", _bivariate_models()[:2], ids=["gaussian", "lognormal"])
def test_full_density_integrates_to_one(model):
    assert full_density_mass(model) == pytest.approx(1.0, abs=1e-6)


def test_full_density_integrates_to_one_clustered():
    model = _bivariate_models()[2]
    assert full_density_mass(model, panels=10, order=16) == pytest.approx(1.0, abs=1e-4)


@pytest.mark.parametrize("model", _bivariate_models(), ids=["gaussian", "lognormal", "clustered"])
def test_censored_mass_is_one(model):
    assert censored_mass(model, panels=8, order=16) == pytest.approx(1.0, abs=1e-4)


def test_logistic_full_likelihood_symbolic():
    r = 2.5
    z1, z2, rr = sp.symbols("z1 z2 r", positive=True)
    V = (z1 ** -rr + z2 ** -rr) ** (1 / rr)
    dens = sp.diff(sp.exp(-V), z1, z2)
    point = {z1: 0.8, z2: 1.7, rr: r}
    want = float(sp.log(dens.subs(point)))
    got = loglik_full(logistic_model(2, r), [0.8, 1.7])
    assert got == pytest.approx(want, rel=1e-9)


def test_occurrence_sums_to_full(clustered3, rng):
    z = rng.uniform(0.5, 2.0, 3)
    total = sum(np.exp(loglik_maxima_occurrence(clustered3, BlockMaximaRecord(z, p)))
                for p in enumerate_partitions(3))
    assert total == pytest.approx(np.exp(loglik_full(clustered3, z)), rel=1e-10)


def test_partition_and_pairwise_relations(clustered3, rng):
    z = rng.uniform(0.5, 2.0, 3)
    whole = Partition.of([[0, 1, 2]], 3)
    assert loglik_partition(clustered3, z, whole) == pytest.approx(3 * loglik_full(clustered3, z))
    assert loglik_partition(clustered3, z, whole, weights=False) == pytest.approx(loglik_full(clustered3, z))
    pairs = sum(loglik_full(clustered3.restrict([i, j]), z[[i, j]]) for i, j in [(0, 1), (0, 2), (1, 2)])
    assert loglik_pairwise(clustered3, z) == pytest.approx(pairs)
    singles = Partition.of([[0], [1], [2]], 3)
    assert loglik_partition(clustered3, z, singles) == pytest.approx(float(np.sum(-1 / z - 2 * np.log(z))))


def test_censored_matches_definition(model3):
    x = np.array([2.0, 1.0, 3.5])
    rec = ExceedanceRecord.from_vector(x)
    assert rec.exceed_set.members == (0, 2)
    from maxstable.mu import mu
    want = np.log(mu(model3, [0, 2], x)) - np.log(v_star(model3, np.ones(3)))
    assert loglik_censored(model3, rec) == pytest.approx(want, rel=1e-9)


KINDS = ["full", "pairwise", "partition", "censored", "occurrence"]


def _observation(kind, z):
    if kind == "censored":
        return ExceedanceRecord.from_vector(z)
    if kind == "occurrence":
        return BlockMaximaRecord(z, Partition.of([[0, 2], [1]], 3))
    return z


def _kind(kind):
    if kind == "partition":
        return LikelihoodKind("partition", Partition.of([[0, 1], [2]], 3))
    return LikelihoodKind(kind)


@pytest.mark.parametrize("kind", KINDS)
def test_scores_match_finite_differences(kind, clustered3, rng):
    z = rng.uniform(0.6, 3.0, 3)
    obs = _observation(kind, z)
    k = _kind(kind)
    g = score(clustered3, k, obs)
    data = [obs] if kind in ("censored", "occurrence") else obs[None, :]
    th = clustered3.theta.values
    for i in range(len(th)):
        h = 1e-3 * max(1.0, abs(th[i]))

        def f(d):
            v = th.copy()
            v[i] += d
            return evaluate(clustered3.with_theta(v), k, data).loglik
        fd = (-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h)
        assert g[i] == pytest.approx(fd, rel=1e-4, abs=1e-7)


def test_threads_do_not_change_values(clustered3, rng):
    Z = rng.uniform(0.5, 3.0, (20, 3))
    a = evaluate(clustered3, "full", Z, grad=True)
    b = evaluate(clustered3, "full", Z, grad=True, threads=3)
    assert np.array_equal(a.per_observation, b.per_observation)
    assert np.array_equal(a.scores, b.scores)
    assert a.n_mu_evals == b.n_mu_evals > 0


def test_caps_and_validation(clustered3):
    m11 = logistic_model(11, 2.0)
    with pytest.raises(CombinatorialExplosion):
        loglik_full(m11, np.ones(11))
    with pytest.warns(LikelihoodCapWarning):
        loglik_full(logistic_model(8, 2.0), np.ones(8) * 1.5)
    with pytest.raises(ValueError):
        LikelihoodKind("partition")
    with pytest.raises(ValueError):
        LikelihoodKind("composite")
    with pytest.raises(ValueError):
        ExceedanceRecord(np.array([1.0, 1.0]), ComponentSet((0,), 2))
    with pytest.raises(ValueError):
        evaluate(clustered3, "full", np.ones((2, 2)))
    with pytest.raises(ValueError):
        evaluate(clustered3, "censored", [])
