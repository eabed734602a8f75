import numpy as np
import pytest

from maxstable.data import (block_maxima_with_occurrence, censor_sample, cluster_components, hill_estimate,
                            hill_transform, kendall_tau_matrix, rank_pareto_transform, read_matrix,
                            write_matrix)
from maxstable.mu import p_b_weights
from maxstable.simulate import SimConfig, sample_mda
from maxstable.spatial import SiteSet
from maxstable.spectral import ArchimedeanClusterSpec, ClusteredArchimedean


def test_rank_transform_hand_case():
    out = rank_pareto_transform(np.array([[1.0], [2.0], [3.0]]))
    assert np.allclose(out[:, 0], [4 / 3, 2, 4])


def test_rank_transform_invariance_and_ties(rng):
    Y = rng.normal(size=(50, 3))
    assert np.array_equal(rank_pareto_transform(Y), rank_pareto_transform(np.exp(3 * Y) + 1))
    tied = rank_pareto_transform(np.array([[1.0], [1.0], [0.0]]))
    assert np.allclose(tied[:, 0], [2.0, 4.0, 4 / 3])
    with pytest.raises(ValueError):
        rank_pareto_transform(np.ones((3, 1)))


def test_rank_transform_pareto_quantiles(rng):
    X = rank_pareto_transform(1.0 / rng.uniform(size=(10_000, 1)))[:, 0]
    q = np.sort(X)
    p = np.arange(1, q.size + 1) / (q.size + 1)
    theo = 1 / (1 - p)
    sel = slice(100, 9900)
    slope = np.polyfit(theo[sel], q[sel], 1)[0]
    assert slope == pytest.approx(1.0, rel=0.05)


def test_hill_hand_case():
    h = hill_estimate(np.array([[1.0], [2.0], [4.0], [8.0]]), 2)
    assert h.alpha_hat[0] == pytest.approx(1 / (1.5 * np.log(2)))
    assert h.alpha_hat[0] == pytest.approx(0.9618, abs=1e-4)
    assert h.u_hat[0] == 2.0


def test_hill_frechet(rng):
    Y = (-np.log(rng.uniform(size=(10_000, 1)))) ** (-1 / 2.0)
    assert hill_estimate(Y, 500).alpha_hat[0] == pytest.approx(2.0, abs=0.3)


def test_hill_transform_floor_and_errors(rng):
    Y = 1.0 / rng.uniform(size=(500, 2))
    X, fit = hill_transform(Y, 50)
    assert X.min() == 1.0 and fit.k == 50
    with pytest.raises(ValueError):
        hill_estimate(-Y, 10)
    with pytest.raises(ValueError):
        hill_estimate(Y, 500)


def test_censor_sample_cases():
    Y = np.vstack([[5.0, 30.0, 12.0], [1.0, 2.0, 3.0]] + [[0.5, 0.5, 0.5]] * 8)
    recs = censor_sample(Y, 1)
    assert len(recs) == 1
    assert np.allclose(recs[0].x, [1.0, 3.0, 1.2])
    assert recs[0].exceed_set.members == (1, 2)
    all_rows = censor_sample(Y, 10)
    assert [r.exceed_set.members for r in all_rows] == [(0, 1, 2), (1, 2)]
    with pytest.raises(ValueError):
        censor_sample(Y, 0)


def test_censored_frequencies_match_p_b():
    model = ClusteredArchimedean([ArchimedeanClusterSpec((0, 1), "gumbel", 1.7, "lognormal", 0.9)])
    Y = sample_mda(SimConfig(model, 200_000, seed=5))
    recs = censor_sample(Y, 4000)
    N = len(recs)
    p = p_b_weights(model, np.ones(2))
    for mask, pb in p.items():
        freq = sum(r.exceed_set.mask == mask for r in recs) / N
        assert abs(freq - pb) <= 3 * np.sqrt(pb * (1 - pb) / N) + 0.01


def test_block_maxima_occurrence():
    Y = np.ones((10, 3))
    Y[4, 0] = 9.0
    Y[8, 1] = Y[8, 2] = 7.0
    (rec,) = block_maxima_with_occurrence(Y, 1)
    assert rec.occurrence.as_lists() == [[0], [1, 2]]
    assert np.allclose(rec.z, [0.9, 0.7, 0.7])  # rescaled by k / n
    same = block_maxima_with_occurrence(np.tile(np.arange(12.0)[:, None] + 1, (1, 3)), 3)
    assert all(r.occurrence.as_lists() == [[0, 1, 2]] for r in same)
    one = block_maxima_with_occurrence(np.arange(1.0, 9.0)[:, None], 4)
    assert len(one) == 4 and all(r.occurrence.as_lists() == [[0]] for r in one)
    with pytest.raises(ValueError):
        block_maxima_with_occurrence(Y, 6)


def test_cluster_components_cases():
    sites = SiteSet([[0, 0], [0.1, 0], [0, 0.1], [5, 5], [5.1, 5], [5, 5.1]])
    p = cluster_components(sites, 5)
    assert sorted(p.as_lists()) == [[0, 1, 2], [3, 4, 5]]
    assert cluster_components(sites, 6).as_lists() == [[0, 1, 2, 3, 4, 5]]
    assert all(len(b) == 1 for b in cluster_components(sites, 1).blocks)
    S = np.eye(6)
    S[:3, :3] = S[3:, 3:] = 0.8
    np.fill_diagonal(S, 1.0)
    assert sorted(cluster_components(S, 4).as_lists()) == [[0, 1, 2], [3, 4, 5]]
    with pytest.raises(ValueError):
        cluster_components(SiteSet([[0, 0]] * 4), 2)


def test_cluster_cap_always_holds(rng):
    sites = SiteSet.uniform_square(23, seed=4)
    for cap in (2, 3, 5):
        p = cluster_components(sites, cap)
        assert max(len(b) for b in p.blocks) <= cap


def test_kendall_tau_matrix(rng):
    Y = 1.0 / rng.uniform(size=(3000, 3))
    tau = kendall_tau_matrix(Y, 1.0)
    assert np.allclose(np.diag(tau), 1.0) and np.allclose(tau, tau.T)
    col = 1.0 / rng.uniform(size=(50, 1))
    assert np.allclose(kendall_tau_matrix(np.hstack([col, col]), 0.0), 1.0)
    with pytest.raises(ValueError, match="only"):
        kendall_tau_matrix(Y, 1e9)


def test_kendall_reveals_planted_clusters():
    model = ClusteredArchimedean([
        ArchimedeanClusterSpec((0, 1, 2), "gumbel", 1.7, "lognormal", 0.9),
        ArchimedeanClusterSpec((3, 4, 5), "clayton", 0.4, "weibull", 1.5)])
    Y = sample_mda(SimConfig(model, 2500, seed=8, noise_mean=10.0))
    tau = kendall_tau_matrix(Y, 20.0)
    within = np.mean([tau[i, j] for g in ((0, 1, 2), (3, 4, 5)) for i in g for j in g if i < j])
    across = np.mean(tau[:3, 3:])
    assert within > across
    assert sorted(cluster_components(tau, 3).as_lists()) == [[0, 1, 2], [3, 4, 5]]


def test_matrix_io_roundtrip(tmp_path, rng):
    Y = rng.normal(size=(4, 3))
    write_matrix(tmp_path / "y.csv", Y, ["a", "b", "c"])
    assert np.array_equal(read_matrix(tmp_path / "y.csv"), Y)
    (tmp_path / "bad.csv").write_text("1,2\n3\n")
    with pytest.raises(ValueError):
        read_matrix(tmp_path / "bad.csv")
