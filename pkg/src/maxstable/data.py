"""Marginal standardization, censoring, block maxima and component clustering."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import kendalltau, rankdata

from .combinatorics import ComponentSet, Partition
from .likelihoods import BlockMaximaRecord, ExceedanceRecord
from .spatial import SiteSet


def _matrix(data) -> np.ndarray:
    Y = np.asarray(data, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.ndim != 2 or Y.shape[0] < 1 or Y.shape[1] < 1:
        raise ValueError("data must be an n x m matrix with n, m >= 1")
    if not np.all(np.isfinite(Y)):
        raise ValueError("data must be finite (missing values are not supported)")
    return Y


def read_matrix(path) -> np.ndarray:
    """Read a comma-separated matrix; a non-numeric first row is taken as a header."""
    rows = []
    with open(Path(path), newline="") as fh:
        for row in csv.reader(fh):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                if rows:
                    raise ValueError(f"non-numeric entry in data row {len(rows) + 1}") from None
    if not rows:
        raise ValueError(f"{path} contains no data rows")
    if len({len(r) for r in rows}) != 1:
        raise ValueError("rows have different lengths")
    return _matrix(rows)


def write_matrix(path, Y, header: list[str] | None = None) -> None:
    Y = np.atleast_2d(Y)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        if header is not None:
            w.writerow(header)
        for row in Y:
            w.writerow([repr(float(v)) for v in row])


# ----------------------------------------------------------------- margins

def rank_pareto_transform(data) -> np.ndarray:
    """Map each column to ``(n + 1) / (n + 1 - rank)``; ties ranked by first occurrence."""
    Y = _matrix(data)
    n = Y.shape[0]
    if np.any(np.ptp(Y, axis=0) == 0) and n > 1:
        raise ValueError("constant column: ranks carry no information")
    ranks = rankdata(Y, method="ordinal", axis=0)
    return (n + 1.0) / (n + 1.0 - ranks)


@dataclass(frozen=True)
class HillFit:
    alpha_hat: np.ndarray
    u_hat: np.ndarray
    k: int

    def to_dict(self) -> dict:
        return {"alpha_hat": self.alpha_hat.tolist(), "u_hat": self.u_hat.tolist(), "k": self.k}


def hill_estimate(data, k: int) -> HillFit:
    """Hill estimator over the top ``k`` order statistics of each column."""
    Y = _matrix(data)
    n = Y.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    if np.any(Y <= 0):
        raise ValueError("Hill estimation needs positive data")
    top = -np.sort(-Y, axis=0)[: k + 1]
    u = top[k]
    inv_alpha = np.mean(np.log(top[:k] / u), axis=0)
    if np.any(inv_alpha <= 0):
        raise ValueError("degenerate upper tail: top order statistics are tied")
    return HillFit(1.0 / inv_alpha, u, int(k))


def hill_transform(data, k: int) -> tuple[np.ndarray, HillFit]:
    """``(Y_j / u_j)^alpha_j`` floored at one, with the Hill fit used."""
    Y = _matrix(data)
    fit = hill_estimate(Y, k)
    return np.maximum((Y / fit.u_hat) ** fit.alpha_hat, 1.0), fit


# ----------------------------------------------------------- data shapes

def censor_sample(pareto_data, k: int) -> list[ExceedanceRecord]:
    """Scale by ``k / n``, floor at one, keep rows with at least one exceedance."""
    Y = _matrix(pareto_data)
    n, m = Y.shape
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    X = np.maximum(Y * (k / n), 1.0)
    out = []
    for row in X:
        exc = np.flatnonzero(row > 1.0)
        if exc.size:
            out.append(ExceedanceRecord(row, ComponentSet(tuple(int(j) for j in exc), m)))
    return out


def block_maxima_with_occurrence(pareto_data, k: int) -> list[BlockMaximaRecord]:
    """Componentwise maxima over ``k`` consecutive blocks, rescaled by ``k / n``.

    Components whose maxima fall on the same row form one block of the
    occurrence partition; rows beyond ``k * (n // k)`` are dropped.
    """
    Y = _matrix(pareto_data)
    n, m = Y.shape
    if k < 1:
        raise ValueError("k must be at least 1")
    size = n // k
    if size < 2:
        raise ValueError(f"block size n // k = {size} must be at least 2")
    out = []
    for b in range(k):
        block = Y[b * size:(b + 1) * size]
        where = np.argmax(block, axis=0)
        groups: dict[int, list[int]] = {}
        for j, r in enumerate(where):
            groups.setdefault(int(r), []).append(j)
        out.append(BlockMaximaRecord(block.max(axis=0) * (k / n), Partition.of(list(groups.values()), m)))
    return out


# ---------------------------------------------------------------- clusters

def _labels_to_partition(labels, m) -> Partition:
    groups: dict[int, list[int]] = {}
    for j, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(j)
    return Partition.of(list(groups.values()), m)


def pam(dissimilarity, n_clusters: int, max_iter: int = 100) -> np.ndarray:
    """Partitioning Around Medoids (BUILD then SWAP); returns labels."""
    D = np.asarray(dissimilarity, dtype=float)
    m = D.shape[0]
    if n_clusters >= m:
        return np.arange(m)
    medoids = [int(np.argmin(D.sum(axis=1)))]
    while len(medoids) < n_clusters:
        near = D[:, medoids].min(axis=1)
        gain = np.array([np.sum(np.maximum(near - D[:, c], 0.0)) if c not in medoids else -1.0
                         for c in range(m)])
        medoids.append(int(np.argmax(gain)))
    cost = D[:, medoids].min(axis=1).sum()
    for _ in range(max_iter):
        best = (cost, None, None)
        for i in range(len(medoids)):
            for c in range(m):
                if c in medoids:
                    continue
                trial = medoids.copy()
                trial[i] = c
                tc = D[:, trial].min(axis=1).sum()
                if tc < best[0] - 1e-12:
                    best = (tc, i, c)
        if best[1] is None:
            break
        cost = best[0]
        medoids[best[1]] = best[2]
    return np.argmin(D[:, medoids], axis=1)


def cluster_components(features, max_block: int, seed: int = 0) -> Partition:
    """Group components into blocks of at most ``max_block``.

    A :class:`SiteSet` is clustered by K-means on the coordinates; a square
    similarity matrix (e.g. Kendall's tau) by PAM on ``1 - similarity``.  The
    number of clusters grows from ``ceil(m / max_block)`` until the cap holds.
    """
    if max_block < 1:
        raise ValueError("max_block must be at least 1")
    if isinstance(features, SiteSet):
        coords = features.coordinates
        m = coords.shape[0]
        def labels_for(K):
            from sklearn.cluster import KMeans
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                return KMeans(n_clusters=K, n_init=10, random_state=seed).fit(coords).labels_
        n_distinct = len(np.unique(coords, axis=0))
    else:
        S = np.asarray(features, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValueError("similarity must be a square matrix")
        m = S.shape[0]
        D = 1.0 - 0.5 * (S + S.T)
        np.fill_diagonal(D, 0.0)
        def labels_for(K):
            return pam(D, K)
        n_distinct = m
    if m <= max_block:
        return Partition.of([list(range(m))], m)
    K = -(-m // max_block)
    while K <= m:
        labels = labels_for(min(K, n_distinct))
        if np.max(np.bincount(labels)) <= max_block:
            return _labels_to_partition(labels, m)
        if K >= n_distinct:
            break
        K += 1
    raise ValueError(f"cannot split the components into blocks of at most {max_block}: "
                     "too many coincident points")


def kendall_tau_matrix(data, norm_threshold: float) -> np.ndarray:
    """Kendall's tau between components of ``Y / ||Y||`` over rows with ``||Y|| > threshold``.

    ``||Y||`` is the component mean of the row.
    """
    Y = _matrix(data)
    norms = Y.mean(axis=1)
    keep = norms > norm_threshold
    count = int(keep.sum())
    if count < 10:
        raise ValueError(f"only {count} rows exceed the norm threshold {norm_threshold}; need at least 10")
    W = Y[keep] / norms[keep, None]
    m = Y.shape[1]
    tau = np.eye(m)
    for i in range(m):
        for j in range(i + 1, m):
            if np.array_equal(W[:, i], W[:, j]):
                t = 1.0  # identical columns normalize to a constant: treat as concordant
            else:
                t = kendalltau(W[:, i], W[:, j]).statistic
            tau[i, j] = tau[j, i] = 0.0 if np.isnan(t) else t
    return tau
