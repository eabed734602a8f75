"""Log-likelihoods built on log-mu tables, and their scores.

Five objectives are supported:

``full``        log density of a max-stable observation (sum over all set partitions)
``partition``   block-size weighted full likelihoods over a fixed clustering
``pairwise``    sum of bivariate full likelihoods
``censored``    threshold exceedances floored at one
``occurrence``  block maxima together with their occurrence partition

Scores combine finite-difference gradients of ``log mu`` (taken with common
random numbers) through the exact chain-rule assemblies, e.g. for ``full``

    grad l = -sum_l z_l grad mu({l}) + sum_pi w_pi sum_{B in pi} grad log mu(B),
    w_pi = prod_B mu(B) / sum_pi' prod_B' mu(B').
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.special import logsumexp

from .combinatorics import (ComponentSet, CombinatorialExplosion, Partition, bell_number,
                            enumerate_partition_masks)
from .mu import MuStrategy, default_strategy, fd_steps, log_mu_batch
from .spectral import SpectralModel

FULL_CAP = 10
FULL_WARN = 8
KINDS = ("full", "partition", "pairwise", "censored", "occurrence")


class LikelihoodCapWarning(UserWarning):
    """Full likelihood requested at a dimension where the partition sum is large."""


# ------------------------------------------------------------------ records

@dataclass(frozen=True)
class ExceedanceRecord:
    """Censored observation: ``x_j > 1`` on the exceedance set, ``x_j = 1`` elsewhere."""

    x: np.ndarray
    exceed_set: ComponentSet

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        object.__setattr__(self, "x", x)
        B = set(self.exceed_set.members)
        if not B:
            raise ValueError("exceedance set must be nonempty")
        if self.exceed_set.m != x.size:
            raise ValueError("exceedance set dimension does not match x")
        for j, v in enumerate(x):
            if j in B and not v > 1:
                raise ValueError(f"component {j} is in the exceedance set but x_j = {v} <= 1")
            if j not in B and v != 1:
                raise ValueError(f"component {j} is censored but x_j = {v} != 1")

    @classmethod
    def from_vector(cls, x) -> "ExceedanceRecord":
        x = np.maximum(np.asarray(x, dtype=float), 1.0)
        return cls(x, ComponentSet(tuple(int(j) for j in np.flatnonzero(x > 1)), x.size))


@dataclass(frozen=True)
class BlockMaximaRecord:
    """Rescaled block maxima with the partition of components by occurrence time."""

    z: np.ndarray
    occurrence: Partition

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        object.__setattr__(self, "z", z)
        if self.occurrence.m != z.size:
            raise ValueError("occurrence partition dimension does not match z")
        if not np.all(z > 0):
            raise ValueError("block maxima must be positive")


@dataclass(frozen=True)
class LikelihoodKind:
    name: str
    clustering: Partition | None = None
    weights: bool = True

    def __post_init__(self):
        if self.name not in KINDS:
            raise ValueError(f"unknown likelihood kind {self.name!r}; choose from {KINDS}")
        if self.name == "partition":
            if self.clustering is None:
                raise ValueError("the partition likelihood needs a clustering")
            if max(len(b) for b in self.clustering.blocks) > FULL_CAP:
                raise CombinatorialExplosion(f"clustering blocks must have at most {FULL_CAP} components")


@dataclass
class LikelihoodValue:
    loglik: float
    per_observation: np.ndarray
    n_mu_evals: int = 0
    scores: np.ndarray | None = None


# ------------------------------------------------------------------ tables

class _Tables:
    """log mu values (and FD gradients) for batches of points, keyed by subset bitmask."""

    def __init__(self, model, strategy, grad, free, threads):
        self.model = model
        self.strategy = strategy or default_strategy(model)
        self.grad = grad
        self.steps = fd_steps(model, free) if grad else []
        self.perturbed = [(model.with_theta(p), model.with_theta(mn), d) for _, p, mn, d in self.steps]
        self.threads = max(1, int(threads))
        self.n_evals = 0

    def compute(self, requests: dict[int, np.ndarray]) -> dict[int, tuple[np.ndarray, np.ndarray | None]]:
        """``requests[mask] = Z_rows`` -> ``{mask: (log mu, grad log mu)}``."""
        def one(item):
            mask, Z = item
            val, panels = log_mu_batch(self.model, mask, Z, self.strategy, return_panels=True)
            g = None
            if self.grad:
                g = np.empty((Z.shape[0], len(self.steps)))
                for col, (mp, mm, denom) in enumerate(self.perturbed):
                    lp = log_mu_batch(mp, mask, Z, self.strategy, panels=panels)
                    lm = log_mu_batch(mm, mask, Z, self.strategy, panels=panels)
                    with np.errstate(invalid="ignore"):
                        g[:, col] = np.where(np.isfinite(lp) & np.isfinite(lm), (lp - lm) / denom, 0.0)
            return mask, (val, g)

        items = sorted(requests.items())
        self.n_evals += sum(Z.shape[0] for _, Z in items) * (1 + 2 * len(self.steps))
        if self.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                results = list(pool.map(one, items))
        else:
            results = [one(it) for it in items]
        return dict(results)


@lru_cache(maxsize=16)
def _partition_groups(m: int):
    """Partitions of ``{0..m-1}`` grouped by block count: ``[(k, idx (P_k, k))]``.

    Indices point into the table column ``mask - 1``.
    """
    by_k: dict[int, list] = {}
    for masks in enumerate_partition_masks(m, FULL_CAP):
        by_k.setdefault(len(masks), []).append([b - 1 for b in masks])
    out = []
    for k in sorted(by_k):
        arr = np.array(by_k[k], dtype=np.intp)
        arr.setflags(write=False)
        out.append((k, arr))
    return tuple(out)


@lru_cache(maxsize=64)
def _incidence(m: int, k: int):
    """Sparse (P_k, 2^m - 1) matrix marking the blocks of each k-block partition."""
    idx = dict(_partition_groups(m))[k]
    rows = np.repeat(np.arange(idx.shape[0]), k)
    return csr_matrix((np.ones(idx.size), (rows, idx.ravel())), shape=(idx.shape[0], (1 << m) - 1))


def _check_full_dim(m: int):
    if m > FULL_CAP:
        raise CombinatorialExplosion(
            f"full likelihood needs Bell({m}) = {bell_number(m)} terms; m > {FULL_CAP} is refused, "
            "use the partition or pairwise likelihood instead")
    if m >= FULL_WARN:
        warnings.warn(f"full likelihood at m={m} sums {bell_number(m)} partition terms",
                      LikelihoodCapWarning, stacklevel=3)


def _full_from_tables(Z, L, G=None):
    """Full log-likelihood per row from the complete table ``L`` (n, 2^m - 1).

    ``G`` holds gradients of ``log mu`` with shape (n, 2^m - 1, p).
    """
    n, m = Z.shape
    singles = np.stack([L[:, (1 << l) - 1] for l in range(m)], axis=1)
    with np.errstate(over="ignore"):
        vstar_terms = Z * np.exp(singles)
    groups = _partition_groups(m)
    total_blocks = sum(idx.size for _, idx in groups)
    step = max(1, 4_000_000 // max(total_blocks, 1))
    out = np.empty(n)
    score = None if G is None else np.empty((n, G.shape[2]))
    for s in range(0, n, step):
        Ls = L[s:s + step]
        logchi = [Ls[:, idx].sum(axis=2) for _, idx in groups]
        with np.errstate(invalid="ignore"):
            logdelta = logsumexp(np.concatenate(logchi, axis=1), axis=1)
        out[s:s + step] = -vstar_terms[s:s + step].sum(axis=1) + logdelta
        if G is None:
            continue
        W = np.zeros(Ls.shape)
        ok = np.isfinite(logdelta)
        for (k, idx), lc in zip(groups, logchi):
            with np.errstate(invalid="ignore", under="ignore"):
                w = np.where(ok[:, None], np.exp(lc - logdelta[:, None]), 0.0)
            W += np.asarray(w @ _incidence(m, k))
        Gs = G[s:s + step]
        single_g = np.stack([Gs[:, (1 << l) - 1] for l in range(m)], axis=1)
        score[s:s + step] = (-(vstar_terms[s:s + step, :, None] * single_g).sum(axis=1)
                             + np.einsum("nb,nbp->np", W, Gs))
    return out, score


def _full_rows(model, Z, tables: _Tables):
    n, m = Z.shape
    _check_full_dim(m)
    res = tables.compute({mask: Z for mask in range(1, 1 << m)})
    L = np.stack([res[mask][0] for mask in range(1, 1 << m)], axis=1)
    G = None
    if tables.grad:
        G = np.stack([res[mask][1] for mask in range(1, 1 << m)], axis=1)
    return _full_from_tables(Z, L, G)


# ------------------------------------------------------------- evaluation

def _as_matrix(data, m):
    Z = np.atleast_2d(np.asarray(data, dtype=float))
    if Z.shape[1] != m:
        raise ValueError(f"observations have {Z.shape[1]} components, model has {m}")
    if Z.shape[0] == 0:
        raise ValueError("empty dataset")
    if not np.all(Z > 0):
        raise ValueError("observations must be strictly positive")
    return Z


def _blocks_for(kind: LikelihoodKind, m: int):
    if kind.name == "partition":
        if kind.clustering.m != m:
            raise ValueError("clustering dimension does not match the model")
        return [(list(b.members), len(b) if kind.weights else 1) for b in kind.clustering.blocks]
    if m < 2:
        raise ValueError("pairwise likelihood needs m >= 2")
    return [([i, j], 1) for i, j in combinations(range(m), 2)]


def _composite(model, kind, Z, strategy, grad, free, threads):
    n, m = Z.shape
    out = np.zeros(n)
    score = None
    evals = 0
    for idx, weight in _blocks_for(kind, m):
        sub = model.restrict(idx)
        t = _Tables(sub, strategy, grad, free, threads)
        val, sc = _full_rows(sub, Z[:, idx], t)
        evals += t.n_evals
        out += weight * val
        if grad:
            score = weight * sc if score is None else score + weight * sc
    return out, score, evals


def _censored_arrays(records):
    records = list(records)
    if not records:
        raise ValueError("empty dataset")
    X = np.stack([r.x for r in records])
    masks = np.array([r.exceed_set.mask for r in records])
    return X, masks


def _censored(model, X, masks, tables: _Tables):
    n, m = X.shape
    requests = {int(b): X[masks == b] for b in np.unique(masks)}
    e = np.ones((1, m))
    # singleton masks at e are requested separately to avoid key clashes
    res = tables.compute(requests)
    norm = tables.compute({1 << l: e for l in range(m)})
    log_single = np.array([norm[1 << l][0][0] for l in range(m)])
    log_vstar = logsumexp(log_single)
    out = np.empty(n)
    score = np.empty((n, len(tables.steps))) if tables.grad else None
    for b, (val, g) in res.items():
        rows = masks == b
        out[rows] = val - log_vstar
        if tables.grad:
            score[rows] = g
    if tables.grad:
        wts = np.exp(log_single - log_vstar)
        gnorm = sum(wts[l] * norm[1 << l][1][0] for l in range(m))
        score -= gnorm[None, :]
    return out, score


def _occurrence_arrays(records):
    records = list(records)
    if not records:
        raise ValueError("empty dataset")
    Z = np.stack([r.z for r in records])
    parts = [r.occurrence.masks for r in records]
    return Z, parts


def _occurrence(model, Z, parts, tables: _Tables):
    n, m = Z.shape
    need: dict[int, list[int]] = {1 << l: list(range(n)) for l in range(m)}
    for i, masks in enumerate(parts):
        for b in masks:
            rows = need.setdefault(b, [])
            if not rows or rows[-1] != i:
                rows.append(i)
    row_idx = {b: np.array(r, dtype=np.intp) for b, r in need.items()}
    res = tables.compute({b: Z[r] for b, r in row_idx.items()})
    p = len(tables.steps)
    out = np.zeros(n)
    score = np.zeros((n, p)) if tables.grad else None
    for l in range(m):
        val, g = res[1 << l]
        term = Z[:, l] * np.exp(val)
        out -= term
        if tables.grad:
            score -= term[:, None] * g
    pos = {b: {int(r): k for k, r in enumerate(rows)} for b, rows in row_idx.items()}
    for i, masks in enumerate(parts):
        for b in masks:
            k = pos[b][i]
            out[i] += res[b][0][k]
            if tables.grad:
                score[i] += res[b][1][k]
    return out, score


def evaluate(model: SpectralModel, kind: LikelihoodKind | str, data, strategy: MuStrategy | None = None,
             grad: bool = False, free: Sequence[int] | None = None, threads: int = 1) -> LikelihoodValue:
    """Per-observation log-likelihood (and optionally scores) over a dataset.

    ``data`` is an ``(n, m)`` array for ``full``/``partition``/``pairwise``,
    a sequence of :class:`ExceedanceRecord` for ``censored`` and of
    :class:`BlockMaximaRecord` for ``occurrence``.  Observations are summed
    in input order.
    """
    if isinstance(kind, str):
        kind = LikelihoodKind(kind)
    m = model.dim
    if kind.name in ("full", "partition", "pairwise"):
        Z = _as_matrix(data, m)
        if kind.name == "full":
            t = _Tables(model, strategy, grad, free, threads)
            per, sc = _full_rows(model, Z, t)
            evals = t.n_evals
        else:
            per, sc, evals = _composite(model, kind, Z, strategy, grad, free, threads)
    elif kind.name == "censored":
        X, masks = _censored_arrays(data)
        if X.shape[1] != m:
            raise ValueError("record dimension does not match the model")
        t = _Tables(model, strategy, grad, free, threads)
        per, sc = _censored(model, X, masks, t)
        evals = t.n_evals
    else:
        Z, parts = _occurrence_arrays(data)
        if Z.shape[1] != m:
            raise ValueError("record dimension does not match the model")
        t = _Tables(model, strategy, grad, free, threads)
        per, sc = _occurrence(model, Z, parts, t)
        evals = t.n_evals
    return LikelihoodValue(float(np.sum(per)), per, evals, sc)


# ---------------------------------------------------------- single records

def loglik_full(model, z, strategy=None) -> float:
    return evaluate(model, "full", np.asarray(z, dtype=float)[None, :], strategy).loglik


def loglik_partition(model, z, clustering: Partition, weights: bool = True, strategy=None) -> float:
    kind = LikelihoodKind("partition", clustering, weights)
    return evaluate(model, kind, np.asarray(z, dtype=float)[None, :], strategy).loglik


def loglik_pairwise(model, z, strategy=None) -> float:
    return evaluate(model, "pairwise", np.asarray(z, dtype=float)[None, :], strategy).loglik


def loglik_censored(model, rec: ExceedanceRecord, strategy=None) -> float:
    return evaluate(model, "censored", [rec], strategy).loglik


def loglik_maxima_occurrence(model, rec: BlockMaximaRecord, strategy=None) -> float:
    return evaluate(model, "occurrence", [rec], strategy).loglik


def score(model: SpectralModel, kind: LikelihoodKind | str, observation, strategy=None,
          free=None) -> np.ndarray:
    """Score vector of one observation (array, ExceedanceRecord or BlockMaximaRecord)."""
    if isinstance(observation, (ExceedanceRecord, BlockMaximaRecord)):
        data = [observation]
    else:
        data = np.asarray(observation, dtype=float)[None, :]
    return evaluate(model, kind, data, strategy, grad=True, free=free).scores[0]
