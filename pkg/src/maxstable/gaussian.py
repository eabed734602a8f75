"""Multivariate normal rectangle probabilities and orthant moments.

Probabilities are computed with Genz's separation-of-variables transform
and randomized quasi-Monte Carlo: a Richtmyer lattice with baker's
(tent) periodization and ``n_shifts`` independent uniform shifts.  The
reported error is three standard errors of the shift means.

The ``*_batch`` functions are the workhorses used by the mu engine: they
evaluate many upper limits against one covariance matrix with a fixed
point set, so results are smooth functions of the inputs (common random
numbers across calls with the same settings).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaincinv, gammaln, log_ndtr, ndtr, ndtri
from scipy.stats import t as student_t

MAX_DIM = 25
WARN_DIM = 20
JITTER_LADDER = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8)
MAX_CONDITION = 1e12
_CHUNK = 2_000_000  # records * points processed per SOV pass


class CovarianceError(ValueError):
    """Covariance not factorizable even after the jitter ladder."""


@dataclass(frozen=True)
class QmcSettings:
    n_points: int = 1024
    n_shifts: int = 12
    seed: int = 0


DEFAULT_QMC = QmcSettings()


@dataclass(frozen=True)
class ProbEstimate:
    value: float
    abs_error: float
    n_points: int


class GaussianSpec:
    """Mean and covariance of a multivariate normal law."""

    def __init__(self, covariance, mean=None):
        cov = np.atleast_2d(np.asarray(covariance, dtype=float))
        if cov.shape[0] != cov.shape[1]:
            raise ValueError("covariance must be square")
        if not np.allclose(cov, cov.T, atol=1e-12, rtol=0):
            raise ValueError("covariance must be symmetric")
        self.covariance = 0.5 * (cov + cov.T)
        self.mean = np.zeros(cov.shape[0]) if mean is None else np.asarray(mean, dtype=float)
        if self.mean.shape != (cov.shape[0],):
            raise ValueError("mean has the wrong shape")

    @property
    def dim(self) -> int:
        return self.covariance.shape[0]


# ---------------------------------------------------------------- utilities

def robust_cholesky(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, adding diagonal jitter if needed."""
    cov = np.asarray(cov, dtype=float)
    if cov.size == 0:
        return cov.copy()
    scale = float(np.mean(np.diag(cov)))
    if not scale > 0:
        raise CovarianceError("covariance has a nonpositive diagonal")
    for jitter in JITTER_LADDER:
        a = cov + jitter * scale * np.eye(cov.shape[0]) if jitter else cov
        try:
            chol = np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            continue
        d = np.diag(chol)
        if (d.max() / d.min()) ** 2 > MAX_CONDITION:
            continue
        return chol
    ev = np.linalg.eigvalsh(cov)
    raise CovarianceError(
        f"covariance not factorizable after jitter {JITTER_LADDER[-1]:g}; "
        f"eigenvalue range [{ev[0]:.3e}, {ev[-1]:.3e}]"
    )


def jittered(cov: np.ndarray) -> np.ndarray:
    """The first matrix on the jitter ladder that factorizes."""
    chol = robust_cholesky(cov)
    return chol @ chol.T


def _first_primes(n: int) -> np.ndarray:
    out = []
    k = 2
    while len(out) < n:
        if all(k % p for p in out if p * p <= k):
            out.append(k)
        k += 1
    return np.array(out, dtype=float)


@lru_cache(maxsize=64)
def _lattice(n: int, dim: int) -> np.ndarray:
    gen = np.sqrt(_first_primes(dim))
    i = np.arange(1, n + 1, dtype=float)[:, None]
    pts = np.mod(i * gen[None, :], 1.0)
    pts.setflags(write=False)
    return pts


@lru_cache(maxsize=64)
def rqmc_points(n: int, dim: int, n_shifts: int, seed: int) -> np.ndarray:
    """Randomly shifted, tent-transformed lattice points, shape ``(n_shifts, n, dim)``."""
    if dim == 0:
        out = np.zeros((n_shifts, n, 0))
    else:
        shifts = np.random.default_rng(seed).random((n_shifts, 1, dim))
        x = np.mod(_lattice(n, dim)[None, :, :] + shifts, 1.0)
        out = 1.0 - np.abs(2.0 * x - 1.0)
        np.clip(out, 1e-15, 1.0 - 1e-15, out=out)
    out.setflags(write=False)
    return out


def _trunc_mean(a):
    """E[Z | Z <= a] for standard normal Z, stable in the lower tail."""
    return -np.exp(-0.5 * a * a - 0.5 * np.log(2 * np.pi) - log_ndtr(a))


def genz_order(cov: np.ndarray, upper: np.ndarray):
    """Greedy Genz-Bretz variable ordering for many upper limits at once.

    ``cov`` is ``(d, d)`` (shared) and ``upper`` is ``(K, d)``.  At each step
    the remaining variable with the smallest conditional probability is
    integrated next, conditioning on the truncated means of the variables
    already placed.  Returns ``(perm, chol, upper_perm)`` with ``perm`` of
    shape ``(K, d)``, per-record Cholesky factors ``(K, d, d)`` of the permuted
    covariance and the permuted limits.
    """
    upper = np.atleast_2d(np.asarray(upper, dtype=float))
    K, d = upper.shape
    S = np.broadcast_to(cov, (K, d, d)).copy()
    b = upper.copy()
    perm = np.tile(np.arange(d), (K, 1))
    L = np.zeros((K, d, d))
    y = np.zeros((K, d))
    r = np.arange(K)
    tiny = 1e-300
    for i in range(d):
        Li = L[:, i:, :i]
        var = np.einsum("kjj->kj", S)[:, i:] - np.sum(Li * Li, axis=2)
        var = np.maximum(var, tiny)
        mean = np.einsum("kjl,kl->kj", Li, y[:, :i])
        with np.errstate(invalid="ignore"):
            score = log_ndtr((b[:, i:] - mean) / np.sqrt(var))
        score = np.where(np.isnan(score), np.inf, score)
        j = i + np.argmin(score, axis=1)
        swap = j != i
        if np.any(swap):
            rs, js = r[swap], j[swap]
            for arr in (b, perm):
                tmp = arr[rs, i].copy()
                arr[rs, i] = arr[rs, js]
                arr[rs, js] = tmp
            tmp = S[rs, i, :].copy()
            S[rs, i, :] = S[rs, js, :]
            S[rs, js, :] = tmp
            tmp = S[rs, :, i].copy()
            S[rs, :, i] = S[rs, :, js]
            S[rs, :, js] = tmp
            tmp = L[rs, i, :].copy()
            L[rs, i, :] = L[rs, js, :]
            L[rs, js, :] = tmp
        lii = np.sqrt(np.maximum(S[:, i, i] - np.sum(L[:, i, :i] ** 2, axis=1), tiny))
        L[:, i, i] = lii
        if i + 1 < d:
            L[:, i + 1:, i] = (
                S[:, i + 1:, i] - np.einsum("kjl,kl->kj", L[:, i + 1:, :i], L[:, i, :i])
            ) / lii[:, None]
        a = (b[:, i] - np.einsum("kl,kl->k", L[:, i, :i], y[:, :i])) / lii
        y[:, i] = _trunc_mean(a)
    return perm, L, b


def _sov(L: np.ndarray, upper: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Separation-of-variables integrand.

    ``L``: ``(K, d, d)``; ``upper``: ``(K, P, d)`` (or broadcastable);
    ``w``: ``(P, d - 1)`` uniforms.  Returns ``(K, P)``.
    """
    K, d = L.shape[0], L.shape[-1]
    P = w.shape[0]
    upper = np.broadcast_to(upper, (K, P, d))
    y = np.empty((K, P, max(d - 1, 0)))
    prod = np.ones((K, P))
    for i in range(d):
        if i:
            s = np.einsum("kpj,kj->kp", y[:, :, :i], L[:, i, :i])
        else:
            s = 0.0
        e = ndtr((upper[:, :, i] - s) / L[:, i, i][:, None])
        prod *= e
        if i < d - 1:
            u = np.clip(w[None, :, i] * e, 1e-300, 1.0 - 1e-16)
            y[:, :, i] = ndtri(u)
    return prod


def _check_dim(d: int) -> None:
    if d > MAX_DIM:
        raise ValueError(f"dimension {d} exceeds the cap {MAX_DIM}")
    if d > WARN_DIM:
        warnings.warn(f"QMC accuracy degrades above dimension {WARN_DIM} (d={d})", stacklevel=3)


def _shift_means(vals: np.ndarray, n_shifts: int) -> np.ndarray:
    K = vals.shape[0]
    return vals.reshape(K, n_shifts, -1).mean(axis=2)


def mvn_cdf_batch(cov: np.ndarray, upper: np.ndarray, qmc: QmcSettings = DEFAULT_QMC,
                  reorder: bool = True, return_error: bool = False):
    """``Pr(X <= upper[k])`` for ``X ~ N(0, cov)``, for every row of ``upper``."""
    upper = np.atleast_2d(np.asarray(upper, dtype=float))
    K, d = upper.shape
    if d == 0:
        out = np.ones(K)
        return (out, np.zeros(K)) if return_error else out
    _check_dim(d)
    cov = jittered(np.asarray(cov, dtype=float))
    if d == 1:
        out = ndtr(upper[:, 0] / np.sqrt(cov[0, 0]))
        return (out, np.zeros(K)) if return_error else out
    if reorder:
        _, L, b = genz_order(cov, upper)
    else:
        L = np.broadcast_to(np.linalg.cholesky(cov), (K, d, d))
        b = upper
    w = rqmc_points(qmc.n_points, d - 1, qmc.n_shifts, qmc.seed).reshape(-1, d - 1)
    means = np.empty((K, qmc.n_shifts))
    step = max(1, _CHUNK // w.shape[0])
    for s in range(0, K, step):
        vals = _sov(L[s:s + step], b[s:s + step, None, :], w)
        means[s:s + step] = _shift_means(vals, qmc.n_shifts)
    est = means.mean(axis=1)
    if return_error:
        err = 3.0 * means.std(axis=1, ddof=1) / np.sqrt(qmc.n_shifts)
        return est, err
    return est


def chi_moment_constant(power: int) -> float:
    """``E[|Z|^p 1{Z <= 0}]`` for standard normal Z."""
    p = float(power)
    return float(np.exp(0.5 * p * np.log(2.0) + gammaln(0.5 * (p + 1)) - np.log(2.0 * np.sqrt(np.pi))))


def chi_orthant_batch(cov: np.ndarray, coef: np.ndarray, power: int,
                      qmc: QmcSettings = DEFAULT_QMC, reorder: bool = True,
                      return_error: bool = False):
    """``E[Phi_cov(coef[k] * R)]`` with ``R ~ chi(power + 1)``, for every row ``k``.

    This is the conditional form of an orthant moment: if ``Lambda ~ N(0,1)``
    and ``Y = V + c Lambda`` with ``V ~ N(0, cov)`` independent, then
    ``E[|Lambda|^p 1{Lambda <= 0, Y <= 0}] = chi_moment_constant(p) * E[Phi_cov(-c * (-R))]``.
    """
    coef = np.atleast_2d(np.asarray(coef, dtype=float))
    K, d = coef.shape
    if d == 0:
        out = np.ones(K)
        return (out, np.zeros(K)) if return_error else out
    _check_dim(d + 1)
    if d == 1:
        # N / (R / sqrt(p + 1)) is Student t with p + 1 degrees of freedom
        sd = math.sqrt(float(np.asarray(cov).ravel()[0]))
        out = student_t.cdf(coef[:, 0] * math.sqrt(power + 1) / sd, power + 1)
        return (out, np.zeros(K)) if return_error else out
    cov = jittered(np.asarray(cov, dtype=float))
    pts = rqmc_points(qmc.n_points, d, qmc.n_shifts, qmc.seed).reshape(-1, d)
    radius = np.sqrt(2.0 * gammaincinv(0.5 * (power + 1), pts[:, 0]))
    w = pts[:, 1:]
    if reorder and d > 1:
        mean_r = np.sqrt(2.0) * np.exp(gammaln(0.5 * (power + 2)) - gammaln(0.5 * (power + 1)))
        perm, L, _ = genz_order(cov, coef * mean_r)
        c = np.take_along_axis(coef, perm, axis=1)
    else:
        L = np.broadcast_to(np.linalg.cholesky(cov), (K, d, d))
        c = coef
    means = np.empty((K, qmc.n_shifts))
    step = max(1, _CHUNK // pts.shape[0])
    for s in range(0, K, step):
        upper = c[s:s + step, None, :] * radius[None, :, None]
        vals = _sov(L[s:s + step], upper, w)
        means[s:s + step] = _shift_means(vals, qmc.n_shifts)
    est = means.mean(axis=1)
    if return_error:
        return est, 3.0 * means.std(axis=1, ddof=1) / np.sqrt(qmc.n_shifts)
    return est


# ------------------------------------------------------------- public API

def _adaptive(fn, target_err: float, seed: int, clip: bool = True, n_start: int = 256,
              n_max: int = 1 << 16):
    if not target_err > 0:
        raise ValueError("target_err must be positive")
    n = n_start
    while True:
        qmc = QmcSettings(n_points=n, n_shifts=12, seed=seed)
        value, err = fn(qmc)
        if err <= target_err or n >= n_max:
            value = float(np.clip(value, 0.0, 1.0)) if clip else max(float(value), 0.0)
            return ProbEstimate(value, float(err), n * qmc.n_shifts)
        n *= 2


def mvn_cdf(upper, g: GaussianSpec, target_err: float = 1e-5, seed: int = 0) -> ProbEstimate:
    """Estimate ``Pr(X <= upper)`` for ``X ~ g``."""
    upper = np.asarray(upper, dtype=float).ravel() - g.mean
    if upper.shape != (g.dim,):
        raise ValueError("upper has the wrong dimension")
    _check_dim(g.dim)
    if np.any(np.isneginf(upper)):
        return ProbEstimate(0.0, 0.0, 0)
    keep = ~np.isposinf(upper)
    cov = g.covariance[np.ix_(keep, keep)]
    b = upper[keep][None, :]
    if b.shape[1] <= 1:
        v, e = mvn_cdf_batch(cov, b, return_error=True)
        return ProbEstimate(float(v[0]), 0.0, 0)

    def run(qmc):
        v, e = mvn_cdf_batch(cov, b, qmc, return_error=True)
        return v[0], e[0]

    return _adaptive(run, target_err, seed)


def mvn_orthant_moment(g: GaussianSpec, weight_index: int, power: int, seed: int = 0,
                       target_err: float = 1e-6) -> ProbEstimate:
    """Estimate ``E[|Y_k|^p 1{Y <= 0}]`` for ``Y ~ g`` (zero mean)."""
    if power < 0 or int(power) != power:
        raise ValueError("power must be a nonnegative integer")
    if not 0 <= weight_index < g.dim:
        raise ValueError("weight_index out of range")
    if np.any(g.mean != 0):
        raise ValueError("orthant moments are defined for centered laws only")
    _check_dim(g.dim)
    cov = g.covariance
    k = weight_index
    rest = [j for j in range(g.dim) if j != k]
    sk = np.sqrt(cov[k, k])
    const = sk ** power * chi_moment_constant(power)
    # Y_k = -sk R; rest | Y_k ~ N(Y_k cov[rest,k]/cov[k,k], Schur)
    reg = cov[rest, k] / cov[k, k]
    schur = cov[np.ix_(rest, rest)] - np.outer(cov[rest, k], cov[rest, k]) / cov[k, k]
    coef = (reg * sk)[None, :]
    if not rest:
        return ProbEstimate(const, 0.0, 0)

    def run(qmc):
        v, e = chi_orthant_batch(schur, coef, power, qmc, return_error=True)
        return v[0] * const, e[0] * const

    return _adaptive(run, target_err, seed, clip=False)


def conditional_gaussian(g: GaussianSpec, B):
    """Regression matrix ``S_{B^c B} S_B^{-1}`` and Schur complement ``S_{B^c|B}``."""
    members = list(B.members) if hasattr(B, "members") else sorted(B)
    rest = [j for j in range(g.dim) if j not in members]
    cov = g.covariance
    sb = cov[np.ix_(members, members)]
    if not rest:
        return np.zeros((0, len(members))), np.zeros((0, 0))
    cond = np.linalg.cond(sb) if sb.size else 1.0
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise CovarianceError(f"Sigma_B is singular (condition number {cond:.3e})")
    scb = cov[np.ix_(rest, members)]
    reg = np.linalg.solve(sb, scb.T).T
    schur = cov[np.ix_(rest, rest)] - reg @ scb.T
    return reg, 0.5 * (schur + schur.T)
