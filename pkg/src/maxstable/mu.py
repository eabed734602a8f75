"""The exponent-measure derivatives mu(B; z) and the tail dependence function.

``mu(B; z) = int_0^inf gamma^|B| lambda(gamma; B, z) d gamma`` is the atomic
quantity behind every likelihood.  It is available through several
interchangeable strategies:

``quadrature``
    adaptive composite Gauss-Legendre in ``s = log(gamma)`` (the logit of
    ``u = gamma / (1 + gamma)``), with panels shared across a batch of points.
``analytic_gaussian``
    the radial reduction of the Gaussian integral to a chi-mixture of
    ``|B^c|``-dimensional normal probabilities.
``analytic_lognormal``
    closed factor times one ``|B^c|``-dimensional normal probability.
``archimedean_quadrature``
    quadrature applied to the closed clustered-Archimedean kernel.
``monte_carlo``
    the unit-Pareto importance estimator sharing one sample across all calls.

All batch routines work on ``log mu`` to survive underflow at extreme ``z``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import gammaln, logsumexp, roots_legendre

from .combinatorics import enumerate_nonempty_subsets, CombinatorialExplosion
from .gaussian import DEFAULT_QMC, QmcSettings, chi_orthant_batch, mvn_cdf_batch, robust_cholesky
from .spectral import (ClusteredArchimedean, GaussianSpectral, LogNormalSpectral, SpectralModel,
                       mask_members, to_mask)

QUAD_TOL = 1e-8
PANEL_CAP = 2 ** 12
V_B_CAP = 12
_GL_NODES, _GL_WEIGHTS = roots_legendre(10)
_S_LIMIT = 400.0


class QuadratureError(ArithmeticError):
    """Adaptive quadrature hit its panel cap before reaching the tolerance."""

    def __init__(self, message, estimate, residual):
        super().__init__(message)
        self.estimate = estimate
        self.residual = residual


class BoundaryWarning(UserWarning):
    """A finite-difference step had to be one-sided at a parameter bound."""


# --------------------------------------------------------------- strategies

@dataclass(frozen=True)
class SharedMcSample:
    """Unit-Pareto draws reused for every Monte-Carlo mu estimate."""

    S: int
    seed: int
    values: np.ndarray = field(repr=False)

    @classmethod
    def create(cls, S: int, seed: int = 0) -> "SharedMcSample":
        if S < 1:
            raise ValueError("S must be positive")
        u = np.random.default_rng(seed).uniform(size=S)
        vals = 1.0 / (1.0 - u)
        vals.setflags(write=False)
        return cls(int(S), int(seed), vals)


STRATEGIES = ("quadrature", "analytic_gaussian", "analytic_lognormal",
              "archimedean_quadrature", "monte_carlo")


@dataclass(frozen=True)
class MuStrategy:
    name: str
    qmc: QmcSettings = DEFAULT_QMC
    sample: SharedMcSample | None = None
    tol: float = QUAD_TOL

    def __post_init__(self):
        if self.name not in STRATEGIES:
            raise ValueError(f"unknown mu strategy {self.name!r}")
        if self.name == "monte_carlo" and self.sample is None:
            raise ValueError("the Monte-Carlo strategy needs a SharedMcSample")

    def check(self, model: SpectralModel) -> None:
        ok = {
            "quadrature": True,
            "analytic_gaussian": isinstance(model, GaussianSpectral),
            "analytic_lognormal": isinstance(model, LogNormalSpectral),
            "archimedean_quadrature": isinstance(model, ClusteredArchimedean),
            "monte_carlo": True,
        }[self.name]
        if not ok:
            raise TypeError(f"strategy {self.name} does not apply to a {model.kind} model")


def default_strategy(model: SpectralModel, qmc: QmcSettings = DEFAULT_QMC) -> MuStrategy:
    """Fastest reliable strategy for the model kind."""
    if isinstance(model, GaussianSpectral):
        return MuStrategy("analytic_gaussian", qmc)
    if isinstance(model, LogNormalSpectral):
        return MuStrategy("analytic_lognormal", qmc)
    return MuStrategy("archimedean_quadrature", qmc)


# ---------------------------------------------------------------- quadrature

def _gl_panels(edges_lo, edges_hi):
    """Node positions (P, n) and weights (P, n) for Gauss-Legendre on panels."""
    half = 0.5 * (edges_hi - edges_lo)
    mid = 0.5 * (edges_hi + edges_lo)
    nodes = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    weights = half[:, None] * _GL_WEIGHTS[None, :]
    return nodes, weights


class _LogIntegrator:
    """Adaptive integration of ``exp(f(s))`` over the real line, batched over rows.

    ``f`` maps an array ``s`` of shape ``(G,)`` to log-integrand values of
    shape ``(K, G)``.  Every row shares the same panels.
    """

    def __init__(self, f, K: int, tol: float = QUAD_TOL, cap: int = PANEL_CAP):
        self.f, self.K, self.tol, self.cap = f, K, tol, cap
        self.shift = None

    def _panel_sums(self, lo, hi):
        nodes, weights = _gl_panels(lo, hi)
        logv = self.f(nodes.ravel()).reshape(self.K, *nodes.shape)
        top = np.max(logv, axis=(1, 2))
        if self.shift is None:
            self.shift = np.where(np.isfinite(top), top, 0.0)
        grow = np.isfinite(top) & (top > self.shift + 300.0)
        if np.any(grow):
            self._rescale(np.where(grow, top, self.shift))
        with np.errstate(under="ignore"):
            vals = np.exp(logv - self.shift[:, None, None])
        return np.sum(vals * weights[None], axis=2)  # (K, P)

    def _rescale(self, new_shift):
        factor = np.exp(self.shift - new_shift)
        for key in ("coarse", "fine"):
            if hasattr(self, key):
                setattr(self, key, getattr(self, key) * factor[:, None])
        self.shift = new_shift

    def fixed(self, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Integrate on given panel edges; returns (log integral, rows)."""
        sums = self._panel_sums(edges[:-1], edges[1:])
        with np.errstate(divide="ignore"):
            return np.log(np.sum(sums, axis=1)) + self.shift

    def adaptive(self) -> tuple[np.ndarray, np.ndarray]:
        lo_s, hi_s = -8.0, 8.0
        edges = np.linspace(lo_s, hi_s, 17)
        lo, hi = edges[:-1], edges[1:]
        mid = 0.5 * (lo + hi)
        self.coarse = self._panel_sums(lo, hi)
        self.fine = self._panel_sums(np.concatenate([lo, mid]), np.concatenate([mid, hi]))
        P = lo.size
        self.fine = self.fine[:, :P] + self.fine[:, P:]
        # extend the domain until the end panels are negligible
        while True:
            total = np.sum(self.fine, axis=1)
            scale = np.where(total > 0, total, 1.0)
            left = np.max(self.fine[:, 0] / scale)
            right = np.max(self.fine[:, -1] / scale)
            grew = False
            for side, val in (("left", left), ("right", right)):
                if val <= 0.1 * self.tol:
                    continue
                width = hi[-1] - hi[-2] if side == "right" else lo[1] - lo[0]
                width = min(2.0 * width, 16.0)
                if side == "right":
                    if hi[-1] >= _S_LIMIT:
                        continue
                    new_lo, new_hi = np.array([hi[-1]]), np.array([min(hi[-1] + width, _S_LIMIT)])
                else:
                    if lo[0] <= -_S_LIMIT:
                        continue
                    new_lo, new_hi = np.array([max(lo[0] - width, -_S_LIMIT)]), np.array([lo[0]])
                c = self._panel_sums(new_lo, new_hi)
                nm = 0.5 * (new_lo + new_hi)
                fsum = self._panel_sums(np.concatenate([new_lo, nm]), np.concatenate([nm, new_hi]))
                fsum = fsum[:, :1] + fsum[:, 1:]
                if side == "right":
                    lo, hi = np.append(lo, new_lo), np.append(hi, new_hi)
                    self.coarse = np.hstack([self.coarse, c])
                    self.fine = np.hstack([self.fine, fsum])
                else:
                    lo, hi = np.concatenate([new_lo, lo]), np.concatenate([new_hi, hi])
                    self.coarse = np.hstack([c, self.coarse])
                    self.fine = np.hstack([fsum, self.fine])
                grew = True
            if not grew:
                break
        # bisection on panels whose coarse/fine discrepancy dominates
        while True:
            total = np.sum(self.fine, axis=1)
            scale = np.where(total > 0, total, 1.0)
            err = np.max(np.abs(self.fine - self.coarse) / scale[:, None], axis=0)
            if err.sum() <= self.tol:
                break
            if lo.size >= self.cap:
                raise QuadratureError(
                    f"quadrature did not reach relative tolerance {self.tol} within {self.cap} panels",
                    np.log(total) + self.shift, float(err.sum()))
            split = err > self.tol / max(lo.size, 1)
            split &= err >= 0.5 * err.max() if split.sum() > self.cap - lo.size else split
            idx = np.flatnonzero(split)
            a, b = lo[idx], hi[idx]
            m = 0.5 * (a + b)
            new_lo = np.concatenate([a, m])
            new_hi = np.concatenate([m, b])
            coarse_new = self._panel_sums(new_lo, new_hi)
            q = 0.5 * (new_lo + new_hi)
            fine_new = self._panel_sums(np.concatenate([new_lo, q]), np.concatenate([q, new_hi]))
            n2 = new_lo.size
            fine_new = fine_new[:, :n2] + fine_new[:, n2:]
            keep = np.setdiff1d(np.arange(lo.size), idx)
            lo = np.concatenate([lo[keep], new_lo])
            hi = np.concatenate([hi[keep], new_hi])
            self.coarse = np.hstack([self.coarse[:, keep], coarse_new])
            self.fine = np.hstack([self.fine[:, keep], fine_new])
            order = np.argsort(lo)
            lo, hi = lo[order], hi[order]
            self.coarse, self.fine = self.coarse[:, order], self.fine[:, order]
        total = np.sum(self.fine, axis=1)
        mids = 0.5 * (lo + hi)
        edges = np.unique(np.concatenate([lo, mids, hi]))
        with np.errstate(divide="ignore"):
            return np.log(total) + self.shift, edges


def _normalize(Z: np.ndarray, inside: list[int]) -> tuple[np.ndarray, np.ndarray]:
    """Rescale rows to unit geometric mean over ``B``; returns (Z', log scale)."""
    logc = np.mean(np.log(Z[:, inside]), axis=1)
    return Z / np.exp(logc)[:, None], logc


def _log_mu_quadrature(model, mask, Z, strategy: MuStrategy, panels=None):
    inside, _ = mask_members(mask, model.dim)
    b = len(inside)
    Zn, logc = _normalize(Z, inside)

    def f(s):
        gam = np.exp(s)[None, :]
        return (b + 1) * s[None, :] + model.log_kernel(mask, Zn, gam, strategy.qmc)

    integ = _LogIntegrator(f, Zn.shape[0], strategy.tol)
    if panels is not None:
        out = integ.fixed(panels)
        used = panels
    else:
        out, used = integ.adaptive()
    return out - (b + 1) * logc, used


# ------------------------------------------------------------------ analytic

def _log_mu_analytic_gaussian(model: GaussianSpectral, mask, Z, qmc):
    blk = model.blocks(mask)
    b = len(blk.inside)
    zb = Z[:, blk.inside]
    q = np.einsum("ki,ij,kj->k", zb, blk.prec, zb)
    logc = (-0.5 * b * math.log(2 * math.pi) - 0.5 * blk.logdet
            + 0.5 * (b - 1) * math.log(2.0) + gammaln(0.5 * (b + 1)))
    out = logc - 0.5 * (b + 1) * np.log(q)
    if blk.outside:
        w = (Z[:, blk.outside] - zb @ blk.reg.T) / np.sqrt(q)[:, None]
        with np.errstate(divide="ignore"):
            out = out + np.log(chi_orthant_batch(blk.schur, w, b, qmc))
    return out


def _log_mu_analytic_lognormal(model: LogNormalSpectral, mask, Z, qmc):
    blk = model.blocks(mask)
    b = len(blk.inside)
    logz = np.log(Z)
    a0 = logz[:, blk.inside] + model.nu[blk.inside]
    aPa = np.einsum("ki,ij,kj->k", a0, blk.prec, a0)
    ePa = a0 @ blk.prec.sum(axis=0)
    kap = blk.kappa
    ms = (1.0 - ePa) / kap
    out = (-np.sum(logz[:, blk.inside], axis=1) - 0.5 * b * math.log(2 * math.pi) - 0.5 * blk.logdet
           + 0.5 * math.log(2 * math.pi / kap) - 0.5 * aPa + 0.5 * kap * ms ** 2)
    if blk.outside:
        cov = blk.schur + np.outer(blk.dvec, blk.dvec) / kap
        b0 = logz[:, blk.outside] + model.nu[blk.outside] - a0 @ blk.reg.T
        upper = b0 + ms[:, None] * blk.dvec[None, :]
        with np.errstate(divide="ignore"):
            out = out + np.log(mvn_cdf_batch(cov, upper, qmc))
    return out


# --------------------------------------------------------------- Monte Carlo

def _log_mu_monte_carlo(model, mask, Z, strategy: MuStrategy):
    inside, _ = mask_members(mask, model.dim)
    b = len(inside)
    v = strategy.sample.values
    logv = np.log(v)
    K = Z.shape[0]
    out = np.empty(K)
    step = max(1, 2_000_000 // v.size)
    for s in range(0, K, step):
        zk = Z[s:s + step]
        lo = model.log_kernel(mask, zk, (1.0 / v)[None, :], strategy.qmc)
        hi = model.log_kernel(mask, zk, v[None, :], strategy.qmc)
        lo = lo - b * logv
        hi = hi + (2 + b) * logv
        top = np.maximum(lo.max(axis=1), hi.max(axis=1))
        top = np.where(np.isfinite(top), top, 0.0)[:, None]
        with np.errstate(under="ignore"):
            np.exp(np.subtract(lo, top, out=lo), out=lo)
            np.exp(np.subtract(hi, top, out=hi), out=hi)
        with np.errstate(divide="ignore"):
            out[s:s + step] = np.log(lo.sum(axis=1) + hi.sum(axis=1)) + top[:, 0] - math.log(v.size)
    return out


# ------------------------------------------------------------------ public

def log_mu_batch(model: SpectralModel, B, Z, strategy: MuStrategy | None = None,
                 panels: np.ndarray | None = None, return_panels: bool = False):
    """``log mu(B; z_k)`` for every row ``z_k`` of ``Z``.

    ``panels`` fixes the quadrature panel edges (in ``log gamma`` after
    normalization), which keeps finite differences in theta smooth.
    """
    mask = to_mask(B)
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[1] != model.dim:
        raise ValueError(f"points have dimension {Z.shape[1]}, model has {model.dim}")
    if not np.all(Z > 0) or not np.all(np.isfinite(Z)):
        raise ValueError("z must be strictly positive and finite")
    if mask <= 0 or mask >= 1 << model.dim:
        raise ValueError("B must be a nonempty subset of the components")
    strategy = strategy or default_strategy(model)
    strategy.check(model)
    used = None
    if strategy.name in ("quadrature", "archimedean_quadrature"):
        out, used = _log_mu_quadrature(model, mask, Z, strategy, panels)
    elif strategy.name == "analytic_gaussian":
        out = _log_mu_analytic_gaussian(model, mask, Z, strategy.qmc)
    elif strategy.name == "analytic_lognormal":
        out = _log_mu_analytic_lognormal(model, mask, Z, strategy.qmc)
    else:
        out = _log_mu_monte_carlo(model, mask, Z, strategy)
    return (out, used) if return_panels else out


def mu(model: SpectralModel, B, z, strategy: MuStrategy | None = None) -> float:
    """``mu(B; z)`` for one point."""
    return float(np.exp(log_mu_batch(model, B, np.asarray(z, dtype=float)[None, :], strategy)[0]))


def log_v_star_batch(model, Z, strategy=None) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    terms = np.stack([np.log(Z[:, l]) + log_mu_batch(model, 1 << l, Z, strategy)
                      for l in range(model.dim)])
    return logsumexp(terms, axis=0)


def v_star(model: SpectralModel, z, strategy: MuStrategy | None = None) -> float:
    """Tail dependence function ``V*(z) = sum_l z_l mu({l}; z)``."""
    return float(np.exp(log_v_star_batch(model, np.asarray(z, dtype=float)[None, :], strategy)[0]))


def v_star_monte_carlo(model: SpectralModel, z, n: int = 10 ** 6, seed=0) -> tuple[float, float]:
    """Direct estimate of ``E[max_j U_j^+ / z_j]`` with its standard error."""
    z = np.asarray(z, dtype=float)
    rng = np.random.default_rng(seed)
    vals = []
    for start in range(0, n, 250_000):
        U = model.sample(min(250_000, n - start), rng)
        vals.append(np.max(np.maximum(U, 0.0) / z, axis=1))
    vals = np.concatenate(vals)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size))


# ------------------------------------------------------------- V_B and p_B

def _rect_prob_gaussian(cov, mask, X, qmc):
    """``P(U_B > x_B, U_{B^c} <= x_{B^c})`` by flipping the sign of ``U_B``."""
    m = cov.shape[0]
    sign = np.array([-1.0 if mask >> j & 1 else 1.0 for j in range(m)])
    flipped = cov * np.outer(sign, sign)
    if m == 1:
        from scipy.special import ndtr
        return ndtr(sign[0] * X[:, 0] / math.sqrt(cov[0, 0]))
    return mvn_cdf_batch(flipped, X * sign, qmc)


def _log_psi_shift(cop, T, t):
    """``log psi(T + t) - log psi(T)`` computed without cancellation."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if cop.name == "clayton":
            return -np.log1p(t / (1.0 + T)) / cop.theta
        a = 1.0 / cop.theta
        rel = np.where(T > 0, t / np.where(T > 0, T, 1.0), np.inf)
        small = (T > 0) & (rel < 1.0)
        stable = -T ** a * np.expm1(a * np.log1p(np.where(small, rel, 0.0)))
        direct = -((T + t) ** a - T ** a)
        return np.where(small, stable, direct)


def _rect_prob_clustered(model: ClusteredArchimedean, mask, X):
    out = np.ones(X.shape[0])
    for spec, (cop, mar) in zip(model.specs, model.parts):
        if not spec.cluster:
            continue
        idx = list(spec.cluster)
        lv = mar.logcdf(X[:, idx])
        t = cop.psi_inv_from_log(lv)
        exc = [i for i, j in enumerate(idx) if mask >> j & 1]
        below = [i for i in range(len(idx)) if i not in exc]
        T = t[:, below].sum(axis=1) if below else np.zeros(X.shape[0])
        log_base = cop.log_abs_psi_deriv(0, T)
        if not exc:
            out *= np.exp(log_base)
            continue
        acc = np.zeros(X.shape[0])
        for sub in range(1, 1 << len(exc)):
            cols = [exc[i] for i in range(len(exc)) if sub >> i & 1]
            delta = np.expm1(_log_psi_shift(cop, T, t[:, cols].sum(axis=1)))
            acc += (-1) ** len(cols) * delta
        surv = np.min(-np.expm1(lv[:, exc]), axis=1)
        out *= np.clip(np.exp(log_base) * acc, 0.0, surv)
    return out


def v_b_star(model: SpectralModel, B, z, seed: int = 0, qmc: QmcSettings | None = None,
             tol: float = 1e-9) -> float:
    """``V_B*(z) = int_0^inf P(U_B > gamma z_B, U_{B^c} <= gamma z_{B^c}) d gamma``.

    Gaussian-type kinds evaluate the rectangle probability as one normal CDF
    of ``(-U_B, U_{B^c})``; the clustered kind uses inclusion-exclusion over
    subsets of ``B`` on the copula, arranged as differences of log-generator
    values to limit cancellation.
    """
    mask = to_mask(B)
    members, _ = mask_members(mask, model.dim)
    if len(members) > V_B_CAP:
        raise CombinatorialExplosion(f"|B| = {len(members)} exceeds the cap {V_B_CAP}")
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("z must be strictly positive")
    qmc = qmc or QmcSettings(n_points=4096, seed=seed)
    scale = math.exp(np.mean(np.log(z)))
    zn = z / scale

    def f(s):
        X = np.exp(s)[:, None] * zn[None, :]
        if isinstance(model, ClusteredArchimedean):
            p = _rect_prob_clustered(model, mask, X)
        elif isinstance(model, LogNormalSpectral):
            with np.errstate(divide="ignore"):
                p = _rect_prob_gaussian(model.cov, mask, np.log(X) + model.nu, qmc)
        else:
            p = _rect_prob_gaussian(model.cov, mask, X, qmc)
        with np.errstate(divide="ignore"):
            return (s + np.log(np.clip(p, 0.0, None)))[None, :]

    integ = _LogIntegrator(f, 1, tol=max(tol, 1e-7))
    try:
        val, _ = integ.adaptive()
        return float(np.exp(val[0])) / scale
    except QuadratureError as err:
        return float(np.exp(err.estimate[0])) / scale


def p_b_weights(model: SpectralModel, z, seed: int = 0) -> dict[int, float]:
    """Exceedance-pattern probabilities ``p_B(z) = V_B*(z) / V*(z)`` keyed by bitmask.

    ``V*`` is taken as ``sum_B V_B*`` (an identity), so the weights sum to one.
    """
    z = np.asarray(z, dtype=float)
    vals = {S.mask: v_b_star(model, S.mask, z, seed) for S in enumerate_nonempty_subsets(model.dim, V_B_CAP)}
    total = sum(vals.values())
    return {k: v / total for k, v in vals.items()}


# --------------------------------------------------------------- gradients

def fd_steps(model: SpectralModel, free: Sequence[int] | None = None):
    """Central-difference steps ``h_i = 1e-5 max(1, |theta_i|)`` with boundary handling.

    Returns a list of ``(index, theta_plus, theta_minus, denom)``.
    """
    th = model.theta
    free = range(len(th)) if free is None else free
    out = []
    for i in free:
        h = 1e-5 * max(1.0, abs(th.values[i]))
        plus, minus = th.values.copy(), th.values.copy()
        up = th.values[i] + h <= th.upper[i]
        down = th.values[i] - h >= th.lower[i]
        if up and down:
            plus[i] += h
            minus[i] -= h
            denom = 2 * h
        else:
            warnings.warn(f"parameter {th.names[i]} at its bound: one-sided difference",
                          BoundaryWarning, stacklevel=3)
            if up:
                plus[i] += h
            else:
                minus[i] -= h
            denom = h
        out.append((i, plus, minus, denom))
    return out


def grad_log_mu_batch(model, B, Z, strategy=None, free=None) -> np.ndarray:
    """Finite-difference gradient of ``log mu(B; z_k)`` in theta, shape ``(K, p)``.

    Quadrature panels, QMC points and the shared MC sample are held fixed
    across the perturbed evaluations.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    strategy = strategy or default_strategy(model)
    _, panels = log_mu_batch(model, B, Z, strategy, return_panels=True)
    steps = fd_steps(model, free)
    out = np.zeros((Z.shape[0], len(steps)))
    for col, (i, plus, minus, denom) in enumerate(steps):
        lp = log_mu_batch(model.with_theta(plus), B, Z, strategy, panels=panels)
        lm = log_mu_batch(model.with_theta(minus), B, Z, strategy, panels=panels)
        out[:, col] = (lp - lm) / denom
    return out


def grad_mu(model: SpectralModel, B, z, strategy: MuStrategy | None = None) -> np.ndarray:
    """Gradient of ``mu(B; z)`` with respect to the free parameters."""
    z = np.asarray(z, dtype=float)[None, :]
    val = mu(model, B, z[0], strategy)
    return val * grad_log_mu_batch(model, B, z, strategy)[0]
