"""Spectral random vectors: Gaussian, log-normal and clustered Archimedean.

Every model exposes ``log_kernel(mask, Z, gamma)``, the logarithm of

    lambda(gamma; B, z) = Pr(U_{B^c} <= z_{B^c} gamma | U_B = z_B gamma) f_{U_B}(z_B gamma)

for a subset ``B`` given as a bitmask, evaluated for a batch of points
``Z`` (shape ``(K, m)``) and radii ``gamma`` (shape ``(K, G)``).  The mu engine
integrates ``gamma^|B| lambda`` over ``gamma``.

Parameters live in a :class:`ThetaVector`; models are immutable and
``with_theta`` returns a new instance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import gammaln, log_ndtr, ndtri_exp

from .combinatorics import ComponentSet
from .gaussian import QmcSettings, DEFAULT_QMC, jittered, mvn_cdf_batch, robust_cholesky
from .spatial import MaternParams, SiteSet, correlation_matrix

TWO_PI = 2.0 * math.pi
LOG_2PI = math.log(TWO_PI)
MAX_PSI_ORDER = 12


# ------------------------------------------------------------------ theta

@dataclass(frozen=True)
class ThetaVector:
    """Named parameters with box bounds.

    The unconstrained map is ``log(v - lower)`` for half-bounded parameters,
    a logit for doubly bounded ones and the identity otherwise.
    """

    names: tuple[str, ...]
    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        for attr in ("values", "lower", "upper"):
            arr = np.asarray(getattr(self, attr), dtype=float).copy()
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)
        if not (len(self.names) == self.values.size == self.lower.size == self.upper.size):
            raise ValueError("theta names, values and bounds must have equal lengths")
        if np.any(self.values < self.lower) or np.any(self.values > self.upper):
            bad = [n for n, v, lo, hi in zip(self.names, self.values, self.lower, self.upper)
                   if not lo <= v <= hi]
            raise ValueError(f"parameters outside their bounds: {bad}")

    @classmethod
    def empty(cls) -> "ThetaVector":
        return cls((), np.zeros(0), np.zeros(0), np.zeros(0))

    def __len__(self):
        return len(self.names)

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.values)}

    def index(self, name: str) -> int:
        return self.names.index(name)

    def replace(self, values) -> "ThetaVector":
        return ThetaVector(self.names, np.asarray(values, dtype=float), self.lower, self.upper)

    def on_boundary(self, i: int) -> bool:
        return bool(self.values[i] <= self.lower[i] or self.values[i] >= self.upper[i])

    def to_unconstrained(self, values=None) -> np.ndarray:
        v = self.values if values is None else np.asarray(values, dtype=float)
        out = np.empty_like(v)
        for i, (x, lo, hi) in enumerate(zip(v, self.lower, self.upper)):
            if np.isfinite(lo) and np.isfinite(hi):
                p = (x - lo) / (hi - lo)
                out[i] = math.log(p / (1 - p)) if 0 < p < 1 else (-np.inf if p <= 0 else np.inf)
            elif np.isfinite(lo):
                out[i] = math.log(x - lo) if x > lo else -np.inf
            elif np.isfinite(hi):
                out[i] = -math.log(hi - x) if x < hi else np.inf
            else:
                out[i] = x
        return out

    def from_unconstrained(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        for i, (y, lo, hi) in enumerate(zip(x, self.lower, self.upper)):
            if np.isfinite(lo) and np.isfinite(hi):
                out[i] = lo + (hi - lo) / (1 + math.exp(-y)) if y > -700 else lo
            elif np.isfinite(lo):
                out[i] = lo + math.exp(min(y, 700.0))
            elif np.isfinite(hi):
                out[i] = hi - math.exp(min(-y, 700.0))
            else:
                out[i] = y
        return out


def _members(B) -> list[int]:
    if isinstance(B, ComponentSet):
        return list(B.members)
    if isinstance(B, (int, np.integer)):
        return [j for j in range(int(B).bit_length()) if int(B) >> j & 1]
    return sorted(int(j) for j in B)


def to_mask(B) -> int:
    if isinstance(B, ComponentSet):
        return B.mask
    if isinstance(B, (int, np.integer)):
        return int(B)
    out = 0
    for j in B:
        out |= 1 << int(j)
    return out


def mask_members(mask: int, m: int) -> tuple[list[int], list[int]]:
    inside = [j for j in range(m) if mask >> j & 1]
    outside = [j for j in range(m) if not mask >> j & 1]
    return inside, outside


# ------------------------------------------------------------------ base

class SpectralModel:
    """Common interface of the three spectral families."""

    kind: str = ""

    def __init__(self, dim: int, theta: ThetaVector):
        self.dim = int(dim)
        self.theta = theta
        self._cache: dict = {}

    def with_theta(self, values) -> "SpectralModel":
        raise NotImplementedError

    def restrict(self, idx: Sequence[int]) -> "SpectralModel":
        raise NotImplementedError

    def log_kernel(self, mask: int, Z: np.ndarray, gamma: np.ndarray,
                   qmc: QmcSettings = DEFAULT_QMC) -> np.ndarray:
        raise NotImplementedError

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def _check_batch(self, mask, Z, gamma):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != self.dim:
            raise ValueError(f"points have dimension {Z.shape[1]}, model has {self.dim}")
        gamma = np.asarray(gamma, dtype=float)
        if gamma.ndim == 1:
            gamma = gamma[None, :]
        if gamma.shape[0] not in (1, Z.shape[0]):
            raise ValueError("gamma must have one row or one row per point")
        if mask <= 0 or mask >= 1 << self.dim:
            raise ValueError("B must be a nonempty subset of the components")
        return Z, gamma

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim}, theta={self.theta.as_dict()})"


# ---------------------------------------------------------------- Gaussian

class _GaussianBlocks:
    """Per-subset factorizations shared by Gaussian-type kernels."""

    def __init__(self, cov: np.ndarray, mask: int):
        m = cov.shape[0]
        self.inside, self.outside = mask_members(mask, m)
        sb = cov[np.ix_(self.inside, self.inside)]
        chol = robust_cholesky(sb)
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        self.prec = np.linalg.inv(chol @ chol.T)
        self.prec = 0.5 * (self.prec + self.prec.T)
        if self.outside:
            scb = cov[np.ix_(self.outside, self.inside)]
            self.reg = scb @ self.prec
            schur = cov[np.ix_(self.outside, self.outside)] - self.reg @ scb.T
            self.schur = 0.5 * (schur + schur.T)
        else:
            self.reg = np.zeros((0, len(self.inside)))
            self.schur = np.zeros((0, 0))


class GaussianSpectral(SpectralModel):
    """Centered Gaussian ``U`` with covariance ``2 pi R`` so that ``E[U_j^+] = 1``.

    Built either from a correlation matrix (no free parameters) or from
    sites and Whittle-Matern parameters ``(c, nu)``.
    """

    kind = "gaussian"

    def __init__(self, correlation, sites: SiteSet | None = None, matern: MaternParams | None = None):
        corr = np.atleast_2d(np.asarray(correlation, dtype=float))
        if corr.shape[0] != corr.shape[1]:
            raise ValueError("correlation must be square")
        if not np.allclose(np.diag(corr), 1.0):
            raise ValueError("correlation must have unit diagonal")
        self.correlation = corr
        self.cov = TWO_PI * corr
        self.sites = sites
        self.matern = matern
        if matern is not None:
            theta = ThetaVector(("c", "nu"), np.array([matern.c, matern.nu]),
                                np.zeros(2), np.full(2, np.inf))
        else:
            theta = ThetaVector.empty()
        super().__init__(corr.shape[0], theta)

    @classmethod
    def from_sites(cls, sites: SiteSet, matern: MaternParams) -> "GaussianSpectral":
        return cls(correlation_matrix(sites, matern), sites, matern)

    def with_theta(self, values) -> "GaussianSpectral":
        values = np.asarray(values, dtype=float)
        if self.matern is None:
            if values.size:
                raise ValueError("this Gaussian model has no free parameters")
            return self
        self.theta.replace(values)  # bounds check
        return GaussianSpectral.from_sites(self.sites, MaternParams(float(values[0]), float(values[1])))

    def restrict(self, idx) -> "GaussianSpectral":
        idx = list(idx)
        sites = self.sites.subset(idx) if self.sites is not None else None
        return GaussianSpectral(self.correlation[np.ix_(idx, idx)], sites, self.matern)

    def blocks(self, mask: int) -> _GaussianBlocks:
        key = ("blocks", mask)
        if key not in self._cache:
            self._cache[key] = _GaussianBlocks(self.cov, mask)
        return self._cache[key]

    def log_kernel(self, mask, Z, gamma, qmc=DEFAULT_QMC):
        Z, gamma = self._check_batch(mask, Z, gamma)
        blk = self.blocks(mask)
        zb = Z[:, blk.inside]
        q = np.einsum("ki,ij,kj->k", zb, blk.prec, zb)
        nb = len(blk.inside)
        log_f = -0.5 * nb * LOG_2PI - 0.5 * blk.logdet - 0.5 * gamma ** 2 * q[:, None]
        if not blk.outside:
            return log_f
        w = Z[:, blk.outside] - zb @ blk.reg.T
        K, G = Z.shape[0], gamma.shape[1]
        upper = (gamma[:, :, None] * w[:, None, :]).reshape(K * G, -1)
        with np.errstate(divide="ignore"):
            if upper.shape[1] == 1:
                log_p = log_ndtr(upper[:, 0] / math.sqrt(blk.schur[0, 0]))
            else:
                log_p = np.log(mvn_cdf_batch(blk.schur, upper, qmc))
        return log_f + log_p.reshape(K, G)

    def log_density(self, U: np.ndarray) -> np.ndarray:
        """Joint log density of ``U`` (used as a cross-check of the kernel)."""
        U = np.atleast_2d(U)
        chol = robust_cholesky(self.cov)
        sol = np.linalg.solve(chol, U.T)
        return (-0.5 * self.dim * LOG_2PI - np.sum(np.log(np.diag(chol)))
                - 0.5 * np.sum(sol ** 2, axis=0))

    def _chol(self):
        if "chol" not in self._cache:
            self._cache["chol"] = robust_cholesky(self.cov)
        return self._cache["chol"]

    def sample(self, count, rng):
        return rng.standard_normal((count, self.dim)) @ self._chol().T

    def to_dict(self):
        out = {"kind": self.kind}
        if self.matern is not None:
            out["matern"] = {"c": self.matern.c, "nu": self.matern.nu}
            out["sites"] = self.sites.coordinates.tolist()
        else:
            out["correlation"] = self.correlation.tolist()
        return out


# --------------------------------------------------------------- log-normal

def brown_resnick_covariance(sites: SiteSet, c: float, kappa: float) -> np.ndarray:
    """``Cov(eps_i, eps_j) = g(x_i) + g(x_j) - g(x_i - x_j)`` for ``g(h) = (|h|/c)^kappa``."""
    x = sites.coordinates
    g0 = (np.linalg.norm(x, axis=1) / c) ** kappa
    gij = (sites.distances() / c) ** kappa
    return g0[:, None] + g0[None, :] - gij


class LogNormalSpectral(SpectralModel):
    """``log U = eps - Var(eps)/2`` with ``eps ~ N(0, cov)``, so ``E[U_j] = 1``.

    ``family`` selects how ``cov`` is parameterized: ``None`` (fixed matrix),
    ``"geometric"`` (``sigma2 * Matern(c, nu)``) or ``"brown_resnick"``
    (power variogram ``(h / c)^kappa`` anchored at the origin).
    """

    kind = "lognormal"

    def __init__(self, cov_eps, sites: SiteSet | None = None, family: str | None = None,
                 params: dict | None = None):
        cov = np.atleast_2d(np.asarray(cov_eps, dtype=float))
        if cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError("cov_eps must be a symmetric matrix")
        if np.any(np.diag(cov) <= 0):
            raise ValueError("Var(eps) must be positive: degenerate spectral laws are not absolutely continuous")
        ev = np.linalg.eigvalsh(cov)
        if ev[0] < -1e-10 * max(1.0, ev[-1]):
            raise ValueError("cov_eps is not positive semidefinite")
        self.cov = 0.5 * (cov + cov.T)
        self.nu = 0.5 * np.diag(self.cov)
        self.sites = sites
        self.family = family
        self.params = dict(params or {})
        if family is None:
            theta = ThetaVector.empty()
        elif family == "geometric":
            theta = ThetaVector(("sigma2", "c", "nu"),
                                np.array([self.params["sigma2"], self.params["c"], self.params["nu"]]),
                                np.zeros(3), np.full(3, np.inf))
        elif family == "brown_resnick":
            theta = ThetaVector(("c", "kappa"), np.array([self.params["c"], self.params["kappa"]]),
                                np.zeros(2), np.array([np.inf, 2.0]))
        else:
            raise ValueError(f"unknown log-normal family {family!r}")
        super().__init__(cov.shape[0], theta)

    @classmethod
    def geometric(cls, sites: SiteSet, sigma2: float, matern: MaternParams) -> "LogNormalSpectral":
        cov = sigma2 * correlation_matrix(sites, matern)
        return cls(cov, sites, "geometric", {"sigma2": sigma2, "c": matern.c, "nu": matern.nu})

    @classmethod
    def brown_resnick(cls, sites: SiteSet, c: float, kappa: float) -> "LogNormalSpectral":
        if not (c > 0 and 0 < kappa <= 2):
            raise ValueError("Brown-Resnick needs c > 0 and 0 < kappa <= 2")
        return cls(brown_resnick_covariance(sites, c, kappa), sites, "brown_resnick",
                   {"c": c, "kappa": kappa})

    def with_theta(self, values):
        values = np.asarray(values, dtype=float)
        if self.family is None:
            if values.size:
                raise ValueError("this log-normal model has no free parameters")
            return self
        self.theta.replace(values)
        if self.family == "geometric":
            return LogNormalSpectral.geometric(self.sites, float(values[0]),
                                               MaternParams(float(values[1]), float(values[2])))
        return LogNormalSpectral.brown_resnick(self.sites, float(values[0]), float(values[1]))

    def restrict(self, idx):
        idx = list(idx)
        sites = self.sites.subset(idx) if self.sites is not None else None
        if self.family == "brown_resnick":
            return LogNormalSpectral.brown_resnick(sites, self.params["c"], self.params["kappa"])
        return LogNormalSpectral(self.cov[np.ix_(idx, idx)], sites, self.family, self.params)

    def blocks(self, mask: int) -> _GaussianBlocks:
        key = ("blocks", mask)
        if key not in self._cache:
            blk = _GaussianBlocks(self.cov, mask)
            e_in = np.ones(len(blk.inside))
            blk.kappa = float(e_in @ blk.prec @ e_in)
            blk.dvec = np.ones(len(blk.outside)) - blk.reg @ e_in
            self._cache[key] = blk
        return self._cache[key]

    def log_kernel(self, mask, Z, gamma, qmc=DEFAULT_QMC):
        Z, gamma = self._check_batch(mask, Z, gamma)
        blk = self.blocks(mask)
        nb = len(blk.inside)
        s = np.log(gamma)
        a = np.log(Z[:, blk.inside]) + self.nu[blk.inside]
        # (a + s e)' P (a + s e) = a'Pa + 2 s e'Pa + s^2 e'Pe
        aPa = np.einsum("ki,ij,kj->k", a, blk.prec, a)
        ePa = a @ blk.prec.sum(axis=0)
        quad = aPa[:, None] + 2.0 * s * ePa[:, None] + s ** 2 * blk.kappa
        log_f = (-0.5 * nb * LOG_2PI - 0.5 * blk.logdet - 0.5 * quad
                 - np.sum(np.log(Z[:, blk.inside]), axis=1)[:, None] - nb * s)
        if not blk.outside:
            return log_f
        b = np.log(Z[:, blk.outside]) + self.nu[blk.outside] - a @ blk.reg.T
        K, G = Z.shape[0], gamma.shape[1]
        upper = (b[:, None, :] + s[:, :, None] * blk.dvec[None, None, :]).reshape(K * G, -1)
        with np.errstate(divide="ignore"):
            if upper.shape[1] == 1:
                log_p = log_ndtr(upper[:, 0] / math.sqrt(blk.schur[0, 0]))
            else:
                log_p = np.log(mvn_cdf_batch(blk.schur, upper, qmc))
        return log_f + log_p.reshape(K, G)

    def sample(self, count, rng):
        if "chol" not in self._cache:
            self._cache["chol"] = robust_cholesky(self.cov)
        eps = rng.standard_normal((count, self.dim)) @ self._cache["chol"].T
        return np.exp(eps - self.nu)

    def to_dict(self):
        out = {"kind": self.kind, "family": self.family, "params": self.params}
        if self.sites is not None:
            out["sites"] = self.sites.coordinates.tolist()
        if self.family is None:
            out["cov"] = self.cov.tolist()
        return out


# ------------------------------------------------------------------ margins

class Margin:
    """Positive margin scaled to have mean one."""

    name = ""
    lower = 0.0

    def __init__(self, alpha: float):
        if not alpha > self.lower:
            raise ValueError(f"{self.name} margin needs shape > {self.lower}, got {alpha}")
        self.alpha = float(alpha)

    def logpdf(self, u):
        raise NotImplementedError

    def logcdf(self, u):
        raise NotImplementedError

    def from_logcdf(self, lc):
        """Quantile function evaluated at ``exp(lc)``."""
        raise NotImplementedError


class LogNormalMargin(Margin):
    name = "lognormal"

    def _std(self, u):
        with np.errstate(divide="ignore"):
            return (np.log(u) + 0.5 * self.alpha ** 2) / self.alpha

    def logpdf(self, u):
        x = self._std(u)
        with np.errstate(divide="ignore"):
            return -np.log(u) - math.log(self.alpha) - 0.5 * LOG_2PI - 0.5 * x * x

    def logcdf(self, u):
        return log_ndtr(self._std(u))

    def from_logcdf(self, lc):
        return np.exp(-0.5 * self.alpha ** 2 + self.alpha * ndtri_exp(lc))


class WeibullMargin(Margin):
    name = "weibull"

    @property
    def scale(self):
        return math.exp(-gammaln(1.0 + 1.0 / self.alpha))

    def logpdf(self, u):
        with np.errstate(divide="ignore"):
            lr = np.log(u / self.scale)
        return math.log(self.alpha) - math.log(self.scale) + (self.alpha - 1) * lr - np.exp(self.alpha * lr)

    def logcdf(self, u):
        x = (u / self.scale) ** self.alpha
        with np.errstate(divide="ignore"):
            return np.log(-np.expm1(-x))

    def from_logcdf(self, lc):
        # -log(1 - F)
        x = -np.log(-np.expm1(lc))
        return self.scale * x ** (1.0 / self.alpha)


class FrechetMargin(Margin):
    name = "frechet"
    lower = 1.0

    @property
    def scale(self):
        return math.exp(-gammaln(1.0 - 1.0 / self.alpha))

    def logpdf(self, u):
        with np.errstate(divide="ignore"):
            lr = np.log(u / self.scale)
        return math.log(self.alpha) - math.log(self.scale) - (self.alpha + 1) * lr - np.exp(-self.alpha * lr)

    def logcdf(self, u):
        with np.errstate(divide="ignore", over="ignore"):
            return -((u / self.scale) ** (-self.alpha))

    def from_logcdf(self, lc):
        return self.scale * (-lc) ** (-1.0 / self.alpha)


MARGINS = {"lognormal": LogNormalMargin, "weibull": WeibullMargin, "frechet": FrechetMargin}
MARGIN_LOWER = {"lognormal": 0.0, "weibull": 0.0, "frechet": 1.0}


# ------------------------------------------------------------------ copulas

@lru_cache(maxsize=256)
def _gumbel_coeffs(a: float, k: int) -> np.ndarray:
    """Coefficients ``c_j`` with ``psi^(k)(t) = psi(t) t^-k sum_j c_j t^(j a)``."""
    c = np.zeros(k + 1)
    c[0] = 1.0
    for order in range(k):
        new = np.zeros(k + 1)
        for j in range(order + 1):
            if c[j] == 0.0:
                continue
            new[j] += c[j] * (j * a - order)
            new[j + 1] += -a * c[j]
        c = new
    c.setflags(write=False)
    return c


class Copula:
    name = ""
    lower = 0.0

    def __init__(self, theta: float):
        if not theta >= self.lower if self.name == "gumbel" else not theta > self.lower:
            raise ValueError(f"{self.name} copula parameter out of range: {theta}")
        self.theta = float(theta)


class GumbelCopula(Copula):
    """Generator ``psi(t) = exp(-t^(1/theta))``, ``theta >= 1``."""

    name = "gumbel"
    lower = 1.0

    def psi_inv_from_log(self, lv):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (-lv) ** self.theta

    def log_abs_dpsi_at_inv(self, lv):
        """``log|psi'(psi^-1(v))|`` from ``log v``."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return -math.log(self.theta) + (1.0 - self.theta) * np.log(-lv) + lv

    def log_abs_psi_deriv(self, k: int, t):
        t = np.asarray(t, dtype=float)
        a = 1.0 / self.theta
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            x = t ** a
            if k == 0:
                return -x
            c = _gumbel_coeffs(a, k)
            # sum_j c_j x^j scaled by x^k when x >= 1
            big = x >= 1.0
            xs = np.where(big, 1.0 / np.where(x > 0, x, 1.0), x)
            poly = np.zeros_like(x)
            for j in range(1, k + 1):
                power = np.where(big, k - j, j)
                poly = poly + c[j] * xs ** power
            lpoly = np.log(np.abs(poly)) + np.where(big, k * np.log(np.where(big, x, 1.0)), 0.0)
            out = -x - k * np.log(t) + lpoly
        return np.where(np.isnan(out), -np.inf, out)

    def sample_frailty(self, count, rng):
        a = 1.0 / self.theta
        if a >= 1.0:
            return np.ones(count)
        th = rng.uniform(0.0, math.pi, count)
        w = rng.standard_exponential(count)
        return (np.sin(a * th) / np.sin(th) ** (1.0 / a)) * (np.sin((1 - a) * th) / w) ** ((1 - a) / a)

    def log_cdf_from_frailty_ratio(self, t):
        return -(t ** (1.0 / self.theta))

    def kendall_tau(self):
        return 1.0 - 1.0 / self.theta


class ClaytonCopula(Copula):
    """Generator ``psi(t) = (1 + t)^(-1/theta)``, ``theta > 0``."""

    name = "clayton"
    lower = 0.0

    def psi_inv_from_log(self, lv):
        with np.errstate(over="ignore"):
            return np.expm1(-self.theta * lv)

    def log_abs_dpsi_at_inv(self, lv):
        return -math.log(self.theta) + (1.0 + self.theta) * lv

    def log_abs_psi_deriv(self, k: int, t):
        t = np.asarray(t, dtype=float)
        a = 1.0 / self.theta
        lfall = float(sum(math.log(a + i) for i in range(k)))
        with np.errstate(divide="ignore", invalid="ignore"):
            return lfall - (a + k) * np.log1p(t)

    def sample_frailty(self, count, rng):
        return rng.gamma(1.0 / self.theta, 1.0, count)

    def log_cdf_from_frailty_ratio(self, t):
        return -np.log1p(t) / self.theta

    def kendall_tau(self):
        return self.theta / (self.theta + 2.0)


COPULAS = {"gumbel": GumbelCopula, "clayton": ClaytonCopula}


def psi_derivatives(copula: Copula, k: int, t: float) -> float:
    """k-th derivative of the Archimedean generator at ``t``."""
    if k < 0:
        raise ValueError("order must be nonnegative")
    if k > MAX_PSI_ORDER:
        raise ValueError(f"derivative order {k} exceeds the supported maximum {MAX_PSI_ORDER}")
    if t < 0:
        raise ValueError("t must be nonnegative")
    if copula.name == "gumbel" and k >= 1 and t == 0 and copula.theta > 1:
        raise ValueError("Gumbel generator derivatives are singular at t = 0")
    if copula.name == "gumbel" and copula.theta == 1.0:
        return float((-1) ** k * math.exp(-t))
    val = float(np.exp(copula.log_abs_psi_deriv(k, np.array([float(t)]))[0]))
    return (-1) ** k * val


# --------------------------------------------------------------- clustered

@dataclass(frozen=True)
class ArchimedeanClusterSpec:
    cluster: tuple[int, ...]
    copula: str
    theta: float
    margin: str
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "cluster", tuple(sorted(int(j) for j in self.cluster)))
        if self.copula not in COPULAS:
            raise ValueError(f"unknown copula {self.copula!r}")
        if self.margin not in MARGINS:
            raise ValueError(f"unknown margin {self.margin!r}")
        COPULAS[self.copula](self.theta)
        MARGINS[self.margin](self.alpha)

    def build(self):
        return COPULAS[self.copula](self.theta), MARGINS[self.margin](self.alpha)


def _independent_frechet_log_kernel(mar, z_all, z_in, gamma):
    """Kernel of independent Frechet components; ``gamma^-alpha`` factors out of the sum."""
    a, lsc = mar.alpha, math.log(mar.scale)
    lg = np.log(gamma)
    k = z_in.shape[1]
    c_all = np.sum((z_all / mar.scale) ** (-a), axis=1)
    c_in = k * (math.log(a) - lsc) - (a + 1) * np.sum(np.log(z_in) - lsc, axis=1)
    return c_in[:, None] - (a + 1) * k * lg - c_all[:, None] * np.exp(-a * lg)


class ClusteredArchimedean(SpectralModel):
    """Independent Archimedean clusters with common mean-one margins."""

    kind = "clustered"

    def __init__(self, specs: Sequence[ArchimedeanClusterSpec], dim: int | None = None,
                 allow_empty: bool = False):
        specs = tuple(specs)
        members = [j for s in specs for j in s.cluster]
        if dim is None:
            dim = len(members)
        if len(set(members)) != len(members):
            raise ValueError("clusters overlap")
        if sorted(members) != list(range(dim)):
            raise ValueError("clusters must partition the components 0..m-1")
        if not allow_empty and any(not s.cluster for s in specs):
            raise ValueError("empty cluster")
        self.specs = specs
        self.parts = [s.build() for s in specs]
        names, vals, lo, hi = [], [], [], []
        for i, s in enumerate(specs):
            names += [f"theta_{i}", f"alpha_{i}"]
            vals += [s.theta, s.alpha]
            lo += [COPULAS[s.copula].lower, MARGIN_LOWER[s.margin]]
            hi += [np.inf, np.inf]
        super().__init__(dim, ThetaVector(tuple(names), np.array(vals), np.array(lo), np.array(hi)))

    def with_theta(self, values):
        values = np.asarray(values, dtype=float)
        self.theta.replace(values)
        specs = [ArchimedeanClusterSpec(s.cluster, s.copula, float(values[2 * i]), s.margin,
                                        float(values[2 * i + 1]))
                 for i, s in enumerate(self.specs)]
        return ClusteredArchimedean(specs, self.dim, allow_empty=True)

    def restrict(self, idx):
        idx = list(idx)
        pos = {j: i for i, j in enumerate(idx)}
        specs = [ArchimedeanClusterSpec(tuple(pos[j] for j in s.cluster if j in pos),
                                        s.copula, s.theta, s.margin, s.alpha)
                 for s in self.specs]
        return ClusteredArchimedean(specs, len(idx), allow_empty=True)

    def log_kernel(self, mask, Z, gamma, qmc=DEFAULT_QMC):
        Z, gamma = self._check_batch(mask, Z, gamma)
        out = 0.0
        for spec, (cop, mar) in zip(self.specs, self.parts):
            if not spec.cluster:
                continue
            inB = [j for j in spec.cluster if mask >> j & 1]
            if cop.name == "gumbel" and cop.theta == 1.0 and mar.name == "frechet":
                out = out + _independent_frechet_log_kernel(mar, Z[:, list(spec.cluster)], Z[:, inB], gamma)
                continue
            u = gamma[:, :, None] * Z[:, None, list(spec.cluster)]
            lv = mar.logcdf(u)
            t = cop.psi_inv_from_log(lv)
            T = np.sum(t, axis=2)
            k = len(inB)
            term = cop.log_abs_psi_deriv(k, T)
            if k:
                sel = [spec.cluster.index(j) for j in inB]
                with np.errstate(invalid="ignore"):
                    term = term + np.sum(mar.logpdf(u[:, :, sel]) - cop.log_abs_dpsi_at_inv(lv[:, :, sel]), axis=2)
            out = out + np.where(np.isnan(term), -np.inf, term)
        return np.broadcast_to(out, (Z.shape[0], gamma.shape[1]))

    def sample(self, count, rng):
        out = np.empty((count, self.dim))
        for spec, (cop, mar) in zip(self.specs, self.parts):
            if not spec.cluster:
                continue
            v = cop.sample_frailty(count, rng)
            e = rng.standard_exponential((count, len(spec.cluster)))
            lc = cop.log_cdf_from_frailty_ratio(e / v[:, None])
            out[:, list(spec.cluster)] = mar.from_logcdf(lc)
        return out

    def to_dict(self):
        return {"kind": self.kind, "clusters": [
            {"members": list(s.cluster), "copula": s.copula, "theta": s.theta,
             "margin": s.margin, "alpha": s.alpha} for s in self.specs]}


# ---------------------------------------------------------------- builders

def build_gaussian_spectral(sites: SiteSet, p: MaternParams) -> GaussianSpectral:
    return GaussianSpectral.from_sites(sites, p)


def build_lognormal_spectral(cov_eps) -> LogNormalSpectral:
    return LogNormalSpectral(cov_eps)


def build_clustered_archimedean(specs: Sequence[ArchimedeanClusterSpec]) -> ClusteredArchimedean:
    return ClusteredArchimedean(specs)


def logistic_model(m: int, r: float) -> ClusteredArchimedean:
    """Logistic max-stable model ``V*(z) = (sum_j z_j^-r)^(1/r)``, ``r > 1``.

    Realized as i.i.d. Frechet(r) spectral components: a single Gumbel
    cluster pinned at the independence value ``theta = 1``.  Only ``alpha_0``
    is identified; fit it with ``free=["alpha_0"]``.
    """
    return ClusteredArchimedean([ArchimedeanClusterSpec(tuple(range(m)), "gumbel", 1.0, "frechet", r)])


def lambda_kernel(model: SpectralModel, gamma, B, z, qmc: QmcSettings = DEFAULT_QMC):
    """``lambda(gamma; B, z)``; vectorized over ``gamma`` for a single point ``z``."""
    g = np.atleast_1d(np.asarray(gamma, dtype=float))
    if np.any(g <= 0):
        raise ValueError("gamma must be positive")
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("z must be strictly positive")
    vals = np.exp(model.log_kernel(to_mask(B), z[None, :], g[None, :], qmc))[0]
    return vals if np.ndim(gamma) else float(vals[0])


def sample_spectral(model: SpectralModel, count: int, seed=None) -> np.ndarray:
    if count < 1:
        raise ValueError("count must be at least 1")
    return model.sample(int(count), np.random.default_rng(seed))
