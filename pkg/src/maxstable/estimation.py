"""Derivative-free maximum (composite) likelihood fitting and asymptotic covariances."""
from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .gaussian import CovarianceError, QmcSettings
from .likelihoods import LikelihoodKind, evaluate
from .mu import MuStrategy, SharedMcSample, default_strategy, fd_steps, log_v_star_batch
from .spectral import SpectralModel, ThetaVector


class CovarianceWarning(UserWarning):
    """Information matrix singular or covariance not positive semidefinite."""


# ------------------------------------------------------------ Nelder-Mead

@dataclass(frozen=True)
class OptimizerOptions:
    max_iters: int = 1000
    init_scale: float = 0.1
    ftol: float = 1e-10
    xtol: float = 1e-7
    restarts: int = 2

    def __post_init__(self):
        if self.ftol <= 0 or self.xtol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1 or self.restarts < 0:
            raise ValueError("max_iters must be positive and restarts nonnegative")


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    iterations: int
    evaluations: int
    converged: bool
    reason: str


def _simplex_search(f, x0, f0, opts: OptimizerOptions, budget: int):
    n = x0.size
    sim = np.empty((n + 1, n))
    sim[0] = x0
    for i in range(n):
        step = opts.init_scale * max(1.0, abs(x0[i]))
        sim[i + 1] = x0
        sim[i + 1, i] += step
    fs = np.empty(n + 1)
    fs[0] = f0
    for i in range(1, n + 1):
        fs[i] = f(sim[i])
    evals = n
    if np.all(fs == fs[0]):
        return sim[0], fs[0], 0, evals, True, "flat initial simplex"
    it = 0
    while True:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        fspread = fs[-1] - fs[0]
        xspread = np.max(np.abs(sim[1:] - sim[0]))
        if (np.isfinite(fspread) and fspread <= opts.ftol * (abs(fs[0]) + opts.ftol)
                and xspread <= opts.xtol * max(1.0, np.max(np.abs(sim[0])))):
            return sim[0], fs[0], it, evals, True, "tolerance reached"
        if it >= budget:
            return sim[0], fs[0], it, evals, False, "iteration limit"
        it += 1
        centroid = sim[:-1].mean(axis=0)
        xr = centroid + (centroid - sim[-1])
        fr = f(xr)
        evals += 1
        if fr < fs[0]:
            xe = centroid + 2.0 * (centroid - sim[-1])
            fe = f(xe)
            evals += 1
            if fe < fr:
                sim[-1], fs[-1] = xe, fe
            else:
                sim[-1], fs[-1] = xr, fr
        elif fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
        else:
            if fr < fs[-1]:
                xc = centroid + 0.5 * (xr - centroid)
            else:
                xc = centroid + 0.5 * (sim[-1] - centroid)
            fc = f(xc)
            evals += 1
            if fc < min(fr, fs[-1]):
                sim[-1], fs[-1] = xc, fc
            else:
                for i in range(1, n + 1):
                    sim[i] = sim[0] + 0.5 * (sim[i] - sim[0])
                    fs[i] = f(sim[i])
                evals += n


def minimize_nelder_mead(f: Callable[[np.ndarray], float], x0, opts: OptimizerOptions = OptimizerOptions()
                         ) -> OptimizeResult:
    """Nelder-Mead minimization on R^n (reflection 1, expansion 2, contraction 1/2).

    Non-finite objective values are treated as +inf.  After convergence the
    search restarts from the best point with a fresh simplex up to
    ``opts.restarts`` times, stopping early when a restart brings no gain.
    """
    x0 = np.asarray(x0, dtype=float).ravel()

    def safe(x):
        try:
            v = float(f(x))
        except (ValueError, ArithmeticError, CovarianceError, np.linalg.LinAlgError):
            return math.inf
        return v if np.isfinite(v) else math.inf

    f0 = safe(x0)
    if not np.isfinite(f0):
        raise ValueError("objective is not finite at the initial point")
    if x0.size == 0:
        return OptimizeResult(x0, f0, 0, 1, True, "no free parameters")
    x, fx, iters, evals, ok, reason = _simplex_search(safe, x0, f0, opts, opts.max_iters)
    evals += 1
    if reason == "flat initial simplex":
        return OptimizeResult(x0, f0, 0, evals, True, reason)
    for _ in range(opts.restarts):
        if not ok or iters >= opts.max_iters:
            break
        x2, f2, it2, ev2, ok2, reason2 = _simplex_search(safe, x, fx, opts, opts.max_iters - iters)
        iters += it2
        evals += ev2
        improved = f2 < fx - opts.ftol * (abs(fx) + opts.ftol)
        if f2 <= fx:
            x, fx, ok, reason = x2, f2, ok2, reason2
        if not improved:
            break
    return OptimizeResult(x, fx, iters, evals, ok, reason)


def nelder_mead(objective: Callable[[np.ndarray], float], theta0: ThetaVector | Sequence[float],
                opts: OptimizerOptions = OptimizerOptions()):
    """Minimize ``objective(theta)`` over the box of ``theta0``.

    Works on the unconstrained scale of :class:`ThetaVector`; returns
    ``(theta_hat, value, result)``.
    """
    if not isinstance(theta0, ThetaVector):
        vals = np.asarray(theta0, dtype=float).ravel()
        theta0 = ThetaVector(tuple(f"x{i}" for i in range(vals.size)), vals,
                             np.full(vals.size, -np.inf), np.full(vals.size, np.inf))
    res = minimize_nelder_mead(lambda x: objective(theta0.from_unconstrained(x)),
                               theta0.to_unconstrained(), opts)
    return theta0.from_unconstrained(res.x), res.fun, res


# ------------------------------------------------------------ covariances

def _finish_cov(cov, what):
    if cov is None:
        return None
    cov = 0.5 * (cov + cov.T)
    if cov.size and np.min(np.linalg.eigvalsh(cov)) < -1e-8 * max(1.0, np.max(np.abs(cov))):
        warnings.warn(f"{what} covariance is not positive semidefinite; omitted", CovarianceWarning, stacklevel=3)
        return None
    return cov


def _inverse(mat, what):
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if mat.size == 0:
        return np.zeros((0, 0))
    try:
        if np.linalg.cond(mat) > 1e12:
            raise np.linalg.LinAlgError("ill-conditioned")
        return np.linalg.inv(mat)
    except np.linalg.LinAlgError:
        warnings.warn(f"{what} information matrix is singular; covariance omitted", CovarianceWarning,
                      stacklevel=3)
        return None


def covariance_full(scores, hessian, n: int, sandwich: bool = True):
    """``I^-1 J I^-1 / n`` (``sandwich``) or ``I^-1 / n``.

    ``hessian`` is the mean per-observation Hessian of the log-likelihood, so
    ``I = -hessian``; ``J`` is the mean outer product of the per-observation
    scores.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    info = -0.5 * (np.atleast_2d(hessian) + np.atleast_2d(hessian).T)
    inv = _inverse(info, "observed")
    if inv is None:
        return None
    if not sandwich:
        return _finish_cov(inv / n, "full-information")
    J = scores.T @ scores / scores.shape[0]
    return _finish_cov(inv @ J @ inv / n, "sandwich")


def covariance_censored(scores, n_exceed: int):
    """``(|N_k| I)^-1`` with ``I`` the mean outer product of per-exceedance scores."""
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    if scores.shape[1] == 0:
        return np.zeros((0, 0))
    info = scores.T @ scores / scores.shape[0]
    inv = _inverse(n_exceed * info, "censored")
    return _finish_cov(inv, "censored")


def covariance_occurrence(scores, k: int):
    """``I^-1 / k`` with ``I`` the mean outer product of per-block scores."""
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    if scores.shape[1] == 0:
        return np.zeros((0, 0))
    info = scores.T @ scores / scores.shape[0]
    inv = _inverse(info, "occurrence")
    return None if inv is None else _finish_cov(inv / k, "occurrence")


# ------------------------------------------------------------------- fits

COV_METHODS = {"full": "FullInfo", "partition": "Sandwich", "pairwise": "Sandwich",
               "censored": "CensoredInfo", "occurrence": "OccurrenceInfo"}


@dataclass
class FitReport:
    theta_hat: ThetaVector
    loglik: float
    converged: bool
    reason: str
    covariance: np.ndarray | None
    cov_method: str
    free: tuple[str, ...]
    n_obs: int
    k_effective: float | None
    iterations: int
    evaluations: int
    wall_time: float
    mean_score_inf: float | None
    likelihood: str
    strategy: str
    notes: list[str] = field(default_factory=list)
    smle: dict | None = None

    def standard_errors(self) -> dict[str, float]:
        if self.covariance is None:
            return {}
        return {n: float(math.sqrt(max(v, 0.0))) for n, v in zip(self.free, np.diag(self.covariance))}

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat.as_dict(),
            "free": list(self.free),
            "loglik": self.loglik,
            "converged": self.converged,
            "reason": self.reason,
            "covariance": None if self.covariance is None else self.covariance.tolist(),
            "cov_method": self.cov_method,
            "standard_errors": self.standard_errors(),
            "n_obs": self.n_obs,
            "k_effective": self.k_effective,
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "wall_time": self.wall_time,
            "mean_score_inf": self.mean_score_inf,
            "likelihood": self.likelihood,
            "strategy": self.strategy,
            "notes": list(self.notes),
            "smle": self.smle,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _free_indices(theta: ThetaVector, free) -> list[int]:
    if free is None:
        return list(range(len(theta)))
    out = []
    for f in free:
        out.append(theta.index(f) if isinstance(f, str) else int(f))
    if len(set(out)) != len(out):
        raise ValueError("duplicate free parameters")
    return sorted(out)


def _n_obs(data) -> int:
    return len(data) if not isinstance(data, np.ndarray) else data.shape[0]


def fit(data, model: SpectralModel, kind: LikelihoodKind | str, theta0=None,
        opts: OptimizerOptions = OptimizerOptions(), strategy: MuStrategy | None = None,
        free: Sequence | None = None, threads: int = 1, covariance: bool = True,
        margins_estimated: bool = False) -> FitReport:
    """Maximize the summed log-likelihood of ``kind`` over the free parameters.

    ``theta0`` defaults to the template's current parameters (all of them,
    including the fixed ones).  ``free`` names or indexes the parameters to
    optimize; the others stay at ``theta0``.
    """
    start = time.perf_counter()
    if isinstance(kind, str):
        kind = LikelihoodKind(kind)
    n = _n_obs(data)
    if n == 0:
        raise ValueError("empty dataset")
    theta = model.theta if theta0 is None else model.theta.replace(theta0)
    model = model.with_theta(theta.values)
    strategy = strategy or default_strategy(model)
    idx = _free_indices(theta, free)
    sub = ThetaVector(tuple(theta.names[i] for i in idx), theta.values[idx],
                      theta.lower[idx], theta.upper[idx])

    def full_theta(values):
        out = theta.values.copy()
        out[idx] = values
        return out

    def objective(values):
        mdl = model.with_theta(full_theta(values))
        return -evaluate(mdl, kind, data, strategy, threads=threads).loglik / n

    theta_hat, fval, res = nelder_mead(objective, sub, opts)
    best = model.with_theta(full_theta(theta_hat))
    report = FitReport(
        theta_hat=best.theta, loglik=-fval * n, converged=res.converged, reason=res.reason,
        covariance=None, cov_method="None", free=sub.names, n_obs=n, k_effective=None,
        iterations=res.iterations, evaluations=res.evaluations, wall_time=0.0, mean_score_inf=None,
        likelihood=kind.name, strategy=strategy.name)
    if margins_estimated:
        report.notes.append("margins-estimated: variance approximate")
    if idx:
        try:
            lv = evaluate(best, kind, data, strategy, grad=True, free=idx, threads=threads)
            scores = lv.scores
            report.mean_score_inf = float(np.max(np.abs(scores.mean(axis=0))))
        except (ValueError, ArithmeticError) as err:
            scores = None
            report.notes.append(f"score evaluation failed: {err}")
        if covariance and res.converged and scores is not None:
            report.covariance, report.cov_method, report.k_effective = _covariance_for(
                best, kind, data, strategy, idx, scores, n, threads)
    else:
        report.covariance = np.zeros((0, 0))
    report.wall_time = time.perf_counter() - start
    return report


def _mean_score_jacobian(model, kind, data, strategy, idx, threads):
    """Finite-difference derivative of the mean score (the mean Hessian)."""
    p = len(idx)
    H = np.zeros((p, p))
    for col, (i, plus, minus, denom) in enumerate(fd_steps(model, idx)):
        sp = evaluate(model.with_theta(plus), kind, data, strategy, grad=True, free=idx,
                      threads=threads).scores.mean(axis=0)
        sm = evaluate(model.with_theta(minus), kind, data, strategy, grad=True, free=idx,
                      threads=threads).scores.mean(axis=0)
        H[:, col] = (sp - sm) / denom
    return 0.5 * (H + H.T)


def _covariance_for(model, kind, data, strategy, idx, scores, n, threads):
    name = kind.name
    if name == "censored":
        vstar = float(np.exp(log_v_star_batch(model, np.ones((1, model.dim)), strategy)[0]))
        return covariance_censored(scores, n), COV_METHODS[name], n / vstar
    if name == "occurrence":
        return covariance_occurrence(scores, n), COV_METHODS[name], float(n)
    H = _mean_score_jacobian(model, kind, data, strategy, idx, threads)
    cov = covariance_full(scores, H, n, sandwich=name != "full")
    return cov, COV_METHODS[name], None


def fit_smle(data, model: SpectralModel, S: int, seed: int = 0, theta0=None,
             opts: OptimizerOptions = OptimizerOptions(), kind: LikelihoodKind | str = "full",
             free: Sequence | None = None, threads: int = 1, covariance: bool = False) -> FitReport:
    """Simulated maximum likelihood: every mu is the shared-sample Monte-Carlo estimate."""
    if S < 100:
        raise ValueError("S must be at least 100")
    sample = SharedMcSample.create(S, seed)
    strategy = MuStrategy("monte_carlo", sample=sample)
    report = fit(data, model, kind, theta0, opts, strategy, free, threads, covariance)
    report.smle = {"S": int(S), "seed": int(seed), "n_over_S": _n_obs(data) / S}
    return report
