"""Samplers for the max-domain of attraction and for approximate max-stable vectors.

Rows are generated in fixed chunks, each with its own child seed, so results
do not depend on how the work is split.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import SpectralModel

ROW_CHUNK = 256
POINT_BATCH = 64


@dataclass(frozen=True)
class SimConfig:
    model: SpectralModel
    n: int
    seed: int = 0
    noise_mean: float | None = None
    truncation: int = 1000
    scaling: str = "pareto"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.truncation < 1:
            raise ValueError("truncation N must be at least 1")
        if self.noise_mean is not None and not self.noise_mean > 0:
            raise ValueError("noise mean must be positive")
        if self.scaling not in ("pareto", "inverse_uniform"):
            raise ValueError("scaling must be 'pareto' or 'inverse_uniform'")


def _chunk_rngs(seed: int, n: int):
    root = np.random.SeedSequence(seed)
    for c, start in enumerate(range(0, n, ROW_CHUNK)):
        child = np.random.SeedSequence(root.entropy, spawn_key=(c,))
        yield start, min(ROW_CHUNK, n - start), np.random.default_rng(child)


def sample_mda(cfg: SimConfig) -> np.ndarray:
    """Rows ``Gamma U (+ E)`` with ``Gamma`` unit Pareto and optional exponential noise.

    ``scaling="inverse_uniform"`` writes ``Gamma = 1 / R`` with ``R`` uniform
    on ``(0, 1)``, which is the same law.
    """
    out = np.empty((cfg.n, cfg.model.dim))
    for start, size, rng in _chunk_rngs(cfg.seed, cfg.n):
        U = cfg.model.sample(size, rng)
        r = rng.uniform(size=size)
        gamma = 1.0 / (1.0 - r) if cfg.scaling == "pareto" else 1.0 / np.where(r > 0, r, np.finfo(float).tiny)
        Y = gamma[:, None] * U
        if cfg.noise_mean is not None:
            Y = Y + rng.exponential(cfg.noise_mean, size=Y.shape)
        out[start:start + size] = Y
    return out


@dataclass
class MaxStableSample:
    data: np.ndarray
    truncation_bound: float


def sample_max_stable(cfg: SimConfig) -> MaxStableSample:
    """``Z = max_{j <= N} zeta_j U_j`` with ``zeta_j = 1 / (E_1 + ... + E_j)``.

    ``truncation_bound`` is the average over rows of a Chebyshev bound on the
    chance that a point beyond ``N`` would raise some component:
    ``sum_l zeta_N E[(U_l^+)^2] / Z_l^2``, with the second moment estimated
    from the draws.
    """
    m = cfg.model.dim
    N = cfg.truncation
    out = np.empty((cfg.n, m))
    bounds = np.empty(cfg.n)
    for start, size, rng in _chunk_rngs(cfg.seed, cfg.n):
        Z = np.full((size, m), -np.inf)
        arrival = np.zeros(size)
        second = np.zeros(m)
        for first in range(0, N, POINT_BATCH):
            J = min(POINT_BATCH, N - first)
            times = arrival[:, None] + np.cumsum(rng.standard_exponential((size, J)), axis=1)
            arrival = times[:, -1]
            U = cfg.model.sample(size * J, rng).reshape(size, J, m)
            second += np.sum(np.maximum(U, 0.0) ** 2, axis=(0, 1))
            np.maximum(Z, np.max(U / times[:, :, None], axis=1), out=Z)
        second /= size * N
        zeta_N = 1.0 / arrival
        with np.errstate(divide="ignore"):
            b = np.sum(zeta_N[:, None] * second[None, :] / np.maximum(Z, 0.0) ** 2, axis=1)
        bounds[start:start + size] = np.minimum(b, 1.0)
        out[start:start + size] = Z
    return MaxStableSample(out, float(bounds.mean()))
