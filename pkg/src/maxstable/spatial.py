"""Site geometry and the Whittle-Matern correlation family."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import gammaln, kv


class ConditioningWarning(UserWarning):
    """Coincident sites make the correlation matrix singular."""


@dataclass(frozen=True)
class MaternParams:
    c: float
    nu: float

    def __post_init__(self):
        if not (np.isfinite(self.c) and self.c > 0):
            raise ValueError(f"Matern range c must be positive, got {self.c}")
        if not (np.isfinite(self.nu) and self.nu > 0):
            raise ValueError(f"Matern smoothness nu must be positive, got {self.nu}")


class SiteSet:
    """Planar site coordinates, shape ``(m, 2)``."""

    def __init__(self, coordinates):
        coords = np.atleast_2d(np.asarray(coordinates, dtype=float))
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ValueError("sites must be an (m, 2) array of planar points")
        if coords.shape[0] < 1:
            raise ValueError("at least one site is required")
        if not np.all(np.isfinite(coords)):
            raise ValueError("site coordinates must be finite")
        self.coordinates = coords
        self.coordinates.setflags(write=False)

    def __len__(self):
        return self.coordinates.shape[0]

    def subset(self, idx) -> "SiteSet":
        return SiteSet(self.coordinates[list(idx)])

    def distances(self) -> np.ndarray:
        return cdist(self.coordinates, self.coordinates)

    @classmethod
    def uniform_square(cls, m: int, side: float = 2.0, seed=None) -> "SiteSet":
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(0.0, side, size=(m, 2)))

    @classmethod
    def read_csv(cls, path) -> "SiteSet":
        rows = []
        with open(Path(path), newline="") as fh:
            for row in csv.reader(fh):
                if not row or all(not cell.strip() for cell in row):
                    continue
                try:
                    rows.append([float(row[0]), float(row[1])])
                except ValueError:
                    if rows:
                        raise
                    continue  # header
        return cls(rows)

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y"])
            for x, y in self.coordinates:
                w.writerow([repr(float(x)), repr(float(y))])


def whittle_matern(h, p: MaternParams):
    """Whittle-Matern correlation ``2^(1-nu)/Gamma(nu) (h/c)^nu K_nu(h/c)``.

    Vectorized over ``h``; returns exactly 1 at ``h == 0``.
    """
    h = np.asarray(h, dtype=float)
    if not np.all(np.isfinite(h)) or np.any(h < 0):
        raise ValueError("distances must be finite and nonnegative")
    x = h / p.c
    out = np.ones_like(x)
    pos = x > 0
    if np.any(pos):
        xp = x[pos]
        with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
            logval = (1 - p.nu) * np.log(2.0) - gammaln(p.nu) + p.nu * np.log(xp) + np.log(kv(p.nu, xp))
            vals = np.exp(logval)
        vals = np.where(np.isfinite(vals), vals, 0.0)
        out[pos] = np.minimum(vals, 1.0)
    return out if out.ndim else float(out)


def correlation_matrix(sites: SiteSet, p: MaternParams) -> np.ndarray:
    d = sites.distances()
    r = whittle_matern(d, p)
    r = np.atleast_2d(r)
    np.fill_diagonal(r, 1.0)
    off = ~np.eye(len(sites), dtype=bool)
    if np.any(d[off] == 0.0):
        warnings.warn("coincident sites give unit off-diagonal correlation", ConditioningWarning, stacklevel=2)
    return 0.5 * (r + r.T)
