"""Point clouds, sphere sampling, and projections."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .empirical1d import Sample1D, check_weights


@dataclass(frozen=True)
class PointCloud:
    """An empirical measure: ``n`` points in R^d with optional weights (uniform if None)."""

    points: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("points must be a non-empty n-by-d array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        object.__setattr__(self, "points", pts)
        if self.weights is not None:
            object.__setattr__(self, "weights", check_weights(self.weights, pts.shape[0]))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def is_uniform(self) -> bool:
        return self.weights is None

    def weight_vector(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.n, 1.0 / self.n)
        return self.weights

    def with_weights(self, weights) -> "PointCloud":
        return PointCloud(self.points, weights)

    def mean(self) -> np.ndarray:
        return self.weight_vector() @ self.points


def as_cloud(x) -> PointCloud:
    return x if isinstance(x, PointCloud) else PointCloud(np.asarray(x, dtype=float))


def sample_sphere(d: int, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Uniform direction(s) on the unit sphere in R^d, by normalizing Gaussian draws.

    With ``size`` given, returns a ``(size, d)`` array of directions.
    """
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    shape = (d,) if size is None else (size, d)
    g = rng.standard_normal(shape)
    norms = np.linalg.norm(g, axis=-1, keepdims=True)
    # a zero Gaussian draw has probability zero; redraw rather than divide by it
    while np.any(norms == 0):
        bad = (norms == 0).reshape(-1)
        g.reshape(-1, d)[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(g, axis=-1, keepdims=True)
    return g / norms


def project(cloud, theta) -> Sample1D:
    cloud = as_cloud(cloud)
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != cloud.d:
        raise ValueError(f"direction has dimension {theta.size}, cloud has {cloud.d}")
    return Sample1D.from_values(cloud.points @ theta, cloud.weights)


def project_ball(v) -> np.ndarray:
    """Euclidean projection onto the closed unit ball."""
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    return v / norm if norm > 1 else v.copy()


def sphere_abs_moment(p: float, d: int) -> float:
    """E|theta_1|^p for theta uniform on the unit sphere in R^d."""
    if d == 1:
        return 1.0
    log_c = gammaln(d / 2) + gammaln((p + 1) / 2) - 0.5 * np.log(np.pi) - gammaln((p + d) / 2)
    return float(np.exp(log_c))
