"""Exact Wasserstein distances between empirical measures on the real line."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

WEIGHT_RENORM_TOL = 1e-9
BRUTE_FORCE_MAX_N = 8


def check_weights(weights, n: int) -> np.ndarray:
    """Validate a weight vector of length ``n``; renormalize tiny drift, reject the rest."""
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.shape[0] != n:
        raise ValueError(f"expected {n} weights, got {w.shape[0]}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and nonnegative")
    total = w.sum()
    if abs(total - 1.0) >= WEIGHT_RENORM_TOL:
        raise ValueError(f"weights sum to {total!r}, not 1")
    return w / total


@dataclass(frozen=True)
class Sample1D:
    """Weighted atoms on the line, stored sorted (stable) with weights permuted alongside."""

    values: np.ndarray
    weights: np.ndarray
    uniform: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if v.size == 0:
            raise ValueError("empty sample")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        w = check_weights(self.weights, v.size)
        order = np.argsort(v, kind="stable")
        object.__setattr__(self, "values", v[order])
        object.__setattr__(self, "weights", w[order])

    @classmethod
    def from_values(cls, values, weights=None) -> "Sample1D":
        v = np.asarray(values, dtype=float).reshape(-1)
        if weights is None:
            return cls(v, np.full(v.size, 1.0 / max(v.size, 1)), uniform=True)
        return cls(v, weights)

    def __len__(self):
        return self.values.size


def _as_sample(x) -> Sample1D:
    return x if isinstance(x, Sample1D) else Sample1D.from_values(x)


def _check_p(p: float) -> None:
    if not p >= 1:
        raise ValueError(f"p must be >= 1, got {p}")


def sorted_gap_pow(xs_sorted: np.ndarray, ys_sorted: np.ndarray, p: float, axis: int = 0):
    """Mean p-th power gap between already-sorted arrays (works batched along ``axis``)."""
    gap = np.abs(xs_sorted - ys_sorted)
    if p == 1:
        return gap.mean(axis=axis)
    if p == 2:
        return (gap * gap).mean(axis=axis)
    return (gap**p).mean(axis=axis)


def wp_pow_equal(xs, ys, p: float) -> float:
    """W_p^p between two uniform samples of equal size, via order statistics."""
    _check_p(p)
    x = np.asarray(xs.values if isinstance(xs, Sample1D) else xs, dtype=float).reshape(-1)
    y = np.asarray(ys.values if isinstance(ys, Sample1D) else ys, dtype=float).reshape(-1)
    for s in (xs, ys):
        if isinstance(s, Sample1D) and not s.uniform:
            raise ValueError("wp_pow_equal requires uniform weights; use wp_pow_weighted")
    if x.size == 0 or y.size == 0:
        raise ValueError("empty sample")
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    return float(sorted_gap_pow(np.sort(x), np.sort(y), p))


def coupling_from_weights(wx_sorted: np.ndarray, wy_sorted: np.ndarray):
    """Quantile coupling given the weights of two samples already in sorted order.

    Returns ``(mass, ix, iy)``: for each segment of the merged cumulative-weight
    grid, its length and the sorted-order indices of the atoms of each sample
    that the two quantile functions take on it. Zero-length segments are dropped.
    """
    cx = np.cumsum(wx_sorted)
    cy = np.cumsum(wy_sorted)
    cx[-1] = cy[-1] = 1.0
    grid = np.union1d(cx, cy)
    grid = grid[(grid > 0) & (grid <= 1.0)]
    lo = np.concatenate(([0.0], grid[:-1]))
    mass = grid - lo
    keep = mass > 0
    mass, lo, grid = mass[keep], lo[keep], grid[keep]
    mid = 0.5 * (lo + grid)
    ix = np.minimum(np.searchsorted(cx, mid, side="left"), cx.size - 1)
    iy = np.minimum(np.searchsorted(cy, mid, side="left"), cy.size - 1)
    return mass, ix, iy


def quantile_coupling(xs: Sample1D, ys: Sample1D):
    """Monotone (quantile) coupling between two weighted samples; see ``coupling_from_weights``."""
    return coupling_from_weights(xs.weights, ys.weights)


def wp_pow_weighted(xs, ys, p: float) -> float:
    """W_p^p between weighted samples: exact integral of |F^{-1} - G^{-1}|^p."""
    _check_p(p)
    xs, ys = _as_sample(xs), _as_sample(ys)
    mass, ix, iy = quantile_coupling(xs, ys)
    gap = np.abs(xs.values[ix] - ys.values[iy])
    return float(np.dot(mass, gap**p))


def w1_cdf(xs, ys) -> float:
    """W_1 as the integral of |F - G| over the merged support."""
    xs, ys = _as_sample(xs), _as_sample(ys)
    support = np.union1d(xs.values, ys.values)
    if support.size < 2:
        return 0.0
    cx = np.cumsum(xs.weights)
    cy = np.cumsum(ys.weights)
    # F(t) on [support[k], support[k+1]) = mass of atoms <= support[k]
    fx = np.concatenate(([0.0], cx))[np.searchsorted(xs.values, support[:-1], side="right")]
    fy = np.concatenate(([0.0], cy))[np.searchsorted(ys.values, support[:-1], side="right")]
    return float(np.dot(np.abs(fx - fy), np.diff(support)))


def brute_force_wp_pow(xs, ys, p: float) -> float:
    """Minimum over all n! matchings of the mean p-th power gap. Testing oracle only."""
    _check_p(p)
    x = np.asarray(xs, dtype=float).reshape(-1)
    y = np.asarray(ys, dtype=float).reshape(-1)
    n = x.size
    if n != y.size:
        raise ValueError(f"length mismatch: {n} vs {y.size}")
    if n == 0:
        raise ValueError("empty sample")
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute force limited to n <= {BRUTE_FORCE_MAX_N} ({math.factorial(n)} permutations)")
    best = math.inf
    for perm in itertools.permutations(range(n)):
        best = min(best, float(np.mean(np.abs(x - y[list(perm)]) ** p)))
    return best
