"""Monte Carlo estimation of average-sliced Wasserstein distances."""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .empirical1d import Sample1D, sorted_gap_pow, wp_pow_weighted
from .geometry import PointCloud, as_cloud, sample_sphere

CHUNK = 256


def root_seed(seed) -> np.random.SeedSequence:
    """Normalize an int / SeedSequence / Generator into a SeedSequence for substreams."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, np.random.Generator):
        return np.random.SeedSequence(int(seed.integers(2**63)))
    if seed is None:
        raise ValueError("a seed is required")
    return np.random.SeedSequence(int(seed))


def substream(root: np.random.SeedSequence, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(root.entropy, spawn_key=tuple(root.spawn_key) + key))


def chunk_directions(root: np.random.SeedSequence, d: int, m: int, chunk: int = CHUNK):
    """Directions for projection indices [j*chunk, (j+1)*chunk), one substream per chunk."""
    n_chunks = -(-m // chunk)
    for j in range(n_chunks):
        size = min(chunk, m - j * chunk)
        yield sample_sphere(d, substream(root, j), size=size)


def projected_wp_pow(X: PointCloud, Y: PointCloud, thetas: np.ndarray, p: float) -> np.ndarray:
    """W_p^p between projections of X and Y for each row of ``thetas``."""
    thetas = np.atleast_2d(thetas)
    if X.is_uniform and Y.is_uniform and X.n == Y.n:
        px = np.sort(X.points @ thetas.T, axis=0)
        py = np.sort(Y.points @ thetas.T, axis=0)
        return np.asarray(sorted_gap_pow(px, py, p, axis=0), dtype=float)
    wx, wy = X.weights, Y.weights
    out = np.empty(thetas.shape[0])
    for k, th in enumerate(thetas):
        out[k] = wp_pow_weighted(Sample1D.from_values(X.points @ th, wx), Sample1D.from_values(Y.points @ th, wy), p)
    return out


@dataclass
class EstimateReport:
    value_pow: float
    value: float
    per_projection: np.ndarray
    std_error: float
    meta: dict = field(default_factory=dict)

    def to_dict(self, per_projection: bool = False) -> dict:
        doc = {"value_pow": self.value_pow, "value": self.value, "std_error": self.std_error, "meta": self.meta}
        if per_projection:
            doc["per_projection"] = self.per_projection.tolist()
        return doc

    def to_json(self, per_projection: bool = False) -> str:
        return json.dumps(self.to_dict(per_projection), sort_keys=True, indent=2)

    def write_csv(self, path) -> None:
        np.savetxt(path, self.per_projection, fmt="%.17g")


def estimate_swp(X, Y, p: float, m: int, seed, workers: int = 1) -> EstimateReport:
    """Monte Carlo estimate of SW_p^p between two empirical measures.

    Directions are drawn in fixed-size chunks from seed-derived substreams and
    reduced in index order, so the result does not depend on ``workers``.
    ``std_error`` is the i.i.d. standard error over projections; it covers the
    Monte Carlo error only, not the gap between empirical and population measures.
    """
    X, Y = as_cloud(X), as_cloud(Y)
    if X.d != Y.d:
        raise ValueError(f"dimension mismatch: {X.d} vs {Y.d}")
    if m < 1:
        raise ValueError("m must be >= 1")
    if not p >= 1:
        raise ValueError("p must be >= 1")
    root = root_seed(seed)

    def work(thetas):
        return projected_wp_pow(X, Y, thetas, p)

    chunks = chunk_directions(root, X.d, m)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    vals = np.concatenate(parts)
    value_pow = float(vals.mean())
    std_error = float(vals.std(ddof=1) / math.sqrt(m)) if m > 1 else 0.0
    meta = {"n": X.n, "n_y": Y.n, "m": m, "d": X.d, "p": p, "seed": int(root.entropy)}
    return EstimateReport(value_pow, value_pow ** (1.0 / p), vals, std_error, meta)


def theoretical_rate_terms(p: float, m: float, n: float, d: float):
    """Rate factors (1/sqrt(m d), (log n)^[p=2] / n^{min(p,2)/2}), constants omitted.

    For slope diagnostics only; these are not error bounds.
    """
    if min(p, m, n, d) <= 0:
        raise ValueError("all arguments must be positive")
    mc_term = 1.0 / math.sqrt(m * d)
    emp_term = (math.log(n) if p == 2 else 1.0) / n ** (min(p, 2.0) / 2.0)
    return mc_term, emp_term
