"""Seeded synthetic samplers for the experimental models and contamination."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .geometry import PointCloud, sample_sphere

KINDS = ("gaussian", "gaussian-mixture", "uniform-cube", "fragmented-hypercube", "point-ring", "point-mass")

# allowed parameter keys per kind; anything else is a schema violation
PARAM_KEYS = {
    "gaussian": {"mean", "cov"},
    "gaussian-mixture": {"means", "covs", "weights"},
    "uniform-cube": {"half_width"},
    "fragmented-hypercube": {"k_star", "shifted"},
    "point-ring": {"radius", "mass"},
    "point-mass": {"location"},
}


def covariance_factor(cov: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L @ L.T == cov; handles singular PSD matrices."""
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError("covariance must be square")
    if not np.allclose(cov, cov.T, atol=1e-10):
        raise ValueError("covariance must be symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    evals, evecs = np.linalg.eigh(cov)
    if evals.min() < -1e-10 * max(1.0, abs(evals.max())):
        raise ValueError("covariance is not positive semidefinite")
    root = evecs * np.sqrt(np.clip(evals, 0, None))
    # root @ root.T == cov; QR of root.T gives root = R.T Q.T, so cov = R.T R
    r = np.linalg.qr(root.T, mode="r")
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return (signs[:, None] * r).T


@dataclass
class ModelSpec:
    kind: str
    d: int
    parameters: dict = field(default_factory=dict)
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if int(self.d) < 1:
            raise ValueError("d must be >= 1")
        self.d = int(self.d)
        bad = set(self.parameters) - PARAM_KEYS[self.kind]
        if bad:
            raise ValueError(f"unknown parameters for {self.kind}: {sorted(bad)}")
        self._factors = None
        getattr(self, "_validate_" + self.kind.replace("-", "_"))()

    def _vec(self, key, default):
        v = np.asarray(self.parameters.get(key, default), dtype=float)
        if v.ndim == 0:
            v = np.full(self.d, float(v))
        if v.shape != (self.d,):
            raise ValueError(f"{key} must have length {self.d}")
        return v

    def _validate_gaussian(self):
        self.mean = self._vec("mean", 0.0)
        cov = np.asarray(self.parameters.get("cov", np.eye(self.d)), dtype=float)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(self.d)
        if cov.shape != (self.d, self.d):
            raise ValueError(f"cov must be {self.d}x{self.d}")
        self._factors = [covariance_factor(cov)]

    def _validate_gaussian_mixture(self):
        means = np.asarray(self.parameters["means"], dtype=float)
        covs = np.asarray(self.parameters["covs"], dtype=float)
        k = means.shape[0]
        if means.shape != (k, self.d) or covs.shape != (k, self.d, self.d):
            raise ValueError("mixture means must be k x d and covs k x d x d")
        w = np.asarray(self.parameters.get("weights", np.full(k, 1.0 / k)), dtype=float)
        if w.shape != (k,) or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        self.means, self.mix_weights = means, w / w.sum()
        self._factors = [covariance_factor(c) for c in covs]

    def _validate_uniform_cube(self):
        self.half_width = float(self.parameters.get("half_width", 1.0))
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")

    def _validate_fragmented_hypercube(self):
        self.k_star = int(self.parameters.get("k_star", min(10, self.d)))
        if not 1 <= self.k_star <= self.d:
            raise ValueError(f"k_star must be in [1, d={self.d}]")
        self.shifted = bool(self.parameters.get("shifted", True))

    def _validate_point_ring(self):
        self.radius = float(self.parameters.get("radius", 1.0))
        self.mass = float(self.parameters.get("mass", 1.0))
        if self.radius < 0 or not 0 <= self.mass <= 1:
            raise ValueError("point-ring needs radius >= 0 and mass in [0, 1]")

    def _validate_point_mass(self):
        self.location = self._vec("location", 0.0)

    def to_json(self) -> str:
        params = {k: np.asarray(v).tolist() if isinstance(v, np.ndarray) else v for k, v in self.parameters.items()}
        return json.dumps({"kind": self.kind, "d": self.d, "parameters": params, "seed": self.seed}, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelSpec":
        bad = set(doc) - {"kind", "d", "parameters", "seed"}
        if bad:
            raise ValueError(f"unknown model keys: {sorted(bad)}")
        missing = {"kind", "d"} - set(doc)
        if missing:
            raise ValueError(f"missing model keys: {sorted(missing)}")
        return cls(doc["kind"], doc["d"], dict(doc.get("parameters") or {}), doc.get("seed"))

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))


def _hypercube_shift(x: np.ndarray, k_star: int) -> np.ndarray:
    y = x.copy()
    y[:, :k_star] += np.sign(x[:, :k_star])
    return y


def sample(spec: ModelSpec, n: int, rng: np.random.Generator) -> PointCloud:
    """Draw ``n`` i.i.d. points from ``spec``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    d = spec.d
    if spec.kind == "gaussian":
        z = rng.standard_normal((n, d))
        pts = spec.mean + z @ spec._factors[0].T
    elif spec.kind == "gaussian-mixture":
        comp = rng.choice(len(spec.mix_weights), size=n, p=spec.mix_weights)
        z = rng.standard_normal((n, d))
        pts = np.empty((n, d))
        for c, factor in enumerate(spec._factors):
            sel = comp == c
            pts[sel] = spec.means[c] + z[sel] @ factor.T
    elif spec.kind == "uniform-cube":
        pts = rng.uniform(-spec.half_width, spec.half_width, size=(n, d))
    elif spec.kind == "fragmented-hypercube":
        pts = rng.uniform(-1.0, 1.0, size=(n, d))
        if spec.shifted:
            pts = _hypercube_shift(pts, spec.k_star)
    elif spec.kind == "point-ring":
        on_ring = rng.random(n) < spec.mass
        dirs = sample_sphere(d, rng, size=n)
        pts = np.where(on_ring[:, None], spec.radius * dirs, 0.0)
    else:
        pts = np.tile(spec.location, (n, 1))
    return PointCloud(pts)


def fragmented_hypercube(d: int, k_star: int, n: int, rng: np.random.Generator):
    """Independent samples from Unif([-1,1]^d) and its image under x -> x + sign shift on k_star coords."""
    if d < 1 or not 1 <= k_star <= d:
        raise ValueError(f"need 1 <= k_star <= d, got k_star={k_star}, d={d}")
    x = rng.uniform(-1.0, 1.0, size=(n, d))
    y = _hypercube_shift(rng.uniform(-1.0, 1.0, size=(n, d)), k_star)
    return PointCloud(x), PointCloud(y)


def model_pair(model: int, d: int, rng: Optional[np.random.Generator] = None):
    """The (mu, nu) ModelSpecs of Models 1-3. Model 3 draws its frozen parameters from ``rng``."""
    if model == 1:
        cov = np.eye(d) + 0.5 * np.ones((d, d)) / d
        nu = ModelSpec("gaussian-mixture", d, {
            "means": np.zeros((2, d)), "covs": np.stack([np.eye(d), cov]), "weights": [0.5, 0.5]})
        return ModelSpec("gaussian", d), nu
    if model == 2:
        return ModelSpec("gaussian", d), ModelSpec("gaussian", d, {"mean": 2.0 * np.ones(d)})
    if model == 3:
        if rng is None:
            raise ValueError("model 3 needs an rng to draw its mixture parameters")
        specs = []
        for center in (1.0, 3.0):
            means = center + rng.standard_normal((10, d))
            covs = []
            for _ in range(10):
                k = int(rng.integers(1, d + 1))
                a = rng.standard_normal((k, d))
                covs.append(a.T @ a / k)
            specs.append(ModelSpec("gaussian-mixture", d, {"means": means, "covs": np.stack(covs)}))
        return specs[0], specs[1]
    raise ValueError(f"unknown model {model}")


def product_noise(d: int, levels=(0.0, 6.0)):
    """Sampler with i.i.d. coordinates uniform on ``levels``."""
    levels = np.asarray(levels, dtype=float)

    def draw(n, rng):
        return levels[rng.integers(0, levels.size, size=(n, d))]

    return draw


Sampler = Union[ModelSpec, Callable[[int, np.random.Generator], np.ndarray]]


def _draw(sampler: Sampler, n: int, rng) -> np.ndarray:
    if n == 0:
        return None
    if isinstance(sampler, ModelSpec):
        return sample(sampler, n, rng).points
    return np.asarray(sampler(n, rng), dtype=float)


@dataclass(frozen=True)
class ContaminatedSample:
    points: PointCloud
    clean_mask: np.ndarray

    @property
    def clean(self) -> PointCloud:
        return PointCloud(self.points.points[self.clean_mask])


def n_clean(eps: float, n: int) -> int:
    # guard against (1 - 0.1) * 100 = 90.00000000000001
    return min(n, math.ceil((1.0 - eps) * n - 1e-9))


def contaminate(clean: Sampler, noise: Sampler, eps: float, n: int, rng: np.random.Generator) -> ContaminatedSample:
    """ceil((1-eps) n) clean draws plus noise draws, rows shuffled by a seed-derived permutation."""
    if not 0 <= eps < 0.5:
        raise ValueError(f"eps must be in [0, 1/2), got {eps}")
    k = n_clean(eps, n)
    parts = [a for a in (_draw(clean, k, rng), _draw(noise, n - k, rng)) if a is not None]
    pts = np.vstack(parts)
    mask = np.arange(n) < k
    perm = rng.permutation(n)
    return ContaminatedSample(PointCloud(pts[perm]), mask[perm])
