"""Max-sliced Wasserstein distances: projected subgradient method, LIPO, and a grid oracle."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .geometry import PointCloud, as_cloud, project_ball, sample_sphere
from .sliced import projected_wp_pow

log = logging.getLogger(__name__)


def _pair(X, Y):
    X, Y = as_cloud(X), as_cloud(Y)
    if X.d != Y.d:
        raise ValueError(f"dimension mismatch: {X.d} vs {Y.d}")
    return X, Y


def projected_wp_pow_single(X: PointCloud, Y: PointCloud, theta: np.ndarray, p: float) -> float:
    return float(projected_wp_pow(X, Y, theta[None, :], p)[0])


def projected_distance(X, Y, theta, p: float) -> float:
    """W_p between the projections of X and Y onto ``theta`` (any vector, not only unit)."""
    X, Y = _pair(X, Y)
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != X.d:
        raise ValueError(f"direction has dimension {theta.size}, clouds have {X.d}")
    return max(projected_wp_pow_single(X, Y, theta, p), 0.0) ** (1.0 / p)


def _require_uniform_equal(X: PointCloud, Y: PointCloud):
    if not (X.is_uniform and Y.is_uniform):
        raise ValueError("the subgradient method needs uniform clouds; see robust.msw1_weighted_ascent")
    if X.n != Y.n:
        raise ValueError(f"the subgradient method needs equal sample sizes, got {X.n} and {Y.n}")


def optimal_pairing(X: PointCloud, Y: PointCloud, theta: np.ndarray) -> np.ndarray:
    """sigma with sigma[i] the index of the Y point matched to X[i] by rank (stable ties)."""
    ox = np.argsort(X.points @ theta, kind="stable")
    oy = np.argsort(Y.points @ theta, kind="stable")
    sigma = np.empty(X.n, dtype=np.intp)
    sigma[ox] = oy
    return sigma


def objective(X, Y, theta, p: float) -> float:
    """The minimized objective: max over pairings of -(1/n) sum |theta^T (X_i - Y_sigma(i))|^p."""
    return -projected_wp_pow_single(as_cloud(X), as_cloud(Y), np.asarray(theta, dtype=float), p)


def subgradient(X, Y, theta, p: float):
    """An element of the subdifferential of the objective at ``theta``, plus the pairing used."""
    X, Y = _pair(X, Y)
    _require_uniform_equal(X, Y)
    theta = np.asarray(theta, dtype=float).reshape(-1)
    sigma = optimal_pairing(X, Y, theta)
    s = X.points @ theta - (Y.points @ theta)[sigma]
    if p == 2:
        g = s
    elif p == 1:
        g = np.sign(s)
    else:
        g = np.abs(s) ** (p - 1) * np.sign(s)
    g_y = np.empty(Y.n)
    g_y[sigma] = g
    xi = -(p / X.n) * (g @ X.points - g_y @ Y.points)
    return xi, sigma


def rho_hat(X: PointCloud, Y: PointCloud, rng: np.random.Generator, max_pairs: int = 10_000) -> float:
    """2 * max ||X_i - Y_j||^2, exact when n_x * n_y <= max_pairs, else over a random subsample of pairs."""
    if X.n * Y.n <= max_pairs:
        diff = X.points[:, None, :] - Y.points[None, :, :]
        return 2.0 * float(np.max(np.einsum("ijk,ijk->ij", diff, diff)))
    i = rng.integers(0, X.n, size=max_pairs)
    j = rng.integers(0, Y.n, size=max_pairs)
    diff = X.points[i] - Y.points[j]
    return 2.0 * float(np.max(np.einsum("ij,ij->i", diff, diff)))


@dataclass
class SubgradConfig:
    T: int = 1000
    step_scale: Optional[float] = None  # None: 1 / rho_hat
    init: Union[str, np.ndarray] = "random"
    seed: int = 0

    def __post_init__(self):
        if int(self.T) < 1:
            raise ValueError("T must be >= 1")
        if self.step_scale is not None and not self.step_scale > 0:
            raise ValueError("step_scale must be positive")
        if isinstance(self.init, str) and self.init not in ("random", "mean-gap"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class OptimizerTrace:
    thetas: np.ndarray
    objective: np.ndarray
    steps: np.ndarray
    t_sampled: int
    t_best: int
    value_at_best: float
    value_at_sampled: float
    p: float
    meta: dict = field(default_factory=dict)

    @property
    def returned_sampled(self) -> np.ndarray:
        return self.thetas[self.t_sampled]

    @property
    def returned_best(self) -> np.ndarray:
        th = self.thetas[self.t_best]
        nrm = np.linalg.norm(th)
        return th / nrm if nrm > 0 else th

    @property
    def best_so_far(self) -> np.ndarray:
        """Running minimum of the objective, i.e. nonincreasing envelope."""
        return np.minimum.accumulate(self.objective)

    def write_csv(self, path) -> None:
        norms = np.linalg.norm(self.thetas, axis=1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "objective", "step", "norm"])
            for t in range(len(self.objective)):
                w.writerow([t, repr(float(self.objective[t])), repr(float(self.steps[t])), repr(float(norms[t]))])


def initial_direction(X: PointCloud, Y: PointCloud, init, rng: np.random.Generator) -> np.ndarray:
    if isinstance(init, str):
        if init == "mean-gap":
            gap = X.mean() - Y.mean()
            nrm = np.linalg.norm(gap)
            if nrm > 0:
                return gap / nrm
        return sample_sphere(X.d, rng)
    theta = np.asarray(init, dtype=float).reshape(-1)
    if theta.size != X.d:
        raise ValueError("initial direction has the wrong dimension")
    return project_ball(theta)


def subgrad_descent(X, Y, p: float, cfg: SubgradConfig) -> OptimizerTrace:
    """Projected subgradient method on the unit ball with steps c / sqrt(t + 1).

    Reports both the iterate sampled with probability proportional to its step
    (the guaranteed output for p = 2) and the best iterate seen, whose value is
    evaluated after renormalizing to the sphere.
    """
    X, Y = _pair(X, Y)
    _require_uniform_equal(X, Y)
    rng = np.random.default_rng(cfg.seed)
    c = cfg.step_scale if cfg.step_scale is not None else 1.0 / max(rho_hat(X, Y, rng), 1e-300)
    T = int(cfg.T)
    theta = initial_direction(X, Y, cfg.init, rng)
    thetas = np.empty((T + 1, X.d))
    obj = np.empty(T + 1)
    steps = c / np.sqrt(np.arange(T + 1) + 1.0)
    for t in range(T + 1):
        thetas[t] = theta
        xi, sigma = subgradient(X, Y, theta, p)
        delta_s = X.points @ theta - (Y.points @ theta)[sigma]
        obj[t] = -float(np.mean(np.abs(delta_s) ** p))
        theta = project_ball(theta - steps[t] * xi)
    norms = np.linalg.norm(thetas, axis=1)
    # w_p(theta / |theta|) = (-obj)^(1/p) / |theta|
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(norms > 0, np.maximum(-obj, 0.0) ** (1.0 / p) / norms, 0.0)
    t_sampled = int(rng.choice(T + 1, p=steps / steps.sum()))
    t_best = int(np.argmax(values))
    meta = {"T": T, "step_scale": c, "init": cfg.init if isinstance(cfg.init, str) else "explicit",
            "seed": cfg.seed, "heuristic": p != 2}
    return OptimizerTrace(thetas, obj, steps, t_sampled, t_best, float(values[t_best]),
                          float(values[t_sampled]), p, meta)


def subgrad_multistart(X, Y, p: float, cfg: SubgradConfig, starts: int) -> OptimizerTrace:
    """Best of ``starts`` independent runs; the first uses ``cfg.init``, the others random inits."""
    if starts < 1:
        raise ValueError("starts must be >= 1")
    best = None
    for k in range(starts):
        run_cfg = SubgradConfig(cfg.T, cfg.step_scale, cfg.init if k == 0 else "random", cfg.seed + 7919 * k)
        tr = subgrad_descent(X, Y, p, run_cfg)
        if best is None or tr.value_at_best > best.value_at_best:
            best = tr
    best.meta["starts"] = starts
    return best


def lipschitz_upper_bound(X, Y, p: float) -> float:
    """(mu ||x||^p)^(1/p) + (nu ||x||^p)^(1/p): a Lipschitz constant of theta -> w_p(theta) on the sphere."""
    X, Y = _pair(X, Y)
    mx = X.weight_vector() @ np.linalg.norm(X.points, axis=1) ** p
    my = Y.weight_vector() @ np.linalg.norm(Y.points, axis=1) ** p
    return float(mx ** (1.0 / p) + my ** (1.0 / p))


def lipo_accepts(values, distances, lipschitz: float) -> bool:
    """LIPO rule: evaluate only if the Lipschitz upper bound can reach the incumbent."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return True
    return bool(np.min(values + lipschitz * np.asarray(distances, dtype=float)) >= np.max(values))


@dataclass
class LipoState:
    thetas: list = field(default_factory=list)
    values: list = field(default_factory=list)
    L_hat: float = 0.0
    budget: int = 0
    proposals_tried: int = 0

    @property
    def best_history(self) -> np.ndarray:
        return np.maximum.accumulate(np.asarray(self.values))


def lipo_maximize(X, Y, p: float, budget: int, rng: np.random.Generator, proposal_cap: Optional[int] = None,
                  lipschitz: Optional[float] = None, batch: int = 256):
    """Maximize theta -> w_p(theta) over the sphere with LIPO.

    Candidates are uniform on the sphere; a candidate is evaluated only when
    its Lipschitz upper bound reaches the current best. Stops after ``budget``
    evaluations or ``proposal_cap`` (default 50 * budget) rejections.
    """
    X, Y = _pair(X, Y)
    if budget < 1:
        raise ValueError("budget must be >= 1")
    cap = 50 * budget if proposal_cap is None else proposal_cap
    L = lipschitz_upper_bound(X, Y, p) if lipschitz is None else float(lipschitz)
    state = LipoState(L_hat=L, budget=budget)
    pts = np.empty((budget, X.d))
    vals = np.empty(budget)
    k = 0
    rejected = 0
    first = sample_sphere(X.d, rng)
    pts[0], vals[0] = first, projected_distance(X, Y, first, p)
    state.proposals_tried = 1
    k = 1
    while k < budget and rejected < cap:
        cand = sample_sphere(X.d, rng, size=batch)
        dists = np.linalg.norm(cand[:, None, :] - pts[None, :k, :], axis=2)
        ok = np.min(vals[:k] + L * dists, axis=1) >= vals[:k].max()
        hits = np.flatnonzero(ok)
        if hits.size == 0:
            rejected += batch
            state.proposals_tried += batch
            continue
        i = int(hits[0])
        rejected += i
        state.proposals_tried += i + 1
        pts[k], vals[k] = cand[i], projected_distance(X, Y, cand[i], p)
        k += 1
    state.thetas = [pts[i].copy() for i in range(k)]
    state.values = vals[:k].tolist()
    best = int(np.argmax(vals[:k]))
    if k < budget:
        log.info("LIPO stopped after %d evaluations (%d rejected proposals)", k, rejected)
    return pts[best].copy(), float(vals[best]), state


def sphere_grid(d: int, resolution: int) -> np.ndarray:
    """Angular grid: 2 points at d=1, ``resolution`` at d=2, ``resolution**2`` at d=3."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        a = 2 * np.pi * np.arange(resolution) / resolution
        return np.column_stack([np.cos(a), np.sin(a)])
    if d == 3:
        polar = np.pi * (np.arange(resolution) + 0.5) / resolution
        azim = 2 * np.pi * np.arange(resolution) / resolution
        pp, aa = np.meshgrid(polar, azim, indexing="ij")
        return np.column_stack([(np.sin(pp) * np.cos(aa)).ravel(), (np.sin(pp) * np.sin(aa)).ravel(),
                                np.cos(pp).ravel()])
    raise ValueError(f"grid oracle supports d <= 3, got d={d}")


def dense_grid_oracle(X, Y, p: float, resolution: int, chunk: int = 2048):
    """Exhaustive maximization of w_p over an angular grid (d <= 3)."""
    X, Y = _pair(X, Y)
    if X.d > 3:
        raise ValueError(f"grid oracle supports d <= 3, got d={X.d}")
    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    grid = sphere_grid(X.d, resolution)
    vals = np.concatenate([projected_wp_pow(X, Y, grid[i:i + chunk], p) for i in range(0, len(grid), chunk)])
    best = int(np.argmax(vals))
    return grid[best].copy(), float(max(vals[best], 0.0) ** (1.0 / p))
