"""Contamination-robust estimation: spectral filtering and resilience diagnostics."""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .distributions import ContaminatedSample
from .empirical1d import coupling_from_weights
from .geometry import PointCloud, as_cloud, project_ball, sample_sphere
from .maxsliced import lipschitz_upper_bound

log = logging.getLogger(__name__)

GUARANTEE_EPS = 1.0 / 12


class NumericalError(RuntimeError):
    """A numerical routine failed to converge or exceeded its size limits."""


class ResidualTooLarge(NumericalError):
    pass


def _top_eigenpair(cov: np.ndarray, tol: float, max_iter: int, v0=None):
    d = cov.shape[0]
    if v0 is None or np.linalg.norm(v0) == 0:
        v0 = cov[:, int(np.argmax(np.diag(cov)))].copy()
    v = v0 / np.linalg.norm(v0) if np.linalg.norm(v0) > 0 else np.eye(d)[0]
    lam = float(v @ cov @ v)
    if lam <= 0:
        return 0.0, v
    for _ in range(max_iter):
        y = cov @ v
        nrm = np.linalg.norm(y)
        if nrm == 0:
            return 0.0, v
        v = y / nrm
        new = float(v @ cov @ v)
        if abs(new - lam) <= tol * abs(new):
            return new, v
        lam = new
    raise NumericalError(f"power iteration did not reach relative tolerance {tol} in {max_iter} iterations")


def weighted_moments(cloud, w, tol: float = 1e-6, max_iter: int = 500, v0=None, fallback: bool = True):
    """Weighted mean and the leading eigenpair of the weighted covariance (power iteration).

    Near-degenerate top eigenvalues (isotropic data) can stall power iteration; with
    ``fallback`` the pair is then taken from a dense symmetric solver instead of raising.
    """
    cloud = as_cloud(cloud)
    w = np.asarray(w.w if isinstance(w, FilterWeights) else w, dtype=float)
    total = w.sum()
    if total <= 0:
        raise ValueError("weights have zero total mass")
    w = w / total
    mean = w @ cloud.points
    z = cloud.points - mean
    cov = (z * w[:, None]).T @ z
    try:
        lam, v = _top_eigenpair(cov, tol, max_iter, v0)
    except NumericalError:
        if not fallback:
            raise
        log.debug("power iteration stalled; using dense eigensolver")
        evals, evecs = np.linalg.eigh(cov)
        lam, v = float(max(evals[-1], 0.0)), evecs[:, -1]
    if not np.isfinite(lam):
        raise NumericalError("non-finite covariance eigenvalue")
    return mean, lam, v


@dataclass
class FilterWeights:
    w: np.ndarray
    removed_mass: float
    iterations: int
    eps: float
    top_eigenvalue: float
    stop_reason: str
    outside_guarantee: bool = False

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc.pop("w")
        doc["n"] = int(self.w.size)
        return doc

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["index", "weight"])
            for i, wi in enumerate(self.w):
                out.writerow([i, repr(float(wi))])


def spectral_filter(cloud, eps: float, sigma2: float, threshold_mult: float = 9.0, max_iter=None) -> FilterWeights:
    """Soft iterative filtering under a bounded-covariance assumption.

    While the top weighted-covariance eigenvalue exceeds ``threshold_mult * sigma2``,
    each point's weight is multiplied by ``1 - tau_i / tau_max`` with ``tau_i`` its
    squared centered projection on the top eigenvector. Total deleted mass is capped
    at ``3 * eps``: the step that would cross the cap is shortened to land on it.
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    if not 0 <= eps < 1.0 / 3:
        raise ValueError("eps must be in [0, 1/3)")
    cloud = as_cloud(cloud)
    n = cloud.n
    outside = not 0 < eps <= GUARANTEE_EPS
    if outside:
        log.info("eps=%g is outside (0, 1/12]; filtering guarantees do not apply", eps)
    cap = 3.0 * eps
    max_iter = 10 * n if max_iter is None else max_iter
    u = np.full(n, 1.0 / n)  # unnormalized; only ever decreases
    removed = 0.0
    thr = threshold_mult * sigma2
    v = None
    reason = "iteration-cap"
    it = 0
    lam = np.nan
    while True:
        mean, lam, v = weighted_moments(cloud, u, v0=v)
        if lam <= thr:
            reason = "certified"
            break
        if it >= max_iter:
            break
        if removed >= cap:
            reason = "mass-cap"
            break
        tau = ((cloud.points - mean) @ v) ** 2
        tau_max = tau[u > 0].max()
        drop = u * tau / tau_max
        step_mass = drop.sum()
        it += 1
        if removed + step_mass > cap:
            frac = (cap - removed) / step_mass
            u = u - frac * drop
            removed = cap
            mean, lam, v = weighted_moments(cloud, u, v0=v)
            reason = "certified" if lam <= thr else "mass-cap"
            break
        u = u - drop
        removed = 1.0 - u.sum()
    u = np.clip(u, 0.0, None)
    if it > 0:
        u = u / u.sum()
    return FilterWeights(u, float(min(removed, cap)), it, eps, float(lam), reason, outside)


def _weighted_coupling_subgradient(X: PointCloud, Y: PointCloud, theta: np.ndarray):
    """W_1 of the projections onto ``theta`` and a supergradient from the quantile coupling."""
    px, py = X.points @ theta, Y.points @ theta
    ox, oy = np.argsort(px, kind="stable"), np.argsort(py, kind="stable")
    if X.is_uniform and Y.is_uniform and X.n == Y.n:
        s = px[ox] - py[oy]
        coef_x = np.empty(X.n)
        coef_y = np.empty(Y.n)
        coef_x[ox] = np.sign(s) / X.n
        coef_y[oy] = coef_x[ox]
        return float(np.mean(np.abs(s))), coef_x @ X.points - coef_y @ Y.points
    mass, ix, iy = coupling_from_weights(X.weight_vector()[ox], Y.weight_vector()[oy])
    s = px[ox[ix]] - py[oy[iy]]
    signed = mass * np.sign(s)
    # xi = sum_k signed_k (X[ox[ix_k]] - Y[oy[iy_k]]), accumulated per row to avoid a k-by-d gather
    coef_x = np.bincount(ox[ix], weights=signed, minlength=X.n)
    coef_y = np.bincount(oy[iy], weights=signed, minlength=Y.n)
    return float(mass @ np.abs(s)), coef_x @ X.points - coef_y @ Y.points


def msw1_weighted_ascent(X, Y, T: int = 200, step_scale=None, rng=None, restarts: int = 2):
    """Lower bound on max-sliced W_1 by projected subgradient ascent over the unit ball.

    Starts from the mean-gap direction, then ``restarts`` random directions. Every
    evaluated direction is feasible, so the returned value never exceeds MSW_1.
    """
    X, Y = as_cloud(X), as_cloud(Y)
    if X.d != Y.d:
        raise ValueError(f"dimension mismatch: {X.d} vs {Y.d}")
    rng = np.random.default_rng(rng)
    if step_scale is None:
        step_scale = 1.0 / max(lipschitz_upper_bound(X, Y, 1), 1e-300)
    gap = X.mean() - Y.mean()
    starts = [gap / np.linalg.norm(gap)] if np.linalg.norm(gap) > 0 else []
    starts += [sample_sphere(X.d, rng) for _ in range(restarts + (0 if starts else 1))]
    best_val, best_theta = -np.inf, starts[0]
    for theta in starts:
        for t in range(T + 1):
            nrm = np.linalg.norm(theta)
            val, xi = _weighted_coupling_subgradient(X, Y, theta)
            if nrm > 0 and val / nrm > best_val:
                best_val, best_theta = val / nrm, theta / nrm
            if t < T:
                theta = project_ball(theta + step_scale / np.sqrt(t + 1.0) * xi)
    return best_theta, float(max(best_val, 0.0))


def _exact_w1(a: np.ndarray, b: np.ndarray, xa: np.ndarray, xb: np.ndarray) -> float:
    for backend in ("TENSORFLOW", "PYTORCH", "JAX", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{backend}", "1")
    import ot

    cost = cdist(xa, xb)  # direct differences: coincident atoms cost exactly 0
    return float(ot.emd2(a, b, cost, numItermax=10_000_000))


def restricted_w1(X, Y, anchor, tol: float = 1e-9, max_atoms: int = 2000) -> float:
    """Exact W_1 over couplings that keep the mass shared at ``anchor`` in place.

    Restricting couplings can only raise the transport cost, so this is an upper
    bound on the unrestricted W_1 in general (the two agree when at most one side
    has anchor mass).
    """
    X, Y = as_cloud(X), as_cloud(Y)
    if X.d != Y.d:
        raise ValueError(f"dimension mismatch: {X.d} vs {Y.d}")
    anchor = np.asarray(anchor, dtype=float).reshape(-1)

    def split(c: PointCloud):
        w = c.weight_vector()
        at = np.linalg.norm(c.points - anchor, axis=1) <= tol
        keep = ~at & (w > 0)
        return float(w[at].sum()), c.points[keep], w[keep]

    a0, xa, wa = split(X)
    b0, xb, wb = split(Y)
    shared = min(a0, b0)
    if a0 - shared > 0:
        xa, wa = np.vstack([xa, anchor]), np.append(wa, a0 - shared)
    if b0 - shared > 0:
        xb, wb = np.vstack([xb, anchor]), np.append(wb, b0 - shared)
    if len(wa) > max_atoms or len(wb) > max_atoms:
        raise ResidualTooLarge(f"residual has {len(wa)} x {len(wb)} atoms (limit {max_atoms}); subsample the clouds")
    total = 1.0 - shared
    if len(wa) == 0 or len(wb) == 0 or total <= 0:
        return 0.0
    return total * _exact_w1(wa / wa.sum(), wb / wb.sum(), xa, xb)


@dataclass
class ResilienceReport:
    mean_gap: float
    msw1_lower: float
    ratio: float

    def to_dict(self) -> dict:
        return asdict(self)


def resilience_report(full: ContaminatedSample, w: FilterWeights, reference=None, T: int = 200,
                      rng=None, restarts: int = 2) -> ResilienceReport:
    """Mean gap and MSW_1 lower bound between the reweighted cloud and a clean reference."""
    ref = full.clean if reference is None else as_cloud(reference)
    if ref.n == 0:
        raise ValueError("empty reference")
    weighted = full.points.with_weights(w.w)
    gap = float(np.linalg.norm(weighted.mean() - ref.mean()))
    _, msw = msw1_weighted_ascent(weighted, ref, T=T, rng=rng, restarts=restarts)
    # W_1 along the mean-gap direction is >= the gap by Jensen; rounding can leave the
    # evaluated value a few ulps below it, so the certified bound is the larger of the two
    msw = max(msw, gap)
    return ResilienceReport(gap, msw, msw / max(gap, 1e-300))


def dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2)
