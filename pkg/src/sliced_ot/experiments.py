"""Desk-scale experiment harness: complexity curves, optimizer benchmark, robustness panels."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, stats
from scipy.interpolate import CubicSpline

from .distributions import ModelSpec, contaminate, fragmented_hypercube, model_pair, product_noise, sample
from .geometry import PointCloud, sample_sphere
from .maxsliced import SubgradConfig, dense_grid_oracle, lipo_maximize, subgrad_descent
from .robust import FilterWeights, resilience_report, restricted_w1, spectral_filter
from .sliced import chunk_directions, estimate_swp, root_seed, substream

log = logging.getLogger(__name__)

N_BOOT = 20


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    r2: float


def fit_loglog_slope(xs, ys) -> SlopeFit:
    """Least squares line through (log x, log y)."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.size < 3:
        raise ValueError("need at least 3 paired points")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("log-log fit needs positive values")
    lx, ly = np.log(xs), np.log(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 if ss_tot == 0 else 1.0 - np.sum(resid**2) / ss_tot
    return SlopeFit(float(slope), float(intercept), float(min(max(r2, 0.0), 1.0)))


def bootstrap_band(values, rng: np.random.Generator, n_boot: int = N_BOOT, q=(0.1, 0.9)):
    """10%/90% quantiles of ``n_boot`` bootstrap means, widened if needed to contain the mean."""
    values = np.asarray(values, dtype=float)
    idx = rng.integers(0, values.size, size=(n_boot, values.size))
    means = values[idx].mean(axis=1)
    lo, hi = np.quantile(means, q)
    m = values.mean()
    return float(min(lo, m)), float(max(hi, m))


@dataclass
class CurveResult:
    experiment: str
    model: str
    d: object
    x_values: np.ndarray
    mean_error: np.ndarray
    band_low: np.ndarray
    band_high: np.ndarray
    runs: int
    meta: dict = field(default_factory=dict)

    @property
    def filename(self) -> str:
        return f"{self.experiment}_{self.model}_{self.d}.csv"

    def write_csv(self, directory) -> Path:
        path = Path(directory) / self.filename
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["x", "mean", "band_low", "band_high"])
            for row in zip(self.x_values, self.mean_error, self.band_low, self.band_high):
                out.writerow([repr(float(v)) for v in row])
        return path

    def slope(self) -> SlopeFit:
        return fit_loglog_slope(self.x_values, self.mean_error)


def _curve(experiment, model, d, xs, per_point_values, rng, meta=None) -> CurveResult:
    means, lows, highs = [], [], []
    for vals in per_point_values:
        lo, hi = bootstrap_band(vals, rng)
        means.append(float(np.mean(vals)))
        lows.append(lo)
        highs.append(hi)
    runs = min(len(v) for v in per_point_values)
    return CurveResult(experiment, model, d, np.asarray(xs, dtype=float), np.array(means), np.array(lows),
                       np.array(highs), runs, dict(meta or {}))


def _map_runs(fn: Callable[[int], object], runs: int, workers: int = 1) -> list:
    # results are returned in run-index order whatever the pool does
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, range(runs)))
    return [fn(r) for r in range(runs)]


def _seed_int(seed) -> int:
    return int(root_seed(seed).entropy)


# population per-direction paths

def gaussian_quantile_w2sq(sorted_values: np.ndarray, mean: float = 0.0, sd: float = 1.0, axis: int = 0):
    """Exact W_2^2 between the uniform empirical law of sorted values and N(mean, sd^2).

    Uses int_a^b Phi^{-1}(u) du = phi(Phi^{-1}(a)) - phi(Phi^{-1}(b)) on each cell [(i-1)/n, i/n].
    """
    x = np.moveaxis(np.asarray(sorted_values, dtype=float), axis, 0) - mean
    n = x.shape[0]
    dens = stats.norm.pdf(stats.norm.ppf(np.arange(n + 1) / n))
    cell = (dens[:-1] - dens[1:]).reshape((n,) + (1,) * (x.ndim - 1))
    return np.mean(x**2, axis=0) - 2.0 * sd * np.sum(x * cell, axis=0) + sd**2


def _mixture_w2sq(a: float, grid: np.ndarray) -> float:
    # W_2^2(N(0,1), 0.5 N(0,1) + 0.5 N(0,1+a)) = int (x - Phi^{-1}(F(x)))^2 dF(x)
    s = math.sqrt(1.0 + a)
    cdf = 0.5 * stats.norm.cdf(grid) + 0.5 * stats.norm.cdf(grid / s)
    sf = 0.5 * stats.norm.sf(grid) + 0.5 * stats.norm.sf(grid / s)
    tx = np.where(grid < 0, stats.norm.ppf(cdf), stats.norm.isf(sf))
    dens = 0.5 * stats.norm.pdf(grid) + 0.5 * stats.norm.pdf(grid / s) / s
    return float(integrate.trapezoid((grid - tx) ** 2 * dens, grid))


@lru_cache(maxsize=None)
def _model1_table():
    grid = np.linspace(-14.0, 14.0, 40_001)
    a = np.linspace(0.0, 0.5, 129)
    return CubicSpline(a, [_mixture_w2sq(v, grid) for v in a])


def model1_direction_w2sq(thetas: np.ndarray) -> np.ndarray:
    """Population W_2^2 of Model 1's projections, a function of a = (theta . 1)^2 / (2d)."""
    thetas = np.atleast_2d(thetas)
    a = 0.5 * thetas.sum(axis=1) ** 2 / thetas.shape[1]
    return np.maximum(_model1_table()(np.clip(a, 0.0, 0.5)), 0.0)


@lru_cache(maxsize=None)
def model1_population_sw2sq(d: int) -> float:
    """E_theta of the per-direction value; theta . 1/sqrt(d) is distributed like theta_1."""
    g = _model1_table()
    if d == 1:
        return float(g(0.5))
    # density of t = theta_1 on [0, 1] is proportional to (1 - t^2)^((d-3)/2)
    beta = (d - 3) / 2.0
    f = lambda t: float(g(0.5 * t * t)) * (1 + t) ** beta
    one = lambda t: (1 + t) ** beta
    num = integrate.quad(f, 0.0, 1.0, weight="alg", wvar=(0.0, beta), limit=200)[0]
    den = integrate.quad(one, 0.0, 1.0, weight="alg", wvar=(0.0, beta), limit=200)[0]
    return num / den


def model2_direction_w2sq(thetas: np.ndarray) -> np.ndarray:
    thetas = np.atleast_2d(thetas)
    return 4.0 * thetas.sum(axis=1) ** 2


POPULATION_PATHS = {1: (model1_direction_w2sq, model1_population_sw2sq), 2: (model2_direction_w2sq, lambda d: 4.0)}


@lru_cache(maxsize=None)
def reference_value(model: int, d: int, seed: int, n: int = 5000, m: int = 2000, reps: int = 8,
                    model3_seed: int = 0):
    """(value, standard error) of the population SW_2^2 used as ground truth.

    Model 2 has the closed form 4. The others average ``reps`` independent high-budget
    two-sample runs; the standard error comes from their spread, so it covers sampling
    noise as well as direction noise. Cached per (model, d, seed, budget).
    """
    if model == 2:
        return 4.0, 0.0
    mu, nu = _models(model, d, model3_seed)
    root = root_seed(seed)
    vals = []
    for k in range(reps):
        rng = substream(root, 0xEF, d, k)
        X, Y = sample(mu, n, rng), sample(nu, n, rng)
        vals.append(estimate_swp(X, Y, 2, m, seed=int(rng.integers(2**63))).value_pow)
    vals = np.array(vals)
    se = float(vals.std(ddof=1) / math.sqrt(reps)) if reps > 1 else float("nan")
    return float(vals.mean()), se


def _models(model: int, d: int, model3_seed: int = 0):
    if model == 3:
        return model_pair(3, d, np.random.default_rng(np.random.SeedSequence([model3_seed, d])))
    return model_pair(model, d)


# projection and sample complexity

def run_mc_complexity(model: int, d_grid: Sequence[int], n: int, m_grid: Sequence[int], runs: int, seed,
                      path: str = "sample", workers: int = 1, ref_n: int = 5000, ref_m: int = 2000):
    """|SW_2^2 estimate - reference| versus the number of projections m, one curve per d.

    ``path="sample"`` draws n points from each model and slices the empirical pair.
    ``path="population"`` (Models 1, 2) evaluates the exact population distance per
    direction, so only the Monte Carlo error over directions remains.
    ``path="conditional"`` draws the sample pair and measures against the same pair
    sliced with ``ref_m`` projections: the Monte Carlo error given the samples.
    """
    if not d_grid or not m_grid:
        raise ValueError("grids must be nonempty")
    if path not in ("sample", "population", "conditional"):
        raise ValueError(f"unknown path {path!r}")
    if path == "population" and model not in POPULATION_PATHS:
        raise ValueError(f"no population path for model {model}")
    root = root_seed(seed)
    curves = []
    for i, d in enumerate(d_grid):
        if path == "population":
            per_dir, pop = POPULATION_PATHS[model]
            ref, ref_se = pop(d), 0.0
        elif path == "conditional":
            ref, ref_se = None, None
            mu, nu = _models(model, d)
        else:
            ref, ref_se = reference_value(model, d, _seed_int(seed), ref_n, ref_m)
            mu, nu = _models(model, d)
        per_m = []
        for j, m in enumerate(m_grid):
            def one(r, i=i, j=j, m=m, d=d):
                rng = substream(root, 1, i, j, r)
                if path == "population":
                    vals = np.concatenate([per_dir(th) for th in chunk_directions(
                        np.random.SeedSequence(int(rng.integers(2**63))), d, m)])
                    return abs(vals.mean() - ref)
                X, Y = sample(mu, n, rng), sample(nu, n, rng)
                est = estimate_swp(X, Y, 2, m, seed=int(rng.integers(2**63))).value_pow
                if path == "conditional":
                    return abs(est - estimate_swp(X, Y, 2, ref_m, seed=int(rng.integers(2**63))).value_pow)
                return abs(est - ref)
            per_m.append(_map_runs(one, runs, workers))
        meta = {"model": model, "n": n, "path": path, "reference": ref, "reference_se": ref_se,
                "seed": _seed_int(seed)}
        curves.append(_curve("mc-complexity", f"model{model}", d, m_grid, per_m, substream(root, 2, i), meta))
    return curves


def run_sample_complexity(model: int, d_grid: Sequence[int], n_grid: Sequence[int], m: int, runs: int, seed,
                          workers: int = 1, ref_n: int = 5000, ref_m: int = 2000):
    """|SW_2^2 estimate - reference| versus the sample size n at fixed m, one curve per d."""
    if not d_grid or not n_grid:
        raise ValueError("grids must be nonempty")
    root = root_seed(seed)
    curves = []
    for i, d in enumerate(d_grid):
        ref, ref_se = reference_value(model, d, _seed_int(seed), ref_n, ref_m)
        mu, nu = _models(model, d)
        per_n = []
        for j, n in enumerate(n_grid):
            def one(r, i=i, j=j, n=n):
                rng = substream(root, 3, i, j, r)
                X, Y = sample(mu, n, rng), sample(nu, n, rng)
                return abs(estimate_swp(X, Y, 2, m, seed=int(rng.integers(2**63))).value_pow - ref)
            per_n.append(_map_runs(one, runs, workers))
        meta = {"model": model, "m": m, "reference": ref, "reference_se": ref_se, "seed": _seed_int(seed)}
        curves.append(_curve("sample-complexity", f"model{model}", d, n_grid, per_n, substream(root, 4, i), meta))
    return curves


# empirical convergence rate

def empirical_sw2sq_to_gaussian(X: np.ndarray, m: int, rng: np.random.Generator) -> float:
    """MC over m directions of the exact W_2^2 between projected X and N(0, 1)."""
    vals = []
    for th in chunk_directions(np.random.SeedSequence(int(rng.integers(2**63))), X.shape[1], m):
        vals.append(gaussian_quantile_w2sq(np.sort(X @ th.T, axis=0), axis=0))
    return float(np.concatenate(vals).mean())


def run_empirical_rate(d_grid: Sequence[int], n_grid: Sequence[int], runs: int, seed, m: int = 100,
                       path: str = "gaussian", workers: int = 1):
    """E[SW_2^2(empirical_n, N(0, I_d))] versus n, with a log-log slope per d.

    ``path="gaussian"`` compares each projection with the exact N(0, 1) quantile
    function; ``path="two-sample"`` slices against an independent sample of size 20n
    instead, which adds that sample's own (smaller) error to every value.
    """
    if path not in ("gaussian", "two-sample"):
        raise ValueError(f"unknown path {path!r}")
    root = root_seed(seed)
    out = []
    for i, d in enumerate(d_grid):
        per_n = []
        for j, n in enumerate(n_grid):
            def one(r, i=i, j=j, n=n, d=d):
                rng = substream(root, 5, i, j, r)
                X = rng.standard_normal((n, d))
                if path == "gaussian":
                    return empirical_sw2sq_to_gaussian(X, m, rng)
                ref = rng.standard_normal((20 * n, d))
                return estimate_swp(PointCloud(X), PointCloud(ref), 2, m, seed=int(rng.integers(2**63))).value_pow
            per_n.append(_map_runs(one, runs, workers))
        curve = _curve("rates", "gaussian", d, n_grid, per_n, substream(root, 6, i),
                       {"m": m, "path": path, "seed": _seed_int(seed)})
        fit = curve.slope() if len(n_grid) >= 3 else None
        if fit is not None:
            curve.meta["slope"] = asdict(fit)
        out.append((curve, fit))
    return out


# max-sliced optimizer benchmark

def _checkpoints(T: int) -> np.ndarray:
    pts = np.unique(np.round(np.logspace(0, math.log10(max(T, 1)), 20)).astype(int))
    return pts[pts <= T]


def run_msw_bench(d_grid: Sequence[int], n: int, T: int, budget: int, runs: int, seed, k_star: int = 10,
                  grid_resolution: Optional[int] = None, workers: int = 1):
    """Relative error of the best-so-far MSW_2 value vs iteration (subgradient) and evaluation count (LIPO).

    The best-known value per instance is the maximum of both optimizers and, at d <= 3, the
    grid oracle. Wall-clock covers the optimizer loops only.
    """
    root = root_seed(seed)
    curves = []
    for i, d in enumerate(d_grid):
        k = min(k_star, d)
        if d <= 3 and grid_resolution is None:
            res = 10_000 if d == 2 else 300
        else:
            res = grid_resolution

        def one(r, i=i, d=d, k=k, res=res):
            rng = substream(root, 7, i, r)
            X, Y = fragmented_hypercube(d, k, n, rng)
            t0 = time.perf_counter()
            tr = subgrad_descent(X, Y, 2, SubgradConfig(T=T, seed=int(rng.integers(2**63))))
            t_sg = time.perf_counter() - t0
            t0 = time.perf_counter()
            _, lv, state = lipo_maximize(X, Y, 2, budget, substream(root, 8, i, r))
            t_lipo = time.perf_counter() - t0
            sg_curve = np.sqrt(np.maximum(-tr.best_so_far, 0.0))
            best = max(tr.value_at_best, lv)
            grid = None
            if d <= 3 and res:
                grid = dense_grid_oracle(X, Y, 2, res)[1]
                best = max(best, grid)
            return {"sg": sg_curve, "lipo": state.best_history, "best": best, "grid": grid, "t_sg": t_sg,
                    "t_lipo": t_lipo, "sg_value": tr.value_at_best, "lipo_value": lv}

        recs = _map_runs(one, runs, workers)
        meta = {"n": n, "k_star": k, "T": T, "budget": budget, "seed": _seed_int(seed),
                "mean_seconds_subgrad": float(np.mean([r["t_sg"] for r in recs])),
                "mean_seconds_lipo": float(np.mean([r["t_lipo"] for r in recs])),
                "subgrad_values": [float(r["sg_value"]) for r in recs],
                "lipo_values": [float(r["lipo_value"]) for r in recs],
                "grid_values": [None if r["grid"] is None else float(r["grid"]) for r in recs]}
        ts = _checkpoints(T)
        sg_err = [[(r["best"] - r["sg"][t]) / r["best"] if r["best"] > 0 else 0.0 for r in recs] for t in ts]
        curves.append(_curve("msw-bench", "subgrad", d, ts + 1, sg_err, substream(root, 9, i), meta))
        ks = _checkpoints(budget)
        lp_err = [[(r["best"] - r["lipo"][min(t, len(r["lipo"])) - 1]) / r["best"] if r["best"] > 0 else 0.0
                   for r in recs] for t in ks]
        curves.append(_curve("msw-bench", "lipo", d, ks, lp_err, substream(root, 10, i), meta))
    return curves


# robust estimation

def point_ring(d: int, eps: float) -> ModelSpec:
    return ModelSpec("point-ring", d, {"radius": math.sqrt(d / eps), "mass": eps})


def joint_subsample(points: np.ndarray, weights: np.ndarray, clean_mask: np.ndarray, size: int,
                    rng: np.random.Generator):
    """The same random rows from the weighted cloud and its clean part (for size-limited exact OT)."""
    n = points.shape[0]
    rows = np.sort(rng.choice(n, size=min(size, n), replace=False))
    w = weights[rows]
    sub = PointCloud(points[rows], w / w.sum())
    clean = PointCloud(points[rows][clean_mask[rows]])
    return sub, clean


@dataclass
class RobustResult:
    curves: list
    records: list


def run_robust(d_grid: Sequence[int], eps: float, runs: int, seed, panels=("left", "right"), T: int = 50,
               restarts: int = 0, sigma2: float = 1.0, ot_subsample: int = 15_000, workers: int = 1,
               force: bool = False, n: Optional[int] = None) -> RobustResult:
    """Left: Gaussian + product noise, filtered mean gap vs MSW_1. Right: point ring, restricted W_1 vs MSW_1.

    Every run takes n = 10 d / eps^2 samples (unless ``n`` is given) and compares the filtered (reweighted) cloud with its
    clean part. The restricted W_1 uses a joint row subsample of ``ot_subsample`` points.
    """
    if not (0 < eps <= 1.0 / 12 or force):
        raise ValueError("eps must be in (0, 1/12] (pass force=True to run outside the guarantee regime)")
    root = root_seed(seed)
    curves, records = [], []
    for panel in panels:
        if panel not in ("left", "right"):
            raise ValueError(f"unknown panel {panel!r}")
        per_d = {}
        for i, d in enumerate(d_grid):
            n_d = n if n is not None else round(10 * d / eps**2)

            def one(r, i=i, d=d, n=n_d, panel=panel):
                rng = substream(root, 11 if panel == "left" else 12, i, r)
                if panel == "left":
                    cs = contaminate(ModelSpec("gaussian", d), product_noise(d), eps, n, rng)
                else:
                    ring = point_ring(d, eps)
                    cs = contaminate(ring, ring, eps, n, rng)
                fw = spectral_filter(cs.points, eps, sigma2)
                rep = resilience_report(cs, fw, T=T, rng=substream(root, 13, i, r), restarts=restarts)
                rec = {"panel": panel, "d": d, "run": r, "n": n, "mean_gap": rep.mean_gap,
                       "msw1_lower": rep.msw1_lower, "ratio": rep.ratio, "removed_mass": fw.removed_mass,
                       "filter_iterations": fw.iterations, "stop_reason": fw.stop_reason}
                if panel == "left":
                    uni = resilience_report(cs, FilterWeights(np.full(n, 1.0 / n), 0.0, 0, eps, np.nan, "none"),
                                            T=T, rng=substream(root, 14, i, r), restarts=restarts)
                    rec.update(unfiltered_mean_gap=uni.mean_gap, unfiltered_msw1_lower=uni.msw1_lower)
                else:
                    sub, clean = joint_subsample(cs.points.points, fw.w, cs.clean_mask, ot_subsample,
                                                 substream(root, 15, i, r))
                    rec["restricted_w1"] = restricted_w1(sub, clean, np.zeros(d))
                    rec["w1_over_msw1"] = rec["restricted_w1"] / max(rec["msw1_lower"], 1e-300)
                return rec

            per_d[d] = _map_runs(one, runs, workers)
            records.extend(per_d[d])
        keys = (("mean_gap", "msw1_lower", "unfiltered_mean_gap", "unfiltered_msw1_lower") if panel == "left"
                else ("restricted_w1", "msw1_lower", "w1_over_msw1"))
        name = "gaussian" if panel == "left" else "ring"
        for k, key in enumerate(keys):
            vals = [[rec[key] for rec in per_d[d]] for d in d_grid]
            curve = _curve("robust", f"{name}-{key.replace('_', '-')}", "dgrid", d_grid, vals,
                           substream(root, 16, k, panel == "left"),
                           {"eps": eps, "panel": panel, "seed": _seed_int(seed), "T": T, "restarts": restarts})
            if len(d_grid) >= 3 and all(v > 0 for v in curve.mean_error):
                curve.meta["slope"] = asdict(curve.slope())
            curves.append(curve)
    return RobustResult(curves, records)


# outputs

def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_outputs(curves, directory, experiment: str, config: dict, seed, extra: Optional[dict] = None) -> Path:
    """One CSV per curve plus ``{experiment}_manifest.json`` with config, seed, and input hash."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = [c.write_csv(directory).name for c in curves]
    inputs = json.dumps(to_jsonable({"experiment": experiment, "config": config, "seed": seed}), sort_keys=True)
    manifest = {"experiment": experiment, "config": config, "seed": seed, "input_hash": git_blob_hash(inputs.encode()),
                "files": files, "curves": {c.filename: c.meta for c in curves}}
    if extra:
        manifest.update(extra)
    path = directory / f"{experiment}_manifest.json"
    path.write_text(json.dumps(to_jsonable(manifest), sort_keys=True, indent=2) + "\n")
    return path
