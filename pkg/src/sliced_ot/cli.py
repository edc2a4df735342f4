"""Command-line entry point: ``sliced-ot {sw,msw,robust,experiment}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import experiments as ex
from .distributions import ContaminatedSample
from .geometry import PointCloud
from .maxsliced import SubgradConfig, dense_grid_oracle, lipo_maximize, subgrad_descent
from .robust import GUARANTEE_EPS, NumericalError, resilience_report, spectral_filter, weighted_moments
from .sliced import estimate_swp

log = logging.getLogger("sliced_ot")


class UsageError(Exception):
    pass


def dumps(doc) -> str:
    return json.dumps(ex.to_jsonable(doc), sort_keys=True, indent=2)


def read_cloud(path, weighted: bool = False) -> PointCloud:
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    except (OSError, ValueError) as err:
        raise UsageError(f"cannot parse {path}: {err}") from err
    if data.size == 0:
        raise UsageError(f"{path} has no points")
    if weighted:
        if data.shape[1] < 2:
            raise UsageError(f"{path}: --weighted needs at least one coordinate column plus a weight column")
        pts, w = data[:, :-1], data[:, -1]
    else:
        pts, w = data, None
    try:
        return PointCloud(pts, w)
    except ValueError as err:
        raise UsageError(f"{path}: {err}") from err


def _pair(args):
    X, Y = read_cloud(args.x, args.weighted), read_cloud(args.y, args.weighted)
    if X.d != Y.d:
        raise UsageError(f"dimension mismatch: {args.x} has d={X.d}, {args.y} has d={Y.d}")
    return X, Y


def _out_dir(args):
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(doc, args, name):
    text = dumps(doc) + "\n"
    sys.stdout.write(text)
    out = _out_dir(args)
    if out is not None:
        (out / name).write_text(text)


def cmd_sw(args):
    X, Y = _pair(args)
    rep = estimate_swp(X, Y, args.p, args.m, seed=args.seed, workers=args.workers)
    out = _out_dir(args)
    if out is not None:
        rep.write_csv(out / "sw_projections.csv")
    _emit(rep.to_dict(), args, "sw.json")


def cmd_msw(args):
    X, Y = _pair(args)
    doc = {"method": args.method, "p": args.p, "seed": args.seed}
    out = _out_dir(args)
    if args.method == "grid":
        if X.d > 3:
            raise UsageError(f"grid oracle supports d <= 3, got d={X.d}")
        res = args.resolution or (10_000 if X.d <= 2 else 300)
        theta, value = dense_grid_oracle(X, Y, args.p, res)
        doc.update(theta=theta, value=value, resolution=res)
    elif args.method == "lipo":
        theta, value, state = lipo_maximize(X, Y, args.p, args.budget, np.random.default_rng(args.seed))
        doc.update(theta=theta, value=value, budget=args.budget, evaluations=len(state.values),
                   lipschitz=state.L_hat)
    else:
        if not (X.is_uniform and Y.is_uniform and X.n == Y.n):
            raise UsageError("subgrad needs uniform clouds of equal size; use --method lipo or grid")
        tr = subgrad_descent(X, Y, args.p, SubgradConfig(T=args.T, seed=args.seed))
        doc.update(theta=tr.returned_best, value=tr.value_at_best, value_at_sampled=tr.value_at_sampled,
                   theta_sampled=tr.returned_sampled, t_best=tr.t_best, t_sampled=tr.t_sampled, T=args.T,
                   meta=tr.meta)
        if out is not None:
            tr.write_csv(out / "msw_trace.csv")
            doc["trace"] = "msw_trace.csv"
    _emit(doc, args, "msw.json")


def cmd_robust(args):
    if args.eps is None or args.sigma2 is None:
        raise UsageError("robust needs --eps and --sigma2")
    if not 0 < args.eps <= GUARANTEE_EPS and not args.force:
        raise UsageError(f"--eps {args.eps} is outside (0, 1/12]; pass --force to run anyway")
    cloud = read_cloud(args.x, args.weighted)
    if not cloud.is_uniform:
        raise UsageError("robust filtering starts from a uniform cloud; drop the weight column")
    try:
        fw = spectral_filter(cloud, args.eps, args.sigma2, threshold_mult=args.threshold_mult)
    except ValueError as err:
        raise UsageError(str(err)) from err
    mean, lam, _ = weighted_moments(cloud, fw)
    doc = {"filter": fw.to_dict(), "weighted_mean": mean, "seed": args.seed}
    if args.reference:
        ref = read_cloud(args.reference)
        cs = ContaminatedSample(cloud, np.ones(cloud.n, dtype=bool))
        rep = resilience_report(cs, fw, reference=ref, T=args.T, rng=np.random.default_rng(args.seed))
        doc["resilience"] = rep.to_dict()
    out = _out_dir(args)
    if out is not None:
        fw.write_csv(out / "robust_weights.csv")
        doc["weights"] = "robust_weights.csv"
    _emit(doc, args, "robust.json")


def _ints(text):
    return None if text is None else [int(v) for v in str(text).split(",") if v.strip()]


EXPERIMENT_KEYS = {
    "mc-complexity": {"model": 1, "d_grid": [5, 10, 100], "n": 1000, "m_grid": [10, 30, 100, 300, 1000],
                      "runs": 50, "path": "sample"},
    "sample-complexity": {"model": 1, "d_grid": [5, 10, 100], "n_grid": [250, 1000, 4000], "m": 500, "runs": 50},
    "rates": {"d_grid": [5], "n_grid": [250, 1000, 4000, 8000], "runs": 50, "m": 100, "path": "gaussian"},
    "msw-bench": {"d_grid": [2, 3, 10, 20], "n": 500, "T": 1000, "budget": 500, "runs": 5, "k_star": 10},
    "robust": {"d_grid": [10, 20, 50], "eps": 0.1, "runs": 3, "T": 50, "restarts": 0, "sigma2": 1.0,
               "ot_subsample": 15_000, "panels": ["left", "right"]},
}


def experiment_config(args) -> dict:
    cfg = dict(EXPERIMENT_KEYS[args.name])
    if args.config:
        try:
            given = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as err:
            raise UsageError(f"cannot read config {args.config}: {err}") from err
        if not isinstance(given, dict):
            raise UsageError("config must be a JSON object")
        bad = sorted(set(given) - set(cfg))
        if bad:
            raise UsageError(f"unknown config keys for {args.name}: {', '.join(bad)} (allowed: {', '.join(sorted(cfg))})")
        cfg.update(given)
    flag_map = {"model": args.model, "d_grid": _ints(args.d), "runs": args.runs, "T": args.T_exp,
                "budget": args.budget_exp, "eps": args.eps, "sigma2": args.sigma2, "path": args.path}
    if args.n is not None:
        flag_map["n_grid" if "n_grid" in cfg else "n"] = _ints(args.n) if "n_grid" in cfg else int(args.n)
    if args.m is not None:
        flag_map["m_grid" if "m_grid" in cfg else "m"] = _ints(args.m) if "m_grid" in cfg else int(args.m)
    for key, val in flag_map.items():
        if val is not None and key in cfg:
            cfg[key] = val
    if "model" in cfg and cfg["model"] not in (1, 2, 3):
        raise UsageError(f"model must be 1, 2 or 3, got {cfg['model']}")
    return cfg


def cmd_experiment(args):
    cfg = experiment_config(args)
    out = _out_dir(args) or Path(".")
    name, seed, workers = args.name, args.seed, args.workers
    extra = {}
    try:
        if name == "mc-complexity":
            curves = ex.run_mc_complexity(cfg["model"], cfg["d_grid"], cfg["n"], cfg["m_grid"], cfg["runs"], seed,
                                          path=cfg["path"], workers=workers)
        elif name == "sample-complexity":
            curves = ex.run_sample_complexity(cfg["model"], cfg["d_grid"], cfg["n_grid"], cfg["m"], cfg["runs"],
                                              seed, workers=workers)
        elif name == "rates":
            res = ex.run_empirical_rate(cfg["d_grid"], cfg["n_grid"], cfg["runs"], seed, m=cfg["m"],
                                        path=cfg["path"], workers=workers)
            curves = [c for c, _ in res]
            extra["slopes"] = {str(c.d): None if f is None else asdict(f) for c, f in res}
        elif name == "msw-bench":
            curves = ex.run_msw_bench(cfg["d_grid"], cfg["n"], cfg["T"], cfg["budget"], cfg["runs"], seed,
                                      k_star=cfg["k_star"], workers=workers)
            timing = {}
            for c in curves:
                # wall-clock varies between runs; keep it out of the deterministic outputs
                timing[c.filename] = {k: c.meta.pop(k) for k in ("mean_seconds_subgrad", "mean_seconds_lipo")}
            for key, val in timing.items():
                log.info("%s timing: %s", key, val)
            if args.timing:
                (out / "msw-bench_timing.json").write_text(dumps(timing) + "\n")
        else:
            if not (0 < cfg["eps"] <= GUARANTEE_EPS or args.force):
                raise UsageError(f"eps {cfg['eps']} is outside (0, 1/12]; pass --force to run anyway")
            res = ex.run_robust(cfg["d_grid"], cfg["eps"], cfg["runs"], seed, panels=tuple(cfg["panels"]),
                                T=cfg["T"], restarts=cfg["restarts"], sigma2=cfg["sigma2"],
                                ot_subsample=cfg["ot_subsample"], workers=workers, force=True)
            curves = res.curves
            extra["records"] = res.records
    except ValueError as err:
        raise UsageError(str(err)) from err
    path = ex.write_outputs(curves, out, name, cfg, seed, extra)
    sys.stdout.write(dumps({"manifest": str(path), "files": [c.filename for c in curves]}) + "\n")


def _workers_default() -> int:
    try:
        return max(1, int(os.environ.get("SLICED_OT_WORKERS", "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sliced-ot", description="Sliced and max-sliced Wasserstein tools")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, required=True)
    common.add_argument("--workers", type=int, default=_workers_default())
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--weighted", action="store_true", help="last CSV column holds weights")
    common.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sw = sub.add_parser("sw", parents=[common], help="Monte Carlo sliced Wasserstein")
    sw.add_argument("x")
    sw.add_argument("y")
    sw.add_argument("--p", type=float, default=2.0)
    sw.add_argument("--m", type=int, default=1000)
    sw.set_defaults(func=cmd_sw)

    msw = sub.add_parser("msw", parents=[common], help="max-sliced Wasserstein")
    msw.add_argument("x")
    msw.add_argument("y")
    msw.add_argument("--p", type=float, default=2.0)
    msw.add_argument("--method", choices=["subgrad", "lipo", "grid"], default="subgrad")
    msw.add_argument("--T", type=int, default=1000)
    msw.add_argument("--budget", type=int, default=500)
    msw.add_argument("--resolution", type=int, default=None)
    msw.set_defaults(func=cmd_msw)

    rob = sub.add_parser("robust", parents=[common], help="spectral filtering under contamination")
    rob.add_argument("x")
    rob.add_argument("--eps", type=float, default=None)
    rob.add_argument("--sigma2", type=float, default=None)
    rob.add_argument("--threshold-mult", type=float, default=9.0)
    rob.add_argument("--reference", default=None, help="clean cloud for the resilience report")
    rob.add_argument("--T", type=int, default=200)
    rob.add_argument("--force", action="store_true")
    rob.set_defaults(func=cmd_robust)

    exp = sub.add_parser("experiment", parents=[common], help="run an experiment and write curve CSVs")
    exp.add_argument("name", choices=sorted(EXPERIMENT_KEYS))
    exp.add_argument("--config", default=None, help="JSON file overriding the experiment defaults")
    exp.add_argument("--model", type=int, default=None)
    exp.add_argument("--d", default=None, help="comma-separated dimensions")
    exp.add_argument("--n", default=None, help="sample size (or comma-separated grid)")
    exp.add_argument("--m", default=None, help="projections (or comma-separated grid)")
    exp.add_argument("--runs", type=int, default=None)
    exp.add_argument("--T", dest="T_exp", type=int, default=None)
    exp.add_argument("--budget", dest="budget_exp", type=int, default=None)
    exp.add_argument("--eps", type=float, default=None)
    exp.add_argument("--sigma2", type=float, default=None)
    exp.add_argument("--path", default=None)
    exp.add_argument("--force", action="store_true")
    exp.add_argument("--timing", action="store_true", help="also write wall-clock timings (not deterministic)")
    exp.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.workers < 1:
        parser.error("--workers must be >= 1")
    try:
        args.func(args)
    except UsageError as err:
        print(f"sliced-ot: error: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"sliced-ot: numerical failure: {err}", file=sys.stderr)
        return 3
    except ValueError as err:
        print(f"sliced-ot: error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
