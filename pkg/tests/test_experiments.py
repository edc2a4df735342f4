import csv
import json

import numpy as np
import pytest
from scipy import stats

from sliced_ot.experiments import (
    CurveResult,
    bootstrap_band,
    fit_loglog_slope,
    gaussian_quantile_w2sq,
    git_blob_hash,
    model1_direction_w2sq,
    model1_population_sw2sq,
    model2_direction_w2sq,
    reference_value,
    run_empirical_rate,
    run_mc_complexity,
    run_msw_bench,
    run_robust,
    run_sample_complexity,
    write_outputs,
)
from sliced_ot.geometry import sample_sphere


def test_slope_examples():
    xs = np.array([1.0, 2.0, 4.0, 8.0])
    fit = fit_loglog_slope(xs, 1 / xs)
    assert fit.slope == pytest.approx(-1.0) and fit.r2 == pytest.approx(1.0)
    assert fit_loglog_slope(xs, 3 * xs**0.5).slope == pytest.approx(0.5)
    assert fit_loglog_slope(xs, np.full(4, 2.0)).slope == pytest.approx(0.0, abs=1e-12)


def test_slope_errors():
    with pytest.raises(ValueError):
        fit_loglog_slope([1, 2], [1, 2])
    with pytest.raises(ValueError):
        fit_loglog_slope([1, 2, 3], [1, 0, 2])


def test_bootstrap_band_brackets_and_shrinks():
    rng = np.random.default_rng(0)
    widths = {}
    for runs in (20, 100):
        w = []
        for s in range(30):
            vals = rng.exponential(size=runs)
            lo, hi = bootstrap_band(vals, np.random.default_rng(s))
            assert lo <= vals.mean() <= hi
            w.append(hi - lo)
        widths[runs] = np.mean(w)
    assert widths[100] < widths[20]


def test_gaussian_path_matches_quadrature():
    rng = np.random.default_rng(1)
    x = np.sort(rng.normal(size=9) * 1.4 - 0.3)
    u = (np.arange(1_000_000) + 0.5) / 1_000_000
    q = x[np.minimum((u * 9).astype(int), 8)]
    want = np.mean((q + 0.2 - 0.9 * stats.norm.ppf(u)) ** 2)
    assert gaussian_quantile_w2sq(x, -0.2, 0.9) == pytest.approx(want, rel=1e-5)


def test_gaussian_path_batched_axis():
    x = np.sort(np.random.default_rng(2).normal(size=(50, 3)), axis=0)
    batched = gaussian_quantile_w2sq(x, axis=0)
    assert np.allclose(batched, [gaussian_quantile_w2sq(x[:, k]) for k in range(3)])


def test_gaussian_path_mean_shift():
    # a single atom at c against N(0,1): c^2 + 1
    assert gaussian_quantile_w2sq(np.array([2.0])) == pytest.approx(5.0)


def test_model1_direction_values():
    # theta orthogonal to the all-ones vector sees identical projections
    th = np.array([[1.0, -1.0, 0.0]]) / np.sqrt(2)
    assert model1_direction_w2sq(th)[0] == pytest.approx(0.0, abs=1e-12)
    ones = np.ones((1, 4)) / 2
    assert model1_direction_w2sq(ones)[0] > 0


def test_model1_population_matches_monte_carlo():
    for d in (3, 10):
        th = sample_sphere(d, np.random.default_rng(d), size=200_000)
        v = model1_direction_w2sq(th)
        assert abs(v.mean() - model1_population_sw2sq(d)) <= 4 * v.std() / np.sqrt(v.size)


def test_model2_direction_average():
    th = sample_sphere(7, np.random.default_rng(0), size=200_000)
    v = model2_direction_w2sq(th)
    assert abs(v.mean() - 4.0) <= 4 * v.std() / np.sqrt(v.size)


def test_reference_cached_and_stable():
    a = reference_value(1, 4, 11, 2000, 500)
    assert reference_value(1, 4, 11, 2000, 500) is a
    assert reference_value(2, 4, 11) == (4.0, 0.0)
    b = reference_value(1, 4, 12, 2000, 500)
    assert abs(a[0] - b[0]) < 3 * np.hypot(a[1], b[1])


def test_mc_complexity_deterministic_and_workers():
    a = run_mc_complexity(2, [3], 100, [5, 20, 80], 4, seed=3)
    b = run_mc_complexity(2, [3], 100, [5, 20, 80], 4, seed=3, workers=3)
    assert np.array_equal(a[0].mean_error, b[0].mean_error)
    assert np.array_equal(a[0].band_low, b[0].band_low)
    assert np.all(a[0].band_low <= a[0].mean_error) and np.all(a[0].mean_error <= a[0].band_high)
    assert a[0].filename == "mc-complexity_model2_3.csv"


def test_mc_complexity_population_slope():
    c = run_mc_complexity(2, [5], None, [10, 40, 160, 640], 30, seed=1, path="population")[0]
    assert -0.7 <= c.slope().slope <= -0.3


def test_mc_complexity_conditional_path():
    c = run_mc_complexity(1, [4], 200, [10, 100], 6, seed=2, path="conditional", ref_m=5000)[0]
    assert c.mean_error[1] < c.mean_error[0]


def test_mc_complexity_errors():
    with pytest.raises(ValueError):
        run_mc_complexity(3, [2], 10, [5], 2, seed=0, path="population")
    with pytest.raises(ValueError):
        run_mc_complexity(1, [], 10, [5], 2, seed=0)


def test_sample_complexity_decreases():
    c = run_sample_complexity(2, [3], [50, 400, 3200], 200, 6, seed=2)[0]
    assert c.mean_error[-1] < c.mean_error[0]


def test_empirical_rate_small():
    (c, fit), = run_empirical_rate([3], [100, 400, 1600], 8, seed=0, m=50)
    assert -1.3 <= fit.slope <= -0.7
    assert c.meta["slope"]["slope"] == fit.slope


def test_empirical_rate_dimension_trend():
    res = run_empirical_rate([5, 50], [500], 10, seed=1, m=50)
    assert res[1][0].mean_error[0] <= 2 * res[0][0].mean_error[0]


def test_empirical_rate_same_seed():
    a = run_empirical_rate([2], [200], 3, seed=9, m=20)[0][0]
    b = run_empirical_rate([2], [200], 3, seed=9, m=20)[0][0]
    assert np.array_equal(a.mean_error, b.mean_error)


def test_empirical_rate_two_sample_path():
    a = run_empirical_rate([2], [200], 4, seed=9, m=20, path="two-sample")[0][0]
    g = run_empirical_rate([2], [200], 4, seed=9, m=20)[0][0]
    # the reference sample adds its own error, so the proxy sits above the exact path
    assert a.mean_error[0] > 0.5 * g.mean_error[0]


def test_msw_bench_small():
    curves = run_msw_bench([2], 60, 60, 60, 2, seed=0)
    sg, lp = curves
    assert sg.model == "subgrad" and lp.model == "lipo"
    assert np.all(sg.mean_error >= -1e-12) and np.all(np.diff(sg.mean_error) <= 1e-12)
    assert sg.meta["grid_values"][0] is not None and sg.meta["k_star"] == 2


def test_robust_small():
    res = run_robust([4, 6], 0.1, 2, seed=0, T=10, ot_subsample=500, force=True)
    names = {c.filename for c in res.curves}
    assert "robust_gaussian-mean-gap_dgrid.csv" in names and "robust_ring-restricted-w1_dgrid.csv" in names
    for rec in res.records:
        assert rec["mean_gap"] <= rec["msw1_lower"]
    with pytest.raises(ValueError):
        run_robust([4], 0.1, 1, seed=0)


def test_robust_eps_zero_is_trivial():
    res = run_robust([3], 0.0, 1, seed=0, T=5, panels=("left",), force=True, n=300)
    rec = res.records[0]
    assert rec["removed_mass"] == 0 and rec["mean_gap"] == pytest.approx(0.0, abs=1e-12)


def test_outputs_and_manifest(tmp_path):
    curves = run_mc_complexity(2, [3], 50, [5, 10], 3, seed=1)
    path = write_outputs(curves, tmp_path, "mc-complexity", {"model": 2}, 1)
    doc = json.loads(path.read_text())
    assert doc["files"] == ["mc-complexity_model2_3.csv"]
    assert doc["input_hash"] == git_blob_hash(json.dumps(
        {"config": {"model": 2}, "experiment": "mc-complexity", "seed": 1}, sort_keys=True).encode())
    rows = list(csv.reader(open(tmp_path / "mc-complexity_model2_3.csv")))
    assert rows[0] == ["x", "mean", "band_low", "band_high"] and len(rows) == 3


def test_git_blob_hash():
    # matches `git hash-object` for the empty blob
    assert git_blob_hash(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"


def test_curve_slope_method():
    c = CurveResult("x", "y", 1, np.array([1.0, 10, 100]), np.array([1.0, 0.1, 0.01]), np.zeros(3), np.ones(3), 2)
    assert c.slope().slope == pytest.approx(-1.0)
