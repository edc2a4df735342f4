import math

import numpy as np
import pytest

from sliced_ot.distributions import model_pair, sample
from sliced_ot.geometry import PointCloud
from sliced_ot.sliced import estimate_swp, theoretical_rate_terms


def point_masses(d=5, norm=3.0, n=10):
    y = np.zeros(d)
    y[1] = norm * 0.6
    y[3] = norm * 0.8
    return PointCloud(np.zeros((n, d))), PointCloud(np.tile(y, (n, 1)))


def test_same_cloud_is_zero():
    x = np.random.default_rng(0).normal(size=(40, 4))
    for m in (1, 7, 300):
        assert estimate_swp(x, x, 2, m, seed=m).value_pow == 0.0


def test_point_masses_constant():
    X, Y = point_masses()
    r = estimate_swp(X, Y, 2, 100_000, seed=1)
    assert abs(r.value_pow - 1.8) <= 3 * r.std_error


def test_report_invariants():
    X, Y = point_masses()
    r = estimate_swp(X, Y, 3, 777, seed=2)
    assert r.value == pytest.approx(r.value_pow ** (1 / 3), rel=1e-15)
    assert abs(r.value_pow - r.per_projection.mean()) < 1e-12
    assert r.std_error >= 0 and r.per_projection.shape == (777,)
    assert r.meta["m"] == 777 and r.meta["d"] == 5


def test_model2_population_value():
    mu, nu = model_pair(2, 10)
    rng = np.random.default_rng(3)
    X, Y = sample(mu, 5000, rng), sample(nu, 5000, rng)
    r = estimate_swp(X, Y, 2, 2000, seed=4)
    assert r.value_pow == pytest.approx(4.0, abs=0.3)


def test_workers_bit_identical():
    rng = np.random.default_rng(5)
    X, Y = rng.normal(size=(300, 6)), rng.normal(size=(300, 6)) + 1
    a = estimate_swp(X, Y, 2, 1500, seed=9, workers=1)
    b = estimate_swp(X, Y, 2, 1500, seed=9, workers=4)
    assert np.array_equal(a.per_projection, b.per_projection)
    assert a.to_json() == b.to_json()


def test_prefix_stability():
    # the first m projections do not depend on the total count
    rng = np.random.default_rng(6)
    X, Y = rng.normal(size=(50, 3)), rng.normal(size=(50, 3))
    a = estimate_swp(X, Y, 2, 300, seed=1).per_projection
    b = estimate_swp(X, Y, 2, 1000, seed=1).per_projection
    assert np.array_equal(a, b[:300])


def test_scale_equivariance():
    rng = np.random.default_rng(7)
    X, Y = rng.normal(size=(80, 4)), rng.normal(size=(80, 4)) * 2
    for p in (1, 2, 3):
        base = estimate_swp(X, Y, p, 200, seed=3).value_pow
        scaled = estimate_swp(2.5 * X, 2.5 * Y, p, 200, seed=3).value_pow
        assert scaled == pytest.approx(2.5**p * base, rel=1e-12)


def test_rotation_invariance_in_distribution():
    rng = np.random.default_rng(8)
    X, Y = rng.normal(size=(60, 3)), rng.normal(size=(60, 3)) * [1, 2, 0.5] + [1, 0, 0]
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    a = np.array([estimate_swp(X, Y, 2, 50, seed=s).value_pow for s in range(200)])
    b = np.array([estimate_swp(X @ q.T, Y @ q.T, 2, 50, seed=1000 + s).value_pow for s in range(200)])
    se = math.sqrt(a.var(ddof=1) / 200 + b.var(ddof=1) / 200)
    assert abs(a.mean() - b.mean()) <= 3 * se


def test_unbiased_over_seeds():
    rng = np.random.default_rng(9)
    X, Y = rng.normal(size=(100, 5)), rng.normal(size=(100, 5)) * 1.5
    big = estimate_swp(X, Y, 2, 100_000, seed=0)
    small = np.array([estimate_swp(X, Y, 2, 1000, seed=s + 1).value_pow for s in range(100)])
    se = math.sqrt(big.std_error**2 + small.var(ddof=1) / 100)
    assert abs(small.mean() - big.value_pow) <= 3 * se


def test_weighted_route():
    rng = np.random.default_rng(10)
    X = PointCloud(rng.normal(size=(30, 3)))
    Xw = PointCloud(X.points, np.full(30, 1 / 30))
    Y = PointCloud(rng.normal(size=(30, 3)) + 1)
    a = estimate_swp(X, Y, 2, 64, seed=2).value_pow
    b = estimate_swp(Xw, Y, 2, 64, seed=2).value_pow
    assert b == pytest.approx(a, rel=1e-12)
    # unequal sizes also route through the quantile merge
    c = estimate_swp(X, PointCloud(np.vstack([Y.points, Y.points])), 2, 64, seed=2).value_pow
    assert c == pytest.approx(a, rel=1e-12)


def test_errors():
    with pytest.raises(ValueError):
        estimate_swp(np.zeros((3, 2)), np.zeros((3, 3)), 2, 10, seed=0)
    with pytest.raises(ValueError):
        estimate_swp(np.zeros((3, 2)), np.zeros((3, 2)), 2, 0, seed=0)


def test_rate_terms():
    mc, emp = theoretical_rate_terms(2, 1, math.e, 1)
    assert mc == pytest.approx(1.0) and emp == pytest.approx(math.exp(-1))
    assert theoretical_rate_terms(2, 400, 10, 3)[0] == pytest.approx(theoretical_rate_terms(2, 100, 10, 3)[0] / 2)
    assert theoretical_rate_terms(1, 5, 100, 3)[1] == pytest.approx(0.1)
    assert theoretical_rate_terms(3, 5, 100, 3)[1] == pytest.approx(1 / 100)
