import json
import subprocess
import sys

import numpy as np
import pytest

from sliced_ot.cli import main


def write(path, arr):
    np.savetxt(path, np.atleast_2d(arr), delimiter=",", fmt="%.17g")
    return str(path)


@pytest.fixture
def masses(tmp_path):
    y = np.zeros(5)
    y[0], y[2] = 1.8, 2.4
    return write(tmp_path / "x.csv", np.zeros((10, 5))), write(tmp_path / "y.csv", np.tile(y, (10, 1)))


@pytest.fixture
def gauss(tmp_path):
    rng = np.random.default_rng(0)
    return (write(tmp_path / "a.csv", rng.normal(size=(60, 3))),
            write(tmp_path / "b.csv", rng.normal(size=(60, 3)) + [1.0, 0, 0]))


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_sw_identical(gauss, capsys):
    code, out, _ = run(["sw", gauss[0], gauss[0], "--seed", "1", "--m", "50"], capsys)
    assert code == 0 and json.loads(out)["value"] == 0.0


def test_sw_point_masses(masses, capsys):
    code, out, _ = run(["sw", *masses, "--seed", "3", "--m", "100000"], capsys)
    doc = json.loads(out)
    assert code == 0 and abs(doc["value_pow"] - 1.8) <= 3 * doc["std_error"]
    assert set(doc) == {"value", "value_pow", "std_error", "meta"}


def test_sw_workers_byte_identical(gauss, capsys, tmp_path):
    outs = []
    for w in ("1", "8"):
        code, out, _ = run(["sw", *gauss, "--seed", "5", "--m", "700", "--workers", w, "--out", str(tmp_path / w)],
                           capsys)
        outs.append(out)
    assert outs[0] == outs[1]
    assert (tmp_path / "1" / "sw_projections.csv").read_bytes() == (tmp_path / "8" / "sw_projections.csv").read_bytes()


def test_workers_env_default(gauss, capsys, monkeypatch):
    monkeypatch.setenv("SLICED_OT_WORKERS", "3")
    code, out, _ = run(["sw", *gauss, "--seed", "5", "--m", "10"], capsys)
    assert code == 0


def test_seed_required(gauss, capsys):
    with pytest.raises(SystemExit) as err:
        main(["sw", *gauss])
    assert err.value.code == 2


def test_parse_failure(tmp_path, gauss, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2,x\n")
    code, _, err = run(["sw", str(bad), gauss[0], "--seed", "1"], capsys)
    assert code == 2 and "cannot parse" in err


def test_dimension_mismatch(tmp_path, gauss, capsys):
    other = write(tmp_path / "c.csv", np.zeros((4, 2)))
    code, _, err = run(["sw", gauss[0], other, "--seed", "1"], capsys)
    assert code == 2 and "dimension mismatch" in err


def test_weighted_column(tmp_path, capsys):
    x = write(tmp_path / "wx.csv", [[0.0, 0.0, 0.25], [1.0, 0.0, 0.75]])
    y = write(tmp_path / "wy.csv", [[0.0, 0.0, 0.25], [1.0, 0.0, 0.75]])
    code, out, _ = run(["sw", x, y, "--seed", "1", "--weighted", "--m", "20"], capsys)
    assert code == 0 and json.loads(out)["value"] == 0.0
    bad = write(tmp_path / "bw.csv", [[0.0, 0.0, 0.5], [1.0, 0.0, 0.9]])
    code, _, _ = run(["sw", bad, y, "--seed", "1", "--weighted"], capsys)
    assert code == 2


def test_msw_methods(masses, capsys, tmp_path):
    code, out, _ = run(["msw", *masses, "--seed", "1", "--T", "300", "--out", str(tmp_path)], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["value"] == pytest.approx(3.0, abs=1e-3)
    assert (tmp_path / "msw_trace.csv").exists()
    code, out, _ = run(["msw", *masses, "--seed", "1", "--method", "lipo", "--budget", "300"], capsys)
    assert code == 0 and json.loads(out)["value"] == pytest.approx(3.0, rel=0.05)
    code, _, err = run(["msw", *masses, "--seed", "1", "--method", "grid"], capsys)
    assert code == 2 and "d <= 3" in err


def test_msw_grid_and_identity(tmp_path, capsys):
    x = write(tmp_path / "p.csv", np.zeros((4, 2)))
    y = write(tmp_path / "q.csv", np.tile([3.0, 4.0], (4, 1)))
    code, out, _ = run(["msw", x, y, "--seed", "0", "--method", "grid"], capsys)
    assert code == 0 and json.loads(out)["value"] == pytest.approx(5.0, rel=1e-6)
    code, out, _ = run(["msw", x, x, "--seed", "0", "--T", "20"], capsys)
    assert json.loads(out)["value"] == 0.0


def test_robust_outlier(tmp_path, capsys):
    pts = np.zeros((100, 3))
    pts[-1, 0] = 100.0
    f = write(tmp_path / "o.csv", pts)
    code, out, _ = run(["robust", f, "--eps", "0.02", "--sigma2", "1", "--seed", "0", "--out", str(tmp_path)], capsys)
    doc = json.loads(out)
    assert code == 0 and np.linalg.norm(doc["weighted_mean"]) <= 0.05
    lines = (tmp_path / "robust_weights.csv").read_text().splitlines()
    assert lines[0] == "index,weight" and float(lines[-1].split(",")[1]) < 1e-8


def test_robust_eps_gate(tmp_path, capsys):
    f = write(tmp_path / "g.csv", np.random.default_rng(0).normal(size=(200, 4)))
    code, _, err = run(["robust", f, "--eps", "0.1", "--sigma2", "1", "--seed", "0"], capsys)
    assert code == 2 and "--force" in err
    code, out, _ = run(["robust", f, "--eps", "0", "--sigma2", "1", "--seed", "0", "--force"], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["filter"]["removed_mass"] == 0 and doc["filter"]["outside_guarantee"]


def test_robust_with_reference(tmp_path, capsys):
    rng = np.random.default_rng(1)
    clean = rng.normal(size=(300, 4))
    dirty = np.vstack([clean[:270], rng.choice([0.0, 6.0], size=(30, 4))])
    f, r = write(tmp_path / "d.csv", dirty), write(tmp_path / "c.csv", clean)
    code, out, _ = run(["robust", f, "--eps", "0.1", "--sigma2", "1", "--seed", "2", "--force", "--reference", r,
                        "--T", "30"], capsys)
    rep = json.loads(out)["resilience"]
    assert code == 0 and rep["mean_gap"] <= rep["msw1_lower"]


def test_robust_sigma_validation(tmp_path, capsys):
    f = write(tmp_path / "g.csv", np.zeros((5, 2)))
    code, _, _ = run(["robust", f, "--eps", "0.05", "--sigma2", "0", "--seed", "0"], capsys)
    assert code == 2


def test_experiment_rates_smoke(tmp_path, capsys):
    out = tmp_path / "rates"
    args = ["experiment", "rates", "--seed", "4", "--out", str(out), "--d", "2", "--n", "100,200,400", "--runs", "3",
            "--m", "10"]
    code, _, _ = run(args, capsys)
    doc = json.loads((out / "rates_manifest.json").read_text())
    assert code == 0 and "slope" in doc["slopes"]["2"]
    first = (out / "rates_gaussian_2.csv").read_bytes()
    code, _, _ = run(args + ["--workers", "4"], capsys)
    assert (out / "rates_gaussian_2.csv").read_bytes() == first


def test_experiment_robust_smoke(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"d_grid": [10, 20], "runs": 1, "T": 5, "ot_subsample": 1000}))
    code, out, _ = run(["experiment", "robust", "--seed", "1", "--config", str(cfg), "--out", str(tmp_path), "--force"],
                       capsys)
    files = json.loads(out)["files"]
    assert code == 0
    assert any(f.startswith("robust_gaussian") for f in files) and any(f.startswith("robust_ring") for f in files)


def test_experiment_bad_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"d_grid": [2], "bogus": 1, "radius": 3}))
    code, _, err = run(["experiment", "rates", "--seed", "1", "--config", str(cfg)], capsys)
    assert code == 2 and "bogus" in err and "radius" in err


def test_experiment_robust_needs_force(tmp_path, capsys):
    code, _, err = run(["experiment", "robust", "--seed", "1", "--d", "10", "--out", str(tmp_path)], capsys)
    assert code == 2 and "--force" in err


def test_numerical_failure_exit_code(tmp_path, capsys, monkeypatch):
    from sliced_ot import cli
    from sliced_ot.robust import NumericalError

    def boom(*a, **k):
        raise NumericalError("power iteration did not converge")

    monkeypatch.setattr(cli, "spectral_filter", boom)
    f = write(tmp_path / "g.csv", np.zeros((5, 2)))
    code, _, err = run(["robust", f, "--eps", "0.05", "--sigma2", "1", "--seed", "0"], capsys)
    assert code == 3 and "numerical" in err


def test_console_module(gauss):
    res = subprocess.run([sys.executable, "-m", "sliced_ot", "sw", *gauss, "--seed", "1", "--m", "5"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "value_pow" in res.stdout
