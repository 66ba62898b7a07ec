import csv
import json
import math

import numpy as np
import pytest

from qcurv.cli import EXIT_FAIL, EXIT_OK, EXIT_REJECT, main

TORUS = {"kind": "torus", "resolution": 8}
SPHERE = {"kind": "sphere", "resolution": 12}


def run(tmp_path, command, cfg, seed=0, name="out"):
    cpath = tmp_path / f"{name}.json"
    cpath.write_text(json.dumps(cfg))
    out = tmp_path / name
    code = main([command, "--config", str(cpath), "--out", str(out), "--seed", str(seed)])
    return code, out


def load(path):
    return json.loads(path.read_text())


def value(r):
    assert set(r) == {"value", "units", "anchor"}
    return r["value"]


# spectrum

def test_spectrum_sphere(tmp_path):
    code, out = run(tmp_path, "spectrum", {"manifold": SPHERE})
    assert code == EXIT_OK
    s = load(out / "summary.json")
    assert value(s["kbar"]) == 0
    assert value(s["k_P"]) == pytest.approx(8 * math.pi**2, rel=1e-6)
    assert s["band"]["status"] == "boundary-forbidden"
    rows = list(csv.DictReader((out / "spectrum.csv").open()))
    assert float(rows[0]["eigenvalue"]) == pytest.approx(0.0, abs=1e-9)
    # first nonzero level: degree 1, eigenvalue 8, multiplicity 5
    first = [r for r in rows if abs(float(r["eigenvalue"])) > 1e-9][0]
    assert float(first["eigenvalue"]) == pytest.approx(8.0, rel=1e-9)
    assert int(first["multiplicity"]) == 5


def test_spectrum_flat_torus(tmp_path):
    code, out = run(tmp_path, "spectrum", {"manifold": TORUS, "curvature": {"k_P": 0.0}})
    assert code == EXIT_OK
    s = load(out / "summary.json")
    assert value(s["kbar"]) == 0
    assert value(s["k_P"]) == 0.0


def test_spectrum_synthetic(tmp_path):
    cfg = {"manifold": TORUS,
           "operator": {"mode": "synthetic", "overrides": [[[1, 0, 0, 0], -2.0], [[0, 1, 0, 0], -3.0]]},
           "curvature": {"k_P_over_pi2": 12}}
    code, out = run(tmp_path, "spectrum", cfg)
    assert code == EXIT_OK
    s = load(out / "summary.json")
    assert value(s["kbar"]) == 4
    assert value(s["band"]["k"]) == 1
    assert s["band"]["status"] == "interior"
    assert [value(e) for e in s["eigenvalues"][:4]] == [-3.0, -3.0, -2.0, -2.0]


def test_spectrum_bad_override_rejected(tmp_path):
    cfg = {"manifold": TORUS, "operator": {"mode": "synthetic", "overrides": [[[1, 0, 0, 0], 0.0]]}}
    code, _ = run(tmp_path, "spectrum", cfg)
    assert code == EXIT_REJECT


# audit

def test_audit_sphere_passes(tmp_path):
    code, out = run(tmp_path, "audit", {"manifold": SPHERE})
    assert code == EXIT_OK
    a = load(out / "audit.json")
    assert a["all_pass"]
    assert {r["name"] for r in a["records"]} >= {"volume", "gauss_bonnet"}


def test_audit_torus_conformal_factors(tmp_path):
    code, out = run(tmp_path, "audit", {"manifold": TORUS, "audit": {"conformal_factors": 3}})
    assert code == EXIT_OK
    names = [r["name"] for r in load(out / "audit.json")["records"]]
    assert "k_P_conformal_invariance" in names


def test_audit_fault_injection(tmp_path, capsys):
    cfg = {"manifold": SPHERE, "audit": {"fault_injection": {"quadrature_scale": 1.001}}}
    code, out = run(tmp_path, "audit", cfg)
    assert code == EXIT_FAIL
    assert "volume" in capsys.readouterr().err
    rec = [r for r in load(out / "audit.json")["records"] if r["name"] == "volume"][0]
    assert not rec["pass"]


# bubble and project

def test_bubble_band_verdict(tmp_path):
    cfg = {"manifold": SPHERE, "bubble": {"atoms": [[0, 0, 0, 0, 1]], "weights": [1.0], "delta": 0.1}}
    code, out = run(tmp_path, "bubble", cfg)
    assert code == EXIT_OK
    b = load(out / "bubble.json")
    assert b["band_verdict"]
    assert 0.8 <= value(b["slope_over_32k_pi2"]) <= 1.1
    rows = list(csv.DictReader((out / "slopes.csv").open()))
    assert [float(r["lambda"]) for r in rows] == [100.0, 200.0, 400.0, 800.0]


def test_bubble_bad_barycenter_rejected(tmp_path):
    cfg = {"manifold": SPHERE, "bubble": {"atoms": [[0, 0, 0, 0, 1]], "weights": [0.5, 0.5]}}
    code, _ = run(tmp_path, "bubble", cfg)
    assert code == EXIT_REJECT


def test_project_round_trip(tmp_path):
    cfg = {"manifold": SPHERE,
           "project": {"atoms": [[0, 0, 0, 0, 1], [1, 0, 0, 0, 0]], "weights": [0.5, 0.5], "lambda": 800}}
    code, out = run(tmp_path, "project", cfg)
    assert code == EXIT_OK
    p = load(out / "barycenter.json")
    assert value(p["distance"]) <= 0.1
    assert len(p["result"]["weights"]) == 2


# solve

def test_solve_manufactured(tmp_path):
    cfg = {"manifold": TORUS,
           "solve": {"manufactured": {"k_P": 4 * math.pi**2,
                                      "w_star": {"terms": [{"wavevector": [1, 0, 0, 0], "amplitude": 0.2}]}}}}
    code, out = run(tmp_path, "solve", cfg)
    assert code == EXIT_OK
    s = load(out / "solve.json")
    for r in s["reports"]:
        assert r["status"] == "converged"
        assert value(r["residual"]) <= 1e-6
    rho1 = [r for r in s["reports"] if value(r["rho"]) == 1.0][0]
    assert value(rho1["recovery_error"]) <= 1e-6
    mon = load(out / "monotonicity.json")
    assert mon["source"] == "critical-values"
    rows = list(csv.DictReader((out / "residuals.csv").open()))
    assert {r["kind"] for r in rows} <= {"start", "flow", "newton"}


def test_solve_sphere_rejected(tmp_path):
    code, _ = run(tmp_path, "solve", {"manifold": SPHERE})
    assert code == EXIT_REJECT


def test_solve_bad_grid_rejected(tmp_path):
    cfg = {"manifold": TORUS, "curvature": {"k_P": 0.0}, "solve": {"config": {"rho_grid": [0.5, 1.0, 1.5]}}}
    code, _ = run(tmp_path, "solve", cfg)
    assert code == EXIT_REJECT


# exit codes and determinism

def test_bad_json_rejected(tmp_path):
    cpath = tmp_path / "bad.json"
    cpath.write_text("{not json")
    assert main(["spectrum", "--config", str(cpath), "--out", str(tmp_path / "o")]) == EXIT_REJECT


def test_missing_manifold_rejected(tmp_path):
    code, _ = run(tmp_path, "spectrum", {"operator": {"mode": "geometric"}})
    assert code == EXIT_REJECT


def test_unknown_kind_rejected(tmp_path):
    code, _ = run(tmp_path, "audit", {"manifold": {"kind": "cube", "resolution": 4}})
    assert code == EXIT_REJECT


def test_deterministic_outputs(tmp_path):
    cfg = {"manifold": TORUS, "curvature": {"k_P": 0.0}, "audit": {"conformal_factors": 2}}
    a = run(tmp_path, "audit", cfg, seed=5, name="a")[1]
    b = run(tmp_path, "audit", cfg, seed=5, name="b")[1]
    assert (a / "audit.json").read_bytes() == (b / "audit.json").read_bytes()
    c1 = run(tmp_path, "solve", cfg, seed=5, name="c")[1]
    c2 = run(tmp_path, "solve", cfg, seed=5, name="d")[1]
    for f in ("solve.json", "residuals.csv"):
        assert (c1 / f).read_bytes() == (c2 / f).read_bytes()


def test_records_carry_units_and_anchor(tmp_path):
    _, out = run(tmp_path, "spectrum", {"manifold": TORUS, "curvature": {"k_P": 1.0}})
    s = load(out / "summary.json")
    for key in ("kbar", "k_P", "k_P_over_8pi2"):
        assert isinstance(value(s[key]), (int, float))
    assert np.isfinite(value(s["k_P_over_8pi2"]))
