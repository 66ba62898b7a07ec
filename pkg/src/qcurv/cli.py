"""Batch front end: ``qcurv <command> --config path.json --out dir [--seed n]``.

Commands: spectrum, audit, bubble, project, solve.  Exit codes: 0 success,
2 audit failure / partial solve / module error, 3 rejected configuration.
Every emitted number is a record ``{"value", "units", "anchor"}``; anchors are
stable names of the checked quantity, used by the acceptance harness.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .barycenter import Barycenter, bary_distance, psi_hat
from .bubbles import BubbleConfig, bubble, energy_slope, estimate_suite
from .functional import adams_gap
from .geometry import ScalarField, _factor_from_spec, build_manifold, conformal_rescale, integrate
from .minmax import (ConfigRejected, SolveConfig, calibrate_L, continuation, initial_path,
                     manufacture, minmax_rho_sweep, monotonicity_monitor, sample_akk)
from .paneitz import (band_index, gauss_bonnet_audit, geometric_operator, q_curvature, spectrum,
                      synthetic_curvature, synthetic_operator)

EXIT_OK, EXIT_FAIL, EXIT_REJECT = 0, 2, 3
PI2 = math.pi**2


class ModuleFailure(RuntimeError):
    """A check or solve that ran but did not pass."""


def rec(value, units, anchor):
    """A number with its units and anchor tag."""
    if isinstance(value, (np.floating, np.integer)):
        value = value.item()
    return {"value": value, "units": units, "anchor": anchor}


# ---------------------------------------------------------------------------
# config

def _need(cfg, key):
    if key not in cfg:
        raise ConfigRejected(f"missing config field {key!r}")
    return cfg[key]


def _manifold(cfg):
    try:
        return build_manifold(_need(cfg, "manifold"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigRejected(f"bad manifold spec: {exc}") from exc


def _operator(cfg, M):
    spec = cfg.get("operator", {"mode": "geometric"})
    mode = spec.get("mode", "geometric")
    if mode == "geometric":
        return geometric_operator(M)
    if mode == "synthetic":
        try:
            return synthetic_operator(M, [(k, float(v)) for k, v in spec.get("overrides", [])])
        except (TypeError, ValueError, IndexError) as exc:
            raise ConfigRejected(f"bad operator overrides: {exc}") from exc
    raise ConfigRejected(f"unknown operator mode {mode!r}")


def _curvature(cfg, M):
    spec = cfg.get("curvature")
    if not spec:
        return q_curvature(M)
    if "k_P" in spec:
        kP = float(spec["k_P"])
    elif "k_P_over_pi2" in spec:
        kP = float(spec["k_P_over_pi2"]) * PI2
    else:
        raise ConfigRejected("curvature needs k_P or k_P_over_pi2")
    profile = None
    if "profile" in spec:
        profile = _factor_from_spec(M.base, spec["profile"])
    return synthetic_curvature(M, kP, profile)


def _barycenter(M, spec):
    try:
        return Barycenter(M, _need(spec, "atoms"), _need(spec, "weights"))
    except (TypeError, ValueError) as exc:
        raise ConfigRejected(f"bad barycenter: {exc}") from exc


def _dump(path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _csv(path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


# ---------------------------------------------------------------------------
# commands

def cmd_spectrum(cfg, out, rng):
    M = _manifold(cfg)
    op = _operator(cfg, M)
    cd = _curvature(cfg, M)
    n = int(cfg.get("spectrum", {}).get("n", 10))
    sp = spectrum(op, max(n, op.kbar + 1))
    rows, i = [], 0
    for lam, m in sp.multiplicities():
        rows.extend((i + r, lam, m) for r in range(m))
        i += m
    _csv(out / "spectrum.csv", ["index", "eigenvalue", "multiplicity"], rows)
    k, status = band_index(cd.k_P)
    summary = {
        "kbar": rec(op.kbar, "count", "negative-eigenvalue-count"),
        "k_P": rec(cd.k_P, "dimensionless", "total-Q-curvature"),
        "k_P_over_8pi2": rec(cd.k_P / (8 * PI2), "dimensionless", "total-Q-curvature"),
        "band": {"k": rec(k, "count", "curvature-band-index"), "status": status},
        "eigenvalues": [rec(float(x), "1/length^4", "paneitz-spectrum") for x in sp.eigenvalues],
    }
    _dump(out / "summary.json", summary)
    return EXIT_OK


def cmd_audit(cfg, out, rng):
    M = _manifold(cfg)
    op = _operator(cfg, M)
    acfg = cfg.get("audit", {})
    records = []

    def add(name, measured, tol, units, anchor, passed=None):
        ok = bool(measured <= tol) if passed is None else bool(passed)
        records.append({"name": name, "pass": ok, "defect": rec(float(measured), units, anchor),
                        "tolerance": rec(float(tol), units, anchor)})

    scale = float(acfg.get("fault_injection", {}).get("quadrature_scale", 1.0))
    vol = float(np.sum(M.weights)) * scale
    add("volume", abs(vol - M.volume) / M.volume, 1e-10, "relative", "quadrature-volume")
    gb = gauss_bonnet_audit(M)
    add("gauss_bonnet", gb["defect"], float(acfg.get("gb_tol", 1e-6)), "dimensionless", "gauss-bonnet")
    n_conf = int(acfg.get("conformal_factors", 0))
    if n_conf:
        base = M.base
        k0 = q_curvature(base).k_P
        worst = 0.0
        for _ in range(n_conf):
            c = base.random_coeffs(rng, max_k=2) * float(acfg.get("factor_amplitude", 0.3))
            w = ScalarField.from_coeffs(base, c)
            worst = max(worst, abs(q_curvature(conformal_rescale(base, w)).k_P - k0))
        add("k_P_conformal_invariance", worst, float(acfg.get("k_P_tol", 1e-6)), "dimensionless",
            "total-Q-curvature-invariance")
    gap = adams_gap(op, ScalarField.constant(M, 0.0))
    add("adams_gap_constant", abs(gap - math.log(integrate(ScalarField.constant(M, 1.0)))), 1e-9,
        "dimensionless", "adams-gap")
    _dump(out / "audit.json", {"records": records, "all_pass": all(r["pass"] for r in records)})
    failing = [r["name"] for r in records if not r["pass"]]
    if failing:
        raise ModuleFailure(f"audit failed: {', '.join(failing)}")
    return EXIT_OK


def cmd_bubble(cfg, out, rng):
    M = _manifold(cfg)
    op = _operator(cfg, M)
    cd = _curvature(cfg, M)
    b = _need(cfg, "bubble")
    sigma = _barycenter(M.base, b)
    delta = float(b.get("delta", 0.1))
    lams = [float(x) for x in b.get("lambdas", [100, 200, 400, 800])]
    band = b.get("band", [0.8, 1.1])
    try:
        suite = estimate_suite(op, cd, sigma, delta, lams)
        sl = energy_slope(op, sigma, delta, lams)
    except ValueError as exc:
        raise ConfigRejected(str(exc)) from exc
    target = 32 * sigma.order * PI2
    ratio = sl / target
    _csv(out / "slopes.csv", ["lambda", "log_lambda", "quadratic", "q_term", "log_mass"],
         [(r["lam"], math.log(r["lam"]), r["quadratic"], r["q_term"], r["log_mass"]) for r in suite["rows"]])
    verdict = band[0] <= ratio <= band[1]
    _dump(out / "bubble.json", {
        "slope": rec(sl, "dimensionless", "bubble-energy-growth"),
        "slope_over_32k_pi2": rec(ratio, "dimensionless", "bubble-energy-growth"),
        "band": band, "band_verdict": bool(verdict),
        "q_slope": rec(suite["q_slope"], "dimensionless", "bubble-Q-term"),
        "k_P": rec(cd.k_P, "dimensionless", "total-Q-curvature"),
        "logmass_drift": rec(suite["logmass_drift"], "dimensionless", "bubble-log-mass"),
    })
    if not verdict:
        raise ModuleFailure(f"energy slope ratio {ratio:.4f} outside {band}")
    return EXIT_OK


def cmd_project(cfg, out, rng):
    M = _manifold(cfg)
    p = _need(cfg, "project")
    sigma = _barycenter(M.base, p)
    lam = float(p.get("lambda", 800))
    delta = float(p.get("delta", 0.1))
    k = int(p.get("k", sigma.order))
    try:
        u = bubble(BubbleConfig(sigma, lam, delta))
    except ValueError as exc:
        raise ConfigRejected(str(exc)) from exc
    trace = []
    res = psi_hat(u, k, eps1=float(p.get("eps1", 0.08)), trace=trace)
    d = bary_distance(res, sigma)
    _dump(out / "barycenter.json", {
        "input": sigma.to_json(), "result": res.to_json(),
        "distance": rec(d, "dimensionless", "projection-round-trip"),
        "trace": [{k2: (rec(v, "dimensionless", "stratum-distance") if k2 == "distance" else v)
                   for k2, v in t.items()} for t in trace],
    })
    tol = float(p.get("tolerance", 0.1))
    if d > tol:
        raise ModuleFailure(f"round-trip distance {d:.4g} exceeds {tol}")
    return EXIT_OK


def cmd_solve(cfg, out, rng):
    M = _manifold(cfg)
    op = _operator(cfg, M)
    s = cfg.get("solve", {})
    scfg = SolveConfig(**{k: (tuple(v) if k == "rho_grid" else v) for k, v in s.get("config", {}).items()})
    man = s.get("manufactured")
    truth = None
    if man:
        w = _factor_from_spec(M.base, man.get("w_star", {}))
        pb = manufacture(op, w.on(M), k_P=float(man.get("k_P", 4 * PI2)))
        cd, truth = pb.curvature, pb.u_star
    else:
        cd = _curvature(cfg, M)
    res = continuation(op, cd, scfg, rng=rng)
    rows = []
    reports = []
    for rep in res["reports"]:
        d = rep.to_json()
        entry = {"rho": rec(rep.rho, "dimensionless", "rho-family"), "status": rep.status,
                 "residual": rec(rep.residual, "1/length^4", "euler-lagrange-residual"),
                 "energy": rec(d["energy"], "dimensionless", "functional-value"),
                 "calpha_proxy": rec(rep.calpha, "dimensionless", "holder-monitor"),
                 "iterations": rec(d["iterations"], "count", "solver-iterations")}
        if truth is not None:
            err = rep.u.values - truth.values
            entry["recovery_error"] = rec(float(np.max(np.abs(err - err.mean()))), "dimensionless",
                                          "manufactured-recovery")
        reports.append(entry)
        rows.extend((rep.rho,) + r for r in rep.history_rows())
    _csv(out / "residuals.csv", ["rho", "iteration", "kind", "residual", "energy", "vhat", "volume"], rows)
    mm = s.get("minmax")
    if mm:
        zs = sample_akk(M.base, int(mm.get("k", 1)), op.kbar, int(mm.get("n_z", 2)), rng)
        path = initial_path(op, float(mm.get("S_bar", 0.0)), math.exp(float(mm.get("log_lambda_bar", 16.5))),
                            zs, int(mm.get("n_t", 21)), float(mm.get("delta", 1.0)))
        rhos = list(scfg.rho_grid)
        L, bmax = calibrate_L(path, cd, rhos)
        ests = minmax_rho_sweep(path, cd, rhos, int(mm.get("budget", 60)), L)
        mon = monotonicity_monitor(rhos, [e.estimate for e in ests], float(mm.get("noise", 0.0)))
        mon_out = {"source": "minmax-estimates", "C": rec(mon["C"], "dimensionless", "rho-monotonicity"),
                   "violations": mon["violations"], "nonincreasing": mon["nonincreasing"],
                   "L": rec(L, "dimensionless", "sublevel-scale"),
                   "estimates": [{"rho": e.rho, "estimate": rec(e.estimate, "dimensionless", "minmax-value"),
                                  "lower_guard": rec(e.lower_guard, "dimensionless", "minmax-lower-guard"),
                                  "upper_bound": rec(e.initial, "dimensionless", "minmax-upper-bound"),
                                  "bracket_ok": e.bracket_ok} for e in ests]}
    else:
        conv = [r for r in res["reports"] if r.status == "converged"]
        if len(conv) >= 3:
            mon = monotonicity_monitor([r.rho for r in conv], [r.energy_history[-1] for r in conv])
            mon_out = {"source": "critical-values", "C": rec(mon["C"], "dimensionless", "rho-monotonicity"),
                       "violations": mon["violations"], "nonincreasing": mon["nonincreasing"]}
        else:
            mon_out = {"source": "critical-values", "skipped": "fewer than three converged grid points"}
    _dump(out / "solve.json", {"reports": reports, "blowup_flag": res["blowup_flag"],
                               "lipschitz": [rec(x, "dimensionless", "warm-start-continuity") for x in res["lipschitz"]]})
    _dump(out / "monotonicity.json", mon_out)
    if any(r.status != "converged" for r in res["reports"]):
        raise ModuleFailure("not every grid point converged")
    return EXIT_OK


COMMANDS = {"spectrum": cmd_spectrum, "audit": cmd_audit, "bubble": cmd_bubble,
            "project": cmd_project, "solve": cmd_solve}


def main(argv=None):
    ap = argparse.ArgumentParser(prog="qcurv", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, type=Path)
    ap.add_argument("--out", required=True, type=Path)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    try:
        cfg = json.loads(args.config.read_text())
        if not isinstance(cfg, dict):
            raise ConfigRejected("config must be a JSON object")
    except (OSError, json.JSONDecodeError, ConfigRejected) as exc:
        print(f"qcurv: rejected config: {exc}", file=sys.stderr)
        return EXIT_REJECT
    args.out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    try:
        return COMMANDS[args.command](cfg, args.out, rng)
    except ConfigRejected as exc:
        print(f"qcurv: rejected config: {exc}", file=sys.stderr)
        return EXIT_REJECT
    except ModuleFailure as exc:
        print(f"qcurv: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"qcurv: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
