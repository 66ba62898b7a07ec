"""Solving the constant Q-curvature equation and bracketing the min-max value.

Run: python3 demos/04_solve_and_minmax.py   (about 30 s)
"""

import math

import numpy as np

from qcurv.geometry import ScalarField, Torus
from qcurv.minmax import (SolveConfig, calibrate_L, continuation, flow_solve, initial_path, manufacture,
                          minmax_rho_sweep, monotonicity_monitor, sample_akk)
from qcurv.paneitz import geometric_operator, synthetic_curvature, synthetic_operator

PI2 = np.pi**2
T = Torus(8)
op = geometric_operator(T)

# Manufactured problem: Q is chosen so that w* solves P u + 2 Q = 2 k_P e^{4u} / int e^{4u}.
pb = manufacture(op, lambda x: 0.2 * np.cos(x[..., 0]), k_P=4 * PI2)
rep = flow_solve(op, pb.curvature, ScalarField(T, np.zeros(T.shape)))
print(f"manufactured: {rep.status}, residual {rep.residual:.1e}, "
      f"error {np.max(np.abs(rep.u.values - pb.u_star.values)):.1e}, steps {rep.step_kinds}")

# Continuation in rho along [0.95, 1.05] with the Hoelder monitor.
res = continuation(op, pb.curvature, SolveConfig())
for r in res["reports"]:
    print(f"  rho = {r.rho:.3f}: {r.status}, C^alpha proxy {r.calpha:.3f}")
print("  warm-start Lipschitz constants:", np.round(res["lipschitz"], 3))

# Min-max on the synthetic torus with k_P = 12 pi^2 (band k = 1): the refined path value sits
# between the lower guard -L/2 and the initial path sup.
syn = synthetic_operator(T)
cd = synthetic_curvature(T, 12 * PI2)
path = initial_path(syn, 0.0, math.exp(16.5), sample_akk(T, 1, syn.kbar, 2, np.random.default_rng(0)))
rhos = (0.95, 0.975, 1.0, 1.025, 1.05)
L, bmax = calibrate_L(path, cd, rhos)
ests = minmax_rho_sweep(path, cd, rhos, budget=30, L=L)
print(f"min-max: boundary max {bmax:.1f} <= -2L = {-2 * L:.1f}, guard -L/2 = {-L / 2:.1f}")
for e in ests:
    print(f"  rho = {e.rho:.3f}: estimate {e.estimate:.1f} (start {e.initial:.1f}), bracket {e.bracket_ok}")
mon = monotonicity_monitor(rhos, [e.estimate for e in ests])
print("monotonicity: C =", mon["C"], "violations:", mon["violations"])
