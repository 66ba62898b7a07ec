"""Paneitz spectra, Q-curvature and the conformal invariance of k_P.

Run: python3 demos/01_operator_and_curvature.py
"""

import numpy as np

from qcurv.geometry import ScalarField, Sphere, Torus, conformal_rescale
from qcurv.paneitz import (band_index, gauss_bonnet_audit, geometric_operator, q_curvature, spectrum,
                           synthetic_operator)

T, S = Torus(8), Sphere(12)

# On the flat torus P = Delta^2, so the spectrum is |k|^4 with large multiplicities.
print("torus levels (eigenvalue, multiplicity):", spectrum(geometric_operator(T), 40).multiplicities()[:3])

# On the round sphere the degree-l eigenvalue is mu (mu - 2) with mu = l (l + 3); degree 1 gives 8.
print("S4 levels:", [(round(v, 6), m) for v, m in spectrum(geometric_operator(S), 30).multiplicities()[:3]])

# Total Q-curvature: 0 on the torus, 8 pi^2 on S4, unchanged by conformal factors.
print("k_P(T4) =", q_curvature(T).k_P, " k_P(S4) / 8pi^2 =", q_curvature(S).k_P / (8 * np.pi**2))
rng = np.random.default_rng(0)
for _ in range(3):
    w = ScalarField.random(T, rng) * 0.3
    print("  k_P after a random conformal factor:", f"{q_curvature(conformal_rescale(T, w)).k_P:.2e}")
print("Gauss-Bonnet defect S4:", gauss_bonnet_audit(S)["defect"])

# The band index k with 8 k pi^2 < k_P < 8 (k + 1) pi^2 decides the topology of the sublevels.
for c in (4, 8, 12, 20):
    print(f"k_P = {c} pi^2 ->", band_index(c * np.pi**2))

# Synthetic operators prescribe negative eigenvalues: kbar counts them.
op = synthetic_operator(T, {(1, 0, 0, 0): -2.0})
print("synthetic kbar:", op.kbar, "lowest eigenvalues:", spectrum(op, 4).eigenvalues)
