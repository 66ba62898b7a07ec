"""Formal barycenters: the bounded-Lipschitz metric and the map Psi-hat.

Run: python3 demos/03_barycenters.py
"""

import math

import numpy as np

from qcurv.barycenter import Barycenter, bary_distance, dictionary_distance, homotopy_T, project_Pj, psi_hat
from qcurv.bubbles import BubbleConfig, bubble
from qcurv.geometry import Sphere, Torus

T, S = Torus(8), Sphere(12)
x, y = np.zeros(4), np.array([1.0, 0, 0, 0])

half = Barycenter(T, [x, y], [0.5, 0.5])
print("d(delta_x, delta_y) =", bary_distance(Barycenter.dirac(T, x), Barycenter.dirac(T, y)))
print("d((delta_x + delta_y)/2, delta_x) =", bary_distance(half, Barycenter.dirac(T, x)))
rng = np.random.default_rng(0)
a = Barycenter(T, rng.uniform(0, 1.0, (3, 4)), [0.2, 0.3, 0.5])
b = Barycenter(T, rng.uniform(0, 1.0, (2, 4)), [0.6, 0.4])
print(f"LP distance {bary_distance(a, b):.6f} vs dictionary lower bound {dictionary_distance(a, b, rng=rng):.6f}")

# Homotopy onto a stratum: a light satellite atom is absorbed into its anchor.
eps = 0.2
eps_hat = eps**2 / 100
eta = 0.5 * math.sqrt(eps_hat)
anchor = np.array([1.0, 1, 1, 1])
sigma = Barycenter(T, [anchor, [3.0, 1, 1, 1], anchor + [eta / 20, 0, 0, 0]], [0.5, 0.499, 0.001])
P = project_Pj(sigma, 2, eps)
for t in (0.0, 0.5, 1.0):
    out = homotopy_T(sigma, 2, t, eta, P, eps, eps_hat)
    print(f"t = {t}: {out.order} atoms, distance to sigma {bary_distance(out, sigma):.2e}")

# Psi-hat reads a barycenter off a concentrated density.
north, east = np.array([0, 0, 0, 0, 1.0]), np.array([1.0, 0, 0, 0, 0])
for s in (Barycenter.dirac(S, north), Barycenter(S, [north, east], [0.3, 0.7])):
    trace = []
    out = psi_hat(bubble(BubbleConfig(s, 800, 0.1)), s.order, trace=trace)
    print(f"k = {s.order}: round-trip distance {bary_distance(out, s):.2e}, cascade {trace[-1]}")
