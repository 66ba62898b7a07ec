"""Numerical laboratory for constant Q-curvature on 4-manifolds.

Modules
-------
geometry    model manifolds (flat torus, round sphere, conformal rescalings)
paneitz     Paneitz operator, Q-curvature and spectra
functional  the Euler functional, the rho-family and concentration tools
barycenter  formal barycenters, their metric and the projection cascade
bubbles     concentrating test functions and their energy estimates
minmax      min-max path estimates and the continuation solver
cli         batch front end
"""

from .barycenter import Barycenter, bary_distance, psi, psi_hat
from .bubbles import BubbleConfig, TestMapConfig, big_phi, bubble
from .functional import energy, energy_rho, euler_residual
from .geometry import ScalarField, Sphere, Torus, build_manifold, conformal_rescale, integrate
from .minmax import ConfigRejected, SolveConfig, continuation, flow_solve, manufacture
from .paneitz import (band_index, gauss_bonnet_audit, geometric_operator, q_curvature, spectrum,
                      synthetic_curvature, synthetic_operator)

__version__ = "0.1.0"

__all__ = [
    "Barycenter", "BubbleConfig", "ConfigRejected", "ScalarField", "SolveConfig", "Sphere",
    "TestMapConfig", "Torus", "band_index", "bary_distance", "big_phi", "bubble",
    "build_manifold", "conformal_rescale", "continuation", "energy", "energy_rho",
    "euler_residual", "flow_solve", "gauss_bonnet_audit", "geometric_operator", "integrate",
    "manufacture", "psi", "psi_hat", "q_curvature", "spectrum", "synthetic_curvature",
    "synthetic_operator",
]
