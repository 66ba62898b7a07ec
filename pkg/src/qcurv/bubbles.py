"""Bubble test functions, the negative-eigenspace profile and the test map.

For ``sigma = sum t_i delta_{x_i}`` the bubble is

    phi_{lam,sigma}(y) = 1/4 log sum_i t_i (2 lam / (1 + lam^2 chi_delta(d_i(y))^2))^4.

When the balls ``B_{2 delta}(x_i)`` are pairwise disjoint it splits as

    phi = log B + sum_i psi_i(d_i(y)),    B = 2 lam / (1 + 4 lam^2 delta^2),

with radial profiles ``psi_i = 1/4 log(t_i b^4 + (1 - t_i) B^4) - log B``
supported in ``B_{2 delta}(x_i)``.  A bubble concentrates on the scale
``1 / lam``, far below any grid spacing, so ``BubbleField`` keeps this
decomposition and evaluates energies with radial quadrature and zonal
multipliers instead of grid sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BarycentricInterpolator

from .barycenter import Barycenter
from .functional import Measure
from .geometry import AREA_S3, ScalarField, Sphere, integrate, radial_panels
from .paneitz import spectrum

__all__ = [
    "chi_delta",
    "BubbleConfig",
    "TestMapConfig",
    "BubbleField",
    "bubble",
    "bubble_mass",
    "phi_s",
    "big_phi",
    "estimate_suite",
    "energy_slope",
    "eigen_pairing_decay",
]

THIRTY_TWO_PI2 = 32.0 * np.pi**2


def chi_delta(t, delta, deriv=0):
    """Cutoff ``chi_delta`` and its derivatives.

    ``chi = t`` on ``[0, delta]``, ``chi = 2 delta`` for ``t >= 2 delta`` and a
    quintic ``delta (1 + h(s))``, ``s = (t - delta) / delta``, in between.  The
    quintic matches value, slope and curvature at both ends, so ``chi`` is C^2
    and non-decreasing (``h' = (1 - s)^2 (15 s^2 + 2 s + 1) >= 0``).

    Parameters
    ----------
    t : array_like
        Nonnegative arguments.
    delta : float
    deriv : {0, 1, 2}

    Returns
    -------
    ndarray
    """
    t = np.asarray(t, float)
    s = np.clip((t - delta) / delta, 0.0, 1.0)
    lo = t <= delta
    hi = t >= 2.0 * delta
    if deriv == 0:
        mid = delta * (1.0 + s + 4 * s**3 - 7 * s**4 + 3 * s**5)
        return np.where(lo, t, np.where(hi, 2.0 * delta, mid))
    if deriv == 1:
        mid = (1.0 - s) ** 2 * (15 * s**2 + 2 * s + 1)
        return np.where(lo, 1.0, np.where(hi, 0.0, mid))
    if deriv == 2:
        mid = (24 * s - 84 * s**2 + 60 * s**3) / delta
        return np.where(lo | hi, 0.0, mid)
    raise ValueError("deriv must be 0, 1 or 2")


@dataclass(frozen=True)
class BubbleConfig:
    """Parameters ``(sigma, lam, delta)`` of ``phi_{lam,sigma}``."""

    sigma: Barycenter
    lam: float
    delta: float

    def __post_init__(self):
        M = self.sigma.manifold
        if self.lam <= 0 or self.delta <= 0:
            raise ValueError("lam and delta must be positive")
        if 2.0 * self.delta >= M.injectivity_radius:
            raise ValueError("2 delta must stay below the injectivity radius")
        if self.sigma.min_separation() < 4.0 * self.delta:
            raise ValueError("atoms must be 4 delta apart so that the bubble balls are disjoint")

    @property
    def far_field(self):
        """``log B``, the value of the bubble outside all ``2 delta`` balls."""
        return float(np.log(2.0 * self.lam) - np.log1p(4.0 * self.lam**2 * self.delta**2))


@dataclass(frozen=True)
class TestMapConfig:
    """Parameters ``(S_bar, lam_bar, s)`` of the test map ``Phi``."""

    S_bar: float
    lam_bar: float
    s: tuple = ()

    def __post_init__(self):
        if np.linalg.norm(np.asarray(self.s, float)) > 1.0 + 1e-12:
            raise ValueError("|s| must not exceed 1")


# ---------------------------------------------------------------------------
# radial profiles

def _profile_parts(r, lam, delta, t):
    """``psi``, ``psi'``, ``psi''`` at radii ``r`` for atom weight ``t``."""
    chi = chi_delta(r, delta)
    c1 = chi_delta(r, delta, 1)
    c2 = chi_delta(r, delta, 2)
    den = 1.0 + (lam * chi) ** 2
    Bden = 1.0 + 4.0 * lam**2 * delta**2
    # (B / b)^4 <= 1 and q = t b^4 / (t b^4 + (1 - t) B^4)
    ratio = (den / Bden) ** 4
    mix = t + (1.0 - t) * ratio
    psi = np.log(Bden) - np.log(den) + 0.25 * np.log(mix)
    q = t / mix
    l1 = -2.0 * lam**2 * chi / den
    l2 = -2.0 * lam**2 * (1.0 - (lam * chi) ** 2) / den**2
    beta = l1 * c1
    dbeta = l2 * c1**2 + l1 * c2
    d1 = q * beta
    d2 = 4.0 * q * (1.0 - q) * beta**2 + q * dbeta
    return psi, d1, d2


class _Profile:
    """Radial profile of one atom with its quadrature."""

    def __init__(self, M, lam, delta, t, ratio=1.35, order=12):
        self.M = M
        self.lam, self.delta, self.t = float(lam), float(delta), float(t)
        r0 = min(1e-2 / lam, 1e-2 * delta)
        n = max(2, int(np.ceil(np.log(delta / r0) / np.log(ratio))))
        breaks = np.concatenate([[0.0], np.geomspace(r0, delta, n + 1), delta * (1.0 + np.arange(1, 5) / 4)])
        self.breaks = breaks
        self.r, self.w = radial_panels(breaks, order)
        self.order = order
        self.J = M.radial_jacobian(self.r)
        self.psi, self.d1, self.d2 = _profile_parts(self.r, lam, delta, t)
        self.lap = self.d2 + M.radial_laplacian_coefficient(self.r) * self.d1
        self._mult = None

    def values(self, d):
        return _profile_parts(np.asarray(d, float), self.lam, self.delta, self.t)[0]

    def radial_integral(self, f):
        """``int_{B_{2 delta}} f(d(x, y)) dy`` for radial ``f`` sampled at ``r``."""
        return AREA_S3 * float(np.sum(self.w * self.J * f))

    def self_pairing(self, a):
        """``int (Delta psi)^2 - a |grad psi|^2 dV``."""
        return self.radial_integral(self.lap**2 - a * self.d1**2)

    @property
    def multiplier(self):
        if self._mult is None:
            self._mult = self.M.zonal_multiplier(self.r, self.w, self.psi)
        return self._mult


def _ball_points(M, x, r, dirs):
    """Points ``exp_x(r omega)`` for radii ``r`` and unit directions, shape (d, n, dim)."""
    if isinstance(M, Sphere):
        v = dirs @ M.tangent_frame(x)
        th = np.asarray(r)[None, :, None] / M.radius
        return np.cos(th) * x[None, None, :] + np.sin(th) * v[:, None, :]
    return np.mod(x[None, None, :] + np.asarray(r)[None, :, None] * dirs[:, None, :], 2.0 * np.pi)


# ---------------------------------------------------------------------------
# composite field

class BubbleField:
    """The field ``u = s + beta * phi_{lam,sigma} + c``.

    Parameters
    ----------
    manifold : Torus or Sphere
    cfg : BubbleConfig or None
        ``None`` means ``beta`` is irrelevant and ``u = s + c``.
    beta : float
    smooth : ScalarField or None
        Band-limited grid part ``s``.
    const : float
    n_dir : int
        Size parameter of the S^3 direction rule used where ``s`` must be
        integrated against the bubble on its balls.
    """

    def __init__(self, manifold, cfg=None, beta=1.0, smooth=None, const=0.0, n_dir=4, _profiles=None):
        M = manifold.base
        if manifold is not M:
            raise ValueError("bubble fields live on the base models")
        if cfg is not None and cfg.sigma.manifold is not M:
            raise ValueError("barycenter lives on a different manifold")
        if smooth is not None and not M.same_grid(smooth.manifold):
            raise ValueError("smooth part lives on a different manifold")
        self.manifold = M
        self.cfg = cfg
        self.beta = float(beta) if cfg is not None else 0.0
        self.smooth = smooth
        self.const = float(const)
        self.n_dir = n_dir
        if cfg is None:
            self._profiles = []
        elif _profiles is not None:
            self._profiles = _profiles
        else:
            self._profiles = [_Profile(M, cfg.lam, cfg.delta, t) for t in cfg.sigma.weights]
        self._ball_cache = {}

    # -- algebra ----------------------------------------------------------------
    def _replace(self, beta=None, smooth=None, const=None):
        return BubbleField(self.manifold, self.cfg,
                           self.beta if beta is None else beta,
                           self.smooth if smooth is None else smooth,
                           self.const if const is None else const,
                           self.n_dir, self._profiles)

    def shifted(self, c):
        """``u + c``."""
        return self._replace(const=self.const + float(c))

    def scaled(self, a):
        """``a u``."""
        a = float(a)
        sm = None if self.smooth is None else self.smooth * a
        out = self._replace(beta=self.beta * a, const=self.const * a)
        out.smooth = sm
        return out

    def plus_smooth(self, f):
        """``u + f`` for a grid field ``f``."""
        sm = f if self.smooth is None else self.smooth + f
        return self._replace(smooth=sm)

    @property
    def far_field(self):
        return self.cfg.far_field if self.cfg is not None else 0.0

    @property
    def atoms(self):
        return self.cfg.sigma.atoms if self.cfg is not None else np.zeros((0, self.manifold.dim_embed))

    # -- pointwise -------------------------------------------------------------
    def bubble_values(self, points):
        """``phi_{lam,sigma}`` at arbitrary points."""
        pts = np.atleast_2d(np.asarray(points, float))
        out = np.full(len(pts), self.far_field)
        for x, p in zip(self.atoms, self._profiles):
            d = self.manifold.dist(pts, x[None, :])
            inside = d < 2.0 * p.delta
            out[inside] += p.values(d[inside])
        return out

    def evaluate(self, points):
        pts = np.atleast_2d(np.asarray(points, float))
        out = np.full(len(pts), self.const)
        if self.smooth is not None:
            out += self.smooth.evaluate(pts)
        if self.cfg is not None and self.beta != 0.0:
            out += self.beta * self.bubble_values(pts)
        return out

    def to_field(self, project=True):
        """Node values as a grid field (aliased: the bubble is under-resolved)."""
        M = self.manifold
        vals = np.full(M.shape, float(self.const))
        if self.smooth is not None:
            vals = vals + self.smooth.values
        if self.cfg is not None and self.beta != 0.0:
            vals = vals + self.beta * self.bubble_values(M.nodes()).reshape(M.shape)
        f = ScalarField(M, vals)
        return f.project() if project else f

    # -- linear functionals ----------------------------------------------------------
    def _zonal_at_atoms(self, coeffs):
        """``sum_i int psi_i(d(x_i, y)) f(y) dy`` for ``f`` with spectral ``coeffs``."""
        M = self.manifold
        return float(sum(M.evaluate(p.multiplier * coeffs, x[None, :])[0]
                         for x, p in zip(self.atoms, self._profiles)))

    def bubble_integral_against(self, v):
        """``int phi_{lam,sigma} v dV``."""
        if self.cfg is None:
            return 0.0
        return self.far_field * integrate(v) + self._zonal_at_atoms(v.coeffs)

    def integral_against(self, v):
        """``int u v dV`` for a grid field ``v``."""
        v = ScalarField(self.manifold, v.values)
        out = self.const * integrate(v)
        if self.smooth is not None:
            out += integrate(self.smooth * v)
        if self.beta != 0.0:
            out += self.beta * self.bubble_integral_against(v)
        return out

    def integral(self):
        M = self.manifold
        out = self.const * M.volume
        if self.smooth is not None:
            out += integrate(self.smooth)
        if self.beta != 0.0:
            out += self.beta * (self.far_field * M.volume
                                + sum(p.radial_integral(p.psi) for p in self._profiles))
        return out

    def mean(self):
        return self.integral() / self.manifold.volume

    # -- quadratic form ---------------------------------------------------------------
    def bubble_self_pairing(self, op):
        """``<P phi, phi>``: radial self terms plus low-rank corrections."""
        a = op.lower_order
        val = sum(p.self_pairing(a) for p in self._profiles)
        for _, v, d in op._corr:
            val += d * self.bubble_integral_against(v) ** 2
        return val

    def pairing(self, op):
        """``<P u, u>``."""
        if op.is_conformal or op.manifold is not self.manifold:
            raise ValueError("bubble fields pair with operators on the same base model")
        val = 0.0
        s = self.smooth
        if s is not None:
            val += op.pairing(s, s)
        if self.cfg is not None and self.beta != 0.0:
            b = self.beta
            val += b * b * self.bubble_self_pairing(op)
            if s is not None:
                cross = self._zonal_at_atoms(op.symbol * s.coeffs)
                for _, v, d in op._corr:
                    cross += d * integrate(s * v) * self.bubble_integral_against(v)
                val += 2.0 * b * cross
        return float(val)

    # -- exponential ------------------------------------------------------------------
    def _smooth_on_ball(self, i):
        """``s`` on the ball quadrature of atom ``i``, shape (n_dirs, n_r)."""
        if i in self._ball_cache:
            return self._ball_cache[i]
        M = self.manifold
        p = self._profiles[i]
        x = self.atoms[i]
        dirs, _ = M.unit_directions(self.n_dir)
        rc = p.delta * (1.0 - np.cos(np.pi * (np.arange(16) + 0.5) / 16))  # Chebyshev on [0, 2 delta]
        pts = _ball_points(M, x, rc, dirs)
        sv = self.smooth.evaluate(pts.reshape(-1, pts.shape[-1])).reshape(len(dirs), len(rc))
        vals = BarycentricInterpolator(rc, sv.T)(p.r).T
        self._ball_cache[i] = vals
        return vals

    def _log_ball_terms(self):
        """Logs of ``int_{B_i} e^{4 s} (e^{4 beta psi_i} - 1) dV`` (``-inf`` if zero)."""
        out = []
        for i, p in enumerate(self._profiles):
            g = np.expm1(4.0 * self.beta * p.psi) * p.w * p.J
            if self.smooth is None:
                tot = AREA_S3 * float(np.sum(g))
                out.append(np.log(tot) if tot > 0 else -np.inf)
                continue
            _, wd = self.manifold.unit_directions(self.n_dir)
            s4 = 4.0 * self._smooth_on_ball(i)
            m = float(s4.max())
            tot = float(np.sum(wd[:, None] * np.exp(s4 - m) * g[None, :]))
            out.append(m + np.log(tot) if tot > 0 else -np.inf)
        return out

    def log_volume(self):
        """``log int e^{4u} dV``."""
        M = self.manifold
        if self.smooth is None:
            base = np.log(M.volume)
        else:
            a = 4.0 * self.smooth.values
            m = float(a.max())
            base = m + float(np.log(np.sum(M.weights * np.exp(a - m))))
        terms = [base]
        if self.cfg is not None and self.beta != 0.0:
            terms += self._log_ball_terms()
        lse = float(np.logaddexp.reduce(np.array(terms)))
        return 4.0 * self.const + 4.0 * self.beta * self.far_field + lse

    def energy_parts(self, op, curvature):
        """``(<P u, u>, int Q u dV, log int e^{4u} dV)``."""
        lin = None if curvature is None else self.integral_against(curvature.Q)
        return self.pairing(op), lin, self.log_volume()

    def volume_measure(self):
        """The measure ``e^{4u} dV`` as weighted points.

        Grid nodes carry the smooth background ``e^{4(s + beta log B + c)}``;
        each ball adds the excess ``e^{4 s}(e^{4 beta psi} - 1)``, lumped per
        radial panel and direction at the panel's mass-weighted radius.
        """
        M = self.manifold
        c0 = 4.0 * (self.const + self.beta * self.far_field)
        s = self.smooth.values if self.smooth is not None else np.zeros(M.shape)
        pts = [M.nodes()]
        mass = [(M.weights * np.exp(4.0 * s + c0)).ravel()]
        if self.cfg is not None and self.beta != 0.0:
            dirs, wd = M.unit_directions(self.n_dir)
            for i, (x, p) in enumerate(zip(self.atoms, self._profiles)):
                g = np.expm1(4.0 * self.beta * p.psi) * p.w * p.J
                if self.smooth is None:
                    e = np.ones((len(dirs), len(p.r)))
                else:
                    e = np.exp(4.0 * self._smooth_on_ball(i))
                dens = wd[:, None] * e * g[None, :] * np.exp(c0)
                n_pan = len(p.r) // p.order
                dm = dens.reshape(len(dirs), n_pan, p.order)
                mp = dm.sum(axis=2)
                rr = (dm * p.r.reshape(n_pan, p.order)[None]).sum(axis=2) / np.where(mp > 0, mp, 1.0)
                rbar = np.where(mp > 0, rr, p.r.reshape(n_pan, p.order).mean(axis=1)[None, :])
                if isinstance(M, Sphere):
                    v = dirs @ M.tangent_frame(x)
                    th = rbar[:, :, None] / M.radius
                    q = np.cos(th) * x[None, None, :] + np.sin(th) * v[:, None, :]
                else:
                    q = np.mod(x[None, None, :] + rbar[:, :, None] * dirs[:, None, :], 2.0 * np.pi)
                pts.append(q.reshape(-1, M.dim_embed))
                mass.append(mp.ravel())
        return Measure(M, np.concatenate(pts), np.concatenate(mass))

    def __repr__(self):
        lam = None if self.cfg is None else self.cfg.lam
        return f"BubbleField(lam={lam}, beta={self.beta:.4g}, smooth={self.smooth is not None})"


# ---------------------------------------------------------------------------
# operations

def bubble(cfg, smooth=None):
    """The bubble ``phi_{lam,sigma}`` as a composite field."""
    return BubbleField(cfg.sigma.manifold, cfg, 1.0, smooth)


def bubble_mass(cfg):
    """``int e^{4 phi_{lam,sigma}} dV``."""
    return float(np.exp(bubble(cfg).log_volume()))


def phi_s(op, s, S_bar, spec=None):
    """``phi_s = S_bar sum_i s_i v_i`` on the negative eigenfields."""
    kbar = op.kbar
    if kbar == 0:
        raise ValueError("the negative eigenspace is empty")
    s = np.asarray(s, float)
    if s.shape != (kbar,):
        raise ValueError(f"s must have {kbar} components")
    spec = spec or spectrum(op, kbar)
    vals = np.zeros(op.manifold.shape)
    for si, v in zip(s, spec.negative_fields):
        vals = vals + S_bar * si * v.values
    return ScalarField(op.manifold.base, vals)


def big_phi(op, cfg, sigma=None, delta=0.1, spec=None):
    """The test map ``Phi_{S_bar, lam_bar}(sigma, s)``.

    Three branches in ``|s|``: ``phi_s + phi_{lam_bar}`` for ``|s| <= 1/4``;
    ``phi_s + phi_{lam'}`` with ``lam' = 2 lam_bar - 1 + 4 (1 - lam_bar)|s|``
    for ``1/4 <= |s| <= 1/2``; ``phi_s + (2 - 2|s|) phi_1 + 2|s| - 1`` for
    ``|s| >= 1/2``.  With ``sigma=None`` (total curvature below ``8 pi^2``)
    the map is ``phi_s``.

    Returns
    -------
    BubbleField
    """
    M = op.manifold.base
    s = np.asarray(cfg.s, float)
    ns = float(np.linalg.norm(s)) if s.size else 0.0
    sm = phi_s(op, s, cfg.S_bar, spec) if s.size else None
    if sigma is None:
        if sm is None:
            raise ValueError("the map without barycenter needs a nonempty s")
        return BubbleField(M, None, 0.0, sm)
    if ns <= 0.25:
        return BubbleField(M, BubbleConfig(sigma, cfg.lam_bar, delta), 1.0, sm)
    if ns <= 0.5:
        lam = 2.0 * cfg.lam_bar - 1.0 + 4.0 * (1.0 - cfg.lam_bar) * ns
        return BubbleField(M, BubbleConfig(sigma, lam, delta), 1.0, sm)
    return BubbleField(M, BubbleConfig(sigma, 1.0, delta), 2.0 - 2.0 * ns, sm, 2.0 * ns - 1.0)


def _slope(x, y):
    if len(x) < 2:
        raise ValueError("degenerate fit: need at least two grid points")
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    fit = A @ coef
    return float(coef[0]), float(coef[1]), float(np.max(np.abs(y - fit)))


def estimate_suite(op, curvature, sigma, delta, lam_grid, s=None, S_bar=0.0, spec=None):
    """Measure the three estimates on ``phi_s + phi_{lam,sigma}`` over ``lam_grid``.

    Returns
    -------
    dict
        Per-lambda rows and the fitted slopes: ``q_slope`` (expected
        ``-k_P``), ``logmass_drift`` (max - min of ``log int e^{4u}``) and
        ``quad_slope`` with the upper-bound constant ``quad_C`` of
        ``<P u, u> <= 32 k pi^2 log lam - |lam_kbar| |s|^2 S_bar^2 + C``.
    """
    lam_grid = np.asarray(lam_grid, float)
    if len(lam_grid) < 2:
        raise ValueError("degenerate fit: need at least two grid points")
    k = sigma.order
    sm = None
    shift = 0.0
    if s is not None and np.size(s):
        sm = phi_s(op, s, S_bar, spec)
        lam_k = spectrum(op, op.kbar).negative_eigenvalues[-1]
        shift = abs(lam_k) * float(np.sum(np.asarray(s) ** 2)) * S_bar**2
    rows = []
    for lam in lam_grid:
        u = bubble(BubbleConfig(sigma, lam, delta), sm)
        quad, lin, lv = u.energy_parts(op, curvature)
        rows.append({"lam": float(lam), "quadratic": quad, "q_term": lin, "log_mass": lv})
    ll = np.log(lam_grid)
    q = np.array([r["q_term"] for r in rows])
    lv = np.array([r["log_mass"] for r in rows])
    quad = np.array([r["quadratic"] for r in rows])
    qs, _, qres = _slope(ll, q)
    ps, _, pres = _slope(ll, quad)
    C = float(np.max(quad - k * THIRTY_TWO_PI2 * ll + shift))
    return {
        "rows": rows,
        "k": k,
        "k_P": curvature.k_P,
        "q_slope": qs,
        "q_residual": qres,
        "logmass_drift": float(lv.max() - lv.min()),
        "quad_slope": ps,
        "quad_residual": pres,
        "quad_C": C,
        "eigen_shift": shift,
    }


def energy_slope(op, sigma, delta, lam_grid):
    """Least-squares slope of ``<P phi_{lam,sigma}, phi_{lam,sigma}>`` in ``log lam``."""
    lam_grid = np.asarray(lam_grid, float)
    if len(lam_grid) < 4:
        raise ValueError("the lambda grid needs at least 4 points")
    if sigma.order > 1 and sigma.min_separation() < 10.0 * delta:
        raise ValueError("atoms must be separated by at least 10 delta")
    if np.min(sigma.weights) < 0.1:
        raise ValueError("weights must be at least 0.1")
    vals = [bubble(BubbleConfig(sigma, lam, delta)).pairing(op) for lam in lam_grid]
    return _slope(np.log(lam_grid), np.asarray(vals))[0]


def eigen_pairing_decay(op, sigma, lam, delta, spec=None):
    """``max_i |int v_i phi_{lam,sigma} dV|`` over the negative eigenfields."""
    if op.kbar == 0:
        return 0.0
    spec = spec or spectrum(op, op.kbar)
    u = bubble(BubbleConfig(sigma, lam, delta))
    return float(max(abs(u.bubble_integral_against(v)) for v in spec.negative_fields))
