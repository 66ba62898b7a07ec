"""The functional II, its rho-family, residuals, Adams checks and concentration.

    II(u)     = <P u, u> + 4 int Q u dV - k_P log int e^{4u} dV
    II_rho(u) = <P u, u> + 4 rho int Q u dV - rho k_P log int e^{4u} dV

Fields are either grid ``ScalarField`` instances or composite bubble fields
from :mod:`qcurv.bubbles`, which evaluate the same quantities with radial
quadrature.  Any object exposing ``energy_parts(op, curvature)`` and
``volume_measure()`` is accepted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import ScalarField, Sphere, Torus, integrate
from .paneitz import band_index, plus_pairing, spectrum

__all__ = [
    "EnergyBreakdown",
    "ConcentrationVerdict",
    "Measure",
    "energy",
    "energy_rho",
    "euler_residual",
    "log_volume",
    "normalize_volume",
    "adams_gap",
    "improved_adams_check",
    "concentration_detect",
    "covering_net",
    "density_measure",
    "sublevel_concentration",
    "s_vector",
]

EIGHT_PI2 = 8.0 * np.pi**2


@dataclass(frozen=True)
class EnergyBreakdown:
    """Terms of ``II_rho``; ``total`` is their sum."""

    quadratic: float
    linear: float
    logterm: float
    rho: float = 1.0

    @property
    def total(self):
        return self.quadratic + self.linear + self.logterm

    def as_dict(self):
        return {"quadratic": self.quadratic, "linear": self.linear,
                "logterm": self.logterm, "total": self.total, "rho": self.rho}


def log_volume(u):
    """``log int e^{4u} dV`` with a max shift against overflow."""
    if not isinstance(u, ScalarField):
        return u.log_volume()
    a = 4.0 * u.values
    m = float(np.max(a))
    return m + float(np.log(np.sum(u.manifold.weights * np.exp(a - m))))


def _parts(op, curvature, u):
    if isinstance(u, ScalarField):
        quad = op.pairing(u, u)
        lin = integrate(curvature.Q * u.on(curvature.manifold))
        return quad, lin, log_volume(u)
    return u.energy_parts(op, curvature)


def energy_rho(op, curvature, u, rho):
    """Breakdown of ``II_rho(u)``."""
    quad, lin, lv = _parts(op, curvature, u)
    return EnergyBreakdown(quad, 4.0 * rho * lin, -rho * curvature.k_P * lv, float(rho))


def energy(op, curvature, u):
    """Breakdown of ``II(u)``."""
    return energy_rho(op, curvature, u, 1.0)


def euler_residual(op, curvature, u, rho=1.0):
    """``P u + 2 rho Q - 2 rho k_P e^{4u} / int e^{4u}`` (half the gradient)."""
    lv = log_volume(u)
    dens = np.exp(4.0 * u.values - lv)
    vals = op.apply(u).values + 2.0 * rho * curvature.Q.values - 2.0 * rho * curvature.k_P * dens
    return ScalarField(op.manifold, vals)


def normalize_volume(u):
    """Shift ``u`` by a constant so that ``int e^{4u} dV = 1``."""
    c = 0.25 * log_volume(u)
    if isinstance(u, ScalarField):
        return u - c
    return u.shifted(-c)


def s_vector(op, u, spec=None):
    """Components ``int u v_i dV`` on the negative eigenfields."""
    kbar = op.kbar
    if kbar == 0:
        return np.zeros(0)
    spec = spec or spectrum(op, kbar)
    if isinstance(u, ScalarField):
        return np.array([integrate(u.on(op.manifold) * v) for v in spec.negative_fields])
    return np.array([u.integral_against(v) for v in spec.negative_fields])


def _mean(u):
    if isinstance(u, ScalarField):
        return u.mean()
    return u.mean()


def adams_gap(op, u):
    """``log int e^{4(u - ubar)} - <P^+ u, u> / (8 pi^2)``."""
    lv = log_volume(u) - 4.0 * _mean(u)
    if isinstance(u, ScalarField):
        pp = plus_pairing(op, u)
    else:
        quad = u.energy_parts(op, None)[0]
        alpha = s_vector(op, u)
        lams = spectrum(op, op.kbar).negative_eigenvalues if op.kbar else np.zeros(0)
        pp = quad - 2.0 * float(np.sum(lams * alpha**2))
    return lv - pp / EIGHT_PI2


# ---------------------------------------------------------------------------
# measures

@dataclass
class Measure:
    """Finite positive measure ``sum m_i delta_{p_i}`` on a manifold."""

    manifold: object
    points: np.ndarray
    masses: np.ndarray

    @property
    def total(self):
        return float(np.sum(self.masses))

    def normalized(self):
        return Measure(self.manifold, self.points, self.masses / self.total)

    def ball_mass(self, center, radius):
        d = self.manifold.dist(self.points, np.asarray(center, float)[None, :])
        return float(np.sum(self.masses[d < radius]))


def density_measure(u):
    """Measure ``e^{4u} dV`` (grid quadrature or bubble quadrature)."""
    if isinstance(u, ScalarField):
        M = u.manifold
        a = 4.0 * u.values
        m = np.max(a)
        return Measure(M.base, M.nodes(), (M.weights * np.exp(a - m)).ravel() * np.exp(m))
    return u.volume_measure()


def _as_measure(f):
    if isinstance(f, Measure):
        return f
    if isinstance(f, ScalarField):
        M = f.manifold
        return Measure(M.base, M.nodes(), (M.weights * f.values).ravel())
    raise TypeError("density must be a Measure or a ScalarField")


# ---------------------------------------------------------------------------
# improved Adams harness

def improved_adams_check(op, u, regions, delta0, gamma0, S=None, eps_tilde=0.5):
    """Check the hypotheses of the improved Adams inequality and report ratios.

    Parameters
    ----------
    regions : list of (center, radius)
        Geodesic balls ``Omega_i``.
    delta0, gamma0 : float
        Required separation and mass fraction.
    S : float, optional
        Bound on ``sum alpha_i^2``.

    Returns
    -------
    dict
        ``status`` is ``"applicable"``, ``"not-applicable"`` (mass condition
        fails) or ``"hypothesis-violated"`` (``sum alpha^2 > S``).
    """
    M = op.manifold.base
    n = len(regions)
    for i in range(n):
        for j in range(i + 1, n):
            gap = float(M.dist(np.asarray(regions[i][0]), np.asarray(regions[j][0]))) \
                - regions[i][1] - regions[j][1]
            if gap < 0:
                raise ValueError(f"regions {i} and {j} overlap")
            if gap < delta0:
                raise ValueError(f"regions {i} and {j} closer than delta0")
    mu = density_measure(u)
    tot = mu.total
    fracs = np.array([mu.ball_mass(c, r) / tot for c, r in regions])
    alpha = s_vector(op, u)
    ell = n - 1
    quad = op.pairing(u, u) if isinstance(u, ScalarField) else u.energy_parts(op, None)[0]
    centered = log_volume(u) - 4.0 * _mean(u)
    report = {
        "mass_fractions": fracs.tolist(),
        "alpha_sq": float(np.sum(alpha**2)),
        "log_centered_volume": centered,
        "quadratic": quad,
        "improved_gap": centered - quad / (EIGHT_PI2 * (ell + 1) - eps_tilde),
        "adams_gap": centered - quad / EIGHT_PI2,
    }
    if S is not None and report["alpha_sq"] > S:
        report["status"] = "hypothesis-violated"
    elif np.any(fracs < gamma0):
        report["status"] = "not-applicable"
    else:
        report["status"] = "applicable"
    return report


# ---------------------------------------------------------------------------
# concentration detector

@dataclass
class ConcentrationVerdict:
    """Outcome of the covering argument.

    ``status`` is ``"concentrated"`` (at most ``ell`` points carrying mass
    ``>= 1 - eps`` in their ``r``-balls) or ``"separated"`` (``ell + 1``
    points with mass ``>= eps_bar`` in ``r_bar``-balls whose ``2 r_bar``
    enlargements are pairwise disjoint).
    """

    status: str
    points: np.ndarray
    r_bar: float
    eps_bar: float
    h: int
    ell: int
    eps: float
    r: float
    certificate: dict = field(default_factory=dict)


_NET_CACHE = {}


def covering_net(M, radius, max_size=4_000_000):
    """Centers whose ``radius``-balls cover ``M`` (cached per manifold).

    Torus: cubic lattice whose cells have half-diagonal ``radius``.  Sphere:
    nested hyperspherical rings with angular steps ``0.95 radius``.
    """
    M = M.base
    key = (id(M), round(float(radius), 14))
    if key in _NET_CACHE:
        return _NET_CACHE[key]
    if isinstance(M, Torus):
        m = int(np.ceil(2.0 * np.pi / radius))
        if m**4 > max_size:
            raise ValueError(f"covering with {m**4} balls exceeds max_size; use a larger r")
        ax = (np.arange(m) + 0.5) * 2.0 * np.pi / m
        g = np.meshgrid(ax, ax, ax, ax, indexing="ij")
        pts = np.stack([x.ravel() for x in g], axis=-1)
    elif isinstance(M, Sphere):
        pts = _sphere_net(M, radius, max_size)
    else:
        raise TypeError("covering nets exist for base models only")
    _NET_CACHE[key] = pts
    return pts


def _sphere_net(M, radius, max_size):
    step = 0.95 * radius / M.radius
    out = []
    count = 0

    def cells(lo, hi, smax):
        n = max(1, int(np.ceil((hi - lo) * smax / step)))
        edges = np.linspace(lo, hi, n + 1)
        return edges

    def smax_of(a, b):
        if a <= np.pi / 2 <= b:
            return 1.0
        return max(np.sin(a), np.sin(b))

    e1 = cells(0.0, np.pi, 1.0)
    for a1, b1 in zip(e1[:-1], e1[1:]):
        s1 = smax_of(a1, b1)
        t1 = 0.5 * (a1 + b1)
        e2 = cells(0.0, np.pi, s1)
        for a2, b2 in zip(e2[:-1], e2[1:]):
            s2 = s1 * smax_of(a2, b2)
            t2 = 0.5 * (a2 + b2)
            e3 = cells(0.0, np.pi, s2)
            c3 = 0.5 * (e3[:-1] + e3[1:])
            s3 = s2 * np.array([smax_of(a, b) for a, b in zip(e3[:-1], e3[1:])])
            for t3, s in zip(c3, s3):
                nphi = max(1, int(np.ceil(2.0 * np.pi * s / step)))
                ph = (np.arange(nphi) + 0.5) * 2.0 * np.pi / nphi
                blk = np.empty((nphi, 4))
                blk[:, 0], blk[:, 1], blk[:, 2], blk[:, 3] = t1, t2, t3, ph
                out.append(blk)
                count += nphi
                if count > max_size:
                    raise ValueError("covering net exceeds max_size; use a larger r")
    return M.from_chart(np.concatenate(out))


def _chord(M, r):
    if isinstance(M, Sphere):
        return 2.0 * np.sin(min(r / M.radius, np.pi) / 2.0)
    return r


def _tree(M, pts):
    if isinstance(M, Torus):
        return cKDTree(np.mod(pts, 2.0 * np.pi), boxsize=2.0 * np.pi)
    return cKDTree(pts)


def _ball_masses(M, centers, mu, radius):
    tree = _tree(M, mu.points)
    out = np.zeros(len(centers))
    chord = _chord(M, radius) * (1.0 - 1e-12)
    ctree = _tree(M, centers)
    pairs = ctree.sparse_distance_matrix(tree, chord, output_type="coo_matrix")
    np.add.at(out, pairs.row, mu.masses[pairs.col])
    return out


def concentration_detect(f, ell, eps, r, manifold=None, audit=True):
    """Constructive dichotomy of the covering lemma.

    The concentrated branch is tried first (greedy choice of at most ``ell``
    heavy atoms); only when it fails are ``ell + 1`` separated points
    extracted from the covering by balls of radius ``r / 8``, which the
    lemma guarantees to succeed.

    Parameters
    ----------
    f : Measure or ScalarField
        Nonnegative density normalized to total mass 1.
    ell : int
    eps, r : float

    Returns
    -------
    ConcentrationVerdict
    """
    mu = _as_measure(f)
    M = mu.manifold if manifold is None else manifold.base
    if np.any(mu.masses < 0):
        raise ValueError("density must be nonnegative")
    if abs(mu.total - 1.0) > 1e-8:
        raise ValueError(f"density not normalized (total mass {mu.total})")
    pts = _concentration_points(M, mu, ell, eps, r)
    if pts is not None:
        v = ConcentrationVerdict("concentrated", pts, r / 8.0, np.nan, 0, ell, eps, r)
        if audit:
            v.certificate = audit_verdict(v, mu)
        return v
    r_bar = r / 8.0
    centers = covering_net(M, r_bar)
    h = len(centers)
    eps_bar = eps / (2.0 * h)
    masses = _ball_masses(M, centers, mu, r_bar)
    qual = np.nonzero(masses >= eps_bar)[0]
    qual = qual[np.argsort(-masses[qual], kind="stable")]
    chosen = []
    cand = qual
    while len(cand) and len(chosen) < ell + 1:
        j = cand[0]
        chosen.append(j)
        d = M.dist(centers[cand], centers[j][None, :])
        cand = cand[d >= 4.0 * r_bar]
    pts = centers[chosen]
    status = "separated" if len(chosen) >= ell + 1 else "concentrated"
    v = ConcentrationVerdict(status, pts, r_bar, eps_bar, h, ell, eps, r)
    if audit:
        v.certificate = audit_verdict(v, mu)
    return v


def _concentration_points(M, mu, ell, eps, r, n_cand=2000):
    """Greedy search for ``<= ell`` atoms whose ``r``-balls hold mass ``>= 1 - eps``."""
    if ell < 1:
        return None
    cand = np.argsort(-mu.masses, kind="stable")[:n_cand]
    tree = _tree(M, mu.points)
    chord = _chord(M, r) * (1.0 - 1e-12)
    nbrs = tree.query_ball_point(_tree_coords(M, mu.points[cand]), chord)
    left = mu.masses.copy()
    chosen = []
    for _ in range(ell):
        gain = np.array([left[nb].sum() for nb in nbrs])
        i = int(np.argmax(gain))
        chosen.append(cand[i])
        left[nbrs[i]] = 0.0
        if left.sum() <= eps:
            return mu.points[chosen]
    return None


def _tree_coords(M, pts):
    return np.mod(pts, 2.0 * np.pi) if isinstance(M, Torus) else pts


def audit_verdict(v, mu):
    """Re-check a verdict's certificate by direct quadrature."""
    M = mu.manifold
    if v.status == "separated":
        ball = [mu.ball_mass(p, v.r_bar) for p in v.points]
        pd = M.dist(v.points[:, None, :], v.points[None, :, :])
        off = pd[~np.eye(len(v.points), dtype=bool)]
        ok = min(ball) >= v.eps_bar and (off.size == 0 or off.min() >= 4.0 * v.r_bar)
        return {"ball_masses": ball, "min_separation": float(off.min()) if off.size else np.inf,
                "ok": bool(ok)}
    d = np.min(M.dist(mu.points[:, None, :], v.points[None, :, :]), axis=1)
    inside = float(np.sum(mu.masses[d < v.r]))
    return {"mass_inside": inside, "ok": bool(inside >= 1.0 - v.eps and len(v.points) <= v.ell)}


def sublevel_concentration(op, curvature, u, S, eps, r, L, k=None):
    """Concentration points of a low-energy field.

    Returns a dict with ``status`` in ``{"concentrated", "separated",
    "not-in-sublevel", "hypothesis-violated"}`` and the points found.
    """
    alpha = s_vector(op, u)
    if np.sqrt(np.sum(alpha**2)) > S:
        return {"status": "hypothesis-violated", "points": np.zeros((0, op.manifold.base.dim_embed)),
                "norm_hat": float(np.sqrt(np.sum(alpha**2)))}
    e = energy(op, curvature, u).total
    if e > -L:
        return {"status": "not-in-sublevel", "energy": e,
                "points": np.zeros((0, op.manifold.base.dim_embed))}
    if k is None:
        k = max(band_index(curvature.k_P)[0], 1)
    mu = density_measure(u).normalized()
    v = concentration_detect(mu, k, eps, r)
    return {"status": v.status, "energy": e, "points": v.points, "verdict": v}
