"""Formal barycenters, their dual-C^1 metric, stratum homotopies and Psi.

A barycenter is a finite atomic probability measure ``sum t_i delta_{x_i}``.
Distances are bounded-Lipschitz dual norms

    ||mu - nu|| = sup { int f d(mu - nu) : sup|f| <= 1, Lip f <= 1 },

computed exactly.  With this (max) convention the primal problem is a
transport with unit deletion cost per unit of unmatched mass on either side,
so the distance between two Dirac masses is ``min(2, d(x, y))``.  When the
weights of the target are free the primal solves in closed form: every unit
of mass goes to its nearest atom, and

    dist(mu, {sum_y w_y delta_y : w free}) = int min(2, d(x, Y)) dmu(x).

Stratum distances and the projections ``P_j`` are therefore capped
``j``-median problems in the atom positions.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

from .geometry import riemannian_center
from .functional import Measure, density_measure, energy, s_vector

__all__ = [
    "Barycenter",
    "AkkPoint",
    "MetricConfig",
    "bary_distance",
    "measure_distance",
    "stratum_distance",
    "stratum_margin",
    "check_stratum_bounds",
    "project_Pj",
    "homotopy_T",
    "hat_homotopy",
    "cascade_scales",
    "psi_hat",
    "psi",
    "akk_distance",
    "dictionary_distance",
    "smooth_cutoff",
]


def _exact_simplex(w):
    """Nonnegative weights whose float sum is exactly 1."""
    w = np.asarray(w, float).copy()
    w /= math.fsum(w)
    i = int(np.argmax(w))
    for _ in range(8):
        w[i] += 1.0 - math.fsum(w)
        if math.fsum(w) == 1.0 and sum(w.tolist()) == 1.0:
            break
    return w


@dataclass(frozen=True)
class Barycenter:
    """Atomic probability measure ``sum_i t_i delta_{x_i}`` in canonical form.

    Zero weights are dropped, atoms closer than ``merge_tol`` are merged and
    the weights are rescaled so that they sum to exactly 1.

    Parameters
    ----------
    manifold : ModelManifold
    atoms : array_like, shape (m, dim)
    weights : array_like, shape (m,)
    """

    manifold: object
    atoms: np.ndarray
    weights: np.ndarray

    def __init__(self, manifold, atoms, weights, merge_tol=1e-9):
        M = manifold.base
        x = np.atleast_2d(np.asarray(atoms, float))
        t = np.atleast_1d(np.asarray(weights, float))
        if len(x) != len(t):
            raise ValueError("atoms and weights differ in length")
        if np.any(t < -1e-15):
            raise ValueError("weights must be nonnegative")
        if abs(t.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {t.sum()}, not 1")
        keep = t > 0
        x = np.array([M.canonical(p) for p in x[keep]])
        t = t[keep]
        ax, at = [], []
        for p, w in zip(x, t):
            for j, q in enumerate(ax):
                if M.dist(p, q) < merge_tol:
                    at[j] += w
                    break
            else:
                ax.append(p)
                at.append(w)
        x = np.array(ax)
        t = _exact_simplex(at)
        x.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "manifold", M)
        object.__setattr__(self, "atoms", x)
        object.__setattr__(self, "weights", t)

    @classmethod
    def dirac(cls, manifold, x):
        return cls(manifold, [x], [1.0])

    @property
    def order(self):
        """Number of atoms."""
        return len(self.weights)

    def min_separation(self):
        if self.order < 2:
            return np.inf
        d = self.manifold.dist(self.atoms[:, None, :], self.atoms[None, :, :])
        return float(d[~np.eye(self.order, dtype=bool)].min())

    def as_measure(self):
        return Measure(self.manifold, np.array(self.atoms), np.array(self.weights))

    def to_json(self):
        return {"atoms": self.atoms.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_json(cls, manifold, rec):
        return cls(manifold, rec["atoms"], rec["weights"])

    def __repr__(self):
        return f"Barycenter(order={self.order}, weights={np.round(self.weights, 6).tolist()})"


@dataclass(frozen=True)
class AkkPoint:
    """Point ``(sigma, s)`` of ``A_{k,kbar}``; ``|s| = 1`` collapses ``sigma``."""

    sigma: Barycenter
    s: np.ndarray

    @property
    def norm_s(self):
        return float(np.linalg.norm(self.s)) if np.size(self.s) else 0.0


@dataclass
class MetricConfig:
    """Conventions for the dual-C^1 metric.

    Attributes
    ----------
    convention : {"max", "sum"}
        Unit ball ``max(sup|f|, Lip f) <= 1`` or ``sup|f| + Lip f <= 1``.
    n_dictionary : int
        Minimal number of functions in the brute-force dictionary.
    lp_tol : float
        Accepted duality gap of the cutting-plane solver.
    """

    convention: str = "max"
    n_dictionary: int = 2000
    lp_tol: float = 1e-12


DEFAULT_METRIC = MetricConfig()


# ---------------------------------------------------------------------------
# exact distances

def _union_support(M, mus):
    """Merge the supports of several atomic measures into one point list."""
    pts = []
    vals = []
    for sign, (x, t) in mus:
        for p, w in zip(x, t):
            for j, q in enumerate(pts):
                if M.dist(p, q) < 1e-12:
                    vals[j] += sign * w
                    break
            else:
                pts.append(np.asarray(p, float))
                vals.append(sign * w)
    return np.array(pts), np.array(vals)


def _dual_lp(M, pts, c, convention):
    """``max sum c_p f_p`` over unit-ball test functions on ``pts``."""
    n = len(pts)
    if n == 0 or np.all(c == 0):
        return 0.0
    D = M.dist(pts[:, None, :], pts[None, :, :])
    I, J = np.nonzero(~np.eye(n, dtype=bool))
    if convention == "max":
        A = np.zeros((len(I), n))
        A[np.arange(len(I)), I] = 1.0
        A[np.arange(len(I)), J] = -1.0
        res = linprog(-c, A_ub=A, b_ub=D[I, J], bounds=[(-1.0, 1.0)] * n, method="highs")
    elif convention == "sum":
        # variables (f, m, L): |f| <= m, f_p - f_q <= L d_pq, m + L <= 1
        rows = []
        b = []
        for i, j in zip(I, J):
            r = np.zeros(n + 2)
            r[i], r[j], r[n + 1] = 1.0, -1.0, -D[i, j]
            rows.append(r)
            b.append(0.0)
        for i in range(n):
            for s in (1.0, -1.0):
                r = np.zeros(n + 2)
                r[i], r[n] = s, -1.0
                rows.append(r)
                b.append(0.0)
        r = np.zeros(n + 2)
        r[n] = r[n + 1] = 1.0
        rows.append(r)
        b.append(1.0)
        obj = np.concatenate([-c, [0.0, 0.0]])
        res = linprog(obj, A_ub=np.array(rows), b_ub=np.array(b),
                      bounds=[(None, None)] * n + [(0, None), (0, None)], method="highs")
    else:
        raise ValueError(f"unknown norm convention {convention!r}")
    if res.status != 0:
        raise RuntimeError(f"distance LP failed: {res.message}")
    return float(-res.fun)


def bary_distance(s1, s2, cfg=DEFAULT_METRIC):
    """Exact dual-C^1 distance between two barycenters (linear program)."""
    M = s1.manifold
    if s2.manifold is not M:
        raise ValueError("barycenters live on different manifolds")
    pts, c = _union_support(M, [(1.0, (s1.atoms, s1.weights)), (-1.0, (s2.atoms, s2.weights))])
    return max(_dual_lp(M, pts, c, cfg.convention), 0.0)


def _as_points(M, mu):
    if isinstance(mu, Barycenter):
        return np.array(mu.atoms), np.array(mu.weights)
    if isinstance(mu, Measure):
        return mu.points, mu.masses
    mu = density_measure(mu)
    return mu.points, mu.masses


def measure_distance(mu, sigma, tol=1e-12, maxiter=500):
    """Exact max-convention distance between a measure and a barycenter.

    Minimizes the dual ``F(b) = sum_y nu_y b_y + sum_x mu_x max(0, max_y(2 -
    d_xy - b_y))`` over ``b >= 0`` (one variable per atom) with Kelley's
    cutting-plane method, which terminates on polyhedral functions.

    Returns
    -------
    float

    Raises
    ------
    RuntimeError
        If the duality gap stays above ``tol`` (reported in the message).
    """
    M = sigma.manifold
    x, m = _as_points(M, mu)
    total = float(np.sum(m))
    g = 2.0 - M.dist(x[:, None, :], sigma.atoms[None, :, :])
    nu = np.asarray(sigma.weights)
    k = len(nu)

    def F(b):
        h = g - b[None, :]
        j = np.argmax(h, axis=1)
        hv = h[np.arange(len(h)), j]
        pos = hv > 0
        val = float(nu @ b + np.sum(m[pos] * hv[pos]))
        sub = nu.copy()
        np.subtract.at(sub, j[pos], m[pos])
        return val, sub

    cuts_a, cuts_c = [], []
    b = np.zeros(k)
    best = np.inf
    lower = -np.inf
    for _ in range(maxiter):
        val, sub = F(b)
        best = min(best, val)
        cuts_a.append(np.concatenate([sub, [-1.0]]))
        cuts_c.append(float(sub @ b - val))
        res = linprog(np.concatenate([np.zeros(k), [1.0]]), A_ub=np.array(cuts_a), b_ub=np.array(cuts_c),
                      bounds=[(0.0, 2.0)] * k + [(None, None)], method="highs")
        if res.status != 0:
            raise RuntimeError(f"cutting-plane LP failed: {res.message}")
        lower = float(res.fun)
        b = res.x[:k]
        if best - lower <= tol * max(1.0, abs(best)):
            break
    else:
        raise RuntimeError(f"distance solver did not converge (duality gap {best - lower:.3e})")
    return total + 1.0 - best


def dictionary_distance(s1, s2, cfg=DEFAULT_METRIC, rng=None):
    """Brute-force lower bound: maximum over a dictionary of unit-ball functions.

    The dictionary holds McShane envelopes ``clip(min_q (a_q + d(., q)))`` and
    ``clip(max_q (a_q - d(., q)))`` anchored on subsets of the union support
    with anchor values ``a in {-1, 0, 1}``, plus ``cfg.n_dictionary`` random
    feasible functions improved by coordinate ascent.  Each candidate is a
    vector of values on the support satisfying ``|f| <= 1`` and
    ``|f_p - f_q| <= d(p, q)``, hence extends (McShane) to a unit-ball
    function on the manifold.
    """
    M = s1.manifold
    rng = np.random.default_rng(0) if rng is None else rng
    pts, c = _union_support(M, [(1.0, (s1.atoms, s1.weights)), (-1.0, (s2.atoms, s2.weights))])
    n = len(pts)
    if n == 0:
        return 0.0
    D = M.dist(pts[:, None, :], pts[None, :, :])
    pool = []
    for a in itertools.product((-1.0, 0.0, 1.0, np.inf), repeat=n):
        a = np.asarray(a)
        if np.all(np.isinf(a)):
            continue
        pool.append(np.clip(np.min(a[None, :] + D, axis=1), -1.0, 1.0))
        pool.append(np.clip(np.max(-a[None, :] - D, axis=1), -1.0, 1.0))
        if len(pool) >= 20 * cfg.n_dictionary:
            break
    # random feasible starts, each improved by coordinate ascent: every
    # coordinate moves to the end of its feasible interval favoured by c
    F = rng.uniform(-1.0, 1.0, (cfg.n_dictionary, n))
    F = np.clip(np.min(F[:, None, :] + D[None, :, :], axis=2), -1.0, 1.0)
    groups = np.array_split(np.arange(len(F)), 64)
    for g in groups:
        for _ in range(4):
            for p in rng.permutation(n):
                others = np.arange(n) != p
                if c[p] > 0:
                    F[g, p] = np.minimum(1.0, np.min(F[g][:, others] + D[p, others], axis=1, initial=1.0))
                elif c[p] < 0:
                    F[g, p] = np.maximum(-1.0, np.max(F[g][:, others] - D[p, others], axis=1, initial=-1.0))
    pool.extend(F)
    return max(0.0, max(float(f @ c) for f in pool))


# ---------------------------------------------------------------------------
# capped j-median: distances to the strata M_j

def _capped_cost(M, x, m, Y):
    d = np.min(M.dist(x[:, None, :], Y[None, :, :]), axis=1)
    return float(np.sum(m * np.minimum(d, 2.0)))


def _weiszfeld(M, x, m, y, iters=30, tol=1e-10):
    """Weighted geometric median near ``y`` (manifold Weiszfeld iteration)."""
    for _ in range(iters):
        v = M.log(y, x)
        d = np.linalg.norm(v, axis=-1)
        if np.any((d < 1e-14) & (m > 0)):
            # an atom sits on the current point: keep it if it dominates
            w0 = float(np.sum(m[d < 1e-14]))
            rest = d >= 1e-14
            grad = np.sum((m[rest] / d[rest])[:, None] * v[rest], axis=0)
            if np.linalg.norm(grad) <= w0:
                return y
            d = np.where(rest, d, np.inf)
        w = m / np.maximum(d, 1e-300)
        step = np.sum(w[:, None] * v, axis=0) / np.sum(w)
        y_new = M.exp(y, step)
        if np.linalg.norm(step) < tol:
            return M.canonical(y_new)
        y = y_new
    return M.canonical(y)


def _lloyd(M, x, m, Y, iters=40):
    Y = np.array(Y, float)
    cost = _capped_cost(M, x, m, Y)
    for _ in range(iters):
        d = M.dist(x[:, None, :], Y[None, :, :])
        lab = np.argmin(d, axis=1)
        near = np.min(d, axis=1) < 2.0
        Yn = Y.copy()
        for l in range(len(Y)):
            sel = (lab == l) & near & (m > 0)
            if np.any(sel):
                Yn[l] = _weiszfeld(M, x[sel], m[sel], Y[l], iters=5)
        new = _capped_cost(M, x, m, Yn)
        if new < cost:
            done = cost - new < 1e-14
            Y, cost = Yn, new
            if done:
                break
        else:
            break
    return Y, cost


def _partitions(n, j):
    """Set partitions of ``range(n)`` into exactly ``j`` blocks."""
    def rec(i, blocks):
        if i == n:
            if len(blocks) == j:
                yield [list(b) for b in blocks]
            return
        if len(blocks) + (n - i) < j:
            return
        for b in blocks:
            b.append(i)
            yield from rec(i + 1, blocks)
            b.pop()
        if len(blocks) < j:
            blocks.append([i])
            yield from rec(i + 1, blocks)
            blocks.pop()
    yield from rec(0, [])


def _seed_measure(M, x, m, j):
    """Greedy seeds: the heaviest node, then repeatedly the node maximizing
    ``m_x min(2, d(x, seeds))``."""
    seeds = [x[int(np.argmax(m))]]
    d = np.minimum(M.dist(x, seeds[0][None, :]), 2.0)
    while len(seeds) < j:
        i = int(np.argmax(m * d))
        seeds.append(x[i])
        d = np.minimum(d, M.dist(x, x[i][None, :]))
    return np.array(seeds)


def _best_fit(mu, j, M):
    """Best ``j``-atom fit: positions, weights, distance."""
    x, m = _as_points(M, mu)
    x = np.asarray(x, float)
    m = np.asarray(m, float) / np.sum(m)
    if isinstance(mu, Barycenter) and mu.order <= 5 and mu.order > j:
        best = None
        for blocks in _partitions(mu.order, j):
            Y = []
            for b in blocks:
                w = m[b] / m[b].sum()
                Y.append(_weiszfeld(M, x[b], m[b], x[b][np.argmax(w)]))
            Y, c = _lloyd(M, x, m, np.array(Y))
            if best is None or c < best[1] - 1e-15:
                best = (Y, c)
        Y, cost = best
    elif isinstance(mu, Barycenter) and mu.order <= j:
        Y, cost = np.array(x), 0.0
    else:
        if isinstance(mu, Barycenter):
            # local descent from the heaviest atoms
            Y0 = x[np.argsort(-m, kind="stable")[:j]]
        else:
            Y0 = _seed_measure(M, x, m, j)
        Y, cost = _lloyd(M, x, m, Y0)
    d = M.dist(x[:, None, :], Y[None, :, :])
    lab = np.argmin(d, axis=1)
    w = np.bincount(lab, weights=m, minlength=len(Y))
    return np.asarray(Y), w, cost


def stratum_distance(mu, j, M=None):
    """``dist(mu, M_j)`` for a barycenter or a measure (capped ``j``-median)."""
    M = (mu.manifold if M is None else M).base
    return _best_fit(mu, j, M)[2]


def stratum_margin(sigma, j):
    """``d_j(sigma) = dist(sigma, M_j)``; exhaustive merge search for ``<= 5`` atoms."""
    if j < 1:
        raise ValueError("j must be >= 1")
    if sigma.order <= j:
        return 0.0
    return stratum_distance(sigma, j)


def check_stratum_bounds(sigma, eps):
    """Check the weight and separation bounds of elements of ``M_j(eps)``.

    For ``sigma`` with ``j`` atoms: if ``d_{j-1}(sigma) > eps`` then all weights
    and all mutual distances must be at least ``eps / 2``.

    Returns
    -------
    dict
        ``applicable`` (margin exceeds eps), ``holds``, ``margin``,
        ``min_weight`` and ``min_distance``.
    """
    j = sigma.order
    margin = stratum_margin(sigma, j - 1) if j >= 2 else np.inf
    out = {"margin": margin, "min_weight": float(np.min(sigma.weights)),
           "min_distance": sigma.min_separation(), "applicable": bool(margin > eps)}
    out["holds"] = (not out["applicable"]) or (out["min_weight"] >= eps / 2 and out["min_distance"] >= eps / 2)
    return out


def project_Pj(mu, j, eps, M=None, check=True):
    """Projection onto ``M_j(eps / 2)`` by a best ``j``-atom fit.

    A ``j``-atom barycenter is returned unchanged.

    Raises
    ------
    ValueError
        If the fit leaves ``M_j(eps / 2)`` (the input is too far from the
        stratum for the projection to be defined).
    """
    M = (mu.manifold if M is None else M).base
    if isinstance(mu, Barycenter) and mu.order == j:
        return mu
    Y, w, _ = _best_fit(mu, j, M)
    keep = w > 0
    if check and np.sum(keep) < j:
        raise ValueError("projection degenerates: an atom receives no mass")
    out = Barycenter(M, Y[keep], w[keep] / w[keep].sum())
    if check and j >= 2:
        margin = stratum_margin(out, j - 1)
        if margin <= eps / 2:
            raise ValueError(f"projection lands outside M_j(eps/2) (margin {margin:.3g} <= {eps / 2:.3g})")
    return out


# ---------------------------------------------------------------------------
# homotopies

def smooth_cutoff(t, a, b):
    """Non-increasing C^2 cutoff: 1 for ``t <= a``, 0 for ``t >= b``."""
    s = np.clip((np.asarray(t, float) - a) / (b - a), 0.0, 1.0)
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


def _geodesic_point(M, x, y, s):
    """Point at parameter ``s`` on the geodesic from ``x`` to ``y``."""
    if s == 0.0:
        return np.array(x, float)
    return M.exp(x, s * M.log(x, y))


def homotopy_T(sigma, j, t, eta, anchors=None, eps=None, eps_hat=None):
    """The deformation ``T^t_j`` towards the stratum ``M_j``.

    Parameters
    ----------
    sigma : Barycenter
    j : int
    t : float in [0, 1]
    eta : float
        Cutoff scale; atoms within ``eta / 8`` of an anchor are collapsed,
        atoms in the annulus ``eta / 8 .. eta / 4`` are interpolated.
    anchors : Barycenter, optional
        The projection ``P_j(sigma)`` (computed when omitted).
    eps, eps_hat : float, optional
        When given, the precondition ``dist(sigma, P_j(sigma)) < eps_hat`` and
        ``P_j(sigma) in M_j(eps / 2)`` is enforced.

    Returns
    -------
    Barycenter
    """
    M = sigma.manifold
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    if anchors is None:
        if sigma.order < j:
            raise ValueError("sigma lies in a lower stratum than M_j")
        anchors = project_Pj(sigma, j, eps if eps is not None else 0.0, check=eps is not None)
    if eps_hat is not None and bary_distance(sigma, anchors) >= eps_hat:
        raise ValueError("sigma is too far from the stratum for the homotopy")
    if t == 0.0:
        return sigma
    x, w = sigma.atoms, sigma.weights
    y = anchors.atoms
    D = M.dist(x[:, None, :], y[None, :, :])
    lab = np.argmin(D, axis=1)
    d = D[np.arange(len(x)), lab]
    rho = smooth_cutoff(d, eta / 16.0, eta / 8.0)
    core = d < eta / 8.0
    ann = (~core) & (d < eta / 4.0)
    centers = []
    for l in range(len(y)):
        sel = core & (lab == l)
        Tl = float(np.sum(rho[sel] * w[sel]))
        if Tl <= 0.0:
            raise ValueError("an anchor atom has no mass within eta/16: sigma too far from the stratum")
        ww = rho[sel] * w[sel] / Tl
        centers.append(riemannian_center(M, x[sel], _exact_simplex(ww)) if sel.sum() > 1 else x[sel][0])
    tt = np.empty(len(x))
    xx = np.empty_like(x)
    for i in range(len(x)):
        if core[i]:
            tt[i] = ((1.0 - t) + t * rho[i]) * w[i]
            xx[i] = _geodesic_point(M, x[i], centers[lab[i]], t)
        elif ann[i]:
            z = 8.0 / eta * d[i] - 1.0
            tt[i] = (1.0 - t) * w[i]
            xx[i] = _geodesic_point(M, x[i], centers[lab[i]], t * (1.0 - z))
        else:
            tt[i] = (1.0 - t) * w[i]
            xx[i] = x[i]
    # renormalization: (1 - t) T~(sigma, 0) + sum_l T~_l(sigma, t)
    T0 = 1.0 - math.fsum(w[core])
    denom = (1.0 - t) * T0 + math.fsum(tt[core])
    return Barycenter(M, xx, _exact_simplex(tt / denom))


def _match(M, a, b):
    """Match atoms of two ``j``-atom barycenters by minimal total distance."""
    C = M.dist(a.atoms[:, None, :], b.atoms[None, :, :])
    r, c = linear_sum_assignment(C)
    return r, c


def hat_homotopy(sigma, j, t, eta, eps=None, eps_hat=None, anchors=None):
    """``T^{2t}_j`` for ``t <= 1/2``, then interpolation from ``T^1_j(sigma)`` to ``P_j(sigma)``.

    The second half moves matched atoms along geodesics and weights linearly.
    """
    M = sigma.manifold
    if anchors is None:
        anchors = project_Pj(sigma, j, eps if eps is not None else 0.0, check=eps is not None) \
            if sigma.order >= j else None
    if anchors is None:
        raise ValueError("sigma lies in a lower stratum than M_j")
    if t <= 0.5:
        return homotopy_T(sigma, j, 2.0 * t, eta, anchors, eps, eps_hat)
    a = homotopy_T(sigma, j, 1.0, eta, anchors, eps, eps_hat)
    if t >= 1.0:
        return anchors
    s = 2.0 * t - 1.0
    if a.order != anchors.order:
        raise ValueError("T^1 does not land on the stratum")
    r, c = _match(M, a, anchors)
    pts = [_geodesic_point(M, a.atoms[i], anchors.atoms[k], s) for i, k in zip(r, c)]
    wts = [(1.0 - s) * a.weights[i] + s * anchors.weights[k] for i, k in zip(r, c)]
    return Barycenter(M, pts, _exact_simplex(wts))


# ---------------------------------------------------------------------------
# the map Psi

def cascade_scales(k, eps1=0.08, factor=50.0):
    """``eps_1 > eps_2 > ...`` with ``eps_{j+1} = eps_j^2 / factor``."""
    out = [float(eps1)]
    for _ in range(k - 1):
        out.append(out[-1] ** 2 / factor)
    return out


def _hat_params(scales, l, C_eta):
    """``(eps, eps_hat, eta)`` for the deformation ``T^_l``."""
    eps = 4.0 * scales[l - 2] if l >= 2 else 2.0
    eps_hat = 4.0 * scales[l - 1]
    return eps, eps_hat, C_eta * math.sqrt(eps_hat)


def psi_hat(u, k, op=None, curvature=None, L_hat=None, eps1=0.08, factor=50.0, C_eta=0.5,
            manifold=None, trace=None):
    """The map ``Psi^`` from a low sublevel into ``M_k``.

    Finds the first ``j`` with ``f_j(dist(e^{4u}, M_j)) = 1`` and returns
    ``T^_1^{f_1} o ... o T^_{j-1}^{f_{j-1}} o P_j(e^{4u})``.  When no ``j <= k``
    qualifies the cascade falls back to ``j = k`` and records it in the trace.

    Parameters
    ----------
    u : ScalarField, BubbleField or Measure
        A field (its volume density is used) or a nonnegative measure.
    k : int
    op, curvature, L_hat : optional
        When all given, ``II(u) <= -L_hat`` and ``|s(u)| <= 1`` are enforced.
    trace : list, optional
        Receives one dict per stratum with the distance, scale and cutoff.

    Returns
    -------
    Barycenter
    """
    if op is not None and curvature is not None and L_hat is not None and not isinstance(u, Measure):
        e = energy(op, curvature, u).total
        if e > -L_hat:
            raise ValueError(f"not in the sublevel: II(u) = {e:.6g} > -{L_hat}")
        sv = s_vector(op, u)
        if np.linalg.norm(sv) > 1.0:
            raise ValueError("hypothesis |u_hat| <= 1 violated")
    mu = u if isinstance(u, Measure) else density_measure(u)
    M = (mu.manifold if manifold is None else manifold).base
    mu = mu.normalized()
    scales = cascade_scales(k, eps1, factor)
    trace = [] if trace is None else trace
    fits = {}
    chosen = None
    for j in range(1, k + 1):
        Y, w, dist = _best_fit(mu, j, M)
        fits[j] = (Y, w, dist)
        f = float(smooth_cutoff(dist, scales[j - 1], 2.0 * scales[j - 1]))
        trace.append({"j": j, "distance": dist, "eps_j": scales[j - 1], "f_j": f})
        if f == 1.0:
            chosen = j
            break
    fallback = chosen is None
    if fallback:
        chosen = k
    trace.append({"chosen_j": chosen, "fallback": fallback})
    Y, w, _ = fits[chosen]
    keep = w > 0
    sigma = Barycenter(M, Y[keep], w[keep] / w[keep].sum())
    for l in range(chosen - 1, 0, -1):
        f = trace[l - 1]["f_j"]
        if f == 0.0 or sigma.order <= l:
            continue
        eps, eps_hat, eta = _hat_params(scales, l, C_eta)
        sigma = hat_homotopy(sigma, l, f, eta)
    return sigma


def psi(op, u, k, sigma_bar=None, **kw):
    """The map ``Psi`` into ``A_{k,kbar}`` (or the unit sphere when ``k = 0``)."""
    s = s_vector(op, u)
    ns = float(np.linalg.norm(s)) if s.size else 0.0
    M = op.manifold.base
    if k == 0:
        if ns == 0.0:
            raise ValueError("s(u) = 0: the direction is undefined")
        return s / ns
    if sigma_bar is None:
        sigma_bar = Barycenter.dirac(M, M.base_point())
    if ns > 1.0:
        return AkkPoint(sigma_bar, s / ns)
    return AkkPoint(psi_hat(u, k, **kw), s)


def akk_distance(a, b):
    """Distance on ``A_{k,kbar}`` collapsing the barycenter factor at ``|s| = 1``.

    ``|s - s'| + (1 - max(|s|, |s'|))_+ * dist(sigma, sigma')``.
    """
    ds = float(np.linalg.norm(np.asarray(a.s) - np.asarray(b.s))) if np.size(a.s) else 0.0
    scale = max(0.0, 1.0 - max(a.norm_s, b.norm_s))
    return ds + scale * bary_distance(a.sigma, b.sigma)
