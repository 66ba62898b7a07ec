"""Min-max paths, rho-continuation and a flow + Newton solver for

    P u + 2 rho Q = 2 rho k_P e^{4u},        int e^{4u} dV = 1.

Paths over the cone on ``A_{k,kbar}`` are sampled as ``pi(z, t) =
beta(t) Phi_{lambda(t)}(z)``: a two-parameter string in ``(beta, log
lambda)`` shared by all sampled points ``z``.  The boundary condition
``pi(z, 1) = Phi_{S_bar, lam_bar}(z)`` holds exactly because the last node is
pinned at ``(1, log lam_bar)``.  Any such path is admissible, so the refined
sup is an upper estimate of the min-max value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres
from scipy.spatial import cKDTree

from .barycenter import AkkPoint, Barycenter
from .bubbles import TestMapConfig, big_phi
from .functional import (EIGHT_PI2, energy_rho, euler_residual, log_volume,
                         normalize_volume, s_vector)
from .geometry import ScalarField, Torus, integrate
from .paneitz import CurvatureData, band_index, spectrum

__all__ = [
    "ConfigRejected",
    "PathSimplex",
    "SolveConfig",
    "SolveReport",
    "MinmaxEstimate",
    "ManufacturedProblem",
    "initial_path",
    "sample_akk",
    "path_energies",
    "calibrate_L",
    "minmax_value_estimate",
    "minmax_rho_sweep",
    "monotonicity_monitor",
    "flow_solve",
    "continuation",
    "holder_proxy",
    "direct_ps_bound_check",
    "manufacture",
    "weak_limit_check",
]


class ConfigRejected(ValueError):
    """A configuration the scheme refuses (forbidden rho, bad grid)."""


# ---------------------------------------------------------------------------
# paths

def sample_akk(M, k, kbar, n, rng, min_sep=1.0, s_radius=0.5):
    """``n`` points of ``A_{k,kbar}``: equal-weight ``k``-atom barycenters with
    separated atoms and ``|s| <= s_radius``.  The first point uses the base
    point of ``M``."""
    out = []
    for i in range(n):
        for _ in range(1000):
            pts = M.random_points(k, rng)
            if i == 0:
                pts[0] = M.base_point()
            if k == 1 or np.min(M.dist(pts[:, None, :], pts[None, :, :]) + 10 * np.eye(k)) >= min_sep:
                break
        else:
            raise ValueError("could not place separated atoms")
        s = np.zeros(kbar)
        if kbar and i > 0:
            v = rng.standard_normal(kbar)
            s = s_radius * rng.uniform() * v / np.linalg.norm(v)
        out.append(AkkPoint(Barycenter(M, pts, np.full(k, 1.0 / k)), s))
    return out


@dataclass
class PathSimplex:
    """Sampled path ``pi(z, t) = beta(t) Phi_{S_bar, exp(loglam(t))}(z)``.

    Attributes
    ----------
    op : OperatorModel
    zs : list of AkkPoint
        Sample of ``A_{k,kbar}``.
    ts : ndarray
        Cone parameters, ``ts[0] = 0`` (cone point) and ``ts[-1] = 1``.
    beta, loglam : ndarray
        String parameters per ``t`` node.
    S_bar, lam_bar, delta : float
    """

    op: object
    zs: list
    ts: np.ndarray
    beta: np.ndarray
    loglam: np.ndarray
    S_bar: float
    lam_bar: float
    delta: float
    spec: object = None

    def field(self, iz, it):
        return self.field_at(self.zs[iz], self.beta[it], self.loglam[it])

    def field_at(self, z, beta, loglam):
        cfg = TestMapConfig(self.S_bar, float(np.exp(loglam)), tuple(np.asarray(z.s, float)))
        phi = big_phi(self.op, cfg, z.sigma, self.delta, self.spec)
        return phi.scaled(beta)

    @property
    def boundary_ok(self):
        """Last node is exactly ``Phi_{S_bar, lam_bar}``; first is the cone point."""
        return bool(self.ts[-1] == 1.0 and self.beta[-1] == 1.0
                    and self.loglam[-1] == math.log(self.lam_bar)
                    and self.ts[0] == 0.0 and self.beta[0] == 0.0)

    def copy(self, beta=None, loglam=None):
        return PathSimplex(self.op, self.zs, self.ts.copy(),
                           self.beta.copy() if beta is None else np.asarray(beta, float),
                           self.loglam.copy() if loglam is None else np.asarray(loglam, float),
                           self.S_bar, self.lam_bar, self.delta, self.spec)

    def to_json(self):
        return {"t": self.ts.tolist(), "beta": self.beta.tolist(), "log_lambda": self.loglam.tolist(),
                "S_bar": self.S_bar, "lambda_bar": self.lam_bar, "delta": self.delta,
                "z": [{"sigma": z.sigma.to_json(), "s": np.asarray(z.s).tolist()} for z in self.zs]}


def initial_path(op, S_bar, lam_bar, zs, n_t=21, delta=1.0):
    """The path ``(z, t) -> t Phi_{S_bar, lam_bar}(z)``."""
    ts = np.linspace(0.0, 1.0, n_t)
    spec = spectrum(op, op.kbar) if op.kbar else None
    return PathSimplex(op, list(zs), ts, ts.copy(), np.full(n_t, math.log(lam_bar)),
                       float(S_bar), float(lam_bar), float(delta), spec)


def _node_energy(path, curvature, rho, beta, loglam):
    if beta == 0.0:
        z = path.zs[0]
        f = path.field_at(z, 0.0, loglam)
        return energy_rho(path.op, curvature, f, rho).total
    return max(energy_rho(path.op, curvature, path.field_at(z, beta, loglam), rho).total
               for z in path.zs)


def path_energies(path, curvature, rho=1.0):
    """``II_rho(pi(z, t))`` as an array ``(n_z, n_t)``."""
    E = np.empty((len(path.zs), len(path.ts)))
    for i in range(len(path.zs)):
        for j in range(len(path.ts)):
            E[i, j] = energy_rho(path.op, curvature, path.field(i, j), rho).total
    return E


def calibrate_L(path, curvature, rhos=(1.0,), margin=0.05):
    """Largest ``L`` (up to ``margin``) with boundary energies ``< -2L``.

    ``L = -max_{z, rho} II_rho(Phi(z)) / (2 (1 + margin))``.

    Raises
    ------
    ConfigRejected
        If the boundary is not negative (``lam_bar`` too small).
    """
    b = max(energy_rho(path.op, curvature, path.field(i, len(path.ts) - 1), r).total
            for i in range(len(path.zs)) for r in rhos)
    if b >= 0:
        raise ConfigRejected(f"boundary energy {b:.4g} is not negative: increase lambda_bar")
    return -b / (2.0 * (1.0 + margin)), b


@dataclass
class MinmaxEstimate:
    """Refined upper estimate of the min-max value at one ``rho``."""

    rho: float
    estimate: float
    initial: float
    history: list
    lower_guard: float
    boundary_max: float
    L: float
    path: PathSimplex

    @property
    def bracket_ok(self):
        return bool(self.estimate > self.lower_guard and self.boundary_max < -2.0 * self.L)

    def to_json(self):
        return {"rho": self.rho, "estimate": self.estimate, "initial": self.initial,
                "history": list(self.history), "lower_guard": self.lower_guard,
                "boundary_max": self.boundary_max, "L": self.L, "bracket_ok": self.bracket_ok,
                "path": self.path.to_json()}


def _string_sup(path, curvature, rho, beta, loglam, cache):
    """Sup of ``II_rho`` over nodes and midpoints of a string."""
    vals = []
    for b, l in zip(beta, loglam):
        key = (float(b), float(l))
        if key not in cache:
            cache[key] = _node_energy(path, curvature, rho, float(b), float(l))
        vals.append(cache[key])
    mids = []
    for i in range(len(beta) - 1):
        b = 0.5 * (beta[i] + beta[i + 1])
        l = 0.5 * (loglam[i] + loglam[i + 1])
        key = (float(b), float(l))
        if key not in cache:
            cache[key] = _node_energy(path, curvature, rho, float(b), float(l))
        mids.append(cache[key])
    return max(max(vals), max(mids)), np.array(vals)


def _reparametrize(q):
    """Equal arclength redistribution of string nodes ``q`` (n, 2)."""
    seg = np.linalg.norm(np.diff(q, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] <= 0:
        return q
    u = np.linspace(0.0, s[-1], len(q))
    return np.stack([np.interp(u, s, q[:, 0]), np.interp(u, s, q[:, 1])], axis=1)


def minmax_value_estimate(path, curvature, budget=60, rho=1.0, L=None, beta_max=2.0,
                          loglam_min=-2.0, step=0.1, fd=1e-4):
    """Refine the string downhill and return the sup of ``II_rho`` over it.

    Interior nodes take normalized steps against the finite-difference
    gradient of ``II_rho``, then the string is redistributed by arclength.
    A refinement is accepted only if the sup over nodes and midpoints does
    not increase, so the history is non-increasing.  The endpoints (cone
    point and ``t = 1`` boundary) never move.

    Parameters
    ----------
    budget : int
        Maximal number of refinement sweeps.
    L : float, optional
        Sublevel scale; ``calibrate_L`` on the path when omitted.

    Returns
    -------
    MinmaxEstimate
    """
    if not path.zs:
        # trivial band: the cone is a point and the class holds the zero field only
        e0 = energy_rho(path.op, curvature, ScalarField(path.op.manifold, np.zeros(path.op.manifold.shape)),
                        rho).total
        L = 0.0 if L is None else float(L)
        return MinmaxEstimate(float(rho), float(e0), float(e0), [float(e0)], -L / 2.0, float("nan"), L, path)
    if not path.boundary_ok:
        raise ValueError("path violates the boundary condition")
    if L is None:
        L, bmax = calibrate_L(path, curvature, (rho,))
    else:
        bmax = max(energy_rho(path.op, curvature, path.field(i, len(path.ts) - 1), rho).total
                   for i in range(len(path.zs)))
    ell = max(1.0, math.log(path.lam_bar))
    scale = np.array([1.0, ell])
    q = np.stack([path.beta, path.loglam], axis=1) / scale
    cache = {}
    sup, vals = _string_sup(path, curvature, rho, q[:, 0] * scale[0], q[:, 1] * scale[1], cache)
    history = [sup]
    initial = sup
    lo = np.array([0.0, loglam_min / ell])
    hi = np.array([beta_max, math.log(path.lam_bar) / ell])
    h = step
    for _ in range(budget):
        g = np.zeros_like(q)
        for i in range(1, len(q) - 1):
            for d in range(2):
                qq = q[i].copy()
                qq[d] += fd
                e = _node_energy(path, curvature, rho, *(qq * scale))
                g[i, d] = (e - vals[i]) / fd
        gmax = np.max(np.linalg.norm(g, axis=1))
        if gmax == 0:
            break
        while h > 1e-4:
            qn = q.copy()
            qn[1:-1] -= h * g[1:-1] / gmax
            qn[1:-1] = np.clip(qn[1:-1], lo, hi)
            qn = _reparametrize(qn)
            qn[0], qn[-1] = q[0], q[-1]
            new_sup, new_vals = _string_sup(path, curvature, rho, qn[:, 0] * scale[0], qn[:, 1] * scale[1], cache)
            if new_sup <= sup:
                q, sup, vals = qn, new_sup, new_vals
                h = min(1.5 * h, 0.3)
                break
            h *= 0.5
        else:
            break
        history.append(sup)
    refined = path.copy(q[:, 0] * scale[0], q[:, 1] * scale[1])
    refined.beta[0], refined.beta[-1] = 0.0, 1.0
    refined.loglam[-1] = math.log(path.lam_bar)
    return MinmaxEstimate(float(rho), float(sup), float(initial), [float(x) for x in history],
                          -L / 2.0, float(bmax), float(L), refined)


def minmax_rho_sweep(path, curvature, rhos, budget=60, L=None, **kw):
    """Estimates along an ascending ``rho`` grid, warm-starting each refinement
    from the previous refined path."""
    rhos = np.sort(np.asarray(rhos, float))
    if L is None:
        L, _ = calibrate_L(path, curvature, rhos)
    out = []
    cur = path
    for r in rhos:
        est = minmax_value_estimate(cur, curvature, budget, r, L, **kw)
        out.append(est)
        cur = est.path
    return out


def monotonicity_monitor(rhos, estimates, noise=0.0, C=None):
    """Smallest ``C >= 0`` making ``rho -> est/rho - C rho`` non-increasing.

    Parameters
    ----------
    rhos, estimates : array_like
        At least three grid points.
    noise : float
        Tolerated increase of ``est/rho`` between neighbours (estimator noise).
    C : float, optional
        Test a given constant instead of fitting one.

    Returns
    -------
    dict
        ``C``, ``violations`` (pairs exceeding the noise band for the given or
        fitted ``C``) and ``nonincreasing``.
    """
    r = np.asarray(rhos, float)
    e = np.asarray(estimates, float)
    if len(r) < 3:
        raise ValueError("monotonicity monitor needs at least three grid points")
    o = np.argsort(r)
    r, e = r[o], e[o]
    g = e / r
    slopes = (np.diff(g) - noise) / np.diff(r)
    fitted = float(max(0.0, np.max(slopes)))
    Cu = fitted if C is None else float(C)
    h = g - Cu * r
    viol = [(float(r[i]), float(r[i + 1])) for i in range(len(r) - 1) if h[i + 1] - h[i] > noise + 1e-12]
    return {"C": Cu, "fitted_C": fitted, "violations": viol, "nonincreasing": not viol,
            "values": (g - Cu * r).tolist(), "rho": r.tolist(), "noise": noise}


# ---------------------------------------------------------------------------
# solver

@dataclass
class SolveConfig:
    """Solver and continuation settings.

    Attributes
    ----------
    rho_grid : sequence of float
        Continuation grid inside ``[1 - rho0, 1 + rho0]``.
    rho0 : float
        Half-width of the rho window (``<= 0.1``).
    flow_step : float
        Initial step of the preconditioned gradient flow.
    newton_tol : float
        Target sup-norm of the residual.
    max_iter : int
    alpha : float
        Hoelder exponent of the compactness monitor, in ``(0, 1)``.
    guard : float
        Forbidden-value radius around ``8 m pi^2``.
    blowup : float
        ``sup|u - mean u|`` beyond which a run is declared ps-unbounded.
    keep_iterates : bool
        Store every iterate in the report (Palais-Smale diagnostics).
    """

    rho_grid: tuple = (0.95, 0.975, 1.0, 1.025, 1.05)
    rho0: float = 0.05
    flow_step: float = 0.5
    newton_tol: float = 1e-8
    max_iter: int = 200
    alpha: float = 0.5
    guard: float = 0.02 * EIGHT_PI2
    blowup: float = 30.0
    ls_tol: float = 1e-12
    keep_iterates: bool = False

    def __post_init__(self):
        if not 0 < self.rho0 <= 0.1:
            raise ConfigRejected("rho0 must lie in (0, 0.1]")
        g = np.asarray(self.rho_grid, float)
        if g.size == 0 or np.any(np.abs(g - 1.0) > self.rho0 + 1e-12):
            raise ConfigRejected("rho grid must lie in [1 - rho0, 1 + rho0]")
        if not 0 < self.alpha < 1:
            raise ConfigRejected("alpha must lie in (0, 1)")


@dataclass
class SolveReport:
    """Outcome of one solve at fixed ``rho`` with Palais-Smale diagnostics."""

    rho: float
    u: ScalarField
    status: str
    residual_history: list = field(default_factory=list)
    energy_history: list = field(default_factory=list)
    vhat_history: list = field(default_factory=list)
    volume_history: list = field(default_factory=list)
    step_kinds: list = field(default_factory=list)
    calpha: float = float("nan")
    iterates: list = field(default_factory=list)

    @property
    def residual(self):
        return self.residual_history[-1] if self.residual_history else float("inf")

    def to_json(self):
        return {"rho": self.rho, "status": self.status, "residual": self.residual,
                "iterations": len(self.residual_history) - 1, "energy": self.energy_history[-1],
                "vhat_norm": self.vhat_history[-1] if self.vhat_history else 0.0,
                "calpha_proxy": self.calpha, "steps": {k: self.step_kinds.count(k) for k in ("flow", "newton")}}

    def history_rows(self):
        """Rows ``(iteration, kind, residual, energy, vhat, volume)``."""
        kinds = ["start"] + self.step_kinds
        return [(i, kinds[i], self.residual_history[i], self.energy_history[i],
                 self.vhat_history[i] if self.vhat_history else 0.0, self.volume_history[i])
                for i in range(len(self.residual_history))]


class _Discretization:
    """Projectors and preconditioner of the nodal problem.

    On the torus the node grid and the Fourier coefficients are in bijection
    and the equation is collocated at the nodes.  On the sphere the grid has
    more nodes than harmonics, so the equation is projected on the band.
    """

    def __init__(self, op, curvature, rho):
        self.op = op
        self.M = op.manifold
        self.B = self.M.base
        self.rho = rho
        self.kP = curvature.k_P
        self.Q = curvature.Q.on(self.M).values
        self.collocate = isinstance(self.B, Torus)
        self.w = self.M.weights
        self.vol = float(np.sum(self.w))
        shift = 8.0 * abs(rho * self.kP) / self.vol if self.kP else 1.0
        self.inv_symbol = 1.0 / (np.abs(op.symbol) + shift)

    def proj(self, v):
        if self.collocate:
            return v
        return self.B.synthesize(np.where(self.B.band_mask, self.B.analyze(v), 0.0))

    def mean(self, v):
        return float(np.sum(self.w * v)) / self.vol

    def precond(self, v):
        pv = self.B.synthesize(self.inv_symbol * self.B.analyze(v))
        return pv + (v - self.proj(v))

    def residual(self, u):
        r = euler_residual(self.op, _curv(self.Q, self.M), ScalarField(self.M, u), self.rho).values
        return self.proj(r)

    def jac(self, u, v):
        dens = np.exp(4.0 * u - log_volume(ScalarField(self.M, u)))
        Pv = self.op.apply(ScalarField(self.M, v)).values
        return self.proj(Pv - 8.0 * self.rho * self.kP * (dens * v - dens * float(np.sum(self.w * dens * v))))


def _curv(Qvals, M):
    return CurvatureData(ScalarField(M, Qvals))


def _sup(v):
    return float(np.max(np.abs(v)))


def _vhat(op, u, spec):
    if not op.kbar:
        return 0.0
    return float(np.linalg.norm(s_vector(op, u, spec)))


def _newton_step(D, u, r, tol):
    n = u.size
    shape = u.shape

    def A(x):
        x = x.reshape(shape)
        p = D.proj(x)
        p0 = p - D.mean(p)
        out = D.jac(u, p0) + (x - p) + D.mean(x)
        return out.ravel()

    def Mi(x):
        return D.precond(x.reshape(shape)).ravel()

    Aop = LinearOperator((n, n), matvec=A, dtype=float)
    Mop = LinearOperator((n, n), matvec=Mi, dtype=float)
    b = -(r - D.mean(r))
    x, info = gmres(Aop, b.ravel(), M=Mop, rtol=tol, atol=0.0, restart=60, maxiter=20)
    x = x.reshape(shape)
    return D.proj(x) - D.mean(D.proj(x))


def flow_solve(op, curvature, u0, rho=1.0, cfg=None):
    """Volume-preserving gradient flow followed by Newton polish.

    Each iteration first tries a Newton step (GMRES on the linearization in
    the zero-mean band) and keeps it if the sup-norm residual at least
    halves; otherwise it takes a preconditioned gradient-flow step with an
    Armijo line search on ``II_rho``.  After a rejected Newton step the next
    attempt waits until the flow has halved the residual.  Every iterate is renormalized to
    ``int e^{4u} = 1``.

    Returns
    -------
    SolveReport
        ``status`` is ``converged``, ``ps-unbounded`` (energy decreasing with
        growing oscillation) or ``max-iter``.
    """
    cfg = cfg or SolveConfig()
    M = op.manifold
    D = _Discretization(op, curvature, rho)
    curv = _curv(D.Q, M)
    spec = spectrum(op, op.kbar) if op.kbar else None
    u = normalize_volume(ScalarField(M, D.proj(np.asarray(u0.values, float))))
    uv = u.values

    def record(rep, uv, r, e):
        rep.residual_history.append(_sup(r))
        rep.energy_history.append(e.total)
        rep.vhat_history.append(_vhat(op, ScalarField(M, uv), spec))
        rep.volume_history.append(float(np.exp(log_volume(ScalarField(M, uv)))))
        if cfg.keep_iterates:
            rep.iterates.append(ScalarField(M, uv))
        # rho-identity against rho = 1 on the iterate
        e1 = energy_rho(op, curv, ScalarField(M, uv), 1.0)
        gap = e.total / rho - e1.total - (1.0 / rho - 1.0) * e.quadratic
        if abs(gap) > 1e-9 * (1.0 + abs(e.total) + abs(e.quadratic)):
            raise AssertionError(f"rho-identity violated by {gap:.3e}")

    def en(v):
        return energy_rho(op, curv, ScalarField(M, v), rho)

    rep = SolveReport(float(rho), u, "max-iter")
    r = D.residual(uv)
    e = en(uv)
    record(rep, uv, r, e)
    tau = cfg.flow_step
    gate = np.inf
    for it in range(cfg.max_iter):
        if _sup(r) <= cfg.newton_tol:
            rep.status = "converged"
            break
        # Newton attempt, gated after a rejection
        accepted = False
        if _sup(r) <= gate:
            gate = 0.5 * _sup(r)
            try:
                dx = _newton_step(D, uv, r, 1e-12)
                cand = normalize_volume(ScalarField(M, uv + dx)).values
                rc = D.residual(cand)
                if np.all(np.isfinite(rc)) and _sup(rc) <= 0.5 * _sup(r):
                    uv, r, e = cand, rc, en(cand)
                    rep.step_kinds.append("newton")
                    accepted = True
                    gate = np.inf
            except (FloatingPointError, ValueError):
                accepted = False
        if not accepted:
            d = -D.precond(r)
            d = D.proj(d)
            slope = 2.0 * float(np.sum(D.w * r * d))
            t = tau
            while True:
                cand = normalize_volume(ScalarField(M, uv + t * d)).values
                ec = en(cand)
                if ec.total <= e.total + 1e-4 * t * slope + cfg.ls_tol:
                    break
                t *= 0.5
                if t < 1e-14:
                    cand, ec = uv, e
                    break
            if ec.total > e.total + cfg.ls_tol:
                raise AssertionError("flow step increased the energy")
            stalled = cand is uv
            uv, e = cand, ec
            r = D.residual(uv)
            tau = min(2.0 * t, 10.0 * cfg.flow_step)
            rep.step_kinds.append("flow")
            if stalled:
                record(rep, uv, r, e)
                break
        record(rep, uv, r, e)
        osc = _sup(uv - D.mean(uv))
        if not np.isfinite(e.total) or osc > cfg.blowup:
            rep.status = "ps-unbounded"
            break
    else:
        if _sup(r) <= cfg.newton_tol:
            rep.status = "converged"
    if rep.status != "ps-unbounded" and _sup(r) <= cfg.newton_tol:
        rep.status = "converged"
    rep.u = ScalarField(M, uv)
    rep.calpha = holder_proxy(rep.u, cfg.alpha)
    return rep


def _embedding(M, pts):
    if isinstance(M, Torus):
        return np.concatenate([np.cos(pts), np.sin(pts)], axis=-1)
    return pts


def holder_proxy(u, alpha=0.5, neighbours=8):
    """``sup|u| + max |u(p) - u(q)| / d(p, q)^alpha`` over the node graph.

    Edges join every node to its nearest neighbours in an embedding of ``M``.
    """
    M = u.manifold.base
    pts = M.grid_points().reshape(-1, M.dim_embed)
    vals = np.asarray(u.values).ravel()
    tree = cKDTree(_embedding(M, pts))
    _, idx = tree.query(_embedding(M, pts), k=neighbours + 1)
    d = M.dist(pts[:, None, :], pts[idx[:, 1:]])
    ok = d > 1e-12
    q = np.abs(vals[:, None] - vals[idx[:, 1:]])[ok] / d[ok] ** alpha
    return float(np.max(np.abs(vals)) + np.max(q))


def _check_rho(kP, rho, guard):
    if kP > 0:
        k, status = band_index(rho * kP, guard)
        if status == "boundary-forbidden":
            raise ConfigRejected(f"rho = {rho:g} gives rho k_P = {rho * kP:.6g}, within {guard:.3g} of 8*{k}*pi^2")


def continuation(op, curvature, cfg=None, u0=None, rng=None):
    """Solve along ``cfg.rho_grid``, warm-starting each solve from the last.

    Returns
    -------
    dict
        ``reports`` (one SolveReport per rho), ``calpha`` (Hoelder proxies),
        ``blowup_flag`` (proxy exceeding 10x its minimum) and ``lipschitz``
        (``sup|u_rho - u_rho'| / |rho - rho'|`` between converged neighbours).

    Raises
    ------
    ConfigRejected
        If some ``rho k_P`` is within ``cfg.guard`` of ``8 m pi^2``.
    """
    cfg = cfg or SolveConfig()
    kP = curvature.k_P
    for r in cfg.rho_grid:
        _check_rho(kP, r, cfg.guard)
    M = op.manifold
    if u0 is None:
        rng = np.random.default_rng(0) if rng is None else rng
        u0 = ScalarField.random(M.base, rng).on(M) * 1e-3 if not hasattr(M, "conformal_factor") \
            else ScalarField(M, 1e-3 * ScalarField.random(M.base, rng).values)
    reports = []
    u = u0
    for r in cfg.rho_grid:
        rep = flow_solve(op, curvature, u, r, cfg)
        reports.append(rep)
        if rep.status == "converged":
            u = rep.u
    ca = [rep.calpha for rep in reports if rep.status == "converged"]
    lips = []
    for a, b in zip(reports[:-1], reports[1:]):
        if a.status == b.status == "converged":
            lips.append(_sup(a.u.values - b.u.values) / abs(a.rho - b.rho))
    return {"reports": reports, "calpha": [rep.calpha for rep in reports],
            "blowup_flag": bool(ca and max(ca) > 10.0 * min(ca)),
            "lipschitz": lips}


# ---------------------------------------------------------------------------
# Palais-Smale diagnostics

def direct_ps_bound_check(op, curvature, seq, q_tol=1.0, growth=2.0):
    """The two tests of the direct boundedness argument for ``k_P < 8 pi^2``.

    For each ``u_l`` (normalized) it evaluates

    * the V-relation quotient ``q_l = |<P uh, uh> + 4 int Q uh - 4 k_P int e^{4u} uh| / |uh|_inf``
      (must stay below ``q_tol`` for a Palais-Smale sequence) together with
      the implied bound ``|uh|_2 <= c_V (4 |Q|_1 + 4 k_P + q_l) / |lambda_kbar|``;
    * the Adams exponent ``alpha^2 / 8 pi^2 - 1 / k_P`` at
      ``alpha = (1 + sqrt(8 pi^2 / k_P)) / 2``, negative when ``k_P < 8 pi^2``.

    The quotient test is applied to the second half of ``seq``: a
    Palais-Smale sequence only eventually has small derivative, so a flow
    started far from equilibrium may begin with large quotients.

    Raises
    ------
    ValueError
        If ``k_P >= 8 pi^2`` (the argument does not apply).
    """
    kP = curvature.k_P
    if kP >= EIGHT_PI2:
        raise ValueError("direct bound check needs k_P < 8 pi^2 (not applicable)")
    M = op.manifold
    Q = curvature.Q.on(M)
    spec = spectrum(op, op.kbar) if op.kbar else None
    rows = []
    for u in seq:
        u = normalize_volume(u)
        if spec is not None:
            s = s_vector(op, u, spec)
            uh = sum((a * v.values for a, v in zip(s, spec.negative_fields)), np.zeros(M.shape))
        else:
            uh = np.zeros(M.shape)
        uhf = ScalarField(M, uh)
        dens = np.exp(4.0 * u.values)
        rel = op.pairing(uhf, uhf) + 4.0 * integrate(Q * uhf) - 4.0 * kP * integrate(ScalarField(M, dens * uh))
        ninf = _sup(uh)
        q = abs(rel) / ninf if ninf > 0 else 0.0
        tilde = u.values - uh
        osc = _sup(tilde - float(np.sum(M.weights * tilde)) / M.volume)
        rows.append({"vhat_inf": ninf, "vhat_l2": math.sqrt(max(integrate(uhf * uhf), 0.0)),
                     "relation_quotient": q, "complement_osc": osc})
    if spec is not None:
        lam = abs(spec.negative_eigenvalues[-1])
        cV = math.sqrt(sum(_sup(v.values) ** 2 for v in spec.negative_fields))
        q1 = float(integrate(ScalarField(M, np.abs(Q.values))))
        for row in rows:
            row["vhat_bound"] = cV * (4.0 * q1 + 4.0 * kP + row["relation_quotient"]) / lam
    alpha = 0.5 * (1.0 + math.sqrt(EIGHT_PI2 / kP)) if kP > 0 else 1.0
    exponent = alpha**2 / EIGHT_PI2 - (1.0 / kP if kP > 0 else np.inf)
    half = max(1, len(rows) // 2)
    tail = rows[len(rows) - half:]
    v_ok = all(r["relation_quotient"] <= q_tol for r in tail) and \
        all(r["vhat_l2"] <= r.get("vhat_bound", np.inf) for r in rows)
    c_ok = exponent < 0
    first = max(r["complement_osc"] for r in rows[:half])
    last = max(r["complement_osc"] for r in rows[half:]) if rows[half:] else first
    bounded = v_ok and c_ok and last <= growth * first + 1e-12
    return {"rows": rows, "adams_exponent": exponent, "alpha": alpha,
            "v_bound_holds": v_ok, "complement_bound_holds": c_ok,
            "active": "V" if not v_ok else "complement", "bounded": bounded}


@dataclass
class ManufacturedProblem:
    """Curvature data whose equation is solved by ``w_star`` up to a constant."""

    curvature: CurvatureData
    w_star: ScalarField
    Qbar: float
    u_star: ScalarField

    @property
    def k_P(self):
        return self.curvature.k_P


def manufacture(op, w_star, Qbar=None, k_P=None, fine=2):
    """Choose ``Q = Qbar e^{4 w} - P w / 2`` so that ``w`` solves the equation.

    Parameters
    ----------
    op : OperatorModel
    w_star : ScalarField or callable
        A field on ``op.manifold`` (exact at the discrete level), or a function
        of torus points; then ``P w`` is computed on a grid ``fine`` times
        finer and sampled at the nodes, so the discrete solution carries the
        truncation error of the coarse grid.
    Qbar, k_P : float
        Give one: ``k_P = Qbar int e^{4 w}``.

    Returns
    -------
    ManufacturedProblem
        ``u_star = w + log(Qbar / k_P) / 4`` is the normalized solution.
    """
    M = op.manifold
    if (Qbar is None) == (k_P is None):
        raise ValueError("give exactly one of Qbar and k_P")
    if callable(w_star):
        B = M.base
        if not isinstance(B, Torus) or M is not B:
            raise ValueError("analytic manufactured fields are supported on the base torus")
        Mf = Torus(B.resolution * fine)
        from .paneitz import OperatorModel
        opf = OperatorModel(Mf, op.mode, op.overrides)
        wf = ScalarField.from_function(Mf, w_star)
        Pw = opf.apply(wf).values[::fine, ::fine, ::fine, ::fine]
        mass = integrate(ScalarField(Mf, np.exp(4.0 * wf.values)))
        w = ScalarField.from_function(M, w_star)
    else:
        w = w_star.on(M)
        Pw = op.apply(w).values
        mass = integrate(ScalarField(M, np.exp(4.0 * w.values)))
    if Qbar is None:
        Qbar = k_P / mass
    Q = ScalarField(M, Qbar * np.exp(4.0 * w.values) - 0.5 * Pw)
    cd = CurvatureData(Q)
    u_star = w + 0.25 * math.log(Qbar / cd.k_P)
    return ManufacturedProblem(cd, w, float(Qbar), u_star)


def weak_limit_check(op, curvature, seq, u0, rho=1.0, tests=None, tol=1e-6, n_tests=6):
    """Check ``int e^{4 u_l} v -> int e^{4 u0} v`` and the residual of ``u0``.

    Parameters
    ----------
    seq : list of ScalarField
        Normalized iterates.
    tests : list of ScalarField, optional
        Test fields; defaults to the lowest non-constant real modes.

    Returns
    -------
    dict
        ``errors`` per iterate (max over test fields), ``converges`` (tail
        error below ``tol``), ``residual`` of ``u0`` and ``ok``.
    """
    from .paneitz import mode_field, real_modes
    M = op.manifold
    if tests is None:
        keys = [k for k, mu in real_modes(M.base) if mu > 0]
        tests = [mode_field(M.base, k).on(M) for k in keys[:n_tests]] + [ScalarField.constant(M, 1.0)]
    u0 = normalize_volume(u0)
    ref = np.array([integrate(ScalarField(M, np.exp(4.0 * u0.values)) * v) for v in tests])
    errs = []
    for u in seq:
        u = normalize_volume(u)
        val = np.array([integrate(ScalarField(M, np.exp(4.0 * u.values)) * v) for v in tests])
        errs.append(float(np.max(np.abs(val - ref))))
    res = _sup(_Discretization(op, curvature, rho).residual(u0.values))
    conv = bool(errs) and errs[-1] <= tol
    return {"errors": errs, "converges": conv, "residual": res, "ok": conv and res <= tol}
