"""Model 4-manifolds with quadrature, spectral bases and intrinsic geometry.

Two base models are provided:

* ``Torus``: the flat torus ``T^4 = (R / 2 pi Z)^4`` on a uniform tensor grid
  with a full Fourier basis (real FFT).
* ``Sphere``: the round sphere ``S^4`` of radius ``r`` on a Gauss product grid
  in hyperspherical coordinates with an orthonormal real harmonic basis.

``ConformalManifold`` wraps a base model with a conformal factor ``w`` so that
the metric becomes ``e^{2w} g`` and the volume element ``e^{4w} dV_g``.

Points are plain numpy arrays.  On the torus a point is a 4-vector of periodic
coordinates in ``[0, 2 pi)``.  On the sphere a point is a unit vector of
``R^5``; the hyperspherical chart angles ``(theta1, theta2, theta3, phi)`` are
available through ``to_chart`` / ``from_chart``.

The Laplacian follows the geometer's convention (negative semidefinite);
``lap_symbol`` stores the eigenvalues of ``-Delta``.
"""

from __future__ import annotations

import numpy as np
from scipy import special

__all__ = [
    "ModelManifold",
    "Torus",
    "Sphere",
    "ConformalManifold",
    "ScalarField",
    "build_manifold",
    "integrate",
    "geodesic_distance",
    "riemannian_center",
    "conformal_rescale",
    "radial_panels",
]

TWO_PI = 2.0 * np.pi
AREA_S3 = 2.0 * np.pi**2


class ModelManifold:
    """Common interface of the discretized model manifolds.

    Attributes
    ----------
    kind : str
        ``"torus"``, ``"sphere"`` or ``"conformal"``.
    resolution : int
        Nodes per axis (torus) or maximal harmonic degree (sphere).
    shape : tuple of int
        Shape of the node grid.
    weights : ndarray
        Positive quadrature weights (volume units), shaped like the grid.
    volume : float
        Analytic volume of the manifold.
    euler_characteristic : int
    """

    kind = "abstract"
    dim_embed = 4
    injectivity_radius = np.pi

    # -- spectral interface -------------------------------------------------
    def analyze(self, values):
        raise NotImplementedError

    def synthesize(self, coeffs):
        raise NotImplementedError

    # -- geometry -----------------------------------------------------------
    @property
    def base(self):
        return self

    @property
    def n_nodes(self):
        return int(np.prod(self.shape))

    def same_grid(self, other):
        return self.base is other.base

    def nodes(self):
        """Node positions as an array of shape ``(n_nodes, dim_embed)``."""
        return self.grid_points().reshape(-1, self.dim_embed)

    def quadrature_volume(self):
        return float(np.sum(self.weights))

    def riemannian_center(self, points, weights):
        return riemannian_center(self, points, weights)

    def __repr__(self):
        return f"{type(self).__name__}(resolution={self.resolution})"


class Torus(ModelManifold):
    """Flat torus ``(R / 2 pi Z)^4`` sampled on ``n^4`` equispaced nodes."""

    kind = "torus"
    dim_embed = 4
    radius = 1.0

    def __init__(self, n):
        n = int(n)
        if n < 4:
            raise ValueError("torus resolution must be >= 4 nodes per axis")
        self.resolution = n
        self.shape = (n, n, n, n)
        self.axis = TWO_PI * np.arange(n) / n
        self.weights = np.full(self.shape, (TWO_PI / n) ** 4)
        self.weights.flags.writeable = False
        self.volume = TWO_PI**4
        self.euler_characteristic = 0
        self.scalar_curvature_value = 0.0
        self.ricci_value = 0.0
        self.injectivity_radius = np.pi
        k = np.fft.fftfreq(n, 1.0 / n)
        kr = np.fft.rfftfreq(n, 1.0 / n)
        self.wavenumbers = np.meshgrid(k, k, k, kr, indexing="ij")
        k2 = sum(kk**2 for kk in self.wavenumbers)
        self.lap_symbol = k2
        nyq = np.zeros(k2.shape, dtype=bool)
        if n % 2 == 0:
            for kk in self.wavenumbers:
                nyq |= np.abs(kk) == n // 2
        self.band_mask = ~nyq
        # multiplicity of each stored rfft coefficient in the full spectrum
        mult = np.full(k2.shape, 2.0)
        mult[..., 0] = 1.0
        if n % 2 == 0:
            mult[..., -1] = 1.0
        self._mult = mult

    # spectral transforms: u(x) = sum_k c_k exp(i k.x)
    def analyze(self, values):
        return np.fft.rfftn(values) / self.n_nodes

    def synthesize(self, coeffs):
        return np.fft.irfftn(coeffs * self.n_nodes, s=self.shape, axes=(0, 1, 2, 3))

    def spectral_inner(self, a, b):
        """L^2 inner product of two real fields given by their coefficients."""
        return self.volume * float(np.sum(self._mult * np.real(a * np.conj(b))))

    def grid_points(self):
        g = np.meshgrid(*([self.axis] * 4), indexing="ij")
        return np.stack(g, axis=-1)

    def random_coeffs(self, rng, max_k=2, decay=1.0):
        """Random band-limited real field coefficients with ``|k_i| <= max_k``."""
        vals = rng.standard_normal(self.shape)
        c = self.analyze(vals)
        keep = np.ones(c.shape, dtype=bool)
        for kk in self.wavenumbers:
            keep &= np.abs(kk) <= max_k
        keep &= self.band_mask
        c = np.where(keep, c / (1.0 + self.lap_symbol) ** decay, 0.0)
        return c

    # geometry
    def wrap(self, d):
        return (np.asarray(d) + np.pi) % TWO_PI - np.pi

    def canonical(self, p):
        return np.mod(np.asarray(p, dtype=float), TWO_PI)

    def dist(self, p, q):
        d = self.wrap(np.asarray(q, float) - np.asarray(p, float))
        return np.sqrt(np.sum(d * d, axis=-1))

    def exp(self, p, v):
        return np.mod(np.asarray(p, float) + v, TWO_PI)

    def log(self, p, q):
        return self.wrap(np.asarray(q, float) - np.asarray(p, float))

    def random_points(self, n, rng):
        return rng.uniform(0.0, TWO_PI, size=(n, 4))

    def base_point(self):
        return np.zeros(4)

    def to_chart(self, p):
        return self.canonical(p)

    def from_chart(self, c):
        return self.canonical(c)

    def unit_directions(self, n):
        return _s3_directions(n)

    def tangent_frame(self, p):
        return np.eye(4)

    def radial_jacobian(self, r):
        return np.asarray(r) ** 3

    def radial_laplacian_coefficient(self, r):
        """``c(r)`` in ``Delta f = f'' + c(r) f'`` for radial functions."""
        return 3.0 / np.asarray(r)

    def zonal_multiplier(self, r, w, profile):
        """Spectral multiplier of the zonal operator ``f -> int psi(d(x,.)) f``.

        ``r, w`` are radial quadrature nodes and weights on ``[0, rmax]`` and
        ``profile`` the values of ``psi`` at ``r``.
        """
        kappa = np.sqrt(self.lap_symbol)
        uniq, inv = np.unique(np.round(kappa, 12), return_inverse=True)
        z = np.outer(uniq, r)
        with np.errstate(invalid="ignore", divide="ignore"):
            j = np.where(z > 1e-12, 2.0 * special.j1(z) / np.where(z > 0, z, 1.0), 1.0)
        vals = AREA_S3 * (j * (w * profile * r**3)).sum(axis=1)
        return vals[inv].reshape(kappa.shape)

    def evaluate(self, coeffs, points, tol=0.0):
        """Evaluate the band-limited field with ``coeffs`` at arbitrary points."""
        pts = np.atleast_2d(np.asarray(points, float))
        c = np.where(self.band_mask, coeffs, 0.0)
        mag = np.abs(c)
        idx = np.nonzero(mag > tol * (mag.max() if mag.size else 0.0))
        idx = tuple(i for i in idx)
        cs = c[idx] * self._mult[idx]
        ks = np.stack([kk[idx] for kk in self.wavenumbers], axis=-1)
        out = np.zeros(len(pts))
        for s in range(0, len(ks), 512):
            ph = pts @ ks[s:s + 512].T
            out += (np.cos(ph) * cs[s:s + 512].real - np.sin(ph) * cs[s:s + 512].imag).sum(axis=1)
        return out


class Sphere(ModelManifold):
    """Round sphere ``S^4`` of given radius, harmonics up to ``degree``.

    The node grid is a product of Gauss rules in ``cos(theta1)`` (Jacobi
    weight ``1 - x^2``), ``cos(theta2)`` (Gegenbauer weight ``sqrt(1 - x^2)``),
    ``cos(theta3)`` (Legendre) and a uniform rule in ``phi``.  It integrates
    products of two band-limited fields exactly.
    """

    kind = "sphere"
    dim_embed = 5

    def __init__(self, degree, radius=1.0):
        L = int(degree)
        if L < 4:
            raise ValueError("sphere degree must be >= 4")
        if not radius > 0:
            raise ValueError("radius must be positive")
        self.resolution = L
        self.radius = float(radius)
        n = L + 1
        nphi = 2 * L + 2
        x1, w1 = special.roots_jacobi(n, 1.0, 1.0)
        x2, w2 = special.roots_gegenbauer(n, 1.0)
        x3, w3 = special.roots_legendre(n)
        phi = TWO_PI * np.arange(nphi) / nphi
        wphi = np.full(nphi, TWO_PI / nphi)
        self._x = (x1, x2, x3)
        self._w = (w1, w2, w3, wphi)
        self.phi = phi
        self.shape = (n, n, n, nphi)
        R4 = self.radius**4
        self.weights = R4 * np.einsum("a,b,c,d->abcd", w1, w2, w3, wphi)
        self.weights.flags.writeable = False
        self.volume = 8.0 * np.pi**2 / 3.0 * R4
        self.euler_characteristic = 2
        self.injectivity_radius = np.pi * self.radius
        # Einstein metric: Ric = (3 / r^2) g, R = 12 / r^2
        self.scalar_curvature_value = 12.0 / self.radius**2
        self.ricci_value = 3.0 / self.radius**2
        # factor tables at the nodes and their normalizations
        self._n1 = self._norms(self._theta1_raw(x1), w1)
        self._n2 = self._norms(self._theta2_raw(x2), w2)
        self._n3 = self._norms(self._theta3_raw(x3), w3)
        self._T1 = self._theta1_raw(x1) / self._n1
        self._T2 = self._theta2_raw(x2) / self._n2
        self._T3 = self._theta3_raw(x3) / self._n3
        self._F = self._phi_table(phi)
        l1 = np.arange(L + 1)
        self.degree_index = np.broadcast_to(
            l1[:, None, None, None], (L + 1, L + 1, L + 1, 2 * L + 1))
        self.lap_symbol = l1[:, None, None, None] * (l1[:, None, None, None] + 3.0) / self.radius**2
        self.lap_symbol = np.broadcast_to(self.lap_symbol, self.degree_index.shape)
        m = self._m_of_index()
        a, b, c = np.meshgrid(l1, l1, l1, indexing="ij")
        valid = (a >= b) & (b >= c)
        self.band_mask = valid[..., None] & (c[..., None] >= m[None, None, None, :])

    # -- one-dimensional factors -------------------------------------------
    def _m_of_index(self):
        L = self.resolution
        j = np.arange(2 * L + 1)
        return (j + 1) // 2

    def _theta1_raw(self, x):
        L = self.resolution
        out = np.zeros((len(x), L + 1, L + 1))
        s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
        for l2 in range(L + 1):
            for l1 in range(l2, L + 1):
                out[:, l1, l2] = s**l2 * special.eval_gegenbauer(l1 - l2, l2 + 1.5, x)
        return out

    def _theta2_raw(self, x):
        L = self.resolution
        out = np.zeros((len(x), L + 1, L + 1))
        s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
        for l3 in range(L + 1):
            for l2 in range(l3, L + 1):
                out[:, l2, l3] = s**l3 * special.eval_gegenbauer(l2 - l3, l3 + 1.0, x)
        return out

    def _theta3_raw(self, x):
        L = self.resolution
        m = self._m_of_index()
        out = np.zeros((len(x), L + 1, 2 * L + 1))
        s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
        for j, mj in enumerate(m):
            for l3 in range(mj, L + 1):
                out[:, l3, j] = s**mj * special.eval_gegenbauer(l3 - mj, mj + 0.5, x)
        return out

    def _phi_table(self, phi):
        L = self.resolution
        out = np.empty((len(phi), 2 * L + 1))
        out[:, 0] = 1.0 / np.sqrt(TWO_PI)
        for m in range(1, L + 1):
            out[:, 2 * m - 1] = np.cos(m * phi) / np.sqrt(np.pi)
            out[:, 2 * m] = np.sin(m * phi) / np.sqrt(np.pi)
        return out

    @staticmethod
    def _norms(table, w):
        nrm = np.sqrt(np.einsum("i,ijk->jk", w, table**2))
        nrm[nrm == 0] = 1.0
        return nrm

    # -- transforms ------------------------------------------------------------
    def analyze(self, values):
        w1, w2, w3, wphi = self._w
        a = np.einsum("abcp,p,pm->abcm", values, wphi, self._F, optimize=True)
        a = np.einsum("abcm,c,clm->ablm", a, w3, self._T3, optimize=True)
        a = np.einsum("ablm,b,bkl->aklm", a, w2, self._T2, optimize=True)
        a = np.einsum("aklm,a,ajk->jklm", a, w1, self._T1, optimize=True)
        return a * self.radius**2

    def synthesize(self, coeffs):
        c = np.where(self.band_mask, coeffs, 0.0)
        a = np.einsum("jklm,ajk->aklm", c, self._T1, optimize=True)
        a = np.einsum("aklm,bkl->ablm", a, self._T2, optimize=True)
        a = np.einsum("ablm,clm->abcm", a, self._T3, optimize=True)
        a = np.einsum("abcm,pm->abcp", a, self._F, optimize=True)
        return a / self.radius**2

    def spectral_inner(self, a, b):
        return float(np.sum(np.where(self.band_mask, a * b, 0.0)))

    def random_coeffs(self, rng, max_k=3, decay=1.0):
        c = rng.standard_normal(self.band_mask.shape)
        keep = self.band_mask & (self.degree_index <= max_k)
        return np.where(keep, c / (1.0 + self.lap_symbol) ** decay, 0.0)

    def evaluate(self, coeffs, points, tol=0.0):
        pts = np.atleast_2d(np.asarray(points, float))
        c = np.where(self.band_mask, coeffs, 0.0)
        mag = np.abs(c)
        idx = np.argwhere(mag > tol * (mag.max() if mag.size else 0.0))
        ang = self.to_chart(pts)
        x1, x2, x3 = np.cos(ang[:, 0]), np.cos(ang[:, 1]), np.cos(ang[:, 2])
        T1 = self._theta1_raw(x1) / self._n1
        T2 = self._theta2_raw(x2) / self._n2
        T3 = self._theta3_raw(x3) / self._n3
        F = self._phi_table(ang[:, 3])
        if len(idx) <= 400:
            out = np.zeros(len(pts))
            for j, k, l, m in idx:
                out += c[j, k, l, m] * T1[:, j, k] * T2[:, k, l] * T3[:, l, m] * F[:, m]
        else:
            out = np.einsum("jklm,pm,plm,pkl,pjk->p", c, F, T3, T2, T1, optimize=True)
        return out / self.radius**2

    def grid_points(self):
        th1 = np.arccos(self._x[0])
        th2 = np.arccos(self._x[1])
        th3 = np.arccos(self._x[2])
        g = np.meshgrid(th1, th2, th3, self.phi, indexing="ij")
        return self.from_chart(np.stack(g, axis=-1))

    # -- geometry ------------------------------------------------------------
    def canonical(self, p):
        p = np.asarray(p, float)
        return p / np.linalg.norm(p, axis=-1, keepdims=True)

    def from_chart(self, ang):
        ang = np.asarray(ang, float)
        t1, t2, t3, ph = (ang[..., i] for i in range(4))
        s1, s2, s3 = np.sin(t1), np.sin(t2), np.sin(t3)
        return np.stack([np.cos(t1), s1 * np.cos(t2), s1 * s2 * np.cos(t3),
                         s1 * s2 * s3 * np.cos(ph), s1 * s2 * s3 * np.sin(ph)], axis=-1)

    def to_chart(self, p):
        p = self.canonical(p)
        r4 = np.hypot(p[..., 3], p[..., 4])
        r3 = np.hypot(p[..., 2], r4)
        r2 = np.hypot(p[..., 1], r3)
        t1 = np.arctan2(r2, p[..., 0])
        t2 = np.arctan2(r3, p[..., 1])
        t3 = np.arctan2(r4, p[..., 2])
        ph = np.mod(np.arctan2(p[..., 4], p[..., 3]), TWO_PI)
        return np.stack([t1, t2, t3, ph], axis=-1)

    def angle(self, p, q):
        p = np.asarray(p, float)
        q = np.asarray(q, float)
        a = np.linalg.norm(p - q, axis=-1)
        b = np.linalg.norm(p + q, axis=-1)
        return 2.0 * np.arctan2(a, b)

    def dist(self, p, q):
        return self.radius * self.angle(p, q)

    def exp(self, p, v):
        p = np.asarray(p, float)
        v = np.asarray(v, float)
        nv = np.linalg.norm(v, axis=-1, keepdims=True)
        th = nv / self.radius
        with np.errstate(invalid="ignore", divide="ignore"):
            dirn = np.where(nv > 0, v / np.where(nv > 0, nv, 1.0), 0.0)
        return self.canonical(np.cos(th) * p + np.sin(th) * dirn)

    def log(self, p, q):
        p = np.asarray(p, float)
        q = np.asarray(q, float)
        th = self.angle(p, q)[..., None]
        u = q - np.sum(p * q, axis=-1, keepdims=True) * p
        nu = np.linalg.norm(u, axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(nu > 0, self.radius * th * u / np.where(nu > 0, nu, 1.0), 0.0)
        return out

    def random_points(self, n, rng):
        return self.canonical(rng.standard_normal((n, 5)))

    def base_point(self):
        return np.array([0.0, 0.0, 0.0, 0.0, 1.0])

    def antipode(self, p):
        return -np.asarray(p, float)

    def unit_directions(self, n):
        return _s3_directions(n)

    def tangent_frame(self, p):
        """Orthonormal basis (4 x 5) of the tangent space at ``p``."""
        p = self.canonical(p)
        m = np.eye(5) - np.outer(p, p)
        u, s, _ = np.linalg.svd(m)
        return u[:, :4].T

    def radial_jacobian(self, r):
        return (self.radius * np.sin(np.asarray(r) / self.radius)) ** 3

    def radial_laplacian_coefficient(self, r):
        r = np.asarray(r) / self.radius
        return 3.0 * np.cos(r) / (self.radius * np.sin(r))

    def zonal_multiplier(self, r, w, profile):
        L = self.resolution
        t = np.cos(np.asarray(r) / self.radius)
        jac = self.radial_jacobian(r)
        vals = np.empty(L + 1)
        for l in range(L + 1):
            g = special.eval_gegenbauer(l, 1.5, t) / special.eval_gegenbauer(l, 1.5, 1.0)
            vals[l] = AREA_S3 * np.sum(w * profile * jac * g)
        return np.broadcast_to(vals[:, None, None, None], self.band_mask.shape)


class ConformalManifold(ModelManifold):
    """Base model with the conformal metric ``e^{2w} g``.

    Shares the node grid and spectral basis of the base; the quadrature weights
    carry the factor ``e^{4w}``.
    """

    kind = "conformal"

    def __init__(self, base, w):
        if isinstance(base, ConformalManifold):
            w = base.conformal_factor + ScalarField(base.base, w.values)
            base = base.base
        if not base.same_grid(w.manifold):
            raise ValueError("conformal factor lives on a different manifold")
        self._base = base
        self.conformal_factor = ScalarField(base, w.values)
        self.resolution = base.resolution
        self.shape = base.shape
        self.dim_embed = base.dim_embed
        self.radius = base.radius
        self.weights = base.weights * np.exp(4.0 * w.values)
        self.weights.flags.writeable = False
        self.volume = float(np.sum(self.weights))
        self.euler_characteristic = base.euler_characteristic
        self.lap_symbol = base.lap_symbol
        self.band_mask = base.band_mask

    @property
    def base(self):
        return self._base

    def analyze(self, values):
        return self._base.analyze(values)

    def synthesize(self, coeffs):
        return self._base.synthesize(coeffs)

    def evaluate(self, coeffs, points, tol=0.0):
        return self._base.evaluate(coeffs, points, tol)

    def grid_points(self):
        return self._base.grid_points()

    def random_coeffs(self, rng, **kw):
        return self._base.random_coeffs(rng, **kw)

    def __repr__(self):
        return f"ConformalManifold(base={self._base!r})"


class ScalarField:
    """A real function on a discretized manifold.

    Node values are the primary storage; spectral coefficients are computed
    on demand and cached.  Instances are immutable.
    """

    __slots__ = ("manifold", "values", "_coeffs")

    def __init__(self, manifold, values):
        v = np.array(values, dtype=float).reshape(manifold.shape)
        v.flags.writeable = False
        self.manifold = manifold
        self.values = v
        self._coeffs = None

    @classmethod
    def from_coeffs(cls, manifold, coeffs):
        f = cls(manifold, manifold.synthesize(coeffs))
        return f

    @classmethod
    def from_function(cls, manifold, func):
        return cls(manifold, func(manifold.grid_points()))

    @classmethod
    def constant(cls, manifold, c):
        return cls(manifold, np.full(manifold.shape, float(c)))

    @classmethod
    def random(cls, manifold, rng, **kw):
        return cls.from_coeffs(manifold, manifold.random_coeffs(rng, **kw))

    @property
    def coeffs(self):
        if self._coeffs is None:
            c = self.manifold.analyze(self.values)
            if isinstance(c, np.ndarray):
                c.flags.writeable = False
            self._coeffs = c
        return self._coeffs

    def project(self):
        """Band-limited projection (synthesize after analyze)."""
        return ScalarField.from_coeffs(self.manifold, np.where(self.manifold.band_mask, self.coeffs, 0))

    def on(self, manifold):
        """Same node values viewed on another manifold sharing the node grid."""
        if not manifold.same_grid(self.manifold):
            raise ValueError("manifolds do not share a node grid")
        return ScalarField(manifold, self.values)

    def evaluate(self, points):
        return self.manifold.evaluate(self.coeffs, points)

    def map(self, func):
        return ScalarField(self.manifold, func(self.values))

    def integral(self):
        return integrate(self)

    def mean(self):
        return integrate(self) / self.manifold.volume

    def _other(self, other):
        if isinstance(other, ScalarField):
            if not self.manifold.same_grid(other.manifold):
                raise ValueError("fields live on different manifolds")
            return other.values
        return other

    def __add__(self, other):
        return ScalarField(self.manifold, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.manifold, self.values - self._other(other))

    def __rsub__(self, other):
        return ScalarField(self.manifold, self._other(other) - self.values)

    def __mul__(self, other):
        return ScalarField(self.manifold, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return ScalarField(self.manifold, self.values / self._other(other))

    def __neg__(self):
        return ScalarField(self.manifold, -self.values)

    def __repr__(self):
        return f"ScalarField(on={self.manifold!r})"


# ---------------------------------------------------------------------------
# operations

def build_manifold(spec):
    """Build a manifold from a JSON-like description.

    Parameters
    ----------
    spec : dict
        ``{"kind": "torus" | "sphere", "resolution": int, "radius": float,
        "conformal_factor": {...}}``.  The conformal factor is either
        ``{"terms": [{"wavevector": [...], "amplitude": a, "phase": p}]}``
        (torus, ``w = sum a cos(k.x + p)``), ``{"linear": [c1..c5]}``
        (sphere, ``w = sum c_i x_i``) or ``{"constant": c}``.
    """
    kind = spec.get("kind")
    res = spec.get("resolution")
    if res is None or int(res) <= 0:
        raise ValueError("resolution must be a positive integer")
    if kind == "torus":
        M = Torus(int(res))
    elif kind == "sphere":
        M = Sphere(int(res), float(spec.get("radius", 1.0)))
    else:
        raise ValueError(f"unknown manifold kind {kind!r}")
    cf = spec.get("conformal_factor")
    if cf:
        M = conformal_rescale(M, _factor_from_spec(M, cf))
    return M


def _factor_from_spec(M, cf):
    pts = M.grid_points()
    w = np.zeros(M.shape)
    w += float(cf.get("constant", 0.0))
    for term in cf.get("terms", []):
        if M.kind != "torus":
            raise ValueError("Fourier terms are only defined on the torus")
        k = np.asarray(term["wavevector"], float)
        w += float(term.get("amplitude", 0.0)) * np.cos(pts @ k + float(term.get("phase", 0.0)))
    if "linear" in cf:
        if M.kind != "sphere":
            raise ValueError("linear factors are only defined on the sphere")
        w += pts @ np.asarray(cf["linear"], float)
    return ScalarField(M, w)


def integrate(u, manifold=None):
    """Quadrature integral of a field over its manifold (or ``manifold``)."""
    M = u.manifold if manifold is None else manifold
    if manifold is not None and not M.same_grid(u.manifold):
        raise ValueError("field and manifold do not match")
    return float(np.sum(M.weights * u.values))


def geodesic_distance(M, p, q):
    """Geodesic distance between points ``p`` and ``q`` of ``M``.

    Broadcasts over leading axes.
    """
    if isinstance(M, ConformalManifold):
        raise NotImplementedError("geodesics are only provided on the base models")
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    if p.shape[-1] != M.dim_embed or q.shape[-1] != M.dim_embed:
        raise ValueError("point does not belong to this manifold")
    return M.dist(p, q)


def riemannian_center(M, points, weights, maxiter=50, tol=1e-12):
    """Weighted Riemannian center of mass of nearby points.

    Fixed-point iteration ``c <- exp_c(sum_i w_i log_c x_i)``.

    Raises
    ------
    ValueError
        If the points are spread over more than a quarter of the injectivity
        radius.
    """
    pts = np.atleast_2d(np.asarray(points, float))
    w = np.asarray(weights, float)
    if len(pts) != len(w):
        raise ValueError("points and weights differ in length")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be nonnegative and sum to 1")
    if len(pts) == 1:
        return M.canonical(pts[0])
    spread = np.max(M.dist(pts[:, None, :], pts[None, :, :]))
    if spread >= M.injectivity_radius / 4:
        raise ValueError("points too spread for a weighted center")
    c = pts[np.argmax(w)].copy()
    for _ in range(maxiter):
        v = np.sum(w[:, None] * M.log(c, pts), axis=0)
        c = M.exp(c, v)
        if np.linalg.norm(v) < tol:
            break
    return M.canonical(c)


def conformal_rescale(M, w):
    """Manifold with the metric ``e^{2w} g``."""
    if not M.same_grid(w.manifold):
        raise ValueError("conformal factor lives on a different manifold")
    if np.all(w.values == 0.0) and not isinstance(M, ConformalManifold):
        return M
    return ConformalManifold(M, w)


# ---------------------------------------------------------------------------
# quadrature helpers

def radial_panels(breaks, order=12):
    """Composite Gauss-Legendre nodes and weights over consecutive ``breaks``."""
    x, w = special.roots_legendre(order)
    b = np.asarray(breaks, float)
    a, c = b[:-1], b[1:]
    half = 0.5 * (c - a)
    nodes = (0.5 * (a + c))[:, None] + half[:, None] * x[None, :]
    wts = half[:, None] * w[None, :]
    return nodes.ravel(), wts.ravel()


_S3_CACHE = {}


def _s3_directions(n):
    """Product Gauss rule on the unit sphere ``S^3 \\subset R^4``.

    Returns directions ``(m, 4)`` and weights summing to ``2 pi^2``.
    """
    if n in _S3_CACHE:
        return _S3_CACHE[n]
    xa, wa = special.roots_gegenbauer(n, 1.0)   # sin^2 a da
    xb, wb = special.roots_legendre(n)          # sin b db
    ph = TWO_PI * (np.arange(2 * n) + 0.5) / (2 * n)
    a, b, p = np.meshgrid(np.arccos(xa), np.arccos(xb), ph, indexing="ij")
    wts = np.einsum("i,j,k->ijk", wa, wb, np.full(2 * n, TWO_PI / (2 * n)))
    sa, sb = np.sin(a), np.sin(b)
    d = np.stack([np.cos(a), sa * np.cos(b), sa * sb * np.cos(p), sa * sb * np.sin(p)], axis=-1)
    out = (d.reshape(-1, 4), wts.ravel())
    _S3_CACHE[n] = out
    return out
