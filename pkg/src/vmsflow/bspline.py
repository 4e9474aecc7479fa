"""Univariate B-spline spaces on uniform meshes.

Provides basis evaluation (values and derivatives) via the stable
Cox-de Boor triangular recursion, and the exact coefficient-level
derivative map B_k -> B_{k-1} that underlies the discrete de Rham
complex built in :mod:`vmsflow.derham`.

Two knot flavors are supported:

* ``open-clamped``: end knots repeated ``degree+1`` times, so the first
  and last basis functions interpolate the interval ends.
* ``periodic``: uniform knots with index wrapping; the space has exactly
  ``nelems`` basis functions regardless of degree.

All spaces are immutable; every function here is pure.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "KnotVector",
    "SplineSpace1D",
    "eval_basis",
    "derivative_map",
    "gauss_legendre",
]


def gauss_legendre(npts):
    """Gauss-Legendre points and weights on the reference interval [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def _basis_ders(knots, degree, span, x, nders):
    """All nonzero basis functions and derivatives at ``x`` (NURBS book A2.3).

    Returns an array of shape ``(nders+1, degree+1)``; row ``d`` holds the
    ``d``-th derivatives of the ``degree+1`` basis functions with global
    indices ``span-degree .. span``.  Derivatives of order beyond the
    degree vanish inside elements and are returned as zero rows.
    """
    k = degree
    if nders > k:
        out = np.zeros((nders + 1, k + 1))
        out[:k + 1] = _basis_ders(knots, degree, span, x, k)
        return out
    left = np.empty(k)
    right = np.empty(k)
    ndu = np.empty((k + 1, k + 1))
    a = np.empty((2, k + 1))
    ders = np.zeros((nders + 1, k + 1))

    ndu[0, 0] = 1.0
    for j in range(k):
        left[j] = x - knots[span - j]
        right[j] = knots[span + 1 + j] - x
        saved = 0.0
        for r in range(j + 1):
            ndu[j + 1, r] = 1.0 / (right[r] + left[j - r])
            temp = ndu[r, j] * ndu[j + 1, r]
            ndu[r, j + 1] = saved + right[r] * temp
            saved = left[j - r] * temp
        ndu[j + 1, j + 1] = saved

    ders[0, :] = ndu[:, k]
    for r in range(k + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for d in range(1, nders + 1):
            dval = 0.0
            rk = r - d
            pk = k - d
            if r >= d:
                a[s2, 0] = a[s1, 0] * ndu[pk + 1, rk]
                dval = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = d - 1 if r - 1 <= pk else k - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) * ndu[pk + 1, rk + j]
                dval += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, d] = -a[s1, d - 1] * ndu[pk + 1, r]
                dval += a[s2, d] * ndu[r, pk]
            ders[d, r] = dval
            s1, s2 = s2, s1

    fac = float(k)
    for d in range(1, nders + 1):
        ders[d, :] *= fac
        fac *= k - d
    return ders


@dataclass(frozen=True)
class KnotVector:
    """Uniform knot vector: degree, breakpoints and boundary flavor."""

    degree: int
    breakpoints: np.ndarray
    periodic: bool = False

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        if self.degree < 0:
            raise ValueError("degree must be >= 0")
        if bp.ndim != 1 or bp.size < 2 or np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing with >= 2 entries")
        h = np.diff(bp)
        if not np.allclose(h, h[0], rtol=1e-12, atol=0.0):
            raise ValueError("only uniform breakpoints are supported")
        object.__setattr__(self, "breakpoints", bp)

    @property
    def nelems(self):
        return self.breakpoints.size - 1

    @property
    def h(self):
        return (self.breakpoints[-1] - self.breakpoints[0]) / self.nelems

    def full_knots(self):
        """Full knot sequence; for open-clamped the ends repeat degree+1 times."""
        bp, k = self.breakpoints, self.degree
        if self.periodic:
            j = np.arange(-k, self.nelems + k + 1)
            return bp[0] + j * self.h
        return np.concatenate([np.full(k, bp[0]), bp, np.full(k, bp[-1])])


@dataclass(frozen=True)
class SplineSpace1D:
    """Univariate B-spline space of maximal smoothness on a uniform mesh.

    ``dirichlet`` flags mark the first/last basis function (the only ones
    with nonzero end-point value on an open-clamped space) for removal by
    boundary-condition masks; the flags do not change ``dim``.
    """

    knots: KnotVector
    dirichlet: tuple = (False, False)
    _full: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.knots.periodic and any(self.dirichlet):
            raise ValueError("periodic spaces cannot carry Dirichlet flags")
        object.__setattr__(self, "_full", self.knots.full_knots())

    @classmethod
    def create(cls, degree, nelems, xmin=0.0, xmax=1.0, periodic=False,
               dirichlet=(False, False)):
        kv = KnotVector(degree, np.linspace(xmin, xmax, nelems + 1), periodic)
        return cls(kv, dirichlet if not periodic else (False, False))

    @property
    def degree(self):
        return self.knots.degree

    @property
    def nelems(self):
        return self.knots.nelems

    @property
    def periodic(self):
        return self.knots.periodic

    @property
    def xmin(self):
        return self.knots.breakpoints[0]

    @property
    def xmax(self):
        return self.knots.breakpoints[-1]

    @property
    def h(self):
        return self.knots.h

    @property
    def dim(self):
        if self.periodic:
            return self.nelems
        return self.nelems + self.degree

    def wrap(self, x):
        """Map ``x`` into the fundamental domain (identity when clamped)."""
        if not self.periodic:
            return x
        L = self.xmax - self.xmin
        return self.xmin + np.mod(x - self.xmin, L)

    def find_element(self, x):
        x = self.wrap(x)
        if x < self.xmin - 1e-12 or x > self.xmax + 1e-12:
            raise ValueError(f"point {x} outside domain [{self.xmin}, {self.xmax}]")
        e = int(np.floor((x - self.xmin) / self.h))
        return min(max(e, 0), self.nelems - 1)

    def first_index(self, element):
        """Global index of the first basis function supported on ``element``."""
        if self.periodic:
            return (element - self.degree) % self.nelems
        return element

    def global_indices(self, element):
        """Global indices of the ``degree+1`` basis functions on ``element``."""
        k = self.degree
        if self.periodic:
            return (element - k + np.arange(k + 1)) % self.nelems
        return element + np.arange(k + 1)

    def _ders_on_element(self, element, x, nders):
        k = self.degree
        if self.periodic:
            # local uniform knot window centered on the element
            j = np.arange(element - 2 * k, element + 2 * k + 2)
            tt = self.xmin + j * self.h
            span = 2 * k  # interval [tt[2k], tt[2k+1]] is the element
            return _basis_ders(tt, k, span, x, nders)
        return _basis_ders(self._full, k, element + k, x, nders)

    def eval_all(self, x, nders=0):
        """Nonzero basis values/derivatives at ``x``.

        Returns ``(first_index, ders)`` with ``ders`` of shape
        ``(nders+1, degree+1)``, columns ordered by ascending global index
        (wrapped for periodic spaces via :meth:`global_indices`).
        """
        x = self.wrap(float(x))
        e = self.find_element(x)
        return self.first_index(e), self._ders_on_element(e, x, nders)

    def element_tables(self, ref_pts, nders=1):
        """Basis values on every element at mapped reference points.

        ``ref_pts`` live on [0, 1].  Returns an array of shape
        ``(nelems, nders+1, degree+1, len(ref_pts))``.
        """
        ref_pts = np.asarray(ref_pts, dtype=float)
        k = self.degree
        out = np.empty((self.nelems, nders + 1, k + 1, ref_pts.size))
        for e in range(self.nelems):
            x0 = self.xmin + e * self.h
            for q, t in enumerate(ref_pts):
                out[e, :, :, q] = self._ders_on_element(e, x0 + t * self.h, nders)
            if self.periodic:
                # translation invariance: all elements share the same table
                out[1:] = out[0]
                break
        return out

    def collocation_matrix(self, pts, deriv=0):
        """Sparse (len(pts), dim) matrix of basis (derivative) values."""
        pts = np.asarray(pts, dtype=float)
        rows, cols, vals = [], [], []
        for i, x in enumerate(pts):
            first, ders = self.eval_all(x, deriv)
            g = self.global_indices(self.find_element(self.wrap(x)))
            rows.extend([i] * g.size)
            cols.extend(g.tolist())
            vals.extend(ders[deriv].tolist())
        return sp.csr_matrix((vals, (rows, cols)), shape=(pts.size, self.dim))

    def greville(self):
        """Greville abscissae (knot averages), used for interpolation."""
        k = self.degree
        t = self._full
        if self.periodic:
            pts = self.xmin + (np.arange(self.dim) + (k + 1) / 2.0) * self.h
            return self.wrap(pts)
        if k == 0:
            return 0.5 * (t[:-1] + t[1:])
        return np.array([t[i + 1:i + k + 1].mean() for i in range(self.dim)])

    def basis_integrals(self):
        """Integral of each basis function over the domain (closed form)."""
        k = self.degree
        if self.periodic:
            return np.full(self.dim, self.h)
        t = self._full
        i = np.arange(self.dim)
        return (t[i + k + 1] - t[i]) / (k + 1)

    def boundary_value_mask(self):
        """Active-DOF mask with Dirichlet-flagged end functions removed."""
        mask = np.ones(self.dim, dtype=bool)
        if self.dirichlet[0]:
            mask[0] = False
        if self.dirichlet[1]:
            mask[-1] = False
        return mask


def eval_basis(space, x, deriv=0):
    """Nonzero basis (derivative) values at ``x``.

    Returns ``(first_index, values)`` where ``values`` has length
    ``degree+1``.  Raises ``ValueError`` for points outside the domain or
    ``deriv > degree``.
    """
    if deriv > space.degree:
        raise ValueError("derivative order exceeds polynomial degree")
    first, ders = space.eval_all(x, nders=deriv)
    return first, ders[deriv]


def derivative_map(space):
    """Exact coefficient-level derivative operator.

    Returns ``(derived_space, D)`` such that for any coefficient vector
    ``c`` the spline with coefficients ``D @ c`` in the degree-lowered
    space equals the derivative of the spline with coefficients ``c``.
    """
    k = space.degree
    if k < 1:
        raise ValueError("derivative map requires degree >= 1")
    if space.periodic:
        n = space.dim
        derived = SplineSpace1D.create(
            k - 1, space.nelems, space.xmin, space.xmax, periodic=True)
        i = np.arange(n)
        rows = np.concatenate([i, i])
        cols = np.concatenate([i, (i - 1) % n])
        vals = np.concatenate([np.full(n, 1.0 / space.h),
                               np.full(n, -1.0 / space.h)])
        D = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        return derived, D
    t = space._full
    m = space.dim
    derived = SplineSpace1D.create(k - 1, space.nelems, space.xmin, space.xmax)
    i = np.arange(m - 1)
    w = k / (t[i + k + 1] - t[i + 1])
    rows = np.concatenate([i, i])
    cols = np.concatenate([i + 1, i])
    vals = np.concatenate([w, -w])
    D = sp.csr_matrix((vals, (rows, cols)), shape=(m - 1, m))
    return derived, D
