"""Per-element fine-scale de Rham complex of bubble functions.

On the reference cell [0,1]^2 and fine degrees ``(kx', ky')`` the three
spaces are single-element Bernstein tensor products with built-in trace
and mean conditions:

* ``W0``: scalar bubbles vanishing on the whole cell boundary,
* ``W1``: vector bubbles with vanishing normal trace,
* ``W2``: zero-mean scalars.

They satisfy ``rot W0 <= W1`` and ``div W1 <= W2`` exactly at the
coefficient level, with dimensions ``(k'-1)^2``, ``2k'(k'-1)`` and
``k'^2 - 1`` in the isotropic case, so the alternating sum vanishes.

One complex is shared by all elements of the uniform mesh; physical
derivative scalings carry the ``1/hx``, ``1/hy`` factors.
"""

from dataclasses import dataclass
from math import comb

import numpy as np
import scipy.sparse as sp

__all__ = ["BubbleComplex", "build_bubble_complex", "eval_bubbles", "bernstein"]


def bernstein(degree, t, deriv=0):
    """Bernstein basis values on [0,1]: array of shape (degree+1, len(t))."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if deriv == 0:
        out = np.empty((degree + 1, t.size))
        for i in range(degree + 1):
            out[i] = comb(degree, i) * t**i * (1.0 - t) ** (degree - i)
        return out
    if degree == 0:
        return np.zeros((1, t.size))
    lower = bernstein(degree - 1, t, deriv - 1)
    padded = np.vstack([np.zeros((1, t.size)), lower, np.zeros((1, t.size))])
    return degree * (padded[:-1] - padded[1:])


def _tensor(bx, by):
    """Tensor products of 1D tables: (nx*ny, Qx*Qy), x-major ordering."""
    nx, qx = bx.shape
    ny, qy = by.shape
    return (bx[:, None, :, None] * by[None, :, None, :]).reshape(nx * ny, qx * qy)


@dataclass(frozen=True)
class BubbleComplex:
    """Reference-element fine-scale complex for fine degrees ``(kx, ky)``."""

    kx: int
    ky: int

    @property
    def dim_w0(self):
        return (self.kx - 1) * (self.ky - 1)

    @property
    def dim_w1x(self):
        return (self.kx - 1) * self.ky

    @property
    def dim_w1y(self):
        return self.kx * (self.ky - 1)

    @property
    def dim_w1(self):
        return self.dim_w1x + self.dim_w1y

    @property
    def dim_w2(self):
        return self.kx * self.ky - 1

    @property
    def dim_total(self):
        return self.dim_w0 + self.dim_w1 + self.dim_w2

    # index ranges kept per space: W0 (i=1..kx-1, j=1..ky-1),
    # W1x (i=1..kx-1, j=0..ky-1), W1y (i=0..kx-1, j=1..ky-1),
    # W2 built on the full (kx-1, ky-1) Bernstein basis minus the last one.

    def eval_w0(self, tx, ty, dx=0, dy=0):
        bx = bernstein(self.kx, tx, dx)[1:-1]
        by = bernstein(self.ky, ty, dy)[1:-1]
        return _tensor(bx, by)

    def eval_w1x(self, tx, ty, dx=0, dy=0):
        bx = bernstein(self.kx, tx, dx)[1:-1]
        by = bernstein(self.ky - 1, ty, dy)
        return _tensor(bx, by)

    def eval_w1y(self, tx, ty, dx=0, dy=0):
        bx = bernstein(self.kx - 1, tx, dx)
        by = bernstein(self.ky, ty, dy)[1:-1]
        return _tensor(bx, by)

    def eval_w2(self, tx, ty):
        full = _tensor(bernstein(self.kx - 1, tx), bernstein(self.ky - 1, ty))
        return full[:-1] - full[-1]

    def tables(self, refx, refy, hx, hy):
        """Physically scaled value/derivative tables at reference points.

        Keys: ``w0``, ``w1x``, ``w1y``, ``w2`` (values), ``rot_w0_x``,
        ``rot_w0_y`` (components of the vector rot of W0) and ``div_w1x``,
        ``div_w1y`` (divergence contributions of each velocity component).
        Shapes are ``(dim, len(refx)*len(refy))``.
        """
        return {
            "w0": self.eval_w0(refx, refy),
            "w1x": self.eval_w1x(refx, refy),
            "w1y": self.eval_w1y(refx, refy),
            "w2": self.eval_w2(refx, refy),
            "rot_w0_x": self.eval_w0(refx, refy, dy=1) / hy,
            "rot_w0_y": -self.eval_w0(refx, refy, dx=1) / hx,
            "div_w1x": self.eval_w1x(refx, refy, dx=1) / hx,
            "div_w1y": self.eval_w1y(refx, refy, dy=1) / hy,
        }

    def rot_map(self, hx, hy):
        """Coefficient map W0 -> W1 realizing rot psi = (dy psi, -dx psi)."""
        kx, ky = self.kx, self.ky
        R = np.zeros((self.dim_w1, self.dim_w0))

        def w0_idx(i, j):
            return (i - 1) * (ky - 1) + (j - 1)

        # x-component: coefficient of (i, j') is ky*(c[i,j'+1] - c[i,j'])/hy
        for i in range(1, kx):
            for jp in range(ky):
                row = (i - 1) * ky + jp
                if 1 <= jp + 1 <= ky - 1:
                    R[row, w0_idx(i, jp + 1)] += ky / hy
                if 1 <= jp <= ky - 1:
                    R[row, w0_idx(i, jp)] -= ky / hy
        # y-component: coefficient of (i', j) is -kx*(c[i'+1,j] - c[i',j])/hx
        for ip in range(kx):
            for j in range(1, ky):
                row = self.dim_w1x + ip * (ky - 1) + (j - 1)
                if 1 <= ip + 1 <= kx - 1:
                    R[row, w0_idx(ip + 1, j)] -= kx / hx
                if 1 <= ip <= kx - 1:
                    R[row, w0_idx(ip, j)] += kx / hx
        return sp.csr_matrix(R)

    def div_map(self, hx, hy):
        """Coefficient map W1 -> W2; the full-basis expansion telescopes to
        zero mean, so dropping the last Bernstein coefficient is exact."""
        kx, ky = self.kx, self.ky
        Dfull = np.zeros((kx * ky, self.dim_w1))
        for i in range(1, kx):  # x-component, coefficients a[i, j]
            for j in range(ky):
                col = (i - 1) * ky + j
                Dfull[(i - 1) * ky + j, col] += kx / hx   # B_{i-1} block
                Dfull[i * ky + j, col] -= kx / hx         # B_i block
        for i in range(kx):  # y-component, coefficients b[i, j]
            for j in range(1, ky):
                col = self.dim_w1x + i * (ky - 1) + (j - 1)
                Dfull[i * ky + (j - 1), col] += ky / hy
                Dfull[i * ky + j, col] -= ky / hy
        return sp.csr_matrix(Dfull[:-1])


def build_bubble_complex(fine_degrees):
    """Build the reference fine-scale complex for degrees ``(kx', ky')``."""
    if np.isscalar(fine_degrees):
        fine_degrees = (int(fine_degrees), int(fine_degrees))
    kx, ky = int(fine_degrees[0]), int(fine_degrees[1])
    if min(kx, ky) < 2:
        raise ValueError("fine degree must be >= 2 (no nonzero bubbles otherwise)")
    return BubbleComplex(kx, ky)


def eval_bubbles(complex_, element, points, space="w0", dx=0, dy=0):
    """Evaluate bubble basis functions on a physical element.

    ``element`` is ``(x0, y0, hx, hy)``; ``points`` is an ``(n, 2)`` array
    of physical points inside it.  Derivative scalings include the ``1/h``
    factors.  Returns an array of shape ``(dim_space, n)``.
    """
    x0, y0, hx, hy = element
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tx = (pts[:, 0] - x0) / hx
    ty = (pts[:, 1] - y0) / hy
    if np.any(tx < -1e-12) or np.any(tx > 1 + 1e-12) or \
       np.any(ty < -1e-12) or np.any(ty > 1 + 1e-12):
        raise ValueError("point outside element")
    scale = hx ** (-dx) * hy ** (-dy)
    if space == "w2":
        if dx or dy:
            raise ValueError("w2 derivatives not provided")
        vals = complex_.eval_w2(tx, ty)
    else:
        vals = getattr(complex_, f"eval_{space}")(tx, ty, dx, dy) * scale
    # tensor evaluation produced the (tx x ty) grid; take its diagonal
    n = pts.shape[0]
    return vals.reshape(vals.shape[0], n, n)[:, np.arange(n), np.arange(n)]
