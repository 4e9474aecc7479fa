"""2D tensor-product discrete de Rham complex on B-splines.

The complex is  H^1 --rot--> H(div) --div--> L^2  discretized as

* ``V0``: vorticity, scalar B-splines of bidegree ``(kx, ky)``,
* ``V1``: velocity, the div-conforming pair ``(kx, ky-1) x (kx-1, ky)``,
* ``V2``: pressure, scalar B-splines of bidegree ``(kx-1, ky-1)``,

with the conventions fixed once for the whole package::

    rot(psi)  = (d_y psi, -d_x psi)        # scalar -> vector
    rot(u)    = d_x u_y - d_y u_x          # vector -> scalar
    omega x u = omega * (-u_y, u_x)        # scalar vorticity cross velocity

Coefficient-level ``rot`` and ``div`` maps are exact (Kronecker products
of the univariate derivative maps), so ``div @ rot`` is the exact zero
matrix.  Boundary conditions are carried as active-DOF masks plus lifted
coefficient values over the full tensor-product spaces.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .bspline import SplineSpace1D, derivative_map

__all__ = [
    "Mesh2D",
    "BoundaryData",
    "ScalarSpace2D",
    "DeRhamSpaces2D",
    "build_complex",
    "rot_scalar_to_vector",
    "div_vector_to_scalar",
    "eval_field",
    "non_periodic_edges",
]

EDGES = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class Mesh2D:
    """Uniform rectangular mesh of a rectangle [a,b] x [c,d]."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float
    nx: int
    ny: int
    periodic_x: bool = False
    periodic_y: bool = False

    @property
    def hx(self):
        return (self.xmax - self.xmin) / self.nx

    @property
    def hy(self):
        return (self.ymax - self.ymin) / self.ny

    @property
    def h(self):
        return max(self.hx, self.hy)

    @property
    def nelems(self):
        return self.nx * self.ny

    @property
    def area(self):
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)


def _zero(_s):
    return 0.0


@dataclass
class BoundaryData:
    """Boundary data over the two partitions of the boundary.

    ``normal_velocity`` (strong) and ``pressure`` (weak) partition the
    boundary once; ``tangential_velocity`` (weak) and ``vorticity``
    (strong) partition it again.  Each dict maps an edge name from
    ``("left", "right", "bottom", "top")`` to a callable of the edge arc
    parameter (the x- or y-coordinate along the edge).  Edges of periodic
    directions must not appear.
    """

    normal_velocity: dict = field(default_factory=dict)
    pressure: dict = field(default_factory=dict)
    tangential_velocity: dict = field(default_factory=dict)
    vorticity: dict = field(default_factory=dict)

    @classmethod
    def homogeneous(cls, mesh):
        """No-penetration, no-slip data on all non-periodic edges."""
        edges = non_periodic_edges(mesh)
        return cls(normal_velocity={e: _zero for e in edges},
                   tangential_velocity={e: _zero for e in edges})

    def validate(self, mesh):
        edges = set(non_periodic_edges(mesh))
        p1 = set(self.normal_velocity) | set(self.pressure)
        p2 = set(self.tangential_velocity) | set(self.vorticity)
        if set(self.normal_velocity) & set(self.pressure):
            raise ValueError("an edge appears in both normal-velocity and pressure data")
        if set(self.tangential_velocity) & set(self.vorticity):
            raise ValueError("an edge appears in both tangential-velocity and vorticity data")
        if p1 != edges or p2 != edges:
            raise ValueError(
                f"boundary partitions must each cover exactly the non-periodic "
                f"edges {sorted(edges)}; got {sorted(p1)} and {sorted(p2)}")


def non_periodic_edges(mesh):
    edges = []
    if not mesh.periodic_x:
        edges += ["left", "right"]
    if not mesh.periodic_y:
        edges += ["bottom", "top"]
    return tuple(edges)


class ScalarSpace2D:
    """Tensor product of two univariate spline spaces with a BC mask."""

    def __init__(self, sx, sy):
        self.sx = sx
        self.sy = sy
        self.mask = np.ones(self.dim, dtype=bool)
        self.lift = np.zeros(self.dim)

    @property
    def dim(self):
        return self.sx.dim * self.sy.dim

    @property
    def shape(self):
        return (self.sx.dim, self.sy.dim)

    @property
    def dim_active(self):
        return int(self.mask.sum())

    def flat_index(self, ix, iy):
        return ix * self.sy.dim + iy

    def constrain_edge(self, edge, values):
        """Remove the boundary basis layer on ``edge``; store lifted values.

        ``values`` is the coefficient vector of the 1D trace spline (the
        boundary value of the constrained layer is exactly that spline
        because clamped end basis functions interpolate the endpoints).
        """
        nx, ny = self.shape
        if edge == "left":
            idx = np.arange(ny)
        elif edge == "right":
            idx = (nx - 1) * ny + np.arange(ny)
        elif edge == "bottom":
            idx = np.arange(nx) * ny
        else:
            idx = np.arange(nx) * ny + (ny - 1)
        self.mask[idx] = False
        self.lift[idx] = values

    def eval_grid(self, coeffs, xpts, ypts, dx=0, dy=0):
        """Evaluate the spline (derivative) on the tensor grid xpts x ypts."""
        C = np.asarray(coeffs).reshape(self.shape)
        Ex = self.sx.collocation_matrix(xpts, dx)
        Ey = self.sy.collocation_matrix(ypts, dy)
        return Ex @ C @ Ey.T

    def project_boundary_trace(self, edge, gfun):
        """L2 projection of edge data onto the 1D trace space."""
        s = self.sy if edge in ("left", "right") else self.sx
        from .bspline import gauss_legendre
        q, w = gauss_legendre(s.degree + 2)
        tab = s.element_tables(q, nders=0)
        M = np.zeros((s.dim, s.dim))
        b = np.zeros(s.dim)
        for e in range(s.nelems):
            pts = s.xmin + (e + q) * s.h
            idx = s.global_indices(e)
            B = tab[e, 0]
            M[np.ix_(idx, idx)] += (B * w) @ B.T * s.h
            b[idx] += B @ (w * np.asarray([gfun(p) for p in pts])) * s.h
        return np.linalg.solve(M, b)


class VectorSpace2D:
    """Div-conforming velocity pair: x- and y-component scalar spaces."""

    def __init__(self, comp_x, comp_y):
        self.x = comp_x
        self.y = comp_y

    @property
    def dim(self):
        return self.x.dim + self.y.dim

    @property
    def dim_active(self):
        return self.x.dim_active + self.y.dim_active

    @property
    def mask(self):
        return np.concatenate([self.x.mask, self.y.mask])

    @property
    def lift(self):
        return np.concatenate([self.x.lift, self.y.lift])

    def split(self, coeffs):
        return coeffs[:self.x.dim], coeffs[self.x.dim:]


@dataclass
class DeRhamSpaces2D:
    """The (V0, V1, V2) triple with BC masks and coefficient-level maps."""

    mesh: Mesh2D
    degrees: tuple
    V0: ScalarSpace2D
    V1: VectorSpace2D
    V2: ScalarSpace2D
    rot: sp.csr_matrix
    div: sp.csr_matrix
    bc: BoundaryData
    mean_zero_pressure: bool

    @property
    def dims(self):
        return (self.V0.dim, self.V1.dim, self.V2.dim)

    @property
    def dims_active(self):
        """Active dimensions; mean-zero pressure counts as one constraint."""
        n2 = self.V2.dim_active - (1 if self.mean_zero_pressure else 0)
        return (self.V0.dim_active, self.V1.dim_active, n2)


def _space1d(degree, n, lo, hi, periodic):
    return SplineSpace1D.create(degree, n, lo, hi, periodic=periodic)


def build_complex(mesh, degrees, bc=None):
    """Build the 2D discrete de Rham triple for coarse degrees (kx, ky).

    ``bc`` defaults to homogeneous no-slip data on all non-periodic edges.
    Strong constraints (normal velocity on the velocity space, vorticity
    trace on the vorticity space) become DOF masks with lifted values from
    1D trace projections; weak data is applied at assembly time.
    """
    if np.isscalar(degrees):
        degrees = (int(degrees), int(degrees))
    kx, ky = degrees
    if min(kx, ky) < 1:
        raise ValueError("coarse degrees must be >= 1")
    if bc is None:
        bc = BoundaryData.homogeneous(mesh)
    bc.validate(mesh)

    m = mesh
    v0 = ScalarSpace2D(_space1d(kx, m.nx, m.xmin, m.xmax, m.periodic_x),
                       _space1d(ky, m.ny, m.ymin, m.ymax, m.periodic_y))
    ux = ScalarSpace2D(_space1d(kx, m.nx, m.xmin, m.xmax, m.periodic_x),
                       _space1d(ky - 1, m.ny, m.ymin, m.ymax, m.periodic_y))
    uy = ScalarSpace2D(_space1d(kx - 1, m.nx, m.xmin, m.xmax, m.periodic_x),
                       _space1d(ky, m.ny, m.ymin, m.ymax, m.periodic_y))
    v2 = ScalarSpace2D(_space1d(kx - 1, m.nx, m.xmin, m.xmax, m.periodic_x),
                       _space1d(ky - 1, m.ny, m.ymin, m.ymax, m.periodic_y))
    v1 = VectorSpace2D(ux, uy)

    # strong vorticity trace on the vorticity space
    for edge, g in bc.vorticity.items():
        v0.constrain_edge(edge, v0.project_boundary_trace(edge, g))
    # strong normal velocity: u_x on vertical edges, u_y on horizontal ones
    for edge, g in bc.normal_velocity.items():
        comp = ux if edge in ("left", "right") else uy
        comp.constrain_edge(edge, comp.project_boundary_trace(edge, g))

    _, Dx0 = derivative_map(v0.sx)
    _, Dy0 = derivative_map(v0.sy)
    Ix0 = sp.identity(v0.sx.dim, format="csr")
    Iy0 = sp.identity(v0.sy.dim, format="csr")
    rot = sp.vstack([sp.kron(Ix0, Dy0), -sp.kron(Dx0, Iy0)]).tocsr()

    _, Dxu = derivative_map(ux.sx)
    _, Dyu = derivative_map(uy.sy)
    div = sp.hstack([sp.kron(Dxu, sp.identity(ux.sy.dim)),
                     sp.kron(sp.identity(uy.sx.dim), Dyu)]).tocsr()

    return DeRhamSpaces2D(
        mesh=mesh, degrees=(kx, ky), V0=v0, V1=v1, V2=v2,
        rot=rot, div=div, bc=bc,
        mean_zero_pressure=(len(bc.pressure) == 0),
    )


def rot_scalar_to_vector(spaces):
    """Coefficient map V0 -> V1 realizing rot(psi) = (d_y psi, -d_x psi)."""
    return spaces.rot


def div_vector_to_scalar(spaces):
    """Coefficient map V1 -> V2 realizing the divergence."""
    return spaces.div


def eval_field(space, coeffs, xpts, ypts, dx=0, dy=0):
    """Evaluate a scalar field (or a velocity pair) on a tensor grid.

    For a :class:`ScalarSpace2D` returns an array of shape
    ``(len(xpts), len(ypts))``; for a :class:`VectorSpace2D`, a pair of
    such arrays.  Points must lie inside the (wrapped) domain.
    """
    if isinstance(space, VectorSpace2D):
        cx, cy = space.split(np.asarray(coeffs))
        return (space.x.eval_grid(cx, xpts, ypts, dx, dy),
                space.y.eval_grid(cy, xpts, ypts, dx, dy))
    return space.eval_grid(coeffs, xpts, ypts, dx, dy)
