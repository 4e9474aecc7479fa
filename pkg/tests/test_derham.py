import numpy as np
import pytest

from vmsflow.derham import (BoundaryData, Mesh2D, build_complex, eval_field,
                            non_periodic_edges)


def unit_mesh(n, periodic=False):
    return Mesh2D(0.0, 1.0, 0.0, 1.0, n, n, periodic, periodic)


def fully_homogeneous_bc(mesh):
    edges = non_periodic_edges(mesh)
    zero = lambda s: 0.0
    return BoundaryData(normal_velocity={e: zero for e in edges},
                        vorticity={e: zero for e in edges})


def greville_coeffs(space, f):
    """Tensor Greville interpolation; exact for biliner-degree data."""
    gx, gy = space.sx.greville(), space.sy.greville()
    Ex = space.sx.collocation_matrix(gx).toarray()
    Ey = space.sy.collocation_matrix(gy).toarray()
    F = f(gx[:, None], gy[None, :])
    return np.linalg.solve(Ex, np.linalg.solve(Ey, F.T).T).ravel()


def test_dirichlet_dimensions():
    mesh = unit_mesh(4)
    spaces = build_complex(mesh, (2, 2), fully_homogeneous_bc(mesh))
    assert spaces.dims_active == (16, 40, 24)
    assert spaces.dims_active[0] - spaces.dims_active[1] + spaces.dims_active[2] == 0


def test_periodic_dimensions():
    spaces = build_complex(unit_mesh(4, periodic=True), (1, 1))
    assert spaces.dims == (16, 32, 16)
    assert spaces.dims[0] - spaces.dims[1] + spaces.dims[2] == 0


def test_degree_zero_rejected():
    with pytest.raises(ValueError):
        build_complex(unit_mesh(4), (0, 1))


@pytest.mark.parametrize("degree", [1, 2, 3, 4])
@pytest.mark.parametrize("n", [2, 5, 8])
@pytest.mark.parametrize("periodic", [False, True])
def test_div_rot_is_exactly_zero(degree, n, periodic):
    spaces = build_complex(unit_mesh(n, periodic), (degree, degree))
    composed = spaces.div @ spaces.rot
    composed.eliminate_zeros()
    assert composed.nnz == 0


def test_periodic_harmonic_space_has_dimension_two():
    spaces = build_complex(unit_mesh(3, periodic=True), (2, 2))
    R = spaces.rot.toarray()
    D = spaces.div.toarray()
    rank_rot = np.linalg.matrix_rank(R)
    dim_ker_div = D.shape[1] - np.linalg.matrix_rank(D)
    assert rank_rot == spaces.V0.dim - 1          # constants in the kernel
    assert dim_ker_div - rank_rot == 2            # torus harmonic fields


def test_rot_of_constant_vanishes():
    spaces = build_complex(unit_mesh(4), (2, 2))
    w = np.ones(spaces.V0.dim)
    np.testing.assert_allclose((spaces.rot @ w), 0.0, atol=1e-13)


def test_rot_of_linear_field():
    spaces = build_complex(unit_mesh(4), (2, 2))
    w = greville_coeffs(spaces.V0, lambda x, y: 0.0 * x + y)
    u = spaces.rot @ w
    pts = np.linspace(0.07, 0.93, 6)
    vx, vy = eval_field(spaces.V1, u, pts, pts)
    np.testing.assert_allclose(vx, 1.0, atol=1e-12)
    np.testing.assert_allclose(vy, 0.0, atol=1e-12)


def test_rot_matches_finite_differences():
    spaces = build_complex(unit_mesh(5), (3, 2))
    rng = np.random.default_rng(2)
    w = rng.standard_normal(spaces.V0.dim)
    u = spaces.rot @ w
    eps = 1e-5
    pts = rng.uniform(0.1, 0.9, size=(20, 2))
    for x, y in pts:
        vx, vy = eval_field(spaces.V1, u, [x], [y])
        wy = (spaces.V0.eval_grid(w, [x], [y + eps])
              - spaces.V0.eval_grid(w, [x], [y - eps])) / (2 * eps)
        wx = (spaces.V0.eval_grid(w, [x + eps], [y])
              - spaces.V0.eval_grid(w, [x - eps], [y])) / (2 * eps)
        assert abs(vx[0, 0] - wy[0, 0]) < 1e-6
        assert abs(vy[0, 0] + wx[0, 0]) < 1e-6


def test_div_examples():
    spaces = build_complex(unit_mesh(4), (2, 2))
    n1x = spaces.V1.x.dim

    dims = spaces.V1.x.shape
    # u = (1, 0): divergence-free
    u = np.zeros(spaces.V1.dim)
    u[:n1x] = 1.0
    np.testing.assert_allclose(spaces.div @ u, 0.0, atol=1e-13)

    # u = (x, -y) and u = (x, y)
    cx = greville_coeffs(spaces.V1.x, lambda x, y: x + 0.0 * y)
    cy = greville_coeffs(spaces.V1.y, lambda x, y: 0.0 * x + y)
    pts = np.linspace(0.05, 0.95, 7)
    d1 = eval_field(spaces.V2, spaces.div @ np.concatenate([cx, -cy]), pts, pts)
    d2 = eval_field(spaces.V2, spaces.div @ np.concatenate([cx, cy]), pts, pts)
    np.testing.assert_allclose(d1, 0.0, atol=1e-12)
    np.testing.assert_allclose(d2, 2.0, atol=1e-12)


def test_eval_field_constant_and_bilinear():
    spaces = build_complex(unit_mesh(3), (2, 3))
    c = np.full(spaces.V0.dim, 3.25)
    pts = np.linspace(0, 1, 9)
    np.testing.assert_allclose(eval_field(spaces.V0, c, pts, pts), 3.25, atol=1e-13)
    c = greville_coeffs(spaces.V0, lambda x, y: x * y)
    vals = eval_field(spaces.V0, c, pts, pts)
    np.testing.assert_allclose(vals, pts[:, None] * pts[None, :], atol=1e-12)


def test_bc_masks_zero_traces():
    mesh = unit_mesh(4)
    spaces = build_complex(mesh, (2, 2), fully_homogeneous_bc(mesh))
    t = np.linspace(0, 1, 9)

    # retained V1 x-component functions have zero trace at x = 0 and 1
    cx = spaces.V1.x.mask.astype(float)
    vals = spaces.V1.x.eval_grid(cx, [0.0, 1.0], t)
    np.testing.assert_allclose(vals, 0.0, atol=1e-14)

    # retained V0 functions vanish on the whole boundary
    c0 = spaces.V0.mask.astype(float)
    np.testing.assert_allclose(spaces.V0.eval_grid(c0, [0.0, 1.0], t), 0.0, atol=1e-14)
    np.testing.assert_allclose(spaces.V0.eval_grid(c0, t, [0.0, 1.0]), 0.0, atol=1e-14)


def test_inconsistent_partition_rejected():
    mesh = unit_mesh(2)
    zero = lambda s: 0.0
    bad = BoundaryData(normal_velocity={"left": zero},
                       tangential_velocity={e: zero for e in non_periodic_edges(mesh)})
    with pytest.raises(ValueError):
        build_complex(mesh, (2, 2), bad)


def test_boundary_lift_projection():
    # inhomogeneous normal velocity: u_x = sin(pi*y) on the left edge
    mesh = unit_mesh(12)
    zero = lambda s: 0.0
    bc = BoundaryData(
        normal_velocity={"left": lambda y: np.sin(np.pi * y),
                         "right": zero, "bottom": zero, "top": zero},
        tangential_velocity={e: zero for e in non_periodic_edges(mesh)})
    spaces = build_complex(mesh, (3, 3), bc)
    y = np.linspace(0, 1, 40)
    trace = spaces.V1.x.eval_grid(spaces.V1.x.lift, [0.0], y)[0]
    # the u_x trace space along y has degree ky - 1 = 2
    assert np.abs(trace - np.sin(np.pi * y)).max() < 5e-4
