"""Nonlinear and time-stepping drivers for the stabilized VVP system.

Implements the Crank-Nicolson/Picard scheme (midpoint unknowns, advecting
fields frozen at the previous iterate), its steady restriction, and the
linear Oseen validation mode.  Fine scales are eliminated per element via
the Schur complement in :mod:`vmsflow.assembly` and recovered after every
coarse solve.

Stabilization modes:

* ``"none"``: plain Galerkin coarse discretization, no fine scales;
* ``"full-cn"``: tau and the fine convection frozen at the current Picard
  midpoint iterate;
* ``"semi-cn"``: tau and the fine convection frozen at the previous time
  level, which keeps the fine problem linearization-independent.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import AssemblyContext, SparseSystem, apply_bc

__all__ = [
    "NSConfig",
    "OseenParams",
    "State",
    "PicardDivergenceError",
    "NSSolver",
    "tau_m_inverse",
    "solve_oseen",
    "check_assumptions",
    "energy_report",
    "linear_solve",
]


@dataclass
class NSConfig:
    """Solver controls; ``re = inf`` stores an exact zero inverse viscosity."""

    re: float = 100.0
    dt: float = 0.1
    tmax: float = 1.0
    picard_tol: float = 1e-10
    picard_max: int = 50
    stab_mode: str = "full-cn"
    c1: float = None
    c2: float = None
    forcing: object = None          # callable (x, y, t) -> (fx, fy), or None
    nquad: int = None

    @property
    def re_inv(self):
        return 0.0 if math.isinf(self.re) else 1.0 / self.re

    @property
    def stabilized(self):
        return self.stab_mode != "none"


@dataclass
class OseenParams:
    """Linear Oseen problem data; ``beta`` holds V1 coefficients."""

    sigma: float
    nu: float
    beta: np.ndarray
    beta_fine: np.ndarray = None    # optional per-element W1 coefficients
    forcing: object = None          # callable (x, y) -> (fx, fy)


@dataclass
class State:
    """All coefficient vectors at one time level (full, unconstrained)."""

    t: float
    w: np.ndarray
    u: np.ndarray
    p: np.ndarray
    lam: float = 0.0
    fine: np.ndarray = None         # (nex, ney, m) or None

    def stacked(self):
        parts = [self.w, self.u, self.p]
        if self.fine is not None:
            parts.append(self.fine.ravel())
        return np.concatenate(parts)


class PicardDivergenceError(RuntimeError):
    """Picard loop exhausted; carries the last iterate and update history."""

    def __init__(self, message, last_state=None, history=None):
        super().__init__(message)
        self.last_state = last_state
        self.history = history or []


def tau_m_inverse(ux_vals, uy_vals, h, re_inv, c1, c2):
    """Pointwise stabilization parameter.

    tau_M^-1 = sqrt(C1 |u|^2 / h^2 + C2 Re^-2 / (4 h^4)); the viscous term
    drops exactly in the inviscid limit (re_inv = 0).
    """
    usq = ux_vals**2 + uy_vals**2
    return np.sqrt(c1 * usq / h**2 + c2 * re_inv**2 / (4.0 * h**4))


def default_stab_constants(spaces, bubbles):
    c1 = float(max(spaces.degrees)) ** 2
    c2 = float(max(bubbles.kx, bubbles.ky)) ** 4 if bubbles is not None else 0.0
    return c1, c2


def linear_solve(system):
    """Direct sparse solve with a residual guarantee.

    Raises ``RuntimeError`` naming the first zero-pivot block on
    structural or numerical singularity; otherwise the relative residual
    satisfies ||Ax - b|| <= 1e-10 ||b|| (for b != 0).
    """
    A = system.matrix.tocsc() if hasattr(system, "matrix") else system
    b = system.rhs if hasattr(system, "rhs") else None
    if b is None:
        raise ValueError("linear_solve expects an object with matrix and rhs")
    try:
        lu = spla.splu(A)
        x = lu.solve(b)
    except RuntimeError as exc:
        raise _singularity_error(system, exc)
    if not np.all(np.isfinite(x)):
        raise _singularity_error(system, "non-finite solution")
    nb = np.linalg.norm(b)
    if nb > 0:
        # iterative refinement pushes the residual to the roundoff floor of
        # the factorization, which badly scaled time steps need
        for _ in range(3):
            r = b - A @ x
            rel = np.linalg.norm(r) / nb
            if rel <= 1e-13:
                break
            x = x + lu.solve(r)
        rel = np.linalg.norm(A @ x - b) / nb
        if rel > 1e-10:
            raise RuntimeError(f"linear solve residual {rel:.3e} exceeds 1e-10")
    return x


def _singularity_error(system, exc):
    name = "unknown"
    offsets = getattr(system, "offsets", None)
    matrix = system.matrix if hasattr(system, "matrix") else system
    diag = np.abs(matrix.diagonal())
    bad = np.where(diag == 0.0)[0]
    if offsets and bad.size:
        names = sorted(offsets, key=offsets.get)
        idx = bad[0]
        name = names[0]
        for n in names:
            if idx >= offsets[n]:
                name = n
    return RuntimeError(f"singular system (suspect block: {name}): {exc}")


@dataclass
class _FineData:
    A: np.ndarray      # (nel, m, m)
    Ccf: np.ndarray    # (nel, nc, m)
    Cfc: np.ndarray    # (nel, m, nc)
    rhs: np.ndarray    # (nel, m)
    Gc: np.ndarray     # (nel, nc) stacked coarse indices


class _SystemBuilder:
    """Collects sparse triplets and right-hand side over the coarse layout."""

    def __init__(self, ctx):
        self.ctx = ctx
        self.rows, self.cols, self.data = [], [], []
        self.rhs = np.zeros(ctx.ncoarse)

    def place(self, mat, rowname, colname, scale=1.0):
        coo = mat.tocoo()
        self.rows.append(coo.row + self.ctx.offsets[rowname])
        self.cols.append(coo.col + self.ctx.offsets[colname])
        self.data.append(scale * coo.data)

    def place_elem(self, L, rowname, colname):
        GA = self.ctx.gidx[rowname] + self.ctx.offsets[rowname]
        GB = self.ctx.gidx[colname] + self.ctx.offsets[colname]
        na, nb = L.shape[2], L.shape[3]
        r = np.broadcast_to(GA[:, :, :, None], L.shape)
        c = np.broadcast_to(GB[:, :, None, :], L.shape)
        self.rows.append(r.ravel())
        self.cols.append(c.ravel())
        self.data.append(L.ravel())

    def add_load(self, name, vec):
        o = self.ctx.offsets[name]
        self.rhs[o:o + vec.size] += vec

    def tocsr(self):
        n = self.ctx.ncoarse
        A = sp.csr_matrix(
            (np.concatenate(self.data),
             (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=(n, n))
        A.sum_duplicates()
        return A


def build_vvp_system(ctx, *, sigma, visc_coarse, visc_fine, vort_scale_coarse,
                     vort_scale_fine, conv_scale, a_mom, a_cross, a_res,
                     fine_conv_w, tau_inv, rhs_mom, stabilized):
    """Assemble the stabilized VVP saddle system (coarse part + fine blocks).

    All bilinear forms act on the solved-for coefficient vector (midpoint
    values in time stepping); frozen fields enter through quadrature-point
    values.  Returns ``(SparseSystem, _FineData or None)``.
    """
    b = _SystemBuilder(ctx)
    ones = np.ones((ctx.mesh.nx, ctx.mesh.ny, ctx.nquad, ctx.nquad))

    # momentum rows
    if sigma != 0.0:
        b.place(ctx.mass("ux"), "ux", "ux", sigma)
        b.place(ctx.mass("uy"), "uy", "uy", sigma)
    if visc_coarse != 0.0:
        b.place(ctx.kron_form("ux", "w", dB=(0, 1)), "ux", "w", visc_coarse)
        b.place(ctx.kron_form("uy", "w", dB=(1, 0)), "uy", "w", -visc_coarse)
    b.place(ctx.kron_form("p", "ux", dB=(1, 0)).T.tocsr(), "ux", "p", -1.0)
    b.place(ctx.kron_form("p", "uy", dB=(0, 1)).T.tocsr(), "uy", "p", -1.0)
    if a_mom is not None:
        ax, ay = a_mom
        b.place_elem(ctx.form_cc("ux", "w", -conv_scale * ay), "ux", "w")
        b.place_elem(ctx.form_cc("uy", "w", conv_scale * ax), "uy", "w")

    # mass rows
    b.place(ctx.kron_form("p", "ux", dB=(1, 0)), "p", "ux")
    b.place(ctx.kron_form("p", "uy", dB=(0, 1)), "p", "uy")

    # vorticity rows
    b.place(ctx.mass("w"), "w", "w")
    b.place(ctx.kron_form("ux", "w", dB=(0, 1)).T.tocsr(), "w", "ux",
            -vort_scale_coarse)
    b.place(ctx.kron_form("uy", "w", dB=(1, 0)).T.tocsr(), "w", "uy",
            vort_scale_coarse)

    if rhs_mom is not None:
        gx, gy = rhs_mom
        b.add_load("ux", ctx.load_c("ux", gx))
        b.add_load("uy", ctx.load_c("uy", gy))

    fine = None
    if stabilized:
        fine = _build_fine_blocks(
            ctx, sigma=sigma, visc_coarse=visc_coarse, visc_fine=visc_fine,
            vort_scale_coarse=vort_scale_coarse, vort_scale_fine=vort_scale_fine,
            conv_scale=conv_scale, a_cross=a_cross, a_res=a_res,
            fine_conv_w=fine_conv_w, tau_inv=tau_inv, rhs_mom=rhs_mom,
            ones=ones)

    A, rhs = b.tocsr(), b.rhs
    if sigma > 1.0:
        # equilibrate the momentum rows: at small time steps the sigma-scaled
        # rows otherwise dominate the factorizations and amplify pressure
        # roundoff; pure row scaling, the solution is unchanged
        s = np.ones(ctx.ncoarse)
        s[ctx.offsets["ux"]:ctx.offsets["p"]] = 1.0 / sigma
        A = sp.diags(s) @ A
        rhs = s * rhs
        if fine is not None:
            sl = ctx.local_slices()
            fo = ctx.foffsets
            mrows = slice(fo["w1x"], fo["w1x"] + ctx.fdims[1] + ctx.fdims[2])
            fine.A[:, mrows, :] /= sigma
            fine.Cfc[:, mrows, :] /= sigma
            fine.rhs[:, mrows] /= sigma
            for name in ("ux", "uy"):
                fine.Ccf[:, sl[name], :] /= sigma

    return SparseSystem(A.tocsr(), rhs, ctx.offsets), fine


def _build_fine_blocks(ctx, *, sigma, visc_coarse, visc_fine,
                       vort_scale_coarse, vort_scale_fine, conv_scale,
                       a_cross, a_res, fine_conv_w, tau_inv, rhs_mom, ones):
    nel = ctx.mesh.nelems
    m = ctx.nfine
    nc = ctx.nloc_coarse()
    fo = ctx.foffsets
    sl = ctx.local_slices()
    s_w0 = slice(fo["w0"], fo["w0"] + ctx.fdims[0])
    s_w1x = slice(fo["w1x"], fo["w1x"] + ctx.fdims[1])
    s_w1y = slice(fo["w1y"], fo["w1y"] + ctx.fdims[2])
    s_w2 = slice(fo["w2"], fo["w2"] + ctx.fdims[3])

    A = np.zeros((nel, m, m))
    Ccf = np.zeros((nel, nc, m))
    Cfc = np.zeros((nel, m, nc))
    rhs = np.zeros((nel, m))

    # constant fine-fine pieces (shared by all elements)
    Mxx = ctx.form_ff("w1x", "w1x")
    Myy = ctx.form_ff("w1y", "w1y")
    if sigma != 0.0:
        A[:, s_w1x, s_w1x] += sigma * Mxx
        A[:, s_w1y, s_w1y] += sigma * Myy
    if visc_fine != 0.0:
        A[:, s_w1x, s_w0] += visc_fine * ctx.form_ff("w1x", "rot_w0_x")
        A[:, s_w1y, s_w0] += visc_fine * ctx.form_ff("w1y", "rot_w0_y")
    A[:, s_w1x, s_w2] -= ctx.form_ff("div_w1x", "w2")
    A[:, s_w1y, s_w2] -= ctx.form_ff("div_w1y", "w2")
    A[:, s_w2, s_w1x] += ctx.form_ff("w2", "div_w1x")
    A[:, s_w2, s_w1y] += ctx.form_ff("w2", "div_w1y")
    A[:, s_w0, s_w0] += ctx.form_ff("w0", "w0")
    A[:, s_w0, s_w1x] -= vort_scale_fine * ctx.form_ff("rot_w0_x", "w1x")
    A[:, s_w0, s_w1y] -= vort_scale_fine * ctx.form_ff("rot_w0_y", "w1y")

    if tau_inv is not None:
        A[:, s_w1x, s_w1x] += ctx.form_ff("w1x", "w1x", tau_inv)
        A[:, s_w1y, s_w1y] += ctx.form_ff("w1y", "w1y", tau_inv)
    if fine_conv_w is not None:
        A[:, s_w1x, s_w1y] += ctx.form_ff("w1x", "w1y", -fine_conv_w)
        A[:, s_w1y, s_w1x] += ctx.form_ff("w1y", "w1x", fine_conv_w)

    def fc(L):
        return L.reshape(nel, L.shape[2], L.shape[3])

    # fine-test rows against coarse trials (the weak momentum residual)
    if sigma != 0.0:
        Cfc[:, s_w1x, sl["ux"]] += sigma * fc(ctx.form_fc("w1x", "ux", ones))
        Cfc[:, s_w1y, sl["uy"]] += sigma * fc(ctx.form_fc("w1y", "uy", ones))
    if a_res is not None:
        axr, ayr = a_res
        Cfc[:, s_w1x, sl["w"]] += fc(ctx.form_fc("w1x", "w", -conv_scale * ayr))
        Cfc[:, s_w1y, sl["w"]] += fc(ctx.form_fc("w1y", "w", conv_scale * axr))
    if visc_coarse != 0.0:
        Cfc[:, s_w1x, sl["w"]] += visc_coarse * fc(
            ctx.form_fc("w1x", "w", ones, dB=(0, 1)))
        Cfc[:, s_w1y, sl["w"]] -= visc_coarse * fc(
            ctx.form_fc("w1y", "w", ones, dB=(1, 0)))
    Cfc[:, s_w1x, sl["p"]] -= fc(ctx.form_fc("div_w1x", "p", ones))
    Cfc[:, s_w1y, sl["p"]] -= fc(ctx.form_fc("div_w1y", "p", ones))

    def cf(L):
        return L.reshape(nel, L.shape[2], L.shape[3])

    # coarse-test rows against fine trials
    if sigma != 0.0:
        Ccf[:, sl["ux"], s_w1x] += sigma * cf(ctx.form_cf("ux", "w1x", ones))
        Ccf[:, sl["uy"], s_w1y] += sigma * cf(ctx.form_cf("uy", "w1y", ones))
    if a_cross is not None:
        axc, ayc = a_cross
        Ccf[:, sl["ux"], s_w0] += cf(ctx.form_cf("ux", "w0", -conv_scale * ayc))
        Ccf[:, sl["uy"], s_w0] += cf(ctx.form_cf("uy", "w0", conv_scale * axc))
    Ccf[:, sl["w"], s_w1x] -= vort_scale_coarse * cf(
        ctx.form_cf("w", "w1x", ones, dA=(0, 1)))
    Ccf[:, sl["w"], s_w1y] += vort_scale_coarse * cf(
        ctx.form_cf("w", "w1y", ones, dA=(1, 0)))

    if rhs_mom is not None:
        gx, gy = rhs_mom
        rhs[:, s_w1x] = ctx.load_f("w1x", gx)
        rhs[:, s_w1y] = ctx.load_f("w1y", gy)

    Gc = ctx.coarse_local_indices().reshape(nel, nc)
    return _FineData(A=A, Ccf=Ccf, Cfc=Cfc, rhs=rhs, Gc=Gc)


def condense_fine(system, fine):
    """Schur-eliminate all fine blocks into the coarse system (batched).

    Returns the condensed system plus the batched inverse application
    needed by :func:`recover_fine`.
    """
    nel, m, _ = fine.A.shape
    nc = fine.Cfc.shape[2]
    try:
        X = np.linalg.solve(
            fine.A, np.concatenate([fine.Cfc, fine.rhs[:, :, None]], axis=2))
    except np.linalg.LinAlgError:
        bad = [e for e in range(nel)
               if not np.all(np.isfinite(np.linalg.lstsq(
                   fine.A[e], fine.rhs[e], rcond=None)[0]))
               or np.linalg.matrix_rank(fine.A[e]) < m]
        raise RuntimeError(
            f"singular fine-scale block(s) on elements {bad[:8]}; "
            "tau_M <= 0 or degenerate configuration")
    S = -np.matmul(fine.Ccf, X[:, :, :nc])
    rc = -np.matmul(fine.Ccf, X[:, :, nc:]).reshape(nel, nc)

    rows = np.broadcast_to(fine.Gc[:, :, None], S.shape).ravel()
    cols = np.broadcast_to(fine.Gc[:, None, :], S.shape).ravel()
    n = system.matrix.shape[0]
    A = system.matrix + sp.csr_matrix((S.ravel(), (rows, cols)), shape=(n, n))
    rhs = system.rhs.copy()
    np.add.at(rhs, fine.Gc.ravel(), rc.ravel())
    return SparseSystem(A, rhs, system.offsets), X


def recover_fine(X, fine, x_full):
    """Per-element fine DOFs from the solved coarse coefficients."""
    nel, m, ncp1 = X.shape
    nc = ncp1 - 1
    xloc = x_full[fine.Gc]
    return X[:, :, nc] - np.einsum("emn,en->em", X[:, :, :nc], xloc)


def assemble_monolithic(system, fine, ctx):
    """Global system retaining all fine DOFs (condensation oracle)."""
    nel, m, _ = fine.A.shape
    nc_tot = ctx.ncoarse
    N = nc_tot + nel * m
    rows, cols, data = [system.matrix.tocoo().row], [system.matrix.tocoo().col], \
        [system.matrix.tocoo().data]
    foff = nc_tot + m * np.arange(nel)
    li = np.arange(m)
    r_ff = (foff[:, None, None] + li[None, :, None] + np.zeros((1, 1, m), int))
    c_ff = (foff[:, None, None] + li[None, None, :] + np.zeros((1, m, 1), int))
    rows.append(r_ff.ravel()), cols.append(c_ff.ravel()), data.append(fine.A.ravel())
    nc = fine.Cfc.shape[2]
    r_fc = np.broadcast_to((foff[:, None] + li[None, :])[:, :, None],
                           (nel, m, nc))
    c_fc = np.broadcast_to(fine.Gc[:, None, :], (nel, m, nc))
    rows.append(r_fc.ravel()), cols.append(c_fc.ravel()), data.append(fine.Cfc.ravel())
    r_cf = np.broadcast_to(fine.Gc[:, :, None], (nel, nc, m))
    c_cf = np.broadcast_to((foff[:, None] + li[None, :])[:, None, :],
                           (nel, nc, m))
    rows.append(r_cf.ravel()), cols.append(c_cf.ravel()), data.append(fine.Ccf.ravel())
    A = sp.csr_matrix((np.concatenate(data),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N))
    rhs = np.concatenate([system.rhs, fine.rhs.ravel()])
    return SparseSystem(A, rhs, system.offsets)


class NSSolver:
    """Driver tying the complex, bubbles and configuration together."""

    def __init__(self, spaces, bubbles, config):
        self.spaces = spaces
        self.bubbles = bubbles if config.stabilized else bubbles
        self.config = config
        self.ctx = AssemblyContext(spaces, bubbles, nquad=config.nquad)
        c1d, c2d = default_stab_constants(spaces, bubbles)
        self.c1 = config.c1 if config.c1 is not None else c1d
        self.c2 = config.c2 if config.c2 is not None else c2d

    # -- field helpers -----------------------------------------------------

    def zero_state(self, t=0.0):
        n0, n1, n2 = self.spaces.dims
        fine = None
        if self.config.stabilized:
            fine = np.zeros((self.spaces.mesh.nx, self.spaces.mesh.ny,
                             self.ctx.nfine))
        return State(t=t, w=np.zeros(n0), u=np.zeros(n1), p=np.zeros(n2),
                     fine=fine)

    def fine_velocity_values(self, fine):
        if fine is None or fine.shape[-1] == 0:
            z = np.zeros((self.spaces.mesh.nx, self.spaces.mesh.ny,
                          self.ctx.nquad, self.ctx.nquad))
            return z, z.copy()
        cx = self.ctx.fine_block_coeffs(fine, "w1x")
        cy = self.ctx.fine_block_coeffs(fine, "w1y")
        return self.ctx.eval_fine("w1x", cx), self.ctx.eval_fine("w1y", cy)

    def forcing_values(self, t):
        if self.config.forcing is None:
            return None
        X, Y = self.ctx.grid()
        fx, fy = self.config.forcing(X, Y, t)
        return np.broadcast_to(fx, X.shape).copy(), \
            np.broadcast_to(fy, X.shape).copy()

    def tau_field(self, u_coeffs):
        ux, uy = self.ctx.eval_velocity(u_coeffs)
        return tau_m_inverse(ux, uy, self.spaces.mesh.h,
                             self.config.re_inv, self.c1, self.c2)

    def project_initial_velocity(self, u0):
        """Divergence-preserving L2 projection of the initial velocity.

        Minimizes the L2 distance subject to (q, div u^h) = 0, so the
        projected field is pointwise solenoidal; strongly constrained
        normal-trace DOFs keep their lifted values.
        """
        ctx = self.ctx
        X, Y = ctx.grid()
        u0x, u0y = u0(X, Y)
        n1 = self.spaces.V1.dim
        n2 = self.spaces.V2.dim
        M1 = ctx.velocity_mass()
        Q = ctx.qdiv_form()
        A = sp.bmat([[M1, Q.T], [Q, None]], format="csr")
        b = np.concatenate([ctx.load_c("ux", np.broadcast_to(u0x, X.shape)),
                            ctx.load_c("uy", np.broadcast_to(u0y, X.shape)),
                            np.zeros(n2)])
        mask = np.concatenate([self.spaces.V1.mask, np.ones(n2, dtype=bool)])
        lift = np.concatenate([self.spaces.V1.lift, np.zeros(n2)])
        mean_col = np.concatenate([np.zeros(n1), ctx.mean_p])
        from .assembly import ConstrainedSystem
        cs = ConstrainedSystem(A, b, mask, lift, n1 + n2, mean_col)
        x = linear_solve(cs)
        full, _ = cs.expand(x)
        return full[:n1]

    def initial_state(self, u0, t=0.0):
        st = self.zero_state(t)
        st.u = self.project_initial_velocity(u0)
        # consistent initial vorticity: weak rot of the initial velocity
        ctx = self.ctx
        rhs = ctx.rot_form().T @ st.u
        for edge, g in self.spaces.bc.tangential_velocity.items():
            rhs -= ctx.edge_load("w", edge, g)
        M0 = ctx.mass("w")
        mask = self.spaces.V0.mask
        from .assembly import ConstrainedSystem
        cs = ConstrainedSystem(M0, rhs, mask, self.spaces.V0.lift,
                               self.spaces.V0.dim, None)
        st.w, _ = cs.expand(linear_solve(cs))
        return st

    # -- one linearized solve ----------------------------------------------

    def _solve_linearized(self, *, sigma, frozen_mid_u, frozen_fine_u,
                          frozen_conv_w, tau_u_coeffs, rhs_time, t_forcing,
                          monolithic=False, tau_override=None):
        cfg = self.config
        ctx = self.ctx
        re_inv = cfg.re_inv

        a_cx, a_cy = ctx.eval_velocity(frozen_mid_u)
        if frozen_fine_u is not None:
            fx, fy = self.fine_velocity_values(frozen_fine_u)
            a_mom = (a_cx + fx, a_cy + fy)
        else:
            a_mom = (a_cx, a_cy)

        tau = None
        fine_w = None
        if cfg.stabilized:
            if tau_override is not None:
                tau = np.full_like(a_cx, float(tau_override))
            else:
                ux, uy = ctx.eval_velocity(tau_u_coeffs)
                tau = tau_m_inverse(ux, uy, self.spaces.mesh.h, re_inv,
                                    self.c1, self.c2)
            fine_w = ctx.eval_scalar("w", frozen_conv_w)

        fvals = self.forcing_values(t_forcing)
        if rhs_time is not None:
            gx, gy = rhs_time
            if fvals is not None:
                gx, gy = gx + fvals[0], gy + fvals[1]
            rhs_mom = (gx, gy)
        else:
            rhs_mom = fvals

        system, fine = build_vvp_system(
            ctx, sigma=sigma, visc_coarse=re_inv, visc_fine=0.5 * re_inv,
            vort_scale_coarse=1.0, vort_scale_fine=1.0, conv_scale=1.0,
            a_mom=a_mom, a_cross=(a_cx, a_cy), a_res=(a_cx, a_cy),
            fine_conv_w=fine_w, tau_inv=tau, rhs_mom=rhs_mom,
            stabilized=cfg.stabilized)

        if monolithic and fine is not None:
            big = assemble_monolithic(system, fine, ctx)
            cs = apply_bc(big, self.spaces, ctx)
            x = linear_solve(cs)
            full, lam = cs.expand(x)
            xc = full[:ctx.ncoarse]
            xf = full[ctx.ncoarse:].reshape(self.spaces.mesh.nx,
                                            self.spaces.mesh.ny, ctx.nfine)
            return xc, xf, lam, tau
        if fine is not None:
            system, X = condense_fine(system, fine)
        cs = apply_bc(system, self.spaces, ctx)
        x = linear_solve(cs)
        full, lam = cs.expand(x)
        xf = None
        if fine is not None:
            xf = recover_fine(X, fine, full).reshape(
                self.spaces.mesh.nx, self.spaces.mesh.ny, ctx.nfine)
        return full, xf, lam, tau

    def _unpack(self, xc):
        n0, n1, _ = self.spaces.dims
        return xc[:n0], xc[n0:n0 + n1], xc[n0 + n1:]

    # -- Picard iterations ---------------------------------------------------

    def picard_step(self, state_n, iterate, monolithic=False,
                    tau_override=None):
        """One linearized Crank-Nicolson solve: iterate m -> m+1.

        ``iterate`` holds end-of-step values of Picard iterate m (iterate 0
        is the state at level n); returns the next iterate.
        """
        cfg = self.config
        dt = cfg.dt
        mid_u = 0.5 * (state_n.u + iterate.u)
        mid_fine = None
        if cfg.stabilized:
            mid_fine = 0.5 * (state_n.fine + iterate.fine)
        if cfg.stab_mode == "semi-cn":
            conv_w = state_n.w
            tau_u = state_n.u
        else:
            conv_w = 0.5 * (state_n.w + iterate.w)
            tau_u = mid_u

        uxn, uyn = self.ctx.eval_velocity(state_n.u)
        fxn, fyn = self.fine_velocity_values(state_n.fine)
        sigma = 2.0 / dt
        rhs_time = (sigma * (uxn + fxn), sigma * (uyn + fyn))

        xc, xf, lam, tau = self._solve_linearized(
            sigma=sigma, frozen_mid_u=mid_u, frozen_fine_u=mid_fine,
            frozen_conv_w=conv_w, tau_u_coeffs=tau_u, rhs_time=rhs_time,
            t_forcing=state_n.t + 0.5 * dt, monolithic=monolithic,
            tau_override=tau_override)

        w_mid, u_mid, p_mid = self._unpack(xc)
        new = State(t=state_n.t + dt,
                    w=2.0 * w_mid - state_n.w,
                    u=2.0 * u_mid - state_n.u,
                    p=p_mid, lam=lam, fine=None)
        if cfg.stabilized:
            new.fine = 2.0 * xf - state_n.fine
        return new

    def advance_timestep(self, state_n, monolithic=False):
        """Picard-iterate one Crank-Nicolson step to tolerance."""
        cfg = self.config
        iterate = state_n
        history = []
        for it in range(cfg.picard_max):
            nxt = self.picard_step(state_n, iterate, monolithic=monolithic)
            du = np.linalg.norm(nxt.stacked() - iterate.stacked())
            scale = max(np.linalg.norm(nxt.stacked()), 1e-300)
            history.append(du / scale)
            iterate = nxt
            if history[-1] <= cfg.picard_tol:
                return iterate, {"iterations": it + 1, "history": history}
        raise PicardDivergenceError(
            f"Picard failed to reach {cfg.picard_tol} in {cfg.picard_max} "
            f"iterations (last update {history[-1]:.3e})",
            last_state=iterate, history=history)

    def _steady_map(self, iterate):
        """One linearized steady solve with fields frozen at ``iterate``."""
        xc, xf, lam, tau = self._solve_linearized(
            sigma=0.0, frozen_mid_u=iterate.u, frozen_fine_u=iterate.fine,
            frozen_conv_w=iterate.w, tau_u_coeffs=iterate.u,
            rhs_time=None, t_forcing=0.0)
        w, u, p = self._unpack(xc)
        return State(t=0.0, w=w, u=u, p=p, lam=lam, fine=xf)

    def _state_from_stacked(self, x):
        n0, n1, n2 = self.spaces.dims
        st = State(t=0.0, w=x[:n0], u=x[n0:n0 + n1],
                   p=x[n0 + n1:n0 + n1 + n2], fine=None)
        if self.config.stabilized:
            st.fine = x[n0 + n1 + n2:].reshape(
                self.spaces.mesh.nx, self.spaces.mesh.ny, self.ctx.nfine)
        return st

    def solve_steady(self, initial=None, anderson_depth=3):
        """Picard iteration on the steady system (no unsteady term).

        Accelerates the plain Picard map with Anderson mixing on the
        frozen fields; the fixed point is unchanged, the convergence
        metric is the plain map's relative update, and the returned state
        is always an unrelaxed solve output (so the post-solve invariants
        hold).
        """
        cfg = self.config
        cur = initial if initial is not None else self.zero_state()
        x = cur.stacked()
        hist_g, hist_r = [], []
        history = []
        for it in range(cfg.picard_max):
            gstate = self._steady_map(cur)
            g = gstate.stacked()
            r = g - x
            scale = max(np.linalg.norm(g), 1e-300)
            history.append(np.linalg.norm(r) / scale)
            if history[-1] <= cfg.picard_tol:
                return gstate, {"iterations": it + 1, "history": history}
            hist_g.append(g)
            hist_r.append(r)
            if len(hist_g) > anderson_depth + 1:
                hist_g.pop(0)
                hist_r.pop(0)
            if len(hist_r) >= 2:
                dR = np.column_stack([hist_r[j + 1] - hist_r[j]
                                      for j in range(len(hist_r) - 1)])
                dG = np.column_stack([hist_g[j + 1] - hist_g[j]
                                      for j in range(len(hist_g) - 1)])
                gamma = np.linalg.lstsq(dR, r, rcond=None)[0]
                x = g - dG @ gamma
            else:
                x = g
            cur = self._state_from_stacked(x)
        raise PicardDivergenceError(
            f"steady Picard failed to reach {cfg.picard_tol} in "
            f"{cfg.picard_max} iterations (last update {history[-1]:.3e})",
            last_state=cur, history=history)

    # -- diagnostics ---------------------------------------------------------

    def divergence_report(self, state):
        """Max quadrature-point |div u^h| and |div u'|."""
        ctx = self.ctx
        div_c = ctx.eval_scalar("p", self.spaces.div @ state.u)
        max_c = float(np.abs(div_c).max())
        max_f = 0.0
        if state.fine is not None and ctx.nfine:
            cx = ctx.fine_block_coeffs(state.fine, "w1x")
            cy = ctx.fine_block_coeffs(state.fine, "w1y")
            dvals = (np.einsum("xym,mq->xyq", cx, ctx.fine["div_w1x"])
                     + np.einsum("xym,mq->xyq", cy, ctx.fine["div_w1y"]))
            max_f = float(np.abs(dvals).max())
        return max_c, max_f

    def kinetic_energy(self, state):
        """(K_coarse, K_fine, K_total) by exact quadrature."""
        ctx = self.ctx
        ux, uy = ctx.eval_velocity(state.u)
        fx, fy = self.fine_velocity_values(state.fine)
        Kc = 0.5 * ctx.integrate(ux**2 + uy**2)
        Kf = 0.5 * ctx.integrate(fx**2 + fy**2)
        Kt = 0.5 * ctx.integrate((ux + fx)**2 + (uy + fy)**2)
        return Kc, Kf, Kt

    def fine_norms(self, state):
        """L2 norms of the fine vorticity, velocity and pressure fields."""
        ctx = self.ctx
        if state.fine is None or not ctx.nfine:
            return 0.0, 0.0, 0.0
        wv = ctx.eval_fine("w0", ctx.fine_block_coeffs(state.fine, "w0"))
        fx, fy = self.fine_velocity_values(state.fine)
        pv = ctx.eval_fine("w2", ctx.fine_block_coeffs(state.fine, "w2"))
        return (np.sqrt(ctx.integrate(wv**2)),
                np.sqrt(ctx.integrate(fx**2 + fy**2)),
                np.sqrt(ctx.integrate(pv**2)))

    def check_assumptions(self, state, infsup=False):
        """Stability-assumption margins for the current state (diagnostic).

        Maps the Oseen analysis quantities onto the Navier-Stokes run:
        the advecting field is the coarse velocity, nu = Re^-1 and sigma
        the reciprocal time step.  Violations never abort a run: the
        benchmarks themselves operate outside the assumptions.
        """
        sigma = 1.0 / self.config.dt if self.config.dt else 1.0
        tau = self.tau_field(state.u) if self.config.stabilized else None
        return check_assumptions(self.ctx, state.u, self.config.re_inv,
                                 sigma, tau, infsup=infsup,
                                 spaces=self.spaces)


def energy_report(solver, state_n, state_np1, dt=None):
    """Evaluate both sides of the discrete kinetic-energy identity.

    lhs = (K^{n+1} - K^n) / dt with K = ||u^h + u'||^2 / 2; rhs collects
    forcing power, coarse and half-weighted fine enstrophy dissipation and
    the stabilization drain at the midpoint.  Returns (lhs, rhs, residual).
    """
    cfg = solver.config
    ctx = solver.ctx
    dt = dt if dt is not None else cfg.dt

    def total_uv(state):
        ux, uy = ctx.eval_velocity(state.u)
        fx, fy = solver.fine_velocity_values(state.fine)
        return ux + fx, uy + fy

    ux0, uy0 = total_uv(state_n)
    ux1, uy1 = total_uv(state_np1)
    K0 = 0.5 * ctx.integrate(ux0**2 + uy0**2)
    K1 = 0.5 * ctx.integrate(ux1**2 + uy1**2)
    lhs = (K1 - K0) / dt

    uxm, uym = 0.5 * (ux0 + ux1), 0.5 * (uy0 + uy1)
    wm = ctx.eval_scalar("w", 0.5 * (state_n.w + state_np1.w))
    rhs = 0.0
    if cfg.forcing is not None:
        X, Y = ctx.grid()
        fx, fy = cfg.forcing(X, Y, state_n.t + 0.5 * dt)
        rhs += ctx.integrate(fx * uxm + fy * uym)
    rhs -= cfg.re_inv * ctx.integrate(wm**2)
    if cfg.stabilized and state_n.fine is not None:
        wfm = ctx.eval_fine("w0", ctx.fine_block_coeffs(
            0.5 * (state_n.fine + state_np1.fine), "w0"))
        rhs -= 0.5 * cfg.re_inv * ctx.integrate(wfm**2)
        fxm_ = 0.5 * (solver.fine_velocity_values(state_n.fine)[0]
                      + solver.fine_velocity_values(state_np1.fine)[0])
        fym_ = 0.5 * (solver.fine_velocity_values(state_n.fine)[1]
                      + solver.fine_velocity_values(state_np1.fine)[1])
        if cfg.stab_mode == "semi-cn":
            tau_u = state_n.u
        else:
            tau_u = 0.5 * (state_n.u + state_np1.u)
        tau = solver.tau_field(tau_u)
        rhs -= ctx.integrate(tau * (fxm_**2 + fym_**2))
    return lhs, rhs, lhs - rhs


def solve_oseen(params, spaces, bubbles, *, c1=None, c2=None, nquad=None,
                stabilized=True):
    """One linear solve of the stabilized Oseen system.

    The vorticity carries the sqrt(nu) scaling of the analysis form: the
    coarse equations use sqrt(nu) viscous and vorticity couplings, the
    fine ones sqrt(nu/2), and the advection enters as (1/sqrt(nu)) w x beta
    with a solenoidal beta given by V1 (plus optional fine) coefficients.
    """
    ctx = AssemblyContext(spaces, bubbles, nquad=nquad)
    nu, sigma = params.nu, params.sigma
    if nu <= 0 or sigma <= 0:
        raise ValueError("Oseen requires nu, sigma > 0")
    c1d, c2d = default_stab_constants(spaces, bubbles)
    c1 = c1 if c1 is not None else c1d
    c2 = c2 if c2 is not None else c2d

    bx, by = ctx.eval_velocity(params.beta)
    if params.beta_fine is not None:
        fbx = ctx.eval_fine("w1x", ctx.fine_block_coeffs(params.beta_fine, "w1x"))
        fby = ctx.eval_fine("w1y", ctx.fine_block_coeffs(params.beta_fine, "w1y"))
        btot = (bx + fbx, by + fby)
    else:
        btot = (bx, by)
    tau = tau_m_inverse(bx, by, spaces.mesh.h, nu, c1, c2) if stabilized else None

    fvals = None
    if params.forcing is not None:
        X, Y = ctx.grid()
        fvals = params.forcing(X, Y)

    system, fine = build_vvp_system(
        ctx, sigma=sigma, visc_coarse=np.sqrt(nu), visc_fine=np.sqrt(nu / 2.0),
        vort_scale_coarse=np.sqrt(nu), vort_scale_fine=np.sqrt(nu / 2.0),
        conv_scale=1.0 / np.sqrt(nu), a_mom=btot, a_cross=(bx, by),
        a_res=btot, fine_conv_w=None, tau_inv=tau, rhs_mom=fvals,
        stabilized=stabilized)
    X = None
    if fine is not None:
        system, X = condense_fine(system, fine)
    cs = apply_bc(system, spaces, ctx)
    x = linear_solve(cs)
    full, lam = cs.expand(x)
    n0, n1, _ = spaces.dims
    st = State(t=0.0, w=full[:n0], u=full[n0:n0 + n1], p=full[n0 + n1:],
               lam=lam)
    if fine is not None:
        st.fine = recover_fine(X, fine, full).reshape(
            spaces.mesh.nx, spaces.mesh.ny, ctx.nfine)
    return st, ctx, tau


def check_assumptions(ctx, beta_u_coeffs, nu, sigma, tau, beta_fine=None,
                      infsup=False, spaces=None):
    """Diagnostic margins for the stability conditions (never aborts).

    Evaluates the four inequalities of the analysis:
    max-beta bound / (nu sigma) <= 1/6, tau_M^-1/sigma <= 1,
    ||beta^h||_inf h / nu <= 1/24 and the pointwise |beta^h|/h <= tau_M^-1,
    with sup-norms estimated over quadrature points.  Optionally also a
    dense inf-sup estimate of the pressure-velocity coupling.
    """
    bx, by = ctx.eval_velocity(beta_u_coeffs)
    bmag = np.sqrt(bx**2 + by**2)
    binf = float(bmag.max())
    if beta_fine is not None:
        fbx = ctx.eval_fine("w1x", ctx.fine_block_coeffs(beta_fine, "w1x"))
        fby = ctx.eval_fine("w1y", ctx.fine_block_coeffs(beta_fine, "w1y"))
        btot_inf = float(np.sqrt((bx + fbx)**2 + (by + fby)**2).max())
    else:
        btot_inf = binf
    h = ctx.mesh.h

    def entry(name, value, bound):
        ok = bool(value <= bound) if np.isfinite(value) else False
        return {"name": name, "value": float(value), "bound": bound,
                "margin": bound - float(value), "satisfied": ok}

    nu_sig = nu * sigma
    report = [
        entry("beta-nu-sigma", max(btot_inf, binf) ** 2 / nu_sig
              if nu_sig > 0 else np.inf, 1.0 / 6.0),
        entry("tau-over-sigma",
              float(tau.max()) / sigma if tau is not None else 0.0, 1.0),
        entry("cell-peclet", binf * h / nu if nu > 0 else np.inf, 1.0 / 24.0),
    ]
    if tau is not None:
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(bmag > 0, bmag / (h * np.maximum(tau, 1e-300)), 0.0)
        report.append(entry("pointwise-beta-tau", float(ratio.max()), 1.0))
    else:
        report.append(entry("pointwise-beta-tau", np.inf, 1.0))

    out = {"conditions": report}
    if infsup and spaces is not None and spaces.mesh.nelems <= 64:
        out["inf_sup"] = _infsup_estimate(ctx, spaces)
    return out


def _infsup_estimate(ctx, spaces):
    """Smallest generalized singular value of the (q, div v) coupling."""
    import scipy.linalg as la
    Q = ctx.qdiv_form().toarray()
    M1 = ctx.velocity_mass().toarray()
    M2 = ctx.mass("p").toarray()
    vm = spaces.V1.mask
    Q = Q[:, vm][spaces.V2.mask]
    M1 = M1[vm][:, vm]
    M2 = M2[spaces.V2.mask][:, spaces.V2.mask]
    D = ctx.qdiv_form().toarray()[spaces.V2.mask][:, vm]
    Mhdiv = M1 + D.T @ M2 @ D  # ||v||^2 + ||div v||^2
    B = Q @ la.solve(Mhdiv, Q.T, assume_a="pos")
    m = ctx.mean_p[spaces.V2.mask]
    # restrict to the mean-zero pressure subspace
    basis = la.null_space(m[None, :]) if spaces.mean_zero_pressure \
        else np.eye(m.size)
    evals = la.eigvalsh(basis.T @ B @ basis, basis.T @ M2 @ basis)
    return float(np.sqrt(max(evals.min(), 0.0)))
