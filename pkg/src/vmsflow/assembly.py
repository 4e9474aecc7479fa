"""Quadrature, form assembly and static condensation.

Assembles every bilinear/linear form of the stabilized
vorticity-velocity-pressure formulations over the tensor-product
structure of :mod:`vmsflow.derham`:

* constant-coefficient forms are Kronecker products of univariate
  form matrices (exact for the spline/bubble polynomials at the chosen
  Gauss order),
* frozen-field (nonlinear) forms are vectorized element loops driven by
  field values sampled at quadrature points,
* the per-element fine-scale blocks are dense and eliminated through a
  Schur complement; a recovery operator reproduces the fine DOFs from
  the solved coarse DOFs.

Element traversal is vectorized and order-independent; all quadrature
uses Gauss-Legendre with ``max(k) + 1`` points per direction by default.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .bspline import gauss_legendre

__all__ = [
    "QuadratureRule",
    "AssemblyContext",
    "SparseSystem",
    "ConstrainedSystem",
    "ElementFineBlock",
    "condense_element",
    "apply_bc",
    "assemble_form",
]

COARSE_FIELDS = ("w", "ux", "uy", "p")


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre rule on the reference element [0,1]^2."""

    order: int

    @property
    def points(self):
        return gauss_legendre(self.order)[0]

    @property
    def weights(self):
        return gauss_legendre(self.order)[1]


class AssemblyContext:
    """Precomputed tables and index maps for one (complex, bubbles) pair.

    Immutable after construction; all assembly methods are pure functions
    of their inputs, so per-element work may run concurrently.
    """

    def __init__(self, spaces, bubbles=None, nquad=None):
        self.spaces = spaces
        self.bubbles = bubbles
        mesh = spaces.mesh
        self.mesh = mesh
        kx, ky = spaces.degrees
        kmax = max(kx, ky, bubbles.kx if bubbles else 0,
                   bubbles.ky if bubbles else 0)
        self.rule = QuadratureRule(nquad if nquad is not None else kmax + 1)
        self.nquad = self.rule.order
        self.refq, self.refw = self.rule.points, self.rule.weights

        self._coarse = {"w": spaces.V0, "ux": spaces.V1.x,
                        "uy": spaces.V1.y, "p": spaces.V2}
        self.tables = {}
        self.gidx = {}
        self._gather = {}
        for name, space in self._coarse.items():
            bx = space.sx.element_tables(self.refq, nders=1)
            by = space.sy.element_tables(self.refq, nders=1)
            gx = np.array([space.sx.global_indices(e) for e in range(mesh.nx)])
            gy = np.array([space.sy.global_indices(e) for e in range(mesh.ny)])
            G = gx[:, None, :, None] * space.sy.dim + gy[None, :, None, :]
            self.tables[name] = (bx, by)
            self.gidx[name] = G.reshape(mesh.nx, mesh.ny, -1)
            self._gather[name] = (gx, gy)

        n0 = spaces.V0.dim
        n1x, n1y = spaces.V1.x.dim, spaces.V1.y.dim
        self.offsets = {"w": 0, "ux": n0, "uy": n0 + n1x, "p": n0 + n1x + n1y}
        self.ncoarse = n0 + n1x + n1y + spaces.V2.dim

        # physical quadrature weights and grid coordinates
        w2 = np.outer(self.refw, self.refw) * mesh.hx * mesh.hy
        self.w2 = w2
        xq = mesh.xmin + (np.arange(mesh.nx)[:, None] + self.refq[None, :]) * mesh.hx
        yq = mesh.ymin + (np.arange(mesh.ny)[:, None] + self.refq[None, :]) * mesh.hy
        self.xq, self.yq = xq, yq

        # fine-scale reference tables (shared by all elements)
        if bubbles is not None:
            self.fine = bubbles.tables(self.refq, self.refq, mesh.hx, mesh.hy)
            q2 = self.nquad * self.nquad
            self.fine = {k: np.ascontiguousarray(v.reshape(v.shape[0], q2))
                         for k, v in self.fine.items()}
            self.fdims = (bubbles.dim_w0, bubbles.dim_w1x,
                          bubbles.dim_w1y, bubbles.dim_w2)
            self.foffsets = {
                "w0": 0,
                "w1x": bubbles.dim_w0,
                "w1y": bubbles.dim_w0 + bubbles.dim_w1x,
                "w2": bubbles.dim_w0 + bubbles.dim_w1,
            }
            self.nfine = bubbles.dim_total
        else:
            self.fine = {}
            self.nfine = 0

        # pressure-mean constraint vector over the full stacked layout
        v2 = spaces.V2
        self.mean_p = np.kron(v2.sx.basis_integrals(), v2.sy.basis_integrals())

        self._f1d_cache = {}
        self._kron_cache = {}

    # -- coordinates / field evaluation ---------------------------------

    def grid(self):
        """Quadrature-point coordinates as (nex, ney, q, q) arrays."""
        X = np.broadcast_to(self.xq[:, None, :, None],
                            (self.mesh.nx, self.mesh.ny, self.nquad, self.nquad))
        Y = np.broadcast_to(self.yq[None, :, None, :],
                            (self.mesh.nx, self.mesh.ny, self.nquad, self.nquad))
        return X, Y

    def eval_scalar(self, name, coeffs, dx=0, dy=0):
        """Coarse scalar field at quadrature points: (nex, ney, q, q)."""
        space = self._coarse[name]
        bx, by = self.tables[name]
        gx, gy = self._gather[name]
        C = np.asarray(coeffs).reshape(space.shape)
        Cl = C[gx[:, None, :, None], gy[None, :, None, :]]
        return np.einsum("xyab,xau,ybv->xyuv", Cl, bx[:, dx], by[:, dy],
                         optimize=True)

    def eval_velocity(self, u_coeffs):
        """Coarse velocity components at quadrature points."""
        n1x = self.spaces.V1.x.dim
        return (self.eval_scalar("ux", u_coeffs[:n1x]),
                self.eval_scalar("uy", u_coeffs[n1x:]))

    def eval_fine(self, key, coeffs):
        """Fine field at quadrature points from per-element coefficients.

        ``coeffs`` has shape (nex, ney, dim_key); returns (nex, ney, q, q).
        """
        T = self.fine[key]
        out = np.einsum("xym,mq->xyq", coeffs, T)
        return out.reshape(self.mesh.nx, self.mesh.ny, self.nquad, self.nquad)

    def fine_block_coeffs(self, fine_flat, key):
        """Slice per-element stacked fine coefficients for one subspace."""
        o = self.foffsets[key]
        d = dict(zip(("w0", "w1x", "w1y", "w2"),
                     self.fdims))[key]
        return fine_flat[..., o:o + d]

    def integrate(self, vals):
        """Integral over the domain of quadrature-point values."""
        return float(np.einsum("xyuv,uv->", vals, self.w2))

    # -- univariate form matrices and Kronecker assembly ------------------

    def _f1d(self, sA, dA, sB, dB):
        key = (id(sA), dA, id(sB), dB)
        if key in self._f1d_cache:
            return self._f1d_cache[key]
        ta = sA.element_tables(self.refq, nders=dA)
        tb = sB.element_tables(self.refq, nders=dB)
        h = sA.h
        rows, cols, vals = [], [], []
        for e in range(sA.nelems):
            ia = sA.global_indices(e)
            ib = sB.global_indices(e)
            loc = (ta[e, dA] * self.refw) @ tb[e, dB].T * h
            rows.append(np.repeat(ia, ib.size))
            cols.append(np.tile(ib, ia.size))
            vals.append(loc.ravel())
        F = sp.csr_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(sA.dim, sB.dim))
        self._f1d_cache[key] = F
        return F

    def kron_form(self, nameA, nameB, dA=(0, 0), dB=(0, 0)):
        """Constant-coefficient 2D form (rows: test nameA, cols: trial nameB)."""
        key = (nameA, nameB, dA, dB)
        if key in self._kron_cache:
            return self._kron_cache[key]
        A, B = self._coarse[nameA], self._coarse[nameB]
        F = sp.kron(self._f1d(A.sx, dA[0], B.sx, dB[0]),
                    self._f1d(A.sy, dA[1], B.sy, dB[1]), format="csr")
        self._kron_cache[key] = F
        return F

    def mass(self, name):
        return self.kron_form(name, name)

    def velocity_mass(self):
        return sp.block_diag([self.mass("ux"), self.mass("uy")], format="csr")

    def rot_form(self):
        """(rot w, v): rows stacked V1, cols V0."""
        top = self.kron_form("ux", "w", dB=(0, 1))
        bot = -self.kron_form("uy", "w", dB=(1, 0))
        return sp.vstack([top, bot], format="csr")

    def qdiv_form(self):
        """(q, div u): rows V2, cols stacked V1."""
        return sp.hstack([self.kron_form("p", "ux", dB=(1, 0)),
                          self.kron_form("p", "uy", dB=(0, 1))], format="csr")

    # -- elementwise varying-coefficient forms ----------------------------

    def _wcoeff(self, coeff):
        return coeff * self.w2[None, None]

    def form_cc(self, nameA, nameB, coeff, dA=(0, 0), dB=(0, 0)):
        """Element matrices (nex, ney, nlocA, nlocB) for a weighted form."""
        bxa, bya = self.tables[nameA]
        bxb, byb = self.tables[nameB]
        C = self._wcoeff(coeff)
        t1 = np.einsum("xyuv,xau,xbu->xyabv", C, bxa[:, dA[0]], bxb[:, dB[0]],
                       optimize=True)
        L = np.einsum("xyabv,ycv,ydv->xyacbd", t1, bya[:, dA[1]], byb[:, dB[1]],
                      optimize=True)
        sa = bxa.shape[2] * bya.shape[2]
        sb = bxb.shape[2] * byb.shape[2]
        return L.reshape(self.mesh.nx, self.mesh.ny, sa, sb)

    def form_fc(self, fkey, nameB, coeff, dB=(0, 0)):
        """Rows: fine functions of ``fkey``; cols: coarse ``nameB`` locals."""
        bxb, byb = self.tables[nameB]
        C = self._wcoeff(coeff)
        Tf = self.fine[fkey].reshape(-1, self.nquad, self.nquad)
        t1 = np.einsum("xyuv,xbu->xybuv", C, bxb[:, dB[0]], optimize=True)
        L = np.einsum("xybuv,ydv,iuv->xyibd", t1, byb[:, dB[1]], Tf,
                      optimize=True)
        return L.reshape(self.mesh.nx, self.mesh.ny, Tf.shape[0], -1)

    def form_cf(self, nameA, fkey, coeff, dA=(0, 0)):
        """Rows: coarse ``nameA`` locals; cols: fine functions of ``fkey``."""
        L = self.form_fc(fkey, nameA, coeff, dB=dA)
        return np.swapaxes(L, 2, 3)

    def form_ff(self, fkeyA, fkeyB, coeff=None):
        """Fine-fine form: (nex*ney, dimA, dimB) or (dimA, dimB) if constant."""
        TA, TB = self.fine[fkeyA], self.fine[fkeyB]
        wflat = self.w2.ravel()
        if coeff is None:
            return np.einsum("q,iq,jq->ij", wflat, TA, TB, optimize=True)
        C = coeff.reshape(-1, wflat.size) * wflat
        return np.einsum("eq,iq,jq->eij", C, TA, TB, optimize=True)

    def load_c(self, nameA, fieldvals, dA=(0, 0)):
        """Load vector over the full coarse space of ``nameA``."""
        bxa, bya = self.tables[nameA]
        C = self._wcoeff(fieldvals)
        L = np.einsum("xyuv,xau,ybv->xyab", C, bxa[:, dA[0]], bya[:, dA[1]],
                      optimize=True)
        out = np.zeros(self._coarse[nameA].dim)
        np.add.at(out, self.gidx[nameA].ravel(),
                  L.reshape(self.mesh.nx, self.mesh.ny, -1).ravel())
        return out

    def load_f(self, fkey, fieldvals):
        """Per-element fine load: (nex*ney, dim_fkey)."""
        T = self.fine[fkey]
        C = fieldvals.reshape(-1, self.w2.size) * self.w2.ravel()
        return np.einsum("eq,iq->ei", C, T, optimize=True)

    # -- edge quadrature loads --------------------------------------------

    def edge_load(self, name, edge, gfun):
        """Line-integral load (g, phi)_edge over the full space ``name``."""
        space = self._coarse[name]
        m = self.mesh
        if edge in ("left", "right"):
            s_along, s_perp = space.sy, space.sx
            x_end = m.xmin if edge == "left" else m.xmax
        else:
            s_along, s_perp = space.sx, space.sy
            x_end = m.ymin if edge == "bottom" else m.ymax
        q, w = gauss_legendre(s_along.degree + 2)
        tab = s_along.element_tables(q, nders=0)
        line = np.zeros(s_along.dim)
        for e in range(s_along.nelems):
            pts = s_along.xmin + (e + q) * s_along.h
            gv = np.asarray([gfun(p) for p in pts])
            line[s_along.global_indices(e)] += tab[e, 0] @ (w * gv) * s_along.h
        trace = np.asarray(s_perp.collocation_matrix([x_end]).todense()).ravel()
        out = np.zeros(space.dim)
        if edge in ("left", "right"):
            out = np.outer(trace, line).ravel()   # x-major flattening
        else:
            out = np.outer(line, trace).ravel()
        return out

    # -- element-local index plumbing -------------------------------------

    def coarse_local_indices(self):
        """Stacked full-system indices of all coarse locals per element."""
        parts = [self.gidx[name] + self.offsets[name] for name in COARSE_FIELDS]
        return np.concatenate(parts, axis=2)

    def nloc_coarse(self):
        return sum(self.gidx[name].shape[2] for name in COARSE_FIELDS)

    def local_slices(self):
        """Slices of each coarse field inside the per-element local vector."""
        out, start = {}, 0
        for name in COARSE_FIELDS:
            n = self.gidx[name].shape[2]
            out[name] = slice(start, start + n)
            start += n
        return out


@dataclass
class SparseSystem:
    """Assembled (unconstrained) system over the full stacked coarse layout.

    ``offsets`` records the DOF layout (vorticity, velocity components,
    pressure block starts) used by constraint application and the
    singularity diagnostics.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    offsets: dict


@dataclass
class ElementFineBlock:
    """Dense fine-scale system of one element plus coarse couplings."""

    element: tuple
    A: np.ndarray       # fine-fine
    C_cf: np.ndarray    # coarse-test x fine-trial couplings
    C_fc: np.ndarray    # fine-test x coarse-trial couplings
    rhs: np.ndarray
    lu: object = None


def condense_element(block):
    """Schur-eliminate one element's fine DOFs.

    Returns ``(schur, rhs_c, recover)`` where ``schur = -C_cf A^-1 C_fc``
    and ``rhs_c = -C_cf A^-1 rhs`` are the coarse contributions and
    ``recover(x_loc)`` reproduces the fine DOFs from the element-local
    coarse solution.
    """
    try:
        X = np.linalg.solve(block.A, np.column_stack([block.C_fc, block.rhs]))
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(
            f"singular fine-scale block on element {block.element}: {exc}; "
            "check that tau_M > 0 or mass terms are present") from exc
    nc = block.C_fc.shape[1]
    schur = -block.C_cf @ X[:, :nc]
    rhs_c = -block.C_cf @ X[:, nc]

    def recover(x_loc):
        return X[:, nc] - X[:, :nc] @ x_loc

    return schur, rhs_c, recover


class ConstrainedSystem:
    """BC-reduced linear system with expansion back to full coefficients."""

    def __init__(self, matrix, rhs, mask, lift, ncoarse, mean_col=None):
        self.mask = mask
        self.lift = lift
        self.ncoarse = ncoarse
        self.has_multiplier = mean_col is not None
        b = rhs - matrix @ lift
        A = matrix[mask][:, mask]
        if mean_col is not None:
            c = mean_col[mask]
            A = sp.bmat([[A, c[:, None]], [c[None, :], None]], format="csr")
            b = np.concatenate([b[mask], [0.0]])
        else:
            A = A.tocsr()
            b = b[mask]
        self.matrix = A
        self.rhs = b

    def expand(self, x_red):
        full = self.lift.copy()
        n = int(self.mask.sum())
        full[self.mask] = x_red[:n]
        lam = x_red[n] if self.has_multiplier else 0.0
        return full, lam


def apply_bc(system, spaces, ctx=None):
    """Constrain an assembled system with the complex's boundary data.

    Strong normal-velocity and vorticity-trace constraints are eliminated
    (with lifted inhomogeneous values moved to the right-hand side); weak
    tangential-velocity and pressure data become edge-quadrature loads.
    The mean-zero pressure constraint appends a scalar multiplier.
    """
    rhs = system.rhs.copy()
    if ctx is not None:
        off = system.offsets
        for edge, g in spaces.bc.tangential_velocity.items():
            rhs[off["w"]:off["ux"]] -= ctx.edge_load("w", edge, g)
        for edge, g in spaces.bc.pressure.items():
            sign = {"left": +1.0, "right": -1.0, "bottom": +1.0, "top": -1.0}[edge]
            comp = "ux" if edge in ("left", "right") else "uy"
            load = ctx.edge_load(comp, edge, g)
            n = load.size
            rhs[off[comp]:off[comp] + n] += sign * load

    mask = np.concatenate([
        spaces.V0.mask, spaces.V1.x.mask, spaces.V1.y.mask, spaces.V2.mask])
    lift = np.concatenate([
        spaces.V0.lift, spaces.V1.x.lift, spaces.V1.y.lift, spaces.V2.lift])
    ncoarse = mask.size
    nextra = system.matrix.shape[0] - ncoarse
    if nextra > 0:  # monolithic systems carry unconstrained fine DOFs
        mask = np.concatenate([mask, np.ones(nextra, dtype=bool)])
        lift = np.concatenate([lift, np.zeros(nextra)])

    mean_col = None
    if spaces.mean_zero_pressure and ctx is not None:
        mean_col = np.zeros(mask.size)
        op = system.offsets["p"]
        mean_col[op:op + spaces.V2.dim] = ctx.mean_p
    return ConstrainedSystem(system.matrix, rhs, mask, lift, ncoarse, mean_col)


def assemble_form(ctx, form_id, coeff=None, frozen=None, edge=None,
                  data=None):
    """Assemble one named form contribution (operation surface for tests).

    Constant global forms return sparse matrices over the full coarse
    spaces; frozen-field forms take quadrature-point values through
    ``coeff``/``frozen`` and return element arrays as documented on the
    underlying :class:`AssemblyContext` methods.  Boundary loads take an
    ``edge`` name and a ``data`` callable.
    """
    known = {
        "mass_w": lambda: ctx.mass("w"),
        "mass_u": lambda: ctx.velocity_mass(),
        "mass_p": lambda: ctx.mass("p"),
        "rot_w_v": lambda: ctx.rot_form(),
        "q_div_u": lambda: ctx.qdiv_form(),
        "p_div_v": lambda: ctx.qdiv_form().T.tocsr(),
        "mass_w_fine": lambda: ctx.form_ff("w0", "w0"),
        "mass_p_fine": lambda: ctx.form_ff("w2", "w2"),
        "div_fine": lambda: np.hstack([ctx.form_ff("w2", "div_w1x"),
                                       ctx.form_ff("w2", "div_w1y")]),
        "rot_w_v_fine": lambda: np.vstack([ctx.form_ff("w1x", "rot_w0_x"),
                                           ctx.form_ff("w1y", "rot_w0_y")]),
    }
    if form_id in known:
        return known[form_id]()

    needs_frozen = ("conv", "conv_fine_to_coarse", "conv_coarse_to_fine",
                    "res_m_load")
    if form_id in needs_frozen and frozen is None:
        raise ValueError(f"form {form_id!r} needs a frozen field")
    if form_id == "conv":
        # (w a_perp, v) with frozen advecting field a = (ax, ay)
        ax, ay = frozen
        return (ctx.form_cc("ux", "w", -ay), ctx.form_cc("uy", "w", ax))
    if form_id == "conv_fine_to_coarse":
        # (w' x a, v^h): fine vorticity trial against coarse velocity test
        ax, ay = frozen
        return (ctx.form_cf("ux", "w0", -ay), ctx.form_cf("uy", "w0", ax))
    if form_id == "conv_coarse_to_fine":
        # (w^h x a, v'): coarse vorticity trial against fine velocity test
        ax, ay = frozen
        return (ctx.form_fc("w1x", "w", -ay), ctx.form_fc("w1y", "w", ax))
    if form_id == "u_fine_rot_tau":
        # (u', rot tau^h)
        ones = np.ones((ctx.mesh.nx, ctx.mesh.ny, ctx.nquad, ctx.nquad))
        return (ctx.form_cf("w", "w1x", ones, dA=(0, 1)),
                -ctx.form_cf("w", "w1y", ones, dA=(1, 0)))
    if form_id == "p_div_v_fine":
        # (p^h, div v')
        ones = np.ones((ctx.mesh.nx, ctx.mesh.ny, ctx.nquad, ctx.nquad))
        return (ctx.form_fc("div_w1x", "p", ones),
                ctx.form_fc("div_w1y", "p", ones))
    if form_id in ("mass_u_coarse_fine", "mass_u_fine_coarse"):
        # (u', v^h) and (u^h, v'): the d/dt coupling masses
        ones = np.ones((ctx.mesh.nx, ctx.mesh.ny, ctx.nquad, ctx.nquad))
        if form_id == "mass_u_coarse_fine":
            return (ctx.form_cf("ux", "w1x", ones),
                    ctx.form_cf("uy", "w1y", ones))
        return (ctx.form_fc("w1x", "ux", ones),
                ctx.form_fc("w1y", "uy", ones))
    if form_id == "tau_mass_fine":
        return (ctx.form_ff("w1x", "w1x", coeff),
                ctx.form_ff("w1y", "w1y", coeff))
    if form_id == "conv_fine":
        # (w_frozen x u', v') between fine velocity components
        return (ctx.form_ff("w1x", "w1y", -coeff),
                ctx.form_ff("w1y", "w1x", coeff))
    if form_id == "res_m_load":
        fx, fy = frozen
        return np.hstack([ctx.load_f("w1x", fx), ctx.load_f("w1y", fy)])
    if form_id == "bc_tangential_load":
        return -ctx.edge_load("w", edge, data)
    if form_id == "bc_pressure_load":
        sign = {"left": +1.0, "right": -1.0, "bottom": +1.0, "top": -1.0}[edge]
        comp = "ux" if edge in ("left", "right") else "uy"
        return comp, sign * ctx.edge_load(comp, edge, data)
    raise ValueError(f"unknown form id: {form_id}")
