"""Benchmark harness: exact solutions, error norms, case runners, CSV/VTK.

Cases (see :class:`CaseSpec`):

* ``cavity-manufactured-steady``: steady regularized cavity with a
  manufactured forcing, Dirichlet velocity data, error sweep over meshes;
* ``taylor-green``: periodic Taylor-Green vortex to T with the auto time
  step rule, error and fine-scale norms at the final time;
* ``shear-layer``: periodic double shear layer (inviscid or viscous),
  kinetic-energy time series and field snapshots;
* ``lid-driven-cavity``: steady lid-driven cavity, field snapshots.

CSV schemas (stable):

* ``errors.csv``: case,nx,ny,k,kprime,re,dt,err_w,err_u,err_p,
  norm_w_fine,norm_u_fine,norm_p_fine  (kprime = 0 marks an
  unstabilized run; dt = 0 marks a steady solve)
* ``energy.csv``: t,K_coarse,K_fine,K_total,energy_residual
"""

import csv
import math
import os
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial

from .bspline import gauss_legendre
from .bubbles import build_bubble_complex
from .derham import BoundaryData, Mesh2D, build_complex
from .solver import NSConfig, NSSolver, energy_report

__all__ = [
    "CaseSpec",
    "exact_cavity_manufactured",
    "exact_taylor_green",
    "initial_shear_layer",
    "oseen_manufactured",
    "interpolate_scalar",
    "stream_function_velocity",
    "l2_error",
    "convergence_table",
    "run_case",
    "sample_fields",
    "write_vtk_structured",
]

ERROR_COLUMNS = ["case", "nx", "ny", "k", "kprime", "re", "dt",
                 "err_w", "err_u", "err_p",
                 "norm_w_fine", "norm_u_fine", "norm_p_fine"]
ENERGY_COLUMNS = ["t", "K_coarse", "K_fine", "K_total", "energy_residual"]


@dataclass
class CaseSpec:
    """One benchmark configuration."""

    case: str
    nelems: tuple = (8,)
    degree: int = 2
    fine_degree: int = None      # defaults to degree + 1
    re: float = 1000.0
    dt: object = "auto"          # float, or "auto" (taylor-green only)
    tmax: float = 1.0
    stab: str = "full-cn"
    picard_tol: float = 1e-10
    picard_max: int = 50
    out: str = "out"
    sample_n: int = 65
    snapshot_times: tuple = None  # defaults to (tmax,)

    def __post_init__(self):
        known = ("cavity-manufactured-steady", "taylor-green",
                 "shear-layer", "lid-driven-cavity")
        if self.case not in known:
            raise ValueError(f"unknown case {self.case!r}; pick one of {known}")
        if self.fine_degree is None:
            self.fine_degree = self.degree + 1
        if np.isscalar(self.nelems):
            self.nelems = (int(self.nelems),)


# -- exact solutions -------------------------------------------------------

def exact_cavity_manufactured(re):
    """Closed forms for the steady regularized cavity on [0,1]^2.

    u = ((x^4 - 2x^3 + x^2)(4y^3 - 2y), -(4x^3 - 6x^2 + 2x)(y^4 - y^2)),
    w = rot(u), p = sin(x) sin(y); the forcing is the steady rotational
    momentum operator applied to these fields, hard-coded in closed form.
    """
    re_inv = 0.0 if math.isinf(re) else 1.0 / re

    def X(x):
        return x**4 - 2 * x**3 + x**2

    def Xp(x):
        return 4 * x**3 - 6 * x**2 + 2 * x

    def Xpp(x):
        return 12 * x**2 - 12 * x + 2

    def Y(y):
        return y**4 - y**2

    def Yp(y):
        return 4 * y**3 - 2 * y

    def Ypp(y):
        return 12 * y**2 - 2

    def velocity(x, y):
        return X(x) * Yp(y), -Xp(x) * Y(y)

    def vorticity(x, y):
        return -Xpp(x) * Y(y) - X(x) * Ypp(y)

    def pressure(x, y):
        return np.sin(x) * np.sin(y)

    def forcing(x, y, t=0.0):
        w = vorticity(x, y)
        ux, uy = velocity(x, y)
        rot_w_x = -Xpp(x) * Yp(y) - X(x) * (24 * y)
        rot_w_y = (24 * x - 12) * Y(y) + Xp(x) * Ypp(y)
        fx = w * (-uy) + re_inv * rot_w_x + np.cos(x) * np.sin(y)
        fy = w * ux + re_inv * rot_w_y + np.sin(x) * np.cos(y)
        return fx, fy

    def lid_tangential(x):
        return 2.0 * X(x)

    return {"velocity": velocity, "vorticity": vorticity,
            "pressure": pressure, "forcing": forcing,
            "lid_tangential": lid_tangential}


def exact_taylor_green(re):
    """Taylor-Green vortex on the periodic [0, 2 pi]^2, f = 0.

    The pressure is the total pressure (static plus |u|^2 / 2), which is
    the quantity the rotational-form solver computes.
    """
    re_inv = 0.0 if math.isinf(re) else 1.0 / re

    def decay(t):
        return np.exp(-2.0 * t * re_inv)

    def velocity(x, y, t=0.0):
        d = decay(t)
        return np.sin(x) * np.cos(y) * d, -np.cos(x) * np.sin(y) * d

    def vorticity(x, y, t=0.0):
        return 2.0 * np.sin(x) * np.sin(y) * decay(t)

    def pressure(x, y, t=0.0):
        ux, uy = velocity(x, y, t)
        static = 0.25 * (np.cos(2 * x) + np.cos(2 * y)) * decay(t)**2
        return static + 0.5 * (ux**2 + uy**2)

    def kinetic_energy(t):
        return np.pi**2 * decay(t)**2

    return {"velocity": velocity, "vorticity": vorticity,
            "pressure": pressure, "kinetic_energy": kinetic_energy}


def initial_shear_layer(delta=np.pi / 15.0, eps=0.05):
    """Double shear layer initial velocity on the periodic [0, 2 pi]^2."""

    def velocity(x, y):
        lower = np.tanh((y - np.pi / 2.0) / delta)
        upper = np.tanh((3.0 * np.pi / 2.0 - y) / delta)
        ux = np.where(y <= np.pi, lower, upper)
        return np.broadcast_to(ux, np.broadcast(x, y).shape).copy(), \
            np.broadcast_to(eps * np.sin(x), np.broadcast(x, y).shape).copy()

    def kinetic_energy():
        # K = [ (2 pi) int u_x(y)^2 dy + (2 pi) int u_y(x)^2 dx ] / 2 by
        # high-order quadrature; the split tanh profile has no elementary
        # closed-form energy
        q, w = gauss_legendre(64)
        y = 2.0 * np.pi * q
        ux, _ = velocity(np.zeros_like(y), y)
        int_ux2 = 2.0 * np.pi * float(np.dot(w, ux**2))
        x = 2.0 * np.pi * q
        int_uy2 = 2.0 * np.pi * float(np.dot(w, (eps * np.sin(x))**2))
        return 0.5 * 2.0 * np.pi * (int_ux2 + int_uy2)

    return {"velocity": velocity, "kinetic_energy": kinetic_energy,
            "delta": delta, "eps": eps}


def oseen_manufactured(nu):
    """Manufactured Oseen solution with fully homogeneous traces.

    The stream function x^3 (1-x)^3 y^3 (1-y)^3 gives a velocity with
    zero full boundary trace and a vorticity vanishing on the boundary;
    the analysis scaling w = sqrt(nu) rot(u) is used throughout.  The
    forcing depends on the advecting field and is assembled pointwise.
    """
    P = Polynomial([0, 0, 0, 1]) * Polynomial([1, -3, 3, -1])  # t^3 (1-t)^3
    dP, d2P, d3P = P.deriv(1), P.deriv(2), P.deriv(3)

    def velocity(x, y):
        return P(x) * dP(y), -dP(x) * P(y)

    def vorticity_unscaled(x, y):
        return -(d2P(x) * P(y) + P(x) * d2P(y))

    def vorticity(x, y):
        return np.sqrt(nu) * vorticity_unscaled(x, y)

    def pressure(x, y):
        return np.cos(np.pi * x) * np.cos(np.pi * y)

    def rot_vorticity_unscaled(x, y):
        return (-(d2P(x) * dP(y) + P(x) * d3P(y)),
                d3P(x) * P(y) + dP(x) * d2P(y))

    def forcing(sigma, beta_eval):
        """Pointwise momentum forcing given a callable beta field."""

        def f(x, y):
            ux, uy = velocity(x, y)
            w = vorticity_unscaled(x, y)
            rot_w_x = -(d2P(x) * dP(y) + P(x) * d3P(y))
            rot_w_y = d3P(x) * P(y) + dP(x) * d2P(y)
            bx, by = beta_eval(x, y)
            fx = sigma * ux + w * (-by) + nu * rot_w_x \
                - np.pi * np.sin(np.pi * x) * np.cos(np.pi * y)
            fy = sigma * uy + w * bx + nu * rot_w_y \
                - np.pi * np.cos(np.pi * x) * np.sin(np.pi * y)
            return fx, fy

        return f

    return {"velocity": velocity, "vorticity": vorticity,
            "vorticity_unscaled": vorticity_unscaled,
            "rot_vorticity_unscaled": rot_vorticity_unscaled,
            "pressure": pressure, "forcing": forcing}


# -- interpolation / projection helpers ------------------------------------

def interpolate_scalar(space, f):
    """Tensor-product Greville interpolation onto a 2D scalar space."""
    gx, gy = space.sx.greville(), space.sy.greville()
    Ex = space.sx.collocation_matrix(gx).toarray()
    Ey = space.sy.collocation_matrix(gy).toarray()
    F = f(gx[:, None], gy[None, :])
    return np.linalg.solve(Ex, np.linalg.solve(Ey, np.asarray(F).T).T).ravel()


def stream_function_velocity(spaces, psi, scale=1.0, zero_boundary=True):
    """Exactly divergence-free V1 coefficients as rot of a V0 stream field."""
    c = interpolate_scalar(spaces.V0, psi)
    if zero_boundary and not spaces.mesh.periodic_x:
        C = c.reshape(spaces.V0.shape)
        C[0, :] = C[-1, :] = 0.0
        C[:, 0] = C[:, -1] = 0.0
        c = C.ravel()
    return scale * (spaces.rot @ c)


# -- norms and rates --------------------------------------------------------

def l2_error(spaces, evaluate, exact, order=None, mean_zero=False):
    """L2 distance between a discrete evaluator and a closed form.

    ``evaluate(xs, ys)`` returns field values on the tensor grid; the
    quadrature uses ``order + 2`` Gauss points per direction and element
    (``order`` defaults to the larger coarse degree).  With ``mean_zero``
    both fields are mean-centered first (zero-mean pressure comparisons).
    """
    mesh = spaces.mesh
    if order is None:
        order = max(spaces.degrees)
    q, w = gauss_legendre(order + 2)
    xs = (mesh.xmin + (np.arange(mesh.nx)[:, None] + q[None, :]) * mesh.hx).ravel()
    ys = (mesh.ymin + (np.arange(mesh.ny)[:, None] + q[None, :]) * mesh.hy).ravel()
    wx = np.tile(w * mesh.hx, mesh.nx)
    wy = np.tile(w * mesh.hy, mesh.ny)
    W = np.outer(wx, wy)
    V = np.asarray(evaluate(xs, ys), dtype=float)
    E = np.asarray(exact(xs[:, None], ys[None, :]), dtype=float)
    E = np.broadcast_to(E, V.shape)
    if mean_zero:
        V = V - np.sum(W * V) / mesh.area
        E = E - np.sum(W * E) / mesh.area
    return float(np.sqrt(np.sum(W * (V - E)**2)))


def convergence_table(hs, errors):
    """Least-squares slope of log(error) against log(h)."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if hs.size < 2:
        raise ValueError("need at least two meshes for a rate")
    if np.any(~np.isfinite(errors)) or np.any(errors <= 0.0):
        raise ValueError("errors must be finite and positive")
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


def auto_timestep(k, h, re, tmax):
    """Largest dt <= min(h^{(k+1)/2}, h^2 Re / 4) that divides tmax."""
    bound = h ** ((k + 1) / 2.0)
    if not math.isinf(re):
        bound = min(bound, h * h * re / 4.0)
    return tmax / math.ceil(tmax / bound)


# -- field sampling / output -------------------------------------------------

def sample_fields(solver, state, nsample):
    """Total (coarse + fine) fields on a uniform nsample x nsample grid."""
    spaces = solver.spaces
    mesh = spaces.mesh
    xs = np.linspace(mesh.xmin, mesh.xmax, nsample)
    ys = np.linspace(mesh.ymin, mesh.ymax, nsample)
    wvals = spaces.V0.eval_grid(state.w, xs, ys)
    n1x = spaces.V1.x.dim
    ux = spaces.V1.x.eval_grid(state.u[:n1x], xs, ys)
    uy = spaces.V1.y.eval_grid(state.u[n1x:], xs, ys)
    pvals = spaces.V2.eval_grid(state.p, xs, ys)
    if state.fine is not None and solver.ctx.nfine:
        fw, fx, fy, fp = _sample_fine(solver, state.fine, xs, ys)
        wvals = wvals + fw
        ux, uy = ux + fx, uy + fy
        pvals = pvals + fp
    return {"x": xs, "y": ys, "w": wvals, "ux": ux, "uy": uy,
            "umag": np.hypot(ux, uy), "p": pvals}


def _sample_fine(solver, fine, xs, ys):
    """Evaluate the per-element fine fields on a tensor grid."""
    bc = solver.bubbles
    mesh = solver.spaces.mesh
    ex = np.clip(((xs - mesh.xmin) / mesh.hx).astype(int), 0, mesh.nx - 1)
    ey = np.clip(((ys - mesh.ymin) / mesh.hy).astype(int), 0, mesh.ny - 1)
    tx = (xs - mesh.xmin) / mesh.hx - ex
    ty = (ys - mesh.ymin) / mesh.hy - ey
    out = [np.zeros((xs.size, ys.size)) for _ in range(4)]
    ctx = solver.ctx
    for e in range(mesh.nx):
        ix = np.where(ex == e)[0]
        if ix.size == 0:
            continue
        for f in range(mesh.ny):
            iy = np.where(ey == f)[0]
            if iy.size == 0:
                continue
            co = fine[e, f]
            tabs = {
                "w0": bc.eval_w0(tx[ix], ty[iy]),
                "w1x": bc.eval_w1x(tx[ix], ty[iy]),
                "w1y": bc.eval_w1y(tx[ix], ty[iy]),
                "w2": bc.eval_w2(tx[ix], ty[iy]),
            }
            for pos, key in enumerate(("w0", "w1x", "w1y", "w2")):
                c = ctx.fine_block_coeffs(co[None, None, :], key).ravel()
                vals = (c @ tabs[key]).reshape(ix.size, iy.size)
                out[pos][np.ix_(ix, iy)] = vals
    return out


def write_vtk_structured(path, fields):
    """Legacy ASCII VTK STRUCTURED_POINTS with one block per scalar field."""
    xs, ys = fields["x"], fields["y"]
    nx, ny = xs.size, ys.size
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("vmsflow sampled fields\nASCII\n")
        fh.write("DATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {nx} {ny} 1\n")
        fh.write(f"ORIGIN {xs[0]} {ys[0]} 0\n")
        dx = xs[1] - xs[0] if nx > 1 else 1.0
        dy = ys[1] - ys[0] if ny > 1 else 1.0
        fh.write(f"SPACING {dx} {dy} 1\n")
        fh.write(f"POINT_DATA {nx * ny}\n")
        for name in ("w", "umag", "p"):
            fh.write(f"SCALARS {name} double\nLOOKUP_TABLE default\n")
            vals = fields[name].T.ravel()  # x varies fastest in legacy VTK
            np.savetxt(fh, vals[:, None], fmt="%.12e")


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        writer.writerows(rows)


def _write_field_csv(path, fields):
    xs, ys = fields["x"], fields["y"]
    rows = []
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            rows.append([x, y, fields["w"][i, j], fields["umag"][i, j],
                         fields["p"][i, j]])
    _write_csv(path, ["x", "y", "w", "umag", "p"], rows)


# -- case setup --------------------------------------------------------------

def _cavity_bc(lid):
    zero = (lambda s: 0.0)
    return BoundaryData(
        normal_velocity={e: zero for e in ("left", "right", "bottom", "top")},
        tangential_velocity={"left": zero, "right": zero, "bottom": zero,
                             "top": lid})


def _build(spec, n, periodic, bc=None, forcing=None, dt=0.0, stab=None):
    domain = (0.0, 2.0 * np.pi) if periodic else (0.0, 1.0)
    mesh = Mesh2D(domain[0], domain[1], domain[0], domain[1], n, n,
                  periodic, periodic)
    spaces = build_complex(mesh, (spec.degree, spec.degree), bc)
    bubbles = build_bubble_complex(spec.fine_degree)
    cfg = NSConfig(re=spec.re, dt=dt, tmax=spec.tmax,
                   picard_tol=spec.picard_tol, picard_max=spec.picard_max,
                   stab_mode=stab if stab is not None else spec.stab,
                   forcing=forcing)
    return NSSolver(spaces, bubbles, cfg)


def _error_row(spec, solver, state, exact, t=None, kprime=None, dt=0.0):
    spaces = solver.spaces
    st = state
    n1x = spaces.V1.x.dim

    def at(f):
        return (lambda x, y: f(x, y, t)) if t is not None else f

    err_w = l2_error(spaces, lambda xs, ys: spaces.V0.eval_grid(st.w, xs, ys),
                     at(exact["vorticity"]), order=max(spec.degree, spec.fine_degree))
    err_u = math.hypot(
        l2_error(spaces, lambda xs, ys: spaces.V1.x.eval_grid(st.u[:n1x], xs, ys),
                 lambda x, y: at(exact["velocity"])(x, y)[0],
                 order=max(spec.degree, spec.fine_degree)),
        l2_error(spaces, lambda xs, ys: spaces.V1.y.eval_grid(st.u[n1x:], xs, ys),
                 lambda x, y: at(exact["velocity"])(x, y)[1],
                 order=max(spec.degree, spec.fine_degree)))
    err_p = l2_error(spaces, lambda xs, ys: spaces.V2.eval_grid(st.p, xs, ys),
                     at(exact["pressure"]), order=max(spec.degree, spec.fine_degree),
                     mean_zero=True)
    nw, nu, npr = solver.fine_norms(st)
    mesh = spaces.mesh
    return [spec.case, mesh.nx, mesh.ny, spec.degree,
            kprime if kprime is not None else spec.fine_degree,
            spec.re, dt, err_w, err_u, err_p, nw, nu, npr]


def _energy_rows(solver, states):
    rows = []
    for i, st in enumerate(states):
        Kc, Kf, Kt = solver.kinetic_energy(st)
        res = 0.0
        if i > 0:
            _, _, res = energy_report(solver, states[i - 1], st)
        rows.append([st.t, Kc, Kf, Kt, res])
    return rows


# -- case runners -------------------------------------------------------------

def run_case(spec):
    """Run one benchmark case and write its artifacts into ``spec.out``.

    Returns a summary dict (per-mesh errors or energy traces) for
    programmatic use; all file outputs follow the module-level schemas.
    """
    os.makedirs(spec.out, exist_ok=True)
    runner = {
        "cavity-manufactured-steady": _run_manufactured_cavity,
        "taylor-green": _run_taylor_green,
        "shear-layer": _run_shear_layer,
        "lid-driven-cavity": _run_lid_cavity,
    }[spec.case]
    return runner(spec)


def _run_manufactured_cavity(spec):
    exact = exact_cavity_manufactured(spec.re)
    rows, summary = [], {"h": [], "err": {}, "err_unstab": {}}
    for n in spec.nelems:
        for stab, kprime in ((spec.stab, spec.fine_degree), ("none", 0)):
            solver = _build(spec, n, periodic=False,
                            bc=_cavity_bc(exact["lid_tangential"]),
                            forcing=lambda x, y, t: exact["forcing"](x, y),
                            stab=stab)
            state, info = solver.solve_steady()
            row = _error_row(spec, solver, state, exact, kprime=kprime, dt=0.0)
            rows.append(row)
            key = "err" if stab != "none" else "err_unstab"
            summary[key].setdefault(n, row[7:10])
        summary["h"].append(1.0 / n)
    _write_csv(os.path.join(spec.out, "errors.csv"), ERROR_COLUMNS, rows)
    return summary


def _run_taylor_green(spec):
    exact = exact_taylor_green(spec.re)
    rows = []
    summary = {"h": [], "err_u": [], "err_u_unstab": [], "fine": []}
    for n in spec.nelems:
        h = 2.0 * np.pi / n
        dt = auto_timestep(spec.degree, h, spec.re, spec.tmax) \
            if spec.dt == "auto" else float(spec.dt)
        per_mode = {}
        for stab, kprime in ((spec.stab, spec.fine_degree), ("none", 0)):
            solver = _build(spec, n, periodic=True, dt=dt, stab=stab)
            state = solver.initial_state(
                lambda x, y: exact["velocity"](x, y, 0.0))
            states = [state]
            nsteps = int(round(spec.tmax / dt))
            for _ in range(nsteps):
                state, _ = solver.advance_timestep(state)
                states.append(state)
            rows.append(_error_row(spec, solver, state, exact, t=state.t,
                                   kprime=kprime, dt=dt))
            per_mode[stab] = rows[-1]
            if stab != "none":
                _write_csv(os.path.join(spec.out, f"energy_n{n}.csv"),
                           ENERGY_COLUMNS, _energy_rows(solver, states))
                for t0 in spec.snapshot_times or ():
                    st = min(states, key=lambda s: abs(s.t - t0))
                    fields = sample_fields(solver, st, spec.sample_n)
                    tag = f"n{n}_t{st.t:.3f}"
                    _write_field_csv(
                        os.path.join(spec.out, f"fields_{tag}.csv"), fields)
                    write_vtk_structured(
                        os.path.join(spec.out, f"fields_{tag}.vtk"), fields)
        summary["h"].append(h)
        summary["err_u"].append(per_mode[spec.stab][8])
        summary["err_u_unstab"].append(per_mode["none"][8])
        summary["fine"].append(per_mode[spec.stab][10:13])
    _write_csv(os.path.join(spec.out, "errors.csv"), ERROR_COLUMNS, rows)
    return summary


def _run_shear_layer(spec):
    init = initial_shear_layer()
    summary = {"K_exact": init["kinetic_energy"](), "traces": {}}
    times = spec.snapshot_times or (spec.tmax,)
    for n in spec.nelems:
        dt = float(spec.dt)
        solver = _build(spec, n, periodic=True, dt=dt)
        state = solver.initial_state(init["velocity"])
        states = [state]
        nsteps = int(round(spec.tmax / dt))
        for step in range(nsteps):
            state, _ = solver.advance_timestep(state)
            states.append(state)
            if any(abs(state.t - t0) < 0.5 * dt for t0 in times):
                fields = sample_fields(solver, state, spec.sample_n)
                tag = f"n{n}_t{state.t:.3f}"
                _write_field_csv(os.path.join(spec.out, f"fields_{tag}.csv"),
                                 fields)
                write_vtk_structured(
                    os.path.join(spec.out, f"fields_{tag}.vtk"), fields)
        name = f"energy_n{n}.csv" if len(spec.nelems) > 1 else "energy.csv"
        erows = _energy_rows(solver, states)
        _write_csv(os.path.join(spec.out, name), ENERGY_COLUMNS, erows)
        summary["traces"][n] = np.asarray(erows, dtype=float)
    return summary


def _run_lid_cavity(spec):
    summary = {}
    for n in spec.nelems:
        solver = _build(spec, n, periodic=False, bc=_cavity_bc(lambda x: 1.0))
        state, info = solver.solve_steady()
        fields = sample_fields(solver, state, spec.sample_n)
        tag = f"n{n}"
        _write_field_csv(os.path.join(spec.out, f"fields_{tag}.csv"), fields)
        write_vtk_structured(os.path.join(spec.out, f"fields_{tag}.vtk"),
                             fields)
        summary[n] = {"iterations": info["iterations"],
                      "divergence": solver.divergence_report(state)}
    return summary
