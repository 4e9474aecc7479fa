import os
import subprocess
import sys

import numpy as np
import pytest

from vmsflow.bench import (CaseSpec, auto_timestep, convergence_table,
                           exact_cavity_manufactured, exact_taylor_green,
                           initial_shear_layer, l2_error, run_case,
                           sample_fields, write_vtk_structured)
from vmsflow.bspline import gauss_legendre
from vmsflow.bubbles import build_bubble_complex
from vmsflow.derham import Mesh2D, build_complex
from vmsflow.solver import NSConfig, NSSolver


# -- manufactured cavity closed forms -----------------------------------------

def test_cavity_velocity_values():
    ex = exact_cavity_manufactured(1000.0)
    ux, uy = ex["velocity"](0.5, 1.0)
    assert abs(ux - 0.125) < 1e-14
    assert abs(uy) < 1e-14
    for x in np.linspace(0, 1, 11):
        assert abs(ex["velocity"](x, 0.0)[0]) < 1e-14


def test_cavity_velocity_is_divergence_free():
    ex = exact_cavity_manufactured(1000.0)
    rng = np.random.default_rng(1)
    eps = 1e-6
    for x, y in rng.uniform(0.05, 0.95, size=(100, 2)):
        div = ((ex["velocity"](x + eps, y)[0] - ex["velocity"](x - eps, y)[0])
               + (ex["velocity"](x, y + eps)[1] - ex["velocity"](x, y - eps)[1])) / (2 * eps)
        assert abs(div) < 1e-8


def test_cavity_forcing_matches_strong_operator():
    # finite-difference application of w x u + Re^-1 rot(w) + grad p
    re = 37.0
    ex = exact_cavity_manufactured(re)
    rng = np.random.default_rng(2)
    eps = 1e-5
    for x, y in rng.uniform(0.1, 0.9, size=(100, 2)):
        w = ex["vorticity"](x, y)
        ux, uy = ex["velocity"](x, y)
        rot_w_x = (ex["vorticity"](x, y + eps) - ex["vorticity"](x, y - eps)) / (2 * eps)
        rot_w_y = -(ex["vorticity"](x + eps, y) - ex["vorticity"](x - eps, y)) / (2 * eps)
        px = (ex["pressure"](x + eps, y) - ex["pressure"](x - eps, y)) / (2 * eps)
        py = (ex["pressure"](x, y + eps) - ex["pressure"](x, y - eps)) / (2 * eps)
        fx = w * (-uy) + rot_w_x / re + px
        fy = w * ux + rot_w_y / re + py
        gx, gy = ex["forcing"](x, y)
        assert abs(fx - gx) < 1e-6 and abs(fy - gy) < 1e-6


def test_cavity_vorticity_is_rot_of_velocity():
    ex = exact_cavity_manufactured(10.0)
    eps = 1e-6
    for x, y in np.random.default_rng(3).uniform(0.1, 0.9, size=(20, 2)):
        rot = ((ex["velocity"](x + eps, y)[1] - ex["velocity"](x - eps, y)[1])
               - (ex["velocity"](x, y + eps)[0] - ex["velocity"](x, y - eps)[0])) / (2 * eps)
        assert abs(rot - ex["vorticity"](x, y)) < 1e-7


# -- Taylor-Green closed forms --------------------------------------------------

def test_taylor_green_point_values_and_energy():
    ex = exact_taylor_green(100.0)
    assert abs(ex["vorticity"](np.pi / 2, np.pi / 2, 0.0) - 2.0) < 1e-14
    # periodic compatibility of the normal velocity across edge pairs
    y = np.linspace(0, 2 * np.pi, 13)
    u_left = ex["velocity"](0.0, y, 0.3)[0]
    u_right = ex["velocity"](2 * np.pi, y, 0.3)[0]
    np.testing.assert_allclose(u_left, u_right, atol=1e-14)
    # kinetic energy by quadrature against the closed form
    q, w = gauss_legendre(32)
    x = 2 * np.pi * q
    ux, uy = ex["velocity"](x[:, None], x[None, :], 0.0)
    W = np.outer(w, w) * (2 * np.pi) ** 2
    K0 = 0.5 * np.sum(W * (ux**2 + uy**2))
    assert abs(K0 - ex["kinetic_energy"](0.0)) < 1e-12
    assert abs(ex["kinetic_energy"](1.0)
               - K0 * np.exp(-4.0 / 100.0)) < 1e-12


def test_auto_timestep_rule():
    # largest dt <= min(h^{(k+1)/2}, h^2 Re/4) that divides T = 1
    h = 2 * np.pi / 16
    assert auto_timestep(1, h, 100.0, 1.0) == pytest.approx(1.0 / 3.0)
    assert auto_timestep(3, h, 100.0, 1.0) == pytest.approx(1.0 / 7.0)
    assert auto_timestep(1, 2 * np.pi / 4, 100.0, 1.0) == 1.0


# -- shear layer -----------------------------------------------------------------

def test_shear_layer_pointwise_values():
    init = initial_shear_layer()
    ux, uy = init["velocity"](np.pi / 2, np.pi / 2)
    assert abs(ux - np.tanh(0.0)) < 1e-14
    assert abs(uy - 0.05) < 1e-14


def test_shear_layer_projection_is_divergence_free():
    init = initial_shear_layer()
    mesh = Mesh2D(0, 2 * np.pi, 0, 2 * np.pi, 8, 8, True, True)
    spaces = build_complex(mesh, (2, 2))
    cfg = NSConfig(re=float("inf"), dt=0.01, stab_mode="full-cn")
    solver = NSSolver(spaces, build_bubble_complex(3), cfg)
    st = solver.initial_state(init["velocity"])
    div_c, _ = solver.divergence_report(st)
    assert div_c <= 1e-10


def test_shear_layer_reference_energy():
    init = initial_shear_layer()
    K = init["kinetic_energy"]()
    # the tanh layers carry just under half the box energy each:
    # K ~ (2 pi)^2 (per unit means |u_x| ~ 1) plus the tiny perturbation
    assert 0.8 * (2 * np.pi) ** 2 / 2 < K < (2 * np.pi) ** 2


# -- error norms and rates --------------------------------------------------------

def test_l2_error_of_representable_field_is_zero():
    mesh = Mesh2D(0, 1, 0, 1, 4, 4)
    spaces = build_complex(mesh, (2, 2))
    rng = np.random.default_rng(5)
    c = rng.standard_normal(spaces.V0.dim)
    exact = lambda x, y: spaces.V0.eval_grid(c, x.ravel(), y.ravel())
    err = l2_error(spaces, lambda xs, ys: spaces.V0.eval_grid(c, xs, ys), exact)
    assert err < 1e-13


def test_l2_error_constant_fields():
    mesh = Mesh2D(0, 1, 0, 1, 3, 3)
    spaces = build_complex(mesh, (1, 1))
    err = l2_error(spaces, lambda xs, ys: np.zeros((xs.size, ys.size)),
                   lambda x, y: 1.0 + 0.0 * x * y)
    assert abs(err - 1.0) < 1e-13


def test_l2_error_against_trapezoid_oracle():
    mesh = Mesh2D(0, 1, 0, 1, 4, 4)
    spaces = build_complex(mesh, (2, 2))
    rng = np.random.default_rng(6)
    c = rng.standard_normal(spaces.V0.dim)
    exact = lambda x, y: np.sin(np.pi * x) * np.cos(y)
    err = l2_error(spaces, lambda xs, ys: spaces.V0.eval_grid(c, xs, ys), exact)
    # dense trapezoid oracle on a 1000^2 grid
    g = np.linspace(0, 1, 1000)
    V = spaces.V0.eval_grid(c, g, g)
    E = exact(g[:, None], g[None, :])
    from numpy import trapezoid
    inner = trapezoid((V - E) ** 2, g, axis=1)
    oracle = np.sqrt(trapezoid(inner, g))
    assert abs(err - oracle) < 1e-4 * max(1.0, oracle)


def test_convergence_table_synthetic():
    hs = [0.5, 0.25, 0.125]
    assert convergence_table(hs, [h**2 for h in hs]) == pytest.approx(2.0)
    assert convergence_table(hs, [3 * h**1.5 for h in hs]) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        convergence_table(hs, [1.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        convergence_table(hs, [1.0, np.nan, 1.0])


# -- case outputs -------------------------------------------------------------------

def test_taylor_green_case_outputs(tmp_path):
    spec = CaseSpec(case="taylor-green", nelems=(4,), degree=1,
                    fine_degree=2, re=100.0, tmax=1.0, out=str(tmp_path))
    summary = run_case(spec)
    errors = (tmp_path / "errors.csv").read_text().splitlines()
    assert errors[0] == ("case,nx,ny,k,kprime,re,dt,err_w,err_u,err_p,"
                         "norm_w_fine,norm_u_fine,norm_p_fine")
    assert len(errors) == 3  # stabilized + unstabilized rows
    energy = (tmp_path / "energy_n4.csv").read_text().splitlines()
    assert energy[0] == "t,K_coarse,K_fine,K_total,energy_residual"
    # the reported energy residual closes the discrete ledger at each step
    rows = np.array([r.split(",") for r in energy[1:]], dtype=float)
    K_over_dt = rows[:, 3] / 1.0
    assert np.all(np.abs(rows[1:, 4]) <= 1e-8 * np.maximum(1.0, K_over_dt[1:]))
    # fine-scale norms vanish for Taylor-Green (Table-1 behavior)
    assert summary["fine"][0][0] < 1e-10 and summary["fine"][0][1] < 1e-10


def test_rerun_reproduces_outputs_bit_identically(tmp_path):
    outs = []
    for tag in ("a", "b"):
        spec = CaseSpec(case="taylor-green", nelems=(4,), degree=1,
                        fine_degree=2, re=100.0, tmax=1.0,
                        out=str(tmp_path / tag))
        run_case(spec)
        outs.append((tmp_path / tag / "errors.csv").read_bytes())
    assert outs[0] == outs[1]


def test_shear_layer_case_outputs(tmp_path):
    spec = CaseSpec(case="shear-layer", nelems=(4,), degree=2, fine_degree=3,
                    re=float("inf"), dt=0.01, tmax=0.02, out=str(tmp_path),
                    sample_n=17, snapshot_times=(0.02,))
    run_case(spec)
    names = sorted(os.listdir(tmp_path))
    assert "energy.csv" in names
    assert any(n.startswith("fields_") and n.endswith(".csv") for n in names)
    vtk = [n for n in names if n.endswith(".vtk")][0]
    text = (tmp_path / vtk).read_text().splitlines()
    assert text[0].startswith("# vtk DataFile")
    assert "DATASET STRUCTURED_POINTS" in text
    assert "DIMENSIONS 17 17 1" in text
    assert sum(1 for line in text if line.startswith("SCALARS")) == 3


def test_sampled_fields_include_fine_part():
    init = initial_shear_layer()
    mesh = Mesh2D(0, 2 * np.pi, 0, 2 * np.pi, 4, 4, True, True)
    spaces = build_complex(mesh, (2, 2))
    cfg = NSConfig(re=float("inf"), dt=0.01, stab_mode="full-cn")
    solver = NSSolver(spaces, build_bubble_complex(3), cfg)
    st = solver.initial_state(init["velocity"])
    st, _ = solver.advance_timestep(st)
    fields = sample_fields(solver, st, 9)
    assert fields["w"].shape == (9, 9)
    assert np.all(np.isfinite(fields["umag"]))


def test_unknown_case_rejected():
    with pytest.raises(ValueError):
        CaseSpec(case="kelvin-helmholtz")


# -- CLI -------------------------------------------------------------------------

def run_cli(args):
    return subprocess.run([sys.executable, "-m", "vmsflow.cli"] + args,
                          capture_output=True, text=True)


def test_cli_success_and_failure(tmp_path):
    out = run_cli(["run", "--case", "taylor-green", "--nelems", "4",
                   "--degree", "1", "--fine-degree", "2", "--re", "100",
                   "--dt", "auto", "--tmax", "1.0", "--stab", "full-cn",
                   "--out", str(tmp_path / "ok")])
    assert out.returncode == 0, out.stderr
    assert (tmp_path / "ok" / "errors.csv").exists()

    # failing run: picard_max too small; exit nonzero naming the case
    bad = run_cli(["run", "--case", "taylor-green", "--nelems", "4",
                   "--degree", "1", "--re", "100", "--dt", "auto",
                   "--tmax", "1.0", "--picard-max", "1",
                   "--out", str(tmp_path / "bad")])
    assert bad.returncode != 0
    assert "taylor-green" in bad.stderr


def test_cli_config_file_with_flag_override(tmp_path):
    import json
    cfgfile = tmp_path / "cfg.json"
    cfgfile.write_text(json.dumps({
        "case": "taylor-green", "nelems": [4], "degree": 1,
        "fine_degree": 2, "re": 100.0, "dt": "auto", "tmax": 1.0,
        "out": str(tmp_path / "from_config")}))
    out = run_cli(["run", "--config", str(cfgfile),
                   "--out", str(tmp_path / "override")])
    assert out.returncode == 0, out.stderr
    assert (tmp_path / "override" / "errors.csv").exists()
    assert not (tmp_path / "from_config").exists()
