import subprocess
import sys

import numpy as np
import pytest

from vmsplots import PlotJob, read_csv_columns, render


def write_errors_csv(path):
    rows = ["case,nx,ny,k,kprime,re,dt,err_w,err_u,err_p,"
            "norm_w_fine,norm_u_fine,norm_p_fine"]
    for k, kp in ((2, 3), (2, 0)):
        for n in (4, 8, 16):
            e = (1.0 / n) ** k
            rows.append(f"demo,{n},{n},{k},{kp},1000.0,0.0,"
                        f"{e / 2},{e},{e * 3},0,0,0")
    path.write_text("\n".join(rows) + "\n")


def write_energy_csv(path):
    rows = ["t,K_coarse,K_fine,K_total,energy_residual"]
    for i in range(20):
        t = 0.01 * i
        rows.append(f"{t},{np.pi**2 * np.exp(-t):.12f},1e-6,"
                    f"{np.pi**2 * np.exp(-t) + 1e-6:.12f},1e-12")
    path.write_text("\n".join(rows) + "\n")


def write_fields_csv(path, peak=8.0):
    xs = np.linspace(0, 1, 21)
    rows = ["x,y,w,umag,p"]
    for y in xs:
        for x in xs:
            w = peak * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)
            rows.append(f"{x},{y},{w},{abs(w) / peak},{0.1 * w}")
    path.write_text("\n".join(rows) + "\n")


def test_convergence_plot_with_slope_triangle(tmp_path):
    src = tmp_path / "errors.csv"
    write_errors_csv(src)
    out = tmp_path / "conv.png"
    info = render(PlotJob(kind="convergence", inputs=(str(src),),
                          output=str(out)))
    assert out.exists() and out.stat().st_size > 0
    # synthetic errors decay exactly like h^k = n^-k
    assert info["slopes"][(2, 3)] == pytest.approx(-2.0, abs=1e-6)


def test_energy_plot(tmp_path):
    src = tmp_path / "energy.csv"
    write_energy_csv(src)
    out = tmp_path / "energy.svg"
    info = render(PlotJob(kind="energy", inputs=(str(src),), output=str(out)))
    assert out.exists() and out.stat().st_size > 0


def test_contour_plot_has_thirteen_levels(tmp_path):
    src = tmp_path / "fields.csv"
    write_fields_csv(src)
    out = tmp_path / "contour.png"
    info = render(PlotJob(kind="contour", inputs=(str(src),),
                          output=str(out)))
    assert out.exists()
    assert len(info["levels"]) == 13
    np.testing.assert_allclose(info["levels"], np.arange(-6, 7))


def test_missing_column_is_descriptive(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,K_coarse\n0,1\n")
    with pytest.raises(ValueError, match="missing required column"):
        render(PlotJob(kind="energy", inputs=(str(bad),),
                       output=str(tmp_path / "x.png")))


def test_unknown_kind_rejected(tmp_path):
    with pytest.raises(ValueError, match="unknown plot kind"):
        PlotJob(kind="waterfall", inputs=(), output="x.png")


def test_rerender_is_idempotent(tmp_path):
    src = tmp_path / "energy.csv"
    write_energy_csv(src)
    out = tmp_path / "energy.png"
    render(PlotJob(kind="energy", inputs=(str(src),), output=str(out)))
    first = out.read_bytes()
    render(PlotJob(kind="energy", inputs=(str(src),), output=str(out)))
    assert out.read_bytes() == first


def test_secondary_acceptance_from_primary_run(tmp_path):
    """[SECONDARY] render the three kinds from real primary-run CSVs."""
    tg = tmp_path / "tg"
    cmd = [sys.executable, "-m", "vmsflow.cli", "run", "--case",
           "taylor-green", "--nelems", "4,8", "--degree", "1",
           "--fine-degree", "2", "--re", "100", "--dt", "auto",
           "--tmax", "1.0", "--out", str(tg)]
    res = subprocess.run(cmd, capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    sl = tmp_path / "sl"
    cmd = [sys.executable, "-m", "vmsflow.cli", "run", "--case",
           "shear-layer", "--nelems", "4", "--degree", "2",
           "--fine-degree", "3", "--re", "inf", "--dt", "0.01",
           "--tmax", "0.02", "--sample-n", "21", "--out", str(sl)]
    res = subprocess.run(cmd, capture_output=True, text=True)
    assert res.returncode == 0, res.stderr

    conv = render(PlotJob(kind="convergence", inputs=(str(tg / "errors.csv"),),
                          output=str(tmp_path / "conv.png")))
    assert (tmp_path / "conv.png").exists()
    render(PlotJob(kind="energy", inputs=(str(tg / "energy_n8.csv"),),
                   output=str(tmp_path / "energy.png")))
    assert (tmp_path / "energy.png").exists()
    fields = sorted(sl.glob("fields_*.csv"))[0]
    info = render(PlotJob(kind="contour", inputs=(str(fields),),
                          output=str(tmp_path / "contour.png")))
    assert len(info["levels"]) == 13
    print("\n[ACCEPTANCE] secondary-plots: PASS  "
          f"three kinds rendered; contour levels = {len(info['levels'])}")
