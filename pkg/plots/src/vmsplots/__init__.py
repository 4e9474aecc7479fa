"""Render vmsflow benchmark CSV artifacts into publication-style figures.

Three plot kinds, one per benchmark artifact family:

* ``convergence``: log-log error-vs-mesh curves from ``errors.csv``, one
  line per (k, k') pair, annotated with a least-squares slope triangle;
* ``energy``: kinetic-energy time series (coarse, fine, total) from
  ``energy.csv``;
* ``contour``: filled vorticity contours from a sampled-fields CSV at
  the integer levels -6..6 (13 lines).

The module reads the CSV schemas verbatim and never imports the solver;
rendering is read-only and idempotent (timestamps are stripped so a
re-render is byte-identical).
"""

import csv
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "vmsplots"

__all__ = ["PlotJob", "render", "read_csv_columns"]

ERROR_COLUMNS = ("case", "nx", "ny", "k", "kprime", "re", "dt",
                 "err_w", "err_u", "err_p",
                 "norm_w_fine", "norm_u_fine", "norm_p_fine")
ENERGY_COLUMNS = ("t", "K_coarse", "K_fine", "K_total", "energy_residual")
FIELD_COLUMNS = ("x", "y", "w", "umag", "p")


@dataclass
class PlotJob:
    """One rendering task; ``kind`` picks the figure family."""

    kind: str
    inputs: tuple
    output: str
    column: str = "err_u"                 # convergence: which error column
    levels: tuple = tuple(range(-6, 7))   # contour levels
    field: str = "w"                      # contour: which sampled field
    title: str = ""

    def __post_init__(self):
        if self.kind not in ("convergence", "energy", "contour"):
            raise ValueError(f"unknown plot kind {self.kind!r}")
        if isinstance(self.inputs, str):
            self.inputs = (self.inputs,)


def read_csv_columns(path, required):
    """Load a CSV as a dict of float columns; fail well on missing names."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        missing = [c for c in required if c not in header]
        if missing:
            raise ValueError(
                f"{path}: missing required column(s) {missing}; "
                f"found {header}")
        rows = [row for row in reader if row]
    out = {}
    for name in header:
        i = header.index(name)
        col = [row[i] for row in rows]
        try:
            out[name] = np.asarray(col, dtype=float)
        except ValueError:
            out[name] = np.asarray(col)
    return out


def _save(fig, path):
    fig.savefig(path, dpi=150, metadata=_strip_metadata(path))
    plt.close(fig)


def _strip_metadata(path):
    if path.endswith(".png"):
        return {"Software": None}
    if path.endswith(".svg"):
        return {"Date": None}
    return None


def _render_convergence(job):
    fig, ax = plt.subplots(figsize=(5.2, 4.2))
    slopes = {}
    for path in job.inputs:
        data = read_csv_columns(path, ("nx", "k", "kprime", job.column))
        pairs = sorted({(int(k), int(kp))
                        for k, kp in zip(data["k"], data["kprime"])})
        for k, kp in pairs:
            sel = (data["k"] == k) & (data["kprime"] == kp)
            n = data["nx"][sel]
            e = data[job.column][sel]
            order = np.argsort(n)
            n, e = n[order], e[order]
            label = f"k={k}" + (f", k'={kp}" if kp else ", no VMS")
            style = "--" if kp == 0 else "-"
            ax.loglog(n, e, style, marker="o", label=label)
            if len(n) >= 2 and np.all(e > 0):
                slopes[(k, kp)] = np.polyfit(np.log(n), np.log(e), 1)[0]
    if slopes:
        key = max(slopes)
        data = read_csv_columns(job.inputs[-1], ("nx", "k", "kprime", job.column))
        sel = (data["k"] == key[0]) & (data["kprime"] == key[1])
        n = np.sort(data["nx"][sel])[-2:]
        e = data[job.column][sel][np.argsort(data["nx"][sel])][-2:]
        _slope_triangle(ax, n, e, slopes[key])
    ax.set_xlabel("elements per direction")
    ax.set_ylabel(job.column)
    ax.set_title(job.title or "convergence")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    _save(fig, job.output)
    return {"output": job.output, "slopes": slopes}


def _slope_triangle(ax, n, e, slope):
    """Right triangle under the last segment annotated with the rate."""
    x0, x1 = n[0], n[1]
    y0 = e[0] * 0.5
    y1 = y0 * (x1 / x0) ** slope
    ax.plot([x0, x1, x1, x0], [y0, y1, y0, y0], color="0.4", lw=0.8)
    ax.annotate(f"{abs(slope):.2f}", xy=(x1 * 1.05, np.sqrt(y0 * y1)),
                fontsize=8, color="0.25")


def _render_energy(job):
    fig, ax = plt.subplots(figsize=(5.2, 4.2))
    for path in job.inputs:
        data = read_csv_columns(path, ENERGY_COLUMNS)
        tag = f" [{path.rsplit('/', 1)[-1]}]" if len(job.inputs) > 1 else ""
        ax.plot(data["t"], data["K_coarse"], label="K_coarse" + tag)
        ax.plot(data["t"], data["K_fine"], label="K_fine" + tag)
        ax.plot(data["t"], data["K_total"], "--", label="K_total" + tag)
    ax.set_xlabel("t")
    ax.set_ylabel("kinetic energy")
    ax.set_title(job.title or "kinetic energy")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    _save(fig, job.output)
    return {"output": job.output}


def _render_contour(job):
    data = read_csv_columns(job.inputs[0], FIELD_COLUMNS)
    xs = np.unique(data["x"])
    ys = np.unique(data["y"])
    vals = np.full((xs.size, ys.size), np.nan)
    ix = np.searchsorted(xs, data["x"])
    iy = np.searchsorted(ys, data["y"])
    vals[ix, iy] = data[job.field]
    if np.any(np.isnan(vals)):
        raise ValueError(f"{job.inputs[0]}: samples do not form a full grid")
    fig, ax = plt.subplots(figsize=(4.6, 4.2))
    levels = np.asarray(job.levels, dtype=float)
    filled = ax.contourf(xs, ys, vals.T, levels=64, cmap="RdBu_r")
    lines = ax.contour(xs, ys, vals.T, levels=levels, colors="k",
                       linewidths=0.6)
    fig.colorbar(filled, ax=ax, shrink=0.85)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(job.title or job.field)
    _save(fig, job.output)
    return {"output": job.output, "levels": list(lines.levels)}


def render(job):
    """Render one :class:`PlotJob`; returns a small metadata dict."""
    return {"convergence": _render_convergence,
            "energy": _render_energy,
            "contour": _render_contour}[job.kind](job)
