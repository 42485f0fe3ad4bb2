"""PNG figures for convergence reports, benchmark snapshots and interface
profiles.

Figures are drawn with the Agg backend and saved without timestamp or
version metadata, so identical input gives identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import matplotlib.tri as mtri  # noqa: E402
import numpy as np  # noqa: E402

from .export import FieldSnapshot, InterfaceProfile  # noqa: E402
from .mesh import BIOT, STOKES  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "sbhdg",
}
LABELS = {"us": "$u^s$", "ps": "$p^s$", "ub": "$u^b$", "pb": "$p^b$", "z": "$z$", "pp": "$p^p$"}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_convergence(report, path) -> Path:
    """Log-log errors against ``h`` with the expected slopes as dashed
    guides."""
    k = report.k
    expected = {"us": k + 1, "ps": k, "ub": k + 1, "pb": k, "z": k + 1, "pp": k}
    h = np.asarray(report.h)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.8))
        for name, label in LABELS.items():
            err = np.asarray(report.errors[name])
            (line,) = ax.loglog(h, err, "o-", label=label, ms=3)
            ref = err[-1] * (h / h[-1]) ** expected[name]
            ax.loglog(h, ref, "--", color=line.get_color(), lw=0.7)
        ax.set_xlabel("$h$")
        ax.set_ylabel("$L^2$ error")
        ax.set_title(f"{report.case}, k = {k}")
        ax.legend(ncol=2, frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def _triangulation(snap: FieldSnapshot, dom: int):
    dom_cells = np.flatnonzero(snap.mesh.cell_domain == dom)
    return mtri.Triangulation(snap.points[:, 0], snap.points[:, 1], snap.cells[dom_cells])


def plot_snapshot(snap: FieldSnapshot, path, title: str = "", arrows: int = 400) -> Path:
    """Five panels: composite velocity, the two stress components,
    displacement magnitude and pore pressure."""
    pd = snap.point_data
    tri = {dom: _triangulation(snap, dom) for dom in (STOKES, BIOT)}
    both = (STOKES, BIOT)
    panels = (
        ("vertical velocity $u_2^s$, $(z + d_t u^b)_2$", "velocity", both, lambda v: v[:, 1], True),
        (r"$-\sigma_{12}$", "sigma12", both, lambda v: -v, False),
        (r"$-\sigma_{22}$", "sigma22", both, lambda v: -v, False),
        ("$|u^b|$", "u_b", (BIOT,), lambda v: np.hypot(v[:, 0], v[:, 1]), True),
        ("$p^p$", "p_p", (BIOT,), lambda v: v, False),
    )
    stride = max(1, len(snap.points) // arrows)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 5, figsize=(16.0, 3.6))
        for ax, (label, name, doms, fn, quiver) in zip(axes, panels):
            vals = fn(pd[name])
            mask = np.isin(pd["subdomain"], doms)
            lo, hi = float(vals[mask].min()), float(vals[mask].max())
            if hi <= lo:
                hi = lo + 1.0
            for dom in doms:
                im = ax.tripcolor(tri[dom], vals, shading="gouraud", vmin=lo, vmax=hi, cmap="viridis")
            if quiver:
                vec = pd["velocity"] if name == "velocity" else pd[name]
                sel = np.flatnonzero(mask)[::stride]
                ax.quiver(snap.points[sel, 0], snap.points[sel, 1], vec[sel, 0], vec[sel, 1],
                          color="white", width=0.004)
            ax.set_aspect("equal")
            ax.set_title(label)
            fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        return _save(fig, path)


def plot_interface_profile(profile: InterfaceProfile, path, title: str = "") -> Path:
    """Traces from both sides along the interface."""
    c = profile.columns
    order = np.argsort(c["x"], kind="stable")
    x = c["x"][order]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(11.0, 3.2))
        for ax, (label, a, b) in zip(axes, (
                ("vertical velocity", "u2_s", "u2_b"),
                (r"$-\sigma_{12}$", "sigma12_s", "sigma12_b"),
                (r"$-\sigma_{22}$", "sigma22_s", "sigma22_b"))):
            sign = 1.0 if a == "u2_s" else -1.0
            ax.plot(x, sign * c[a][order], "-", label="Stokes side")
            ax.plot(x, sign * c[b][order], "--", label="Biot side")
            ax.set_xlabel("$x_1$")
            ax.set_title(label)
        axes[0].legend(frameon=False)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        return _save(fig, path)
