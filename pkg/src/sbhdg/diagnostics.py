"""Pointwise structural checks of a computed state.

The discrete solution satisfies a set of exact identities: normal
continuity of both velocities and of the Darcy flux, agreement of cell and
facet normal traces, the interface mass balance, and pointwise divergence
relations in each cell. They are evaluated here at quadrature points;
since every residual is a polynomial, vanishing at the points of a rule
exact for its square is equivalent to vanishing identically.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .assembly import stencil
from .data import ProblemData
from .dofs import project_facet
from .drivers import SystemState
from .elements import data_exactness, element_tables
from .evaluation import divergence_at, facet_values, gradients_at, values_at
from .mesh import BIOT, STOKES, FacetTag, Mesh

CHECKS = (
    ("normal_jump_u", "normal jump of u over interior facets; u.n - ubar.n on Dirichlet facets"),
    ("trace_u", "u.n - ubar.n on Neumann and interface facets"),
    ("normal_jump_z", "normal jump of z; z.n - proj Z on flux facets"),
    ("interface_flux", "us.n - (z + Dt ub).n - proj Mu on the interface"),
    ("div_us", "div us"),
    ("div_ub", "div ub - (alpha pp - pb) / lambda"),
    ("mass_balance", "div z - proj g + c0 Dt pp + alpha/lambda (alpha Dt pp - Dt pb)"),
)
DATA_OFFSET = {"normal_jump_z", "interface_flux"}


@dataclass
class ConformityReport:
    """Raw maxima, their normalizers and relative values per check."""

    raw: dict = field(default_factory=dict)
    scale: dict = field(default_factory=dict)
    with_data: bool = False

    def relative(self, name: str) -> float:
        s = self.scale[name]
        return self.raw[name] / s if s > 0 else self.raw[name]

    def worst(self) -> float:
        return max(self.relative(n) for n, _ in CHECKS)

    def passed(self, tol: float = 1e-10) -> bool:
        return all(np.isfinite(self.raw[n]) and self.relative(n) <= tol for n, _ in CHECKS)

    def failures(self, tol: float = 1e-10) -> list[str]:
        return [n for n, _ in CHECKS if not self.relative(n) <= tol]

    def table(self, tol: float = 1e-10) -> str:
        lines = [f"{'check':<16}{'raw':>12}{'scale':>12}{'relative':>12}  status"]
        for name, _ in CHECKS:
            rel = self.relative(name)
            note = " (data offset)" if self.with_data and name in DATA_OFFSET else ""
            status = "ok" if rel <= tol else "FAIL"
            lines.append(f"{name:<16}{self.raw[name]:>12.3e}{self.scale[name]:>12.3e}"
                         f"{rel:>12.3e}  {status}{note}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["check", "raw", "scale", "relative", "data_offset"])
        for name, _ in CHECKS:
            w.writerow([name, f"{self.raw[name]:.6e}", f"{self.scale[name]:.6e}",
                        f"{self.relative(name):.6e}",
                        int(self.with_data and name in DATA_OFFSET)])
        return buf.getvalue()


def _l2(w, v) -> float:
    if v.ndim > w.ndim:
        v = np.sum(v**2, axis=-1)
    else:
        v = v**2
    return float(np.sqrt(np.sum(w * v)))


def _max(v) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def _edge_traces(mesh: Mesh, tab, x, dm, block, cells):
    """Normal traces (n, 3, nqf) of a vector cell field on each cell edge,
    in facet order, with the cell's outward normal."""
    ephi, _, _ = tab.edge_tables(cells)
    c = x[dm.index[block][cells]].reshape(len(cells), 2, -1)
    vals = np.einsum("cai,ceqi->ceqa", c, ephi)
    return np.einsum("ceqa,cea->ceq", vals, tab.normal_out[cells])


def check_conformity(state: SystemState, history=(), mode: str = "steady",
                     data: ProblemData | None = None) -> ConformityReport:
    """Evaluate every identity on ``state``.

    ``history`` holds the previous states of the time stencil of ``mode``
    (most recent first); in steady mode the time derivative is ``tau``
    times the state itself. ``data`` supplies ``g_b``, ``Z`` and ``M_u``;
    omitted data is taken as zero.
    """
    mesh, params, dm = state.mesh, state.params, state.dofmap
    w, coeffs = stencil(mode, params)
    if len(history) < len(coeffs):
        raise ValueError(f"{mode} checks need {len(coeffs)} previous states")
    x = state.x
    xd = w * x
    for c, s in zip(coeffs, history):
        xd = xd + c * s.x
    tab = element_tables(mesh, dm.k)
    s = tab.seg_points
    t = state.t
    rep = ConformityReport(with_data=data is not None)
    tags = mesh.facet_tags

    # normal traces of u on both subdomains
    jump_raw, trace_raw = 0.0, 0.0
    scale_u = 0.0
    for dom, ubar in ((STOKES, "ubar_s"), (BIOT, "ubar_b")):
        cells = mesh.cells_of(dom)
        if len(cells) == 0:
            continue
        scale_u = max(scale_u, _l2(tab.vol_weights_physical(cells),
                                   values_at(x, dm, "u", cells, tab.vol_points)))
        un = _edge_traces(mesh, tab, x, dm, "u", cells)
        fac = mesh.cell_facets[cells]
        ub = facet_values(x, dm, ubar, fac.ravel(), s).reshape(len(cells), 3, -1, 2)
        ubn = np.einsum("ceqa,cea->ceq", ub, tab.normal_out[cells])
        # sum of outward normal traces per facet = jump on interior facets
        total = np.zeros((mesh.n_facets, len(s)))
        np.add.at(total, fac, un)
        interior = np.flatnonzero(tags & int(FacetTag.INTERIOR_S | FacetTag.INTERIOR_B))
        interior = interior[np.isin(interior, fac)]
        jump_raw = max(jump_raw, _max(total[interior]))
        ftag = tags[fac]
        diff = un - ubn
        dir_flag = FacetTag.DIRICHLET_S if dom == STOKES else FacetTag.DIRICHLET_B
        neu_flag = FacetTag.NEUMANN_S if dom == STOKES else FacetTag.NEUMANN_B
        jump_raw = max(jump_raw, _max(diff[(ftag & int(dir_flag)) != 0]))
        trace_raw = max(trace_raw, _max(diff[(ftag & int(neu_flag | FacetTag.INTERFACE)) != 0]))
    rep.raw["normal_jump_u"], rep.scale["normal_jump_u"] = jump_raw, scale_u
    rep.raw["trace_u"], rep.scale["trace_u"] = trace_raw, scale_u

    bcells = mesh.cells_of(BIOT)
    scells = mesh.cells_of(STOKES)
    wb = tab.vol_weights_physical(bcells)

    # Darcy flux normal continuity and flux data
    zn = _edge_traces(mesh, tab, x, dm, "z", bcells)
    fac = mesh.cell_facets[bcells]
    total = np.zeros((mesh.n_facets, len(s)))
    np.add.at(total, fac, zn)
    interior_b = mesh.facets_with(FacetTag.INTERIOR_B)
    raw = _max(total[interior_b])
    flux = mesh.facets_with(FacetTag.FLUX_B)
    if len(flux):
        if data is not None and data.Z is not None:
            coef = project_facet(mesh, dm.k, flux, lambda p, tt: data.Z(p, _normals(mesh, flux, dm.k), tt),
                                 t, False)
            Zp = coef @ tab.psi.T
        else:
            Zp = 0.0
        raw = max(raw, _max(total[flux] - Zp))
    rep.raw["normal_jump_z"] = raw
    rep.scale["normal_jump_z"] = _l2(wb, values_at(x, dm, "z", bcells, tab.vol_points))

    # interface mass balance, using the Stokes and Biot cell traces
    iface = mesh.facets_with(FacetTag.INTERFACE)
    if len(iface):
        fc = mesh.facet_cells[iface]
        n = mesh.facet_normals[iface]
        e_s = np.argmax(mesh.cell_facets[fc[:, 0]] == iface[:, None], axis=1)
        e_b = np.argmax(mesh.cell_facets[fc[:, 1]] == iface[:, None], axis=1)
        o_s = tab.orient[fc[:, 0], e_s]
        o_b = tab.orient[fc[:, 1], e_b]
        phi_s = tab.edge_phi[e_s, o_s]
        phi_b = tab.edge_phi[e_b, o_b]

        def trace(vec, block, cells, phi):
            c = vec[dm.index[block][cells]].reshape(len(cells), 2, -1)
            return np.einsum("fqa,fa->fq", np.einsum("fai,fqi->fqa", c, phi), n)

        us_n = trace(x, "u", fc[:, 0], phi_s)
        z_n = trace(x, "z", fc[:, 1], phi_b)
        dub_n = trace(xd, "u", fc[:, 1], phi_b)
        if data is not None and data.M_u is not None:
            coef = project_facet(mesh, dm.k, iface,
                                 lambda p, tt: data.M_u(p, _normals(mesh, iface, dm.k), tt), t, False)
            Mu = coef @ tab.psi.T
        else:
            Mu = np.zeros_like(us_n)
        resid = us_n - z_n - dub_n - Mu
        wf = mesh.facet_lengths[iface][:, None] * tab.seg_weights[None, :]
        rep.raw["interface_flux"] = _max(resid)
        rep.scale["interface_flux"] = max(_l2(wf, us_n), _l2(wf, z_n), _l2(wf, dub_n), _l2(wf, Mu))
    else:
        rep.raw["interface_flux"], rep.scale["interface_flux"] = 0.0, 0.0

    # volume identities
    ds = divergence_at(x, dm, tab, "u", scells, tab.vol_points)
    rep.raw["div_us"] = _max(ds)
    rep.scale["div_us"] = _l2(tab.vol_weights_physical(scells),
                              values_at(x, dm, "u", scells, tab.vol_points))

    # the divergence identities cancel large terms when nearly
    # incompressible, so they are scaled by the sum of the term magnitudes
    il, alpha = params.inv_lambda, params.alpha
    Gb = gradients_at(x, dm, tab, "u", bcells, tab.vol_points)
    db = Gb[..., 0, 0] + Gb[..., 1, 1]
    pp = values_at(x, dm, "pp", bcells, tab.vol_points)
    pb = values_at(x, dm, "p", bcells, tab.vol_points)
    comp = il * (alpha * pp - pb)
    rep.raw["div_ub"] = _max(db - comp)
    rep.scale["div_ub"] = _l2(wb, np.abs(Gb[..., 0, 0]) + np.abs(Gb[..., 1, 1])
                              + il * (alpha * np.abs(pp) + np.abs(pb)))

    Gz = gradients_at(x, dm, tab, "z", bcells, tab.vol_points)
    dz = Gz[..., 0, 0] + Gz[..., 1, 1]
    dpp = values_at(xd, dm, "pp", bcells, tab.vol_points)
    dpb = values_at(xd, dm, "p", bcells, tab.vol_points)
    if data is not None and data.g_b is not None:
        tq = element_tables(mesh, dm.k, data_exactness(dm.k))
        xq = tq.vol_physical_points(bcells)
        g = np.asarray(data.g_b(xq.reshape(-1, 2), t)).reshape(len(bcells), -1)
        coef = np.einsum("cq,cq,qi->ci", tq.vol_weights_physical(bcells), g, tq.phiq) / tq.det[bcells, None]
        g_proj = coef @ tab.phiq.T
    else:
        g_proj = np.zeros_like(dz)
    storage = params.c0 * dpp + alpha * il * (alpha * dpp - dpb)
    rep.raw["mass_balance"] = _max(dz - g_proj + storage)
    terms = (np.abs(Gz[..., 0, 0]) + np.abs(Gz[..., 1, 1]) + np.abs(g_proj)
             + (params.c0 + alpha**2 * il) * np.abs(dpp) + alpha * il * np.abs(dpb))
    rep.scale["mass_balance"] = _l2(wb, terms)
    return rep


def _normals(mesh: Mesh, facets, k: int) -> np.ndarray:
    nq = len(element_tables(mesh, k, data_exactness(k)).seg_weights)
    return np.repeat(mesh.facet_normals[facets], nq, axis=0)
