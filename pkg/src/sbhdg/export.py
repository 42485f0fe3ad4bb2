"""Field snapshots, VTU export and interface profiles.

Discrete fields are discontinuous, so every subdomain gets its own copy of
the vertices it touches: a vertex on the interface appears once for the
Stokes cells and once for the Biot cells. Vertex samples average the
adjacent cells of one subdomain; cell-centre samples are single valued.
"""

from __future__ import annotations

import csv
import io
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dofs import project_facet
from .drivers import SystemState
from .elements import data_exactness, element_tables
from .evaluation import gradients_at, values_at
from .mesh import BIOT, STOKES, FacetTag, Mesh

VTK_TRIANGLE = 5
POINT_FIELDS = (("u_s", 2), ("p_s", 1), ("u_b", 2), ("p_b", 1), ("z", 2), ("p_p", 1),
                ("sigma12", 1), ("sigma22", 1), ("velocity", 2), ("subdomain", 1))
CENTROID = np.array([[1.0 / 3.0, 1.0 / 3.0]])


def snapshot_name(case: str, step: int) -> str:
    """File name of the VTU snapshot of ``case`` after ``step`` steps."""
    return f"{case}_{step:05}.vtu"


@dataclass(eq=False)
class FieldSnapshot:
    """Point and cell samples of one state.

    Attributes
    ----------
    points : (np, 2) coordinates of the per-subdomain vertex copies
    point_vertex : (np,) mesh vertex of each point
    cells : (nc, 3) connectivity into ``points``
    point_data, cell_data : name -> (np,) / (np, 2) and (nc,) / (nc, 2)
    coefficients : block -> raw cell coefficients
    """

    mesh: Mesh
    t: float
    points: np.ndarray
    point_vertex: np.ndarray
    cells: np.ndarray
    point_data: dict = field(default_factory=dict)
    cell_data: dict = field(default_factory=dict)
    coefficients: dict = field(default_factory=dict)


def _stress(grad: np.ndarray, p: np.ndarray, mu: float) -> tuple[np.ndarray, np.ndarray]:
    s12 = mu * (grad[..., 0, 1] + grad[..., 1, 0])
    s22 = 2 * mu * grad[..., 1, 1] - p
    return s12, s22


def _samples(state: SystemState, rate: np.ndarray, cells: np.ndarray, dom: int,
             ref: np.ndarray) -> dict:
    """All fields of subdomain ``dom`` at reference points ``ref``
    (shared or per cell); fields of the other subdomain are zero."""
    x, dm, params = state.x, state.dofmap, state.params
    tab = element_tables(state.mesh, dm.k)
    npts = ref.shape[-2]
    shape = (len(cells), npts)
    out = {name: np.zeros(shape + ((2,) if nc == 2 else ())) for name, nc in POINT_FIELDS}
    out["subdomain"][:] = dom
    u = values_at(x, dm, "u", cells, ref)
    p = values_at(x, dm, "p", cells, ref)
    G = gradients_at(x, dm, tab, "u", cells, ref)
    if dom == STOKES:
        out["u_s"], out["p_s"] = u, p
        out["sigma12"], out["sigma22"] = _stress(G, p, params.mu_s)
        out["velocity"] = u
    else:
        z = values_at(x, dm, "z", cells, ref)
        out["u_b"], out["p_b"], out["z"] = u, p, z
        out["p_p"] = values_at(x, dm, "pp", cells, ref)
        out["sigma12"], out["sigma22"] = _stress(G, p, params.mu_b)
        out["velocity"] = z + values_at(rate, dm, "u", cells, ref)
    return out


def snapshot(state: SystemState, rate: np.ndarray | None = None) -> FieldSnapshot:
    """Sample ``state``; ``rate`` is the discrete time derivative of the
    full coefficient vector (zero when omitted), used for the composite
    velocity ``z + d_t u_b`` in the Biot region."""
    mesh, dm = state.mesh, state.dofmap
    rate = np.zeros_like(state.x) if rate is None else np.asarray(rate)
    tab = element_tables(mesh, dm.k)
    pts, pvert, conn = [], [], np.zeros((mesh.n_cells, 3), dtype=np.int64)
    pdata = {name: [] for name, _ in POINT_FIELDS}
    cdata = {name: np.zeros((mesh.n_cells, 2) if nc == 2 else mesh.n_cells)
             for name, nc in POINT_FIELDS}
    offset = 0
    for dom in (STOKES, BIOT):
        cells = mesh.cells_of(dom)
        if len(cells) == 0:
            continue
        verts = np.unique(mesh.cells[cells])
        local = np.full(len(mesh.vertices), -1, dtype=np.int64)
        local[verts] = np.arange(len(verts))
        conn[cells] = offset + local[mesh.cells[cells]]
        ref = tab.to_reference(cells, mesh.vertices[mesh.cells[cells]])
        vals = _samples(state, rate, cells, dom, ref)
        counts = np.bincount(local[mesh.cells[cells]].ravel(), minlength=len(verts))
        for name, nc in POINT_FIELDS:
            acc = np.zeros((len(verts), 2) if nc == 2 else len(verts))
            np.add.at(acc, local[mesh.cells[cells]], vals[name])
            pdata[name].append(acc / (counts[:, None] if nc == 2 else counts))
        cen = _samples(state, rate, cells, dom, CENTROID)
        for name, _ in POINT_FIELDS:
            cdata[name][cells] = cen[name][:, 0]
        pts.append(mesh.vertices[verts])
        pvert.append(verts)
        offset += len(verts)
    coeffs = {b: state.x[dm.block(b)].copy() for b in ("u", "p", "z", "pp")}
    return FieldSnapshot(mesh, state.t, np.vstack(pts), np.concatenate(pvert), conn,
                         {name: np.concatenate(v) for name, v in pdata.items()}, cdata, coeffs)


def _fmt(a: np.ndarray) -> str:
    return " ".join(f"{v:.17g}" for v in np.asarray(a, dtype=float).ravel())


def _pad3(a: np.ndarray) -> np.ndarray:
    return np.column_stack([a, np.zeros(len(a))]) if a.ndim == 2 else a


def _data_array(parent, name, values, dtype="Float64", text=None):
    ncomp = 3 if values.ndim == 2 else 1
    attrs = {"type": dtype, "Name": name, "format": "ascii"}
    if ncomp > 1:
        attrs["NumberOfComponents"] = str(ncomp)
    el = ET.SubElement(parent, "DataArray", attrs)
    el.text = text if text is not None else _fmt(_pad3(values))
    return el


def export_vtu(snap: FieldSnapshot, path) -> Path:
    """Write ``snap`` as an ASCII VTK unstructured grid.

    The output is a deterministic function of the snapshot. Raises
    ``ValueError`` if any sample is not finite and ``OSError`` on I/O
    failure.
    """
    for group in (snap.point_data, snap.cell_data):
        for name, arr in group.items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"field {name!r} has non-finite samples")
    root = ET.Element("VTKFile", {"type": "UnstructuredGrid", "version": "0.1",
                                  "byte_order": "LittleEndian"})
    grid = ET.SubElement(root, "UnstructuredGrid")
    piece = ET.SubElement(grid, "Piece", {"NumberOfPoints": str(len(snap.points)),
                                          "NumberOfCells": str(len(snap.cells))})
    pd = ET.SubElement(piece, "PointData")
    for name, arr in snap.point_data.items():
        _data_array(pd, name, arr)
    cd = ET.SubElement(piece, "CellData")
    for name, arr in snap.cell_data.items():
        _data_array(cd, name, arr)
    pts = ET.SubElement(piece, "Points")
    _data_array(pts, "Points", snap.points)
    cl = ET.SubElement(piece, "Cells")
    n = len(snap.cells)
    _data_array(cl, "connectivity", snap.cells.ravel(), "Int64",
                " ".join(str(int(v)) for v in snap.cells.ravel()))
    _data_array(cl, "offsets", np.arange(n), "Int64",
                " ".join(str(3 * (i + 1)) for i in range(n)))
    _data_array(cl, "types", np.arange(n), "UInt8", " ".join([str(VTK_TRIANGLE)] * n))
    ET.indent(root)
    path = Path(path)
    path.write_bytes(b'<?xml version="1.0"?>\n' + ET.tostring(root) + b"\n")
    return path


def read_vtu(path) -> dict:
    """Read a file written by ``export_vtu``; returns ``points``,
    ``cells``, ``point_data`` and ``cell_data`` (vectors with their two
    planar components)."""

    def parse(el):
        ncomp = int(el.get("NumberOfComponents", "1"))
        dtype = float if el.get("type") == "Float64" else np.int64
        vals = np.array((el.text or "").split(), dtype=dtype)
        return vals.reshape(-1, ncomp)[:, :2] if ncomp > 1 else vals

    piece = ET.parse(path).getroot().find("UnstructuredGrid/Piece")
    out = {"point_data": {}, "cell_data": {}}
    for tag, key in (("PointData", "point_data"), ("CellData", "cell_data")):
        for el in piece.find(tag):
            out[key][el.get("Name")] = parse(el)
    out["points"] = parse(piece.find("Points/DataArray"))
    conn = {el.get("Name"): parse(el) for el in piece.find("Cells")}
    out["cells"] = conn["connectivity"].reshape(-1, 3)
    return out


@dataclass
class InterfaceProfile:
    """Traces from both sides at interface quadrature points."""

    columns: dict

    COLUMNS = ("facet", "x", "y", "us_n", "flux_b_n", "flux_defect", "us_t", "dub_t",
               "u2_s", "u2_b", "sigma12_s", "sigma12_b", "sigma22_s", "sigma22_b")

    def max_flux_defect(self) -> float:
        d = self.columns["flux_defect"]
        return float(np.max(np.abs(d))) if len(d) else 0.0

    def vertical_jump(self) -> float:
        d = self.columns["u2_s"] - self.columns["u2_b"]
        return float(np.max(np.abs(d))) if len(d) else 0.0

    def traction_mismatch(self) -> float:
        """RMS traction difference over RMS traction; the corners where the
        interface meets the outer boundary carry singular stresses, so a
        maximum would only measure those."""
        c = self.columns
        diff = np.concatenate([c["sigma12_s"] - c["sigma12_b"], c["sigma22_s"] - c["sigma22_b"]])
        ref = np.concatenate([c["sigma12_s"], c["sigma12_b"], c["sigma22_s"], c["sigma22_b"]])
        scale = np.sqrt(2 * np.mean(ref**2))
        rms = np.sqrt(np.mean(diff**2))
        return float(rms / scale) if scale > 0 else float(rms)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for i in range(len(self.columns["facet"])):
            row = [int(self.columns["facet"][i])]
            row += [f"{self.columns[c][i]:.17g}" for c in self.COLUMNS[1:]]
            w.writerow(row)
        return buf.getvalue()


def interface_profile(state: SystemState, rate: np.ndarray | None = None,
                      M_u=None) -> InterfaceProfile:
    """Both-side traces along the interface at time ``state.t``.

    ``flux_defect`` is ``us.n - (z + d_t ub).n`` minus the facet projection
    of ``M_u`` when that interface datum is given.
    """
    mesh, dm = state.mesh, state.dofmap
    iface = mesh.facets_with(FacetTag.INTERFACE)
    if len(iface) == 0:
        raise ValueError("the mesh has no interface facets")
    rate = np.zeros_like(state.x) if rate is None else np.asarray(rate)
    tab = element_tables(mesh, dm.k)
    nq = len(tab.seg_points)
    X = tab.facet_points(mesh, iface)
    fc = mesh.facet_cells[iface]
    n = mesh.facet_normals[iface][:, None, :]
    t = np.concatenate([-n[..., 1:], n[..., :1]], axis=-1)
    side = {}
    for dom, cells in ((STOKES, fc[:, 0]), (BIOT, fc[:, 1])):
        side[dom] = _samples(state, rate, cells, dom, tab.to_reference(cells, X))
    us = side[STOKES]["velocity"]
    vb = side[BIOT]["velocity"]
    dub = values_at(rate, dm, "u", fc[:, 1], tab.to_reference(fc[:, 1], X))
    us_n = np.sum(us * n, axis=-1)
    vb_n = np.sum(vb * n, axis=-1)
    defect = us_n - vb_n
    if M_u is not None:
        nrm = np.repeat(mesh.facet_normals[iface],
                        len(element_tables(mesh, dm.k, data_exactness(dm.k)).seg_weights), axis=0)
        coef = project_facet(mesh, dm.k, iface, lambda p, tt: M_u(p, nrm, tt), state.t, False)
        defect = defect - coef @ tab.psi.T
    cols = {
        "facet": np.repeat(iface, nq),
        "x": X[..., 0].ravel(), "y": X[..., 1].ravel(),
        "us_n": us_n.ravel(), "flux_b_n": vb_n.ravel(), "flux_defect": defect.ravel(),
        "us_t": np.sum(us * t, axis=-1).ravel(), "dub_t": np.sum(dub * t, axis=-1).ravel(),
        "u2_s": us[..., 1].ravel(), "u2_b": vb[..., 1].ravel(),
    }
    for name in ("sigma12", "sigma22"):
        cols[f"{name}_s"] = side[STOKES][name].ravel()
        cols[f"{name}_b"] = side[BIOT][name].ravel()
    return InterfaceProfile(cols)


def export_interface_profile(state: SystemState, path, rate: np.ndarray | None = None,
                             M_u=None) -> InterfaceProfile:
    """Write the interface profile of ``state`` as CSV and return it."""
    prof = interface_profile(state, rate, M_u)
    Path(path).write_text(prof.to_csv())
    return prof
