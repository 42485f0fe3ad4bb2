"""Two-subdomain triangulations with matching interface.

Cells carry a subdomain tag (Stokes or Biot). Facets carry classification
flags; a Biot boundary facet holds one mechanical flag (Dirichlet/Neumann)
and one flow flag (pressure/flux), since the two boundary partitions of the
poroelastic region are independent.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

STOKES = 0
BIOT = 1


class MeshError(ValueError):
    """Raised for invalid geometry specifications or broken mesh invariants."""


class FacetTag(enum.IntFlag):
    INTERIOR_S = 1
    INTERIOR_B = 2
    DIRICHLET_S = 4
    NEUMANN_S = 8
    DIRICHLET_B = 16
    NEUMANN_B = 32
    PRESSURE_B = 64
    FLUX_B = 128
    INTERFACE = 256


STOKES_BOUNDARY = FacetTag.DIRICHLET_S | FacetTag.NEUMANN_S
BIOT_MECHANICAL = FacetTag.DIRICHLET_B | FacetTag.NEUMANN_B
BIOT_FLOW = FacetTag.PRESSURE_B | FacetTag.FLUX_B


@dataclass(frozen=True)
class GeometrySpec:
    """Domain preset plus boundary partition and initial resolution.

    ``partition`` maps ``(subdomain, side)`` with subdomain in ``{"s", "b"}``
    and side in ``{"left", "right", "top", "bottom"}`` to facet flags. Sides
    that touch the interface are not listed.
    """

    preset: str = "unit-square-split"
    resolution: int = 1
    partition: dict | None = None

    @property
    def box(self) -> tuple[float, float, float, float]:
        """(x0, x1, y0, y1) of the whole domain."""
        if self.preset == "unit-square-split":
            return 0.0, 1.0, 0.0, 1.0
        if self.preset == "surf-sub":
            return 0.0, 2.0, -1.0, 1.0
        raise MeshError(f"unknown domain preset {self.preset!r}")

    @property
    def split(self) -> float:
        x0, x1, y0, y1 = self.box
        return 0.5 * (y0 + y1)

    def boundary_partition(self) -> dict:
        if self.partition is not None:
            return dict(self.partition)
        T = FacetTag
        if self.preset == "unit-square-split":
            return {
                ("s", "left"): T.DIRICHLET_S,
                ("s", "top"): T.DIRICHLET_S,
                ("s", "right"): T.NEUMANN_S,
                ("b", "left"): T.DIRICHLET_B | T.PRESSURE_B,
                ("b", "bottom"): T.DIRICHLET_B | T.PRESSURE_B,
                ("b", "right"): T.NEUMANN_B | T.FLUX_B,
            }
        if self.preset == "surf-sub":
            return {
                ("s", "left"): T.DIRICHLET_S,
                ("s", "top"): T.DIRICHLET_S,
                ("s", "right"): T.DIRICHLET_S,
                ("b", "left"): T.DIRICHLET_B | T.FLUX_B,
                ("b", "right"): T.DIRICHLET_B | T.FLUX_B,
                ("b", "bottom"): T.NEUMANN_B | T.PRESSURE_B,
            }
        raise MeshError(f"unknown domain preset {self.preset!r}")

    def validate(self) -> None:
        if self.resolution < 1:
            raise MeshError("resolution must be >= 1")
        part = self.boundary_partition()
        expected = {("s", side) for side in ("left", "right", "top")}
        expected |= {("b", side) for side in ("left", "right", "bottom")}
        if set(part) != expected:
            raise MeshError(f"partition must cover exactly {sorted(expected)}")
        flags_s = FacetTag(0)
        flags_b = FacetTag(0)
        for (dom, _), tag in part.items():
            tag = FacetTag(tag)
            if dom == "s":
                if bin(int(tag & STOKES_BOUNDARY)).count("1") != 1 or tag & ~STOKES_BOUNDARY:
                    raise MeshError(f"Stokes side needs exactly one of D/N, got {tag!r}")
                flags_s |= tag
            else:
                if (bin(int(tag & BIOT_MECHANICAL)).count("1") != 1
                        or bin(int(tag & BIOT_FLOW)).count("1") != 1
                        or tag & ~(BIOT_MECHANICAL | BIOT_FLOW)):
                    raise MeshError(f"Biot side needs one of D/N and one of P/F, got {tag!r}")
                flags_b |= tag
        # the pressure/displacement/velocity levels must be pinned somewhere
        for flag, have in ((FacetTag.DIRICHLET_S, flags_s), (FacetTag.DIRICHLET_B, flags_b),
                           (FacetTag.PRESSURE_B, flags_b), (FacetTag.NEUMANN_B, flags_b)):
            if not have & flag:
                raise MeshError(f"boundary set {flag.name} would be empty")


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation of a two-subdomain polygon.

    Attributes
    ----------
    vertices : (nv, 2) float
    cells : (nc, 3) int, counter-clockwise
    cell_domain : (nc,) int, ``STOKES`` or ``BIOT``
    facets : (nf, 2) int, ordered as traversed counter-clockwise by the first cell
    facet_cells : (nf, 2) int, second entry -1 on the outer boundary; on the
        interface the first cell is the Stokes cell so that the stored normal
        points from the Stokes into the Biot region
    cell_facets : (nc, 3) int, local facet ``e`` is opposite local vertex ``e``
    facet_tags : (nf,) int, ``FacetTag`` flags
    """

    vertices: np.ndarray
    cells: np.ndarray
    cell_domain: np.ndarray
    facets: np.ndarray
    facet_cells: np.ndarray
    cell_facets: np.ndarray
    facet_tags: np.ndarray
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_facets(self) -> int:
        return len(self.facets)

    @property
    def cell_areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def facet_lengths(self) -> np.ndarray:
        d = self.vertices[self.facets[:, 1]] - self.vertices[self.facets[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def facet_normals(self) -> np.ndarray:
        """Unit normal of each facet, outward for ``facet_cells[:, 0]``."""
        d = self.vertices[self.facets[:, 1]] - self.vertices[self.facets[:, 0]]
        return np.column_stack([d[:, 1], -d[:, 0]]) / self.facet_lengths[:, None]

    @property
    def cell_diameters(self) -> np.ndarray:
        return self.facet_lengths[self.cell_facets].max(axis=1)

    @property
    def h(self) -> float:
        return float(self.cell_diameters.max())

    @property
    def cell_orientation(self) -> np.ndarray:
        """(nc, 3) int: 0 if the cell traverses its local facet in stored order."""
        first = self.facet_cells[self.cell_facets, 0]
        return (first != np.arange(self.n_cells)[:, None]).astype(np.int64)

    def cells_of(self, domain: int) -> np.ndarray:
        return np.flatnonzero(self.cell_domain == domain)

    def facets_with(self, tag: FacetTag) -> np.ndarray:
        return np.flatnonzero(self.facet_tags & int(tag))

    def facets_of(self, domain: int) -> np.ndarray:
        """Facets in the closure of one subdomain (interface included)."""
        c0 = self.facet_cells[:, 0]
        c1 = self.facet_cells[:, 1]
        on0 = self.cell_domain[c0] == domain
        on1 = (c1 >= 0) & (self.cell_domain[np.maximum(c1, 0)] == domain)
        return np.flatnonzero(on0 | on1)

    def shape_ratios(self) -> np.ndarray:
        """Circumradius over inradius per cell."""
        ell = self.facet_lengths[self.cell_facets]
        area = self.cell_areas
        circ = ell.prod(axis=1) / (4.0 * area)
        inr = 2.0 * area / ell.sum(axis=1)
        return circ / inr


def _build(vertices, cells, domain, boundary_tagger) -> Mesh:
    vertices = np.asarray(vertices, dtype=float)
    cells = np.array(cells, dtype=np.int64)
    domain = np.asarray(domain, dtype=np.int64)
    p = vertices[cells]
    signed = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
        p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    flip = signed < 0
    cells[flip] = cells[flip][:, [0, 2, 1]]

    nc = len(cells)
    # local edge e runs v[e+1] -> v[e+2]
    a = cells[:, [1, 2, 0]]
    b = cells[:, [2, 0, 1]]
    keys = np.stack([np.minimum(a, b), np.maximum(a, b)], axis=-1).reshape(-1, 2)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    nf = len(uniq)
    cell_facets = inverse.reshape(nc, 3)

    owner = np.repeat(np.arange(nc), 3)
    order = np.lexsort((owner, inverse))
    facet_cells = np.full((nf, 2), -1, dtype=np.int64)
    counts = np.bincount(inverse, minlength=nf)
    if counts.max() > 2:
        raise MeshError("non-manifold mesh: facet shared by more than two cells")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    facet_cells[:, 0] = owner[order[starts]]
    two = counts == 2
    facet_cells[two, 1] = owner[order[starts[two] + 1]]

    # interface: Stokes cell first
    c1 = facet_cells[:, 1]
    swap = two & (domain[facet_cells[:, 0]] == BIOT) & (domain[np.maximum(c1, 0)] == STOKES)
    facet_cells[swap] = facet_cells[swap][:, ::-1]

    # facet orientation follows the first cell's counter-clockwise traversal
    first = facet_cells[:, 0]
    local = np.argmax(cell_facets[first] == np.arange(nf)[:, None], axis=1)
    facets = np.column_stack([cells[first, (local + 1) % 3], cells[first, (local + 2) % 3]])

    tags = np.zeros(nf, dtype=np.int64)
    d0 = domain[facet_cells[:, 0]]
    d1 = np.where(two, domain[np.maximum(c1, 0)], -1)
    tags[two & (d0 == d1) & (d0 == STOKES)] = FacetTag.INTERIOR_S
    tags[two & (d0 == d1) & (d0 == BIOT)] = FacetTag.INTERIOR_B
    tags[two & (d0 != d1)] = FacetTag.INTERFACE
    bnd = np.flatnonzero(~two)
    tags[bnd] = boundary_tagger(facets[bnd], d0[bnd])
    return Mesh(vertices, cells, domain, facets, facet_cells, cell_facets, tags)


def _side_tagger(spec: GeometrySpec, vertices):
    x0, x1, y0, y1 = spec.box
    part = spec.boundary_partition()
    tol = 1e-10 * max(x1 - x0, y1 - y0)

    def tagger(fv, dom):
        mid = 0.5 * (vertices[fv[:, 0]] + vertices[fv[:, 1]])
        out = np.zeros(len(fv), dtype=np.int64)
        for i, ((mx, my), d) in enumerate(zip(mid, dom)):
            key = "s" if d == STOKES else "b"
            if abs(mx - x0) < tol:
                side = "left"
            elif abs(mx - x1) < tol:
                side = "right"
            elif abs(my - y1) < tol:
                side = "top"
            elif abs(my - y0) < tol:
                side = "bottom"
            else:
                raise MeshError(f"boundary facet at {mx, my} is not on the box")
            out[i] = int(part[(key, side)])
        return out

    return tagger


def generate(spec: GeometrySpec) -> Mesh:
    """Structured triangulation: a 2r x 2r grid of squares, each cut along
    its rising diagonal, split into subdomains along the middle grid line."""
    spec.validate()
    x0, x1, y0, y1 = spec.box
    n = 2 * spec.resolution
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    cells = []
    domain = []
    for j in range(n):
        dom = STOKES if j >= n // 2 else BIOT
        for i in range(n):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            cells += [(a, b, c), (a, c, d)]
            domain += [dom, dom]
    mesh = _build(vertices, cells, domain, _side_tagger(spec, vertices))
    check_invariants(mesh)
    return mesh


def refine(mesh: Mesh) -> Mesh:
    """Uniform red refinement; boundary classification is inherited."""
    nv = len(mesh.vertices)
    mids = 0.5 * (mesh.vertices[mesh.facets[:, 0]] + mesh.vertices[mesh.facets[:, 1]])
    vertices = np.vstack([mesh.vertices, mids])
    v = mesh.cells
    m = mesh.cell_facets + nv
    children = np.stack([
        np.column_stack([v[:, 0], m[:, 2], m[:, 1]]),
        np.column_stack([v[:, 1], m[:, 0], m[:, 2]]),
        np.column_stack([v[:, 2], m[:, 1], m[:, 0]]),
        np.column_stack([m[:, 0], m[:, 1], m[:, 2]]),
    ], axis=1).reshape(-1, 3)
    domain = np.repeat(mesh.cell_domain, 4)
    parent_tags = mesh.facet_tags

    def tagger(fv, dom):
        parent = fv.max(axis=1) - nv
        return parent_tags[parent]

    return _build(vertices, children, domain, tagger)


def check_invariants(mesh: Mesh, max_shape_ratio: float = 10.0) -> None:
    """Raise ``MeshError`` if any structural invariant fails."""
    if np.any(mesh.cell_areas <= 0):
        raise MeshError("non-positive cell area")
    ratios = mesh.shape_ratios()
    if ratios.max() > max_shape_ratio:
        raise MeshError(f"shape ratio {ratios.max():.3g} exceeds {max_shape_ratio}")
    fc = mesh.facet_cells
    two = fc[:, 1] >= 0
    tags = mesh.facet_tags
    interior = (tags & (FacetTag.INTERIOR_S | FacetTag.INTERIOR_B)) != 0
    interface = (tags & FacetTag.INTERFACE) != 0
    if np.any(two != (interior | interface)):
        raise MeshError("two-cell facets must be exactly the interior and interface facets")
    dom = mesh.cell_domain
    d0 = dom[fc[:, 0]]
    d1 = np.where(two, dom[np.maximum(fc[:, 1], 0)], -1)
    if np.any(interface & ~((d0 == STOKES) & (d1 == BIOT))):
        raise MeshError("interface facet must have Stokes cell first and Biot cell second")
    if np.any(interior & (d0 != d1)):
        raise MeshError("interior facet crosses subdomains")
    bnd = ~two
    tb = tags[bnd]
    sb = d0[bnd] == STOKES
    for t, s in zip(tb, sb):
        t = FacetTag(int(t))
        if s:
            ok = bin(int(t & STOKES_BOUNDARY)).count("1") == 1 and not t & ~STOKES_BOUNDARY
        else:
            ok = (bin(int(t & BIOT_MECHANICAL)).count("1") == 1
                  and bin(int(t & BIOT_FLOW)).count("1") == 1
                  and not t & ~(BIOT_MECHANICAL | BIOT_FLOW))
        if not ok:
            raise MeshError(f"bad boundary classification {t!r}")
    # each cell traverses its facets: first cell in stored order, second reversed
    for e in range(3):
        f = mesh.cell_facets[:, e]
        a = mesh.cells[:, (e + 1) % 3]
        b = mesh.cells[:, (e + 2) % 3]
        is_first = fc[f, 0] == np.arange(mesh.n_cells)
        same = (mesh.facets[f, 0] == a) & (mesh.facets[f, 1] == b)
        rev = (mesh.facets[f, 0] == b) & (mesh.facets[f, 1] == a)
        if np.any(is_first & ~same) or np.any(~is_first & ~rev):
            raise MeshError("facet orientation inconsistent with cell traversal")


def save(mesh: Mesh, path) -> None:
    """Write a plain-text dump with hex-encoded coordinates."""
    lines = ["# sbhdg mesh v1", f"vertices {len(mesh.vertices)}"]
    lines += [f"{float(x).hex()} {float(y).hex()}" for x, y in mesh.vertices]
    lines.append(f"cells {mesh.n_cells}")
    lines += [f"{a} {b} {c} {d}" for (a, b, c), d in zip(mesh.cells, mesh.cell_domain)]
    lines.append(f"facets {mesh.n_facets}")
    lines += [f"{a} {b} {t}" for (a, b), t in zip(mesh.facets, mesh.facet_tags)]
    Path(path).write_text("\n".join(lines) + "\n")


def load(path) -> Mesh:
    rows = Path(path).read_text().splitlines()
    if not rows or not rows[0].startswith("# sbhdg mesh"):
        raise MeshError(f"{path}: not an sbhdg mesh file")
    pos = 1

    def section(name):
        nonlocal pos
        head, count = rows[pos].split()
        if head != name:
            raise MeshError(f"expected section {name!r}, found {head!r}")
        block = rows[pos + 1: pos + 1 + int(count)]
        pos += 1 + int(count)
        return [r.split() for r in block]

    vertices = np.array([[float.fromhex(x), float.fromhex(y)] for x, y in section("vertices")])
    cdat = np.array(section("cells"), dtype=np.int64)
    fdat = np.array(section("facets"), dtype=np.int64)
    lookup = {(min(a, b), max(a, b)): t for a, b, t in fdat}

    def tagger(fv, dom):
        return np.array([lookup[(min(a, b), max(a, b))] for a, b in fv], dtype=np.int64)

    mesh = _build(vertices, cdat[:, :3], cdat[:, 3], tagger)
    check_invariants(mesh)
    return mesh
