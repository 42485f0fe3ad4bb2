"""Global numbering of cell and facet unknowns.

Unknowns are grouped into blocks in the fixed order ``u, p, z, pp,
ubar_s, ubar_b, pbar_s, pbar_b, ppbar``. Within a block, entity ``e`` owns a
contiguous run of local coefficients; entities that do not carry the field
map to -1. Vector coefficients are stored component-major.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ProblemData
from .elements import data_exactness, element_tables
from .mesh import BIOT, STOKES, FacetTag, Mesh

BLOCKS = ("u", "p", "z", "pp", "ubar_s", "ubar_b", "pbar_s", "pbar_b", "ppbar")
CELL_BLOCKS = BLOCKS[:4]
FACET_BLOCKS = BLOCKS[4:]


@dataclass(frozen=True, eq=False)
class DofMap:
    """Index tables for one mesh and degree.

    Attributes
    ----------
    k : polynomial degree
    n : total number of unknowns
    offsets : dict block -> (start, stop)
    index : dict block -> (n_entities, local_size) int array, rows of -1 where
        the entity does not carry the block
    constrained : (n,) bool mask of essential (Dirichlet-type) unknowns
    cell_groups : list of (cells, local index array) with uniform local size
    """

    k: int
    n: int
    offsets: dict
    index: dict
    constrained: np.ndarray
    cell_groups: list

    @property
    def free(self) -> np.ndarray:
        return np.flatnonzero(~self.constrained)

    @property
    def n_free(self) -> int:
        return int((~self.constrained).sum())

    @property
    def n_cell_dofs(self) -> int:
        return self.offsets["pp"][1]

    def block(self, name: str) -> slice:
        a, b = self.offsets[name]
        return slice(a, b)

    def size(self, name: str) -> int:
        a, b = self.offsets[name]
        return b - a


def build_dofmap(mesh: Mesh, k: int) -> DofMap:
    key = ("dofmap", k)
    if key in mesh.cache:
        return mesh.cache[key]
    nk = (k + 1) * (k + 2) // 2
    nq = k * (k + 1) // 2
    nf = k + 1
    nc, nfac = mesh.n_cells, mesh.n_facets
    biot = mesh.cell_domain == BIOT
    on_s = np.zeros(nfac, bool)
    on_s[mesh.facets_of(STOKES)] = True
    on_b = np.zeros(nfac, bool)
    on_b[mesh.facets_of(BIOT)] = True

    carriers = {
        "u": (np.ones(nc, bool), 2 * nk),
        "p": (np.ones(nc, bool), nq),
        "z": (biot, 2 * nk),
        "pp": (biot, nq),
        "ubar_s": (on_s, 2 * nf),
        "ubar_b": (on_b, 2 * nf),
        "pbar_s": (on_s, nf),
        "pbar_b": (on_b, nf),
        "ppbar": (on_b, nf),
    }
    offsets, index = {}, {}
    pos = 0
    for name in BLOCKS:
        mask, local = carriers[name]
        idx = np.full((len(mask), local), -1, dtype=np.int64)
        count = int(mask.sum())
        idx[mask] = pos + np.arange(count * local).reshape(count, local)
        offsets[name] = (pos, pos + count * local)
        index[name] = idx
        pos += count * local

    constrained = np.zeros(pos, bool)
    tags = mesh.facet_tags
    for name, flag in (("ubar_s", FacetTag.DIRICHLET_S), ("ubar_b", FacetTag.DIRICHLET_B),
                       ("ppbar", FacetTag.PRESSURE_B)):
        f = np.flatnonzero(tags & int(flag))
        constrained[index[name][f].ravel()] = True

    groups = []
    for dom, names in ((STOKES, ("u", "p")), (BIOT, ("u", "p", "z", "pp"))):
        cells = mesh.cells_of(dom)
        if len(cells):
            groups.append((cells, np.hstack([index[b][cells] for b in names])))
    dm = DofMap(k, pos, offsets, index, constrained, groups)
    mesh.cache[key] = dm
    return dm


def project_facet(mesh: Mesh, k: int, facets, fn, t: float, vector: bool) -> np.ndarray:
    """L2 projection of ``fn(x, t)`` onto the facet space of ``facets``.

    Returns (len(facets), nf) or (len(facets), 2*nf) coefficients.
    """
    tab = element_tables(mesh, k, data_exactness(k))
    facets = np.asarray(facets, dtype=np.int64)
    if len(facets) == 0:
        return np.zeros((0, (2 if vector else 1) * tab.nf))
    x = tab.facet_points(mesh, facets)
    vals = np.asarray(fn(x.reshape(-1, 2), t), dtype=float)
    w = tab.seg_weights
    if vector:
        vals = vals.reshape(len(facets), -1, 2)
        c = np.einsum("fqa,q,qm->fam", vals, w, tab.psi)
        return c.reshape(len(facets), -1)
    vals = vals.reshape(len(facets), -1)
    return np.einsum("fq,q,qm->fm", vals, w, tab.psi)


def apply_essential_data(dm: DofMap, mesh: Mesh, data: ProblemData, t: float) -> np.ndarray:
    """Full-length vector that is zero except on constrained unknowns, where it
    holds the facet projection of the boundary data at time ``t``."""
    x = np.zeros(dm.n)
    tags = mesh.facet_tags
    for name, flag, field, vec in (("ubar_s", FacetTag.DIRICHLET_S, "U_s", True),
                                   ("ubar_b", FacetTag.DIRICHLET_B, "U_b", True),
                                   ("ppbar", FacetTag.PRESSURE_B, "P_p", False)):
        f = np.flatnonzero(tags & int(flag))
        if len(f) == 0:
            continue
        x[dm.index[name][f]] = project_facet(mesh, dm.k, f, data.require(field), t, vec)
    return x
