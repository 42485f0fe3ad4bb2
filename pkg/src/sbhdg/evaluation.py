"""Point evaluation of discrete fields stored in a coefficient vector."""

from __future__ import annotations

import numpy as np

from .dofs import DofMap
from .elements import ElementTables
from .fe_basis import SegmentBasis, TriangleBasis
from .mesh import BIOT, STOKES, Mesh

SCALAR_BLOCKS = ("p", "pp")
VECTOR_BLOCKS = ("u", "z")


def _basis(dm: DofMap, block: str) -> TriangleBasis:
    return TriangleBasis(dm.k if block in VECTOR_BLOCKS else dm.k - 1)


def cell_coefficients(x: np.ndarray, dm: DofMap, block: str, cells) -> np.ndarray:
    """(n, dim) scalar or (n, 2, dim) vector coefficients of ``block``."""
    idx = dm.index[block][cells]
    if np.any(idx < 0):
        raise ValueError(f"block {block!r} is not defined on all requested cells")
    c = x[idx]
    if block in VECTOR_BLOCKS:
        return c.reshape(len(cells), 2, -1)
    return c


def values_at(x: np.ndarray, dm: DofMap, block: str, cells, ref_pts: np.ndarray) -> np.ndarray:
    """Field values at reference points; ``ref_pts`` is (npts, 2) shared by
    all cells or (n, npts, 2) per cell. Returns (n, npts) or (n, npts, 2)."""
    basis = _basis(dm, block)
    c = cell_coefficients(x, dm, block, cells)
    if ref_pts.ndim == 2:
        phi = basis.values(ref_pts)
        if c.ndim == 3:
            return np.einsum("cai,qi->cqa", c, phi)
        return np.einsum("ci,qi->cq", c, phi)
    n, npts, _ = ref_pts.shape
    phi = basis.values(ref_pts.reshape(-1, 2)).reshape(n, npts, -1)
    if c.ndim == 3:
        return np.einsum("cai,cqi->cqa", c, phi)
    return np.einsum("ci,cqi->cq", c, phi)


def gradients_at(x: np.ndarray, dm: DofMap, tab: ElementTables, block: str, cells,
                 ref_pts: np.ndarray) -> np.ndarray:
    """Physical gradients at reference points, shared (npts, 2) or per cell
    (n, npts, 2): (n, npts, 2) for scalars, (n, npts, 2, 2) with
    ``[..., a, b] = d_b v_a`` for vectors."""
    basis = _basis(dm, block)
    c = cell_coefficients(x, dm, block, cells)
    if ref_pts.ndim == 2:
        dref = basis.gradients(ref_pts)
        G = np.einsum("qib,cba->cqia", dref, tab.jinv[cells])
    else:
        n, npts, _ = ref_pts.shape
        dref = basis.gradients(ref_pts.reshape(-1, 2)).reshape(n, npts, -1, 2)
        G = np.einsum("cqib,cba->cqia", dref, tab.jinv[cells])
    if c.ndim == 3:
        return np.einsum("cai,cqib->cqab", c, G)
    return np.einsum("ci,cqib->cqb", c, G)


def divergence_at(x, dm, tab, block, cells, ref_pts) -> np.ndarray:
    G = gradients_at(x, dm, tab, block, cells, ref_pts)
    return G[..., 0, 0] + G[..., 1, 1]


def facet_values(x: np.ndarray, dm: DofMap, block: str, facets, s: np.ndarray) -> np.ndarray:
    """Facet unknown at parameters ``s`` along the stored facet direction;
    (n, ns) or (n, ns, 2)."""
    idx = dm.index[block][facets]
    if np.any(idx < 0):
        raise ValueError(f"block {block!r} is not defined on all requested facets")
    psi = SegmentBasis(dm.k).values(s)
    c = x[idx]
    if block.startswith("ubar"):
        c = c.reshape(len(facets), 2, -1)
        return np.einsum("fam,qm->fqa", c, psi)
    return np.einsum("fm,qm->fq", c, psi)


def domain_cells(mesh: Mesh, field: str) -> np.ndarray:
    """Cells on which a named physical field lives."""
    if field in ("us", "ps", "div_us"):
        return mesh.cells_of(STOKES)
    return mesh.cells_of(BIOT)
