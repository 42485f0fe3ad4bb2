"""Small utilities shared by the test modules."""

import numpy as np

from sbhdg.dofs import build_dofmap, project_facet
from sbhdg.elements import element_tables


def cell_projection(mesh, k, block, cells, fn):
    """Cellwise L2 projection coefficients of ``fn(x)`` onto the ``block``
    space (orthonormal reference basis, so moments over the Jacobian)."""
    tab = element_tables(mesh, k, 2 * k + 8)
    x = tab.vol_physical_points(cells)
    w = tab.vol_weights_physical(cells)
    vals = np.asarray(fn(x.reshape(-1, 2))).reshape(len(cells), x.shape[1], -1)
    phi = tab.phi if block in ("u", "z") else tab.phiq
    c = np.einsum("cq,cqa,qi->cai", w, vals, phi) / tab.det[cells, None, None]
    return c.reshape(len(cells), -1)


def fill(mesh, k, fields, x=None):
    """Coefficient vector with each named block set from a callable.

    ``fields`` maps block name to ``fn(points) -> values``; cell blocks are
    projected on every cell carrying them, facet blocks on every facet.
    """
    dm = build_dofmap(mesh, k)
    x = np.zeros(dm.n) if x is None else x
    for block, fn in fields.items():
        idx = dm.index[block]
        ents = np.flatnonzero(idx[:, 0] >= 0)
        if block in ("u", "z", "p", "pp"):
            x[idx[ents]] = cell_projection(mesh, k, block, ents, fn)
        else:
            x[idx[ents]] = project_facet(mesh, k, ents, lambda p, t: fn(p), 0.0,
                                         block.startswith("ubar"))
    return x
