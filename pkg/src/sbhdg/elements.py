"""Reference tables mapped onto a mesh: quadrature points, Jacobians, and
basis values on cells and on cell boundaries.

Vector fields use two copies of the scalar basis; local vector index
``I = a * dim + i`` is component ``a`` of scalar function ``i``. Facet
quadrature points are laid out in the facet's stored direction, so both
cells adjacent to a facet see the same points in the same order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fe_basis import CellBasis, segment_quadrature, triangle_quadrature
from .mesh import Mesh

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def vectorize(phi: np.ndarray) -> np.ndarray:
    """Scalar table (..., dim) -> vector table (..., 2*dim, 2)."""
    dim = phi.shape[-1]
    out = np.zeros(phi.shape[:-1] + (2 * dim, 2))
    out[..., :dim, 0] = phi
    out[..., dim:, 1] = phi
    return out


def vectorize_grad(dphi: np.ndarray) -> np.ndarray:
    """Scalar gradients (..., dim, 2) -> vector gradients (..., 2*dim, 2, 2),
    entry ``[..., I, a, b]`` is d/dx_b of component a of function I."""
    dim = dphi.shape[-2]
    out = np.zeros(dphi.shape[:-2] + (2 * dim, 2, 2))
    out[..., :dim, 0, :] = dphi
    out[..., dim:, 1, :] = dphi
    return out


def edge_reference_points(s: np.ndarray, edge: int, reverse: bool) -> np.ndarray:
    a = REF_VERTICES[(edge + 1) % 3]
    b = REF_VERTICES[(edge + 2) % 3]
    if reverse:
        a, b = b, a
    return a[None, :] + s[:, None] * (b - a)[None, :]


@dataclass(frozen=True, eq=False)
class ElementTables:
    k: int
    exactness: int
    # reference tables
    vol_points: np.ndarray      # (nqv, 2)
    vol_weights: np.ndarray     # (nqv,)
    phi: np.ndarray             # (nqv, nk)
    dphi_ref: np.ndarray        # (nqv, nk, 2)
    phiq: np.ndarray            # (nqv, nq)
    seg_points: np.ndarray      # (nqf,)
    seg_weights: np.ndarray     # (nqf,)
    psi: np.ndarray             # (nqf, k+1) facet basis
    edge_phi: np.ndarray        # (3, 2, nqf, nk)
    edge_dphi_ref: np.ndarray   # (3, 2, nqf, nk, 2)
    edge_phiq: np.ndarray       # (3, 2, nqf, nq)
    # geometry
    x0: np.ndarray              # (nc, 2)
    jac: np.ndarray             # (nc, 2, 2)
    det: np.ndarray             # (nc,)
    jinv: np.ndarray            # (nc, 2, 2)
    orient: np.ndarray          # (nc, 3)
    normal_out: np.ndarray      # (nc, 3, 2)
    edge_length: np.ndarray     # (nc, 3)
    h_cell: np.ndarray          # (nc,)

    @property
    def nk(self) -> int:
        return self.phi.shape[1]

    @property
    def nq(self) -> int:
        return self.phiq.shape[1]

    @property
    def nf(self) -> int:
        return self.psi.shape[1]

    def vol_physical_points(self, cells) -> np.ndarray:
        return self.x0[cells, None, :] + np.einsum("cab,qb->cqa", self.jac[cells], self.vol_points)

    def vol_weights_physical(self, cells) -> np.ndarray:
        return self.det[cells, None] * self.vol_weights[None, :]

    def grads(self, cells) -> np.ndarray:
        """(n, nqv, nk, 2) physical gradients of the P_k basis."""
        return np.einsum("qib,cba->cqia", self.dphi_ref, self.jinv[cells])

    def edge_tables(self, cells):
        """Basis values on the three edges of each cell, in facet order.

        Returns phi (n,3,nqf,nk), grads (n,3,nqf,nk,2), phiq (n,3,nqf,nq).
        """
        o = self.orient[cells]
        e = np.broadcast_to(np.arange(3), o.shape)
        phi = self.edge_phi[e, o]
        dref = self.edge_dphi_ref[e, o]
        grads = np.einsum("ceqib,cba->ceqia", dref, self.jinv[cells])
        return phi, grads, self.edge_phiq[e, o]

    def edge_weights(self, cells) -> np.ndarray:
        """(n, 3, nqf) physical facet quadrature weights."""
        return self.edge_length[cells][:, :, None] * self.seg_weights[None, None, :]

    def facet_points(self, mesh: Mesh, facets) -> np.ndarray:
        a = mesh.vertices[mesh.facets[facets, 0]]
        b = mesh.vertices[mesh.facets[facets, 1]]
        s = self.seg_points
        return a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]

    def to_reference(self, cells, x) -> np.ndarray:
        """Reference coordinates of physical points x (n, npts, 2) in cells."""
        return np.einsum("cab,cqb->cqa", self.jinv[cells], x - self.x0[cells, None, :])


def data_exactness(k: int) -> int:
    """Quadrature exactness for integrals of (non-polynomial) data."""
    return 2 * k + 4


def element_tables(mesh: Mesh, k: int, exactness: int | None = None) -> ElementTables:
    """Tables for degree k; quadrature exactness defaults to 2k + 2. Cached on the mesh."""
    if exactness is None:
        exactness = 2 * k + 2
    key = ("tables", k, exactness)
    if key in mesh.cache:
        return mesh.cache[key]
    basis = CellBasis(k)
    vel, pre, fac = basis.velocity, basis.pressure, basis.facet
    vq = triangle_quadrature(exactness)
    sq = segment_quadrature(exactness)

    edge_phi = np.empty((3, 2, len(sq.weights), vel.dim))
    edge_dphi = np.empty((3, 2, len(sq.weights), vel.dim, 2))
    edge_phiq = np.empty((3, 2, len(sq.weights), pre.dim))
    for e in range(3):
        for o in range(2):
            pts = edge_reference_points(sq.points, e, bool(o))
            edge_phi[e, o] = vel.values(pts)
            edge_dphi[e, o] = vel.gradients(pts)
            edge_phiq[e, o] = pre.values(pts)

    p = mesh.vertices[mesh.cells]
    x0 = p[:, 0]
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    jinv = np.empty_like(jac)
    jinv[:, 0, 0] = jac[:, 1, 1] / det
    jinv[:, 1, 1] = jac[:, 0, 0] / det
    jinv[:, 0, 1] = -jac[:, 0, 1] / det
    jinv[:, 1, 0] = -jac[:, 1, 0] / det

    orient = mesh.cell_orientation
    sign = np.where(orient == 0, 1.0, -1.0)
    normal_out = mesh.facet_normals[mesh.cell_facets] * sign[..., None]
    edge_length = mesh.facet_lengths[mesh.cell_facets]

    tables = ElementTables(
        k=k, exactness=exactness,
        vol_points=vq.points, vol_weights=vq.weights,
        phi=vel.values(vq.points), dphi_ref=vel.gradients(vq.points), phiq=pre.values(vq.points),
        seg_points=sq.points, seg_weights=sq.weights, psi=fac.values(sq.points),
        edge_phi=edge_phi, edge_dphi_ref=edge_dphi, edge_phiq=edge_phiq,
        x0=x0, jac=jac, det=det, jinv=jinv, orient=orient,
        normal_out=normal_out, edge_length=edge_length, h_cell=mesh.cell_diameters,
    )
    mesh.cache[key] = tables
    return tables
