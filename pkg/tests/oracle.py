"""Brute-force reference evaluation of the bilinear forms.

Geometry, normals, facet parametrization and quadrature are rebuilt here
from the raw mesh arrays, cell by cell and facet by facet, so the only
shared ingredient with the library is the definition of the bases.
Every function is vectorized over a batch of coefficient vectors
(columns of ``X`` and ``Y``).
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial import legendre

from sbhdg.dofs import build_dofmap
from sbhdg.fe_basis import SegmentBasis, TriangleBasis
from sbhdg.mesh import BIOT, STOKES, FacetTag


def gauss_segment(n):
    x, w = legendre.leggauss(n)
    return 0.5 * (x + 1), 0.5 * w


def gauss_triangle(n):
    """Collapsed Gauss-Legendre x Gauss-Legendre rule (exact to 2n-2)."""
    s, ws = gauss_segment(n)
    U, V = np.meshgrid(s, s, indexing="ij")
    pts = np.column_stack([U.ravel(), (V * (1 - U)).ravel()])
    w = (np.outer(ws, ws) * (1 - U)).ravel()
    return pts, w


class Oracle:
    def __init__(self, mesh, params):
        self.mesh, self.p = mesh, params
        self.k = params.k
        self.dm = build_dofmap(mesh, params.k)
        n = 2 * self.k + 2
        self.tri = gauss_triangle(n)
        self.seg = gauss_segment(n)
        self.vel = TriangleBasis(self.k)
        self.pre = TriangleBasis(self.k - 1)
        self.fac = SegmentBasis(self.k)
        self.facet_of = {tuple(sorted(f)): i for i, f in enumerate(mesh.facets.tolist())}

    # geometry ----------------------------------------------------------
    def cell_map(self, c):
        v = self.mesh.vertices[self.mesh.cells[c]]
        J = np.column_stack([v[1] - v[0], v[2] - v[0]])
        return v, J

    def to_ref(self, c, X):
        v, J = self.cell_map(c)
        return np.linalg.solve(J, (X - v[0]).T).T

    def cell_edges(self, c):
        """(facet, a, b, outward normal) for the three edges of cell c."""
        v = self.mesh.vertices[self.mesh.cells[c]]
        ids = self.mesh.cells[c]
        centroid = v.mean(axis=0)
        out = []
        for i, j in ((0, 1), (1, 2), (2, 0)):
            a, b = v[i], v[j]
            t = (b - a) / np.linalg.norm(b - a)
            n = np.array([t[1], -t[0]])
            if np.dot(n, 0.5 * (a + b) - centroid) < 0:
                n = -n
            out.append((self.facet_of[tuple(sorted((ids[i], ids[j])))], a, b, n))
        return out

    def diameter(self, c):
        v = self.mesh.vertices[self.mesh.cells[c]]
        return max(np.linalg.norm(v[i] - v[j]) for i, j in ((0, 1), (1, 2), (2, 0)))

    # field evaluation ----------------------------------------------------
    def vec(self, Xc, block, c, pts):
        """Vector field values (npts, 2, batch) at physical points."""
        idx = self.dm.index[block][c]
        C = Xc[idx].reshape(2, -1, Xc.shape[1])
        phi = self.vel.values(self.to_ref(c, pts))
        return np.einsum("qi,aib->qab", phi, C)

    def vec_grad(self, Xc, block, c, pts):
        """(npts, 2, 2, batch) with [q, a, d] = d_d u_a."""
        idx = self.dm.index[block][c]
        C = Xc[idx].reshape(2, -1, Xc.shape[1])
        _, J = self.cell_map(c)
        Ji = np.linalg.inv(J)
        G = np.einsum("qir,rd->qid", self.vel.gradients(self.to_ref(c, pts)), Ji)
        return np.einsum("qid,aib->qadb", G, C)

    def scal(self, Xc, block, c, pts):
        idx = self.dm.index[block][c]
        phi = self.pre.values(self.to_ref(c, pts))
        return phi @ Xc[idx]

    def facet_field(self, Xc, block, f, pts, vector):
        a, b = self.mesh.vertices[self.mesh.facets[f]]
        s = np.linalg.norm(pts - a, axis=1) / np.linalg.norm(b - a)
        psi = self.fac.values(s)
        idx = self.dm.index[block][f]
        if vector:
            C = Xc[idx].reshape(2, -1, Xc.shape[1])
            return np.einsum("qm,amb->qab", psi, C)
        return psi @ Xc[idx]

    def vol_rule(self, c):
        v, J = self.cell_map(c)
        pts, w = self.tri
        return v[0] + pts @ J.T, w * abs(np.linalg.det(J))

    def edge_rule(self, a, b):
        s, w = self.seg
        return a + s[:, None] * (b - a), w * np.linalg.norm(b - a)

    # forms ---------------------------------------------------------------
    def ah(self, dom, X, Y):
        mu = self.p.mu_s if dom == STOKES else self.p.mu_b
        beta = self.p.beta_s if dom == STOKES else self.p.beta_b
        ubar = "ubar_s" if dom == STOKES else "ubar_b"
        total = np.zeros(X.shape[1])
        for c in self.mesh.cells_of(dom):
            pts, w = self.vol_rule(c)
            eu = self.vec_grad(X, "u", c, pts)
            ev = self.vec_grad(Y, "u", c, pts)
            eu = 0.5 * (eu + eu.transpose(0, 2, 1, 3))
            ev = 0.5 * (ev + ev.transpose(0, 2, 1, 3))
            total += 2 * mu * np.einsum("q,qadb,qadb->b", w, eu, ev)
            pen = 2 * beta * mu / self.diameter(c)
            for f, a, b, n in self.cell_edges(c):
                pts, w = self.edge_rule(a, b)
                ju = self.vec(X, "u", c, pts) - self.facet_field(X, ubar, f, pts, True)
                jv = self.vec(Y, "u", c, pts) - self.facet_field(Y, ubar, f, pts, True)
                gu = self.vec_grad(X, "u", c, pts)
                gv = self.vec_grad(Y, "u", c, pts)
                tu = mu * (np.einsum("qadb,d->qab", gu, n) + np.einsum("qdab,d->qab", gu, n))
                tv = mu * (np.einsum("qadb,d->qab", gv, n) + np.einsum("qdab,d->qab", gv, n))
                total += np.einsum("q,qab,qab->b", w, pen * ju - tu, jv)
                total -= np.einsum("q,qab,qab->b", w, tv, ju)
        return total

    def bh(self, dom, X, Y):
        ubar = "ubar_s" if dom == STOKES else "ubar_b"
        pbar = "pbar_s" if dom == STOKES else "pbar_b"
        total = np.zeros(X.shape[1])
        for c in self.mesh.cells_of(dom):
            pts, w = self.vol_rule(c)
            g = self.vec_grad(X, "u", c, pts)
            div = g[:, 0, 0] + g[:, 1, 1]
            total -= np.einsum("q,qb,qb->b", w, self.scal(Y, "p", c, pts), div)
            for f, a, b, n in self.cell_edges(c):
                pts, w = self.edge_rule(a, b)
                jn = np.einsum("qab,a->qb", self.vec(X, "u", c, pts)
                               - self.facet_field(X, ubar, f, pts, True), n)
                total += np.einsum("q,qb,qb->b", w, self.facet_field(Y, pbar, f, pts, False), jn)
        return total

    def b_darcy(self, X, Y):
        total = np.zeros(X.shape[1])
        for c in self.mesh.cells_of(BIOT):
            pts, w = self.vol_rule(c)
            g = self.vec_grad(X, "z", c, pts)
            total -= np.einsum("q,qb,qb->b", w, self.scal(Y, "pp", c, pts), g[:, 0, 0] + g[:, 1, 1])
            for f, a, b, n in self.cell_edges(c):
                pts, w = self.edge_rule(a, b)
                zn = np.einsum("qab,a->qb", self.vec(X, "z", c, pts), n)
                total += np.einsum("q,qb,qb->b", w, self.facet_field(Y, "ppbar", f, pts, False), zn)
        return total

    def _mass(self, X, Y, test, fn):
        total = np.zeros(X.shape[1])
        for c in self.mesh.cells_of(BIOT):
            pts, w = self.vol_rule(c)
            total += np.einsum("q,qb,qb->b", w, fn(X, c, pts), self.scal(Y, test, c, pts))
        return total

    def ch(self, X, Y):
        p = self.p
        return self._mass(X, Y, "p", lambda X, c, q: p.inv_lambda * (
            p.alpha * self.scal(X, "pp", c, q) - self.scal(X, "p", c, q)))

    def ch_pore(self, X, Y):
        p = self.p
        return self._mass(X, Y, "pp", lambda X, c, q: p.alpha * p.inv_lambda * (
            p.alpha * self.scal(X, "pp", c, q) - self.scal(X, "p", c, q)))

    def storage(self, X, Y):
        return self._mass(X, Y, "pp", lambda X, c, q: self.p.c0 * self.scal(X, "pp", c, q))

    def permeability(self, X, Y):
        total = np.zeros(X.shape[1])
        for c in self.mesh.cells_of(BIOT):
            pts, w = self.vol_rule(c)
            total += np.einsum("q,qab,qab->b", w, self.vec(X, "z", c, pts),
                               self.vec(Y, "z", c, pts)) / self.p.kappa
        return total

    def _interface(self):
        """(facet, a, b, n from Stokes into Biot) for every interface facet."""
        for f in self.mesh.facets_with(FacetTag.INTERFACE):
            cs = [c for c in self.mesh.facet_cells[f] if c >= 0]
            cs_ = [c for c in cs if self.mesh.cell_domain[c] == STOKES][0]
            for g, a, b, n in self.cell_edges(cs_):
                if g == f:
                    yield f, a, b, n

    def aI(self, X, Y):
        total = np.zeros(X.shape[1])
        for f, a, b, n in self._interface():
            t = np.array([-n[1], n[0]])
            pts, w = self.edge_rule(a, b)
            du = self.facet_field(X, "ubar_s", f, pts, True) - self.facet_field(X, "ubar_b", f, pts, True)
            dv = self.facet_field(Y, "ubar_s", f, pts, True) - self.facet_field(Y, "ubar_b", f, pts, True)
            total += self.p.bjs * np.einsum("q,qb,qb->b", w, np.einsum("qab,a->qb", du, t),
                                            np.einsum("qab,a->qb", dv, t))
        return total

    def bI(self, X, Y):
        total = np.zeros(X.shape[1])
        for f, a, b, n in self._interface():
            pts, w = self.edge_rule(a, b)
            dv = self.facet_field(Y, "ubar_s", f, pts, True) - self.facet_field(Y, "ubar_b", f, pts, True)
            total += np.einsum("q,qb,qb->b", w, self.facet_field(X, "ppbar", f, pts, False),
                               np.einsum("qab,a->qb", dv, n))
        return total

    def form(self, name, X, Y):
        return {
            "ah_s": lambda: self.ah(STOKES, X, Y),
            "ah_b": lambda: self.ah(BIOT, X, Y),
            "bh_s": lambda: self.bh(STOKES, X, Y),
            "bh_b": lambda: self.bh(BIOT, X, Y),
            "b_darcy": lambda: self.b_darcy(X, Y),
            "ch": lambda: self.ch(X, Y),
            "ch_pore": lambda: self.ch_pore(X, Y),
            "storage": lambda: self.storage(X, Y),
            "permeability": lambda: self.permeability(X, Y),
            "aI": lambda: self.aI(X, Y),
            "bI": lambda: self.bI(X, Y),
        }[name]()
