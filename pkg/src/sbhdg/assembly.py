"""Assembly of the hybridized Stokes-Biot system.

Each bilinear form is assembled into a global sparse matrix acting on full
coefficient vectors (rows are test functions, columns trial functions). The
monolithic operator at a time level is ``K + w * Mt`` where ``Mt`` collects
every term carrying a discrete time derivative and ``w`` is the leading
coefficient of the time stencil.

Cells are processed in chunks of fixed size; chunk results are summed in
chunk order, so the output does not depend on the number of worker threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .data import ProblemData
from .dofs import DofMap, apply_essential_data, build_dofmap
from .elements import ElementTables, data_exactness, element_tables, vectorize, vectorize_grad
from .mesh import BIOT, STOKES, FacetTag, Mesh
from .parameters import InvalidParameterError, ParameterSet

CHUNK = 1024
MODES = ("steady", "BE", "BDF2", "equilibrium")


# --------------------------------------------------------------------------
# chunked sparse accumulation

def _chunks(items: np.ndarray, size: int = CHUNK) -> list[np.ndarray]:
    return [items[i:i + size] for i in range(0, len(items), size)]


def _to_csr(n: int, triplets) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for r, c, v in triplets:
        rr = np.broadcast_to(r[:, :, None], v.shape)
        cc = np.broadcast_to(c[:, None, :], v.shape)
        rows.append(rr.ravel())
        cols.append(cc.ravel())
        vals.append(v.ravel())
    if not rows:
        return sp.csr_matrix((n, n))
    m = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    return m.tocsr()


def _accumulate(n: int, items: np.ndarray, kernel, workers: int = 1) -> sp.csr_matrix:
    chunks = _chunks(items)

    def run(chunk):
        return _to_csr(n, kernel(chunk))

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    total = sp.csr_matrix((n, n))
    for part in parts:
        total = total + part
    total.sum_duplicates()
    return total


# --------------------------------------------------------------------------
# local geometric quantities

@dataclass
class _CellChunk:
    cells: np.ndarray
    wq: np.ndarray      # (n, nqv)
    V: np.ndarray       # (nqv, 2nk, 2) vector values
    GV: np.ndarray      # (n, nqv, 2nk, 2, 2)
    phiq: np.ndarray    # (nqv, nq)
    ew: np.ndarray      # (n, 3, nqf)
    EV: np.ndarray      # (n, 3, nqf, 2nk, 2)
    EGV: np.ndarray     # (n, 3, nqf, 2nk, 2, 2)
    EQ: np.ndarray      # (n, 3, nqf, nq)
    nrm: np.ndarray     # (n, 3, 2) outward
    PV: np.ndarray      # (nqf, 2nf, 2)
    psi: np.ndarray     # (nqf, nf)
    h: np.ndarray       # (n,)

    def traction(self, mu: float) -> np.ndarray:
        """2 mu eps(phi_I) n on the edges, (n, 3, nqf, 2nk, 2)."""
        G = self.EGV
        n = self.nrm
        return mu * (np.einsum("ceqiab,ceb->ceqia", G, n) + np.einsum("ceqiba,ceb->ceqia", G, n))


def _cell_chunk(tab: ElementTables, cells: np.ndarray) -> _CellChunk:
    ephi, egrad, ephiq = tab.edge_tables(cells)
    return _CellChunk(
        cells=cells,
        wq=tab.vol_weights_physical(cells),
        V=vectorize(tab.phi),
        GV=vectorize_grad(tab.grads(cells)),
        phiq=tab.phiq,
        ew=tab.edge_weights(cells),
        EV=vectorize(ephi),
        EGV=vectorize_grad(egrad),
        EQ=ephiq,
        nrm=tab.normal_out[cells],
        PV=vectorize(tab.psi),
        psi=tab.psi,
        h=tab.h_cell[cells],
    )


def _sym(G):
    return 0.5 * (G + np.swapaxes(G, -1, -2))


# --------------------------------------------------------------------------
# forms

def _domain_ops(mesh: Mesh, params: ParameterSet, domain: int):
    dm = build_dofmap(mesh, params.k)
    tab = element_tables(mesh, params.k)
    if domain == STOKES:
        mu, beta, ubar, pbar = params.mu_s, params.beta_s, "ubar_s", "pbar_s"
    else:
        mu, beta, ubar, pbar = params.mu_b, params.beta_b, "ubar_b", "pbar_b"
    return dm, tab, mu, beta, ubar, pbar


def assemble_ah(mesh: Mesh, params: ParameterSet, domain: int, workers: int = 1) -> sp.csr_matrix:
    """Symmetric interior-penalty elasticity form on one subdomain, acting on
    the cell velocity/displacement and the matching facet trace."""
    dm, tab, mu, beta, ubar, _ = _domain_ops(mesh, params, domain)

    def kernel(cells):
        c = _cell_chunk(tab, cells)
        eps = _sym(c.GV)
        vol = 2.0 * mu * np.einsum("cq,cqiab,cqjab->cij", c.wq, eps, eps)
        T = c.traction(mu)
        pen = 2.0 * beta * mu / c.h
        W = c.ew
        VV = np.einsum("ceq,ceqia,ceqja->cij", W, c.EV, c.EV)
        TV = np.einsum("ceq,ceqja,ceqia->cij", W, T, c.EV)  # <T_J, V_I>
        Auu = vol + pen[:, None, None] * VV - TV - np.swapaxes(TV, 1, 2)
        VP = np.einsum("ceq,ceqia,qma->ceim", W, c.EV, c.PV)
        TP = np.einsum("ceq,ceqia,qma->ceim", W, T, c.PV)
        Auf = -pen[:, None, None, None] * VP + TP
        PP = np.einsum("q,qma,qna->mn", tab.seg_weights, c.PV, c.PV)
        Aff = (pen[:, None] * tab.edge_length[cells])[:, :, None, None] * PP
        iu = dm.index["u"][cells]
        iubar = dm.index[ubar][mesh.cell_facets[cells]]
        out = [(iu, iu, Auu)]
        for e in range(3):
            out.append((iu, iubar[:, e], Auf[:, e]))
            out.append((iubar[:, e], iu, np.swapaxes(Auf[:, e], 1, 2)))
            out.append((iubar[:, e], iubar[:, e], Aff[:, e]))
        return out

    return _accumulate(dm.n, mesh.cells_of(domain), kernel, workers)


def assemble_bh(mesh: Mesh, params: ParameterSet, domain: int, workers: int = 1) -> sp.csr_matrix:
    """Velocity-pressure coupling ``-(q, div v) + <qbar, (v - vbar) n>``;
    rows are the pressure pair, columns the velocity pair."""
    dm, tab, _, _, ubar, pbar = _domain_ops(mesh, params, domain)

    def kernel(cells):
        c = _cell_chunk(tab, cells)
        div = np.einsum("cqiaa->cqi", c.GV)
        Bqu = -np.einsum("cq,qm,cqi->cmi", c.wq, c.phiq, div)
        Vn = np.einsum("ceqia,cea->ceqi", c.EV, c.nrm)
        Pn = np.einsum("qia,cea->ceqi", c.PV, c.nrm)
        Bfu = np.einsum("ceq,qm,ceqi->cemi", c.ew, c.psi, Vn)
        Bff = -np.einsum("ceq,qm,ceqi->cemi", c.ew, c.psi, Pn)
        ip = dm.index["p"][cells]
        iu = dm.index["u"][cells]
        fac = mesh.cell_facets[cells]
        ipb = dm.index[pbar][fac]
        iub = dm.index[ubar][fac]
        out = [(ip, iu, Bqu)]
        for e in range(3):
            out.append((ipb[:, e], iu, Bfu[:, e]))
            out.append((ipb[:, e], iub[:, e], Bff[:, e]))
        return out

    return _accumulate(dm.n, mesh.cells_of(domain), kernel, workers)


def assemble_darcy_coupling(mesh: Mesh, params: ParameterSet, workers: int = 1) -> sp.csr_matrix:
    """The Biot coupling form with the pore pressure pair as test and the flux
    ``(z, 0)`` as trial: ``-(qp, div z) + <qbar_p, z n>``."""
    dm = build_dofmap(mesh, params.k)
    tab = element_tables(mesh, params.k)

    def kernel(cells):
        c = _cell_chunk(tab, cells)
        div = np.einsum("cqiaa->cqi", c.GV)
        Bqz = -np.einsum("cq,qm,cqi->cmi", c.wq, c.phiq, div)
        Vn = np.einsum("ceqia,cea->ceqi", c.EV, c.nrm)
        Bfz = np.einsum("ceq,qm,ceqi->cemi", c.ew, c.psi, Vn)
        ipp = dm.index["pp"][cells]
        iz = dm.index["z"][cells]
        ippb = dm.index["ppbar"][mesh.cell_facets[cells]]
        out = [(ipp, iz, Bqz)]
        for e in range(3):
            out.append((ippb[:, e], iz, Bfz[:, e]))
        return out

    return _accumulate(dm.n, mesh.cells_of(BIOT), kernel, workers)


def _cell_mass(mesh: Mesh, params: ParameterSet, rows: str, cols: str, scale: float,
               vector: bool, workers: int = 1) -> sp.csr_matrix:
    dm = build_dofmap(mesh, params.k)
    tab = element_tables(mesh, params.k)

    def kernel(cells):
        wq = tab.vol_weights_physical(cells)
        if vector:
            V = vectorize(tab.phi)
            M = np.einsum("cq,qia,qja->cij", wq, V, V)
        else:
            M = np.einsum("cq,qi,qj->cij", wq, tab.phiq, tab.phiq)
        return [(dm.index[rows][cells], dm.index[cols][cells], scale * M)]

    return _accumulate(dm.n, mesh.cells_of(BIOT), kernel, workers)


def assemble_ch(mesh: Mesh, params: ParameterSet, test: str = "p", workers: int = 1) -> sp.csr_matrix:
    """``(lambda^-1 (alpha pp - pb), q)`` on the Biot cells with the test
    function taken from block ``test`` (``p`` or ``pp``)."""
    il = params.inv_lambda
    a = _cell_mass(mesh, params, test, "pp", params.alpha * il, False, workers)
    b = _cell_mass(mesh, params, test, "p", -il, False, workers)
    return (a + b).tocsr()


def assemble_storage(mesh: Mesh, params: ParameterSet, workers: int = 1) -> sp.csr_matrix:
    """``(c0 pp, qp)``."""
    return _cell_mass(mesh, params, "pp", "pp", params.c0, False, workers)


def assemble_permeability(mesh: Mesh, params: ParameterSet, workers: int = 1) -> sp.csr_matrix:
    """``(kappa^-1 z, w)``."""
    return _cell_mass(mesh, params, "z", "z", 1.0 / params.kappa, True, workers)


@dataclass
class _InterfaceGeometry:
    facets: np.ndarray
    x: np.ndarray       # (nF, nqf, 2)
    w: np.ndarray       # (nF, nqf)
    n: np.ndarray       # (nF, 2) Stokes -> Biot
    t: np.ndarray       # (nF, 2)
    PVn: np.ndarray     # (nF, nqf, 2nf)
    PVt: np.ndarray     # (nF, nqf, 2nf)
    PV: np.ndarray      # (nqf, 2nf, 2)
    psi: np.ndarray     # (nqf, nf)


def _facet_geometry(mesh: Mesh, tab: ElementTables, facets: np.ndarray) -> _InterfaceGeometry:
    n = mesh.facet_normals[facets]
    t = np.column_stack([-n[:, 1], n[:, 0]])
    PV = vectorize(tab.psi)
    return _InterfaceGeometry(
        facets=facets,
        x=tab.facet_points(mesh, facets),
        w=mesh.facet_lengths[facets][:, None] * tab.seg_weights[None, :],
        n=n, t=t,
        PVn=np.einsum("qia,fa->fqi", PV, n),
        PVt=np.einsum("qia,fa->fqi", PV, t),
        PV=PV, psi=tab.psi,
    )


def assemble_aI(mesh: Mesh, params: ParameterSet) -> sp.csr_matrix:
    """BJS slip form ``<c (us - ub)^t, (vs - vb)^t>`` on the facet traces."""
    dm = build_dofmap(mesh, params.k)
    tab = element_tables(mesh, params.k)
    f = mesh.facets_with(FacetTag.INTERFACE)
    g = _facet_geometry(mesh, tab, f)
    G = params.bjs * np.einsum("fq,fqi,fqj->fij", g.w, g.PVt, g.PVt)
    s = dm.index["ubar_s"][f]
    b = dm.index["ubar_b"][f]
    return _to_csr(dm.n, [(s, s, G), (s, b, -G), (b, s, -G), (b, b, G)])


def assemble_bI(mesh: Mesh, params: ParameterSet) -> sp.csr_matrix:
    """``<qbar_p, (vs - vb) n>``; rows are the facet traces, columns the
    pore-pressure trace."""
    dm = build_dofmap(mesh, params.k)
    tab = element_tables(mesh, params.k)
    f = mesh.facets_with(FacetTag.INTERFACE)
    g = _facet_geometry(mesh, tab, f)
    H = np.einsum("fq,fqi,qm->fim", g.w, g.PVn, g.psi)
    s = dm.index["ubar_s"][f]
    b = dm.index["ubar_b"][f]
    p = dm.index["ppbar"][f]
    return _to_csr(dm.n, [(s, p, H), (b, p, -H)])


FORMS = ("ah_s", "ah_b", "bh_s", "bh_b", "b_darcy", "ch", "ch_pore", "storage",
         "permeability", "aI", "bI")


def assemble_forms(mesh: Mesh, params: ParameterSet, workers: int = 1) -> dict:
    """All bilinear forms as global matrices on full coefficient vectors."""
    forms = {
        "ah_s": assemble_ah(mesh, params, STOKES, workers),
        "ah_b": assemble_ah(mesh, params, BIOT, workers),
        "bh_s": assemble_bh(mesh, params, STOKES, workers),
        "bh_b": assemble_bh(mesh, params, BIOT, workers),
        "b_darcy": assemble_darcy_coupling(mesh, params, workers),
        "ch": assemble_ch(mesh, params, "p", workers),
        "ch_pore": params.alpha * assemble_ch(mesh, params, "pp", workers),
        "storage": assemble_storage(mesh, params, workers),
        "permeability": assemble_permeability(mesh, params, workers),
        "aI": assemble_aI(mesh, params),
        "bI": assemble_bI(mesh, params),
    }
    return forms


def _column_selector(dm: DofMap, block: str) -> sp.dia_matrix:
    d = np.zeros(dm.n)
    d[dm.block(block)] = 1.0
    return sp.diags(d)


def assemble_operator(mesh: Mesh, params: ParameterSet, workers: int = 1):
    """Return ``(K, Mt)``: the stationary part and the part multiplying the
    discrete time derivative."""
    dm = build_dofmap(mesh, params.k)
    F = assemble_forms(mesh, params, workers)
    sel_s = _column_selector(dm, "ubar_s")
    sel_b = _column_selector(dm, "ubar_b")
    B = F["bh_s"] + F["bh_b"]
    K = (F["ah_s"] + F["ah_b"] + B + B.T + F["ch"]
         + F["aI"] @ sel_s + F["bI"]
         + F["permeability"] + F["b_darcy"].T
         - F["b_darcy"] - F["bI"].T @ sel_s)
    Mt = F["aI"] @ sel_b + F["storage"] + F["ch_pore"] - F["bI"].T @ sel_b
    K = K.tocsr()
    Mt = Mt.tocsr()
    K.eliminate_zeros()
    Mt.eliminate_zeros()
    return K, Mt


# --------------------------------------------------------------------------
# right-hand side

def _has(mesh: Mesh, flag) -> np.ndarray:
    return mesh.facets_with(flag)


def assemble_rhs(mesh: Mesh, params: ParameterSet, data: ProblemData, t: float) -> np.ndarray:
    """Load vector for data evaluated at time ``t``; constrained entries are
    left at zero (their values enter through elimination)."""
    dm = build_dofmap(mesh, params.k)
    tab = element_tables(mesh, params.k, data_exactness(params.k))
    F = np.zeros(dm.n)
    V = vectorize(tab.phi)
    for dom, name in ((STOKES, "f_s"), (BIOT, "f_b")):
        cells = mesh.cells_of(dom)
        if len(cells) == 0:
            continue
        x = tab.vol_physical_points(cells)
        f = np.asarray(data.require(name)(x.reshape(-1, 2), t)).reshape(len(cells), -1, 2)
        wq = tab.vol_weights_physical(cells)
        np.add.at(F, dm.index["u"][cells], np.einsum("cq,cqa,qia->ci", wq, f, V))
    cells = mesh.cells_of(BIOT)
    if len(cells):
        x = tab.vol_physical_points(cells)
        g = np.asarray(data.require("g_b")(x.reshape(-1, 2), t)).reshape(len(cells), -1)
        wq = tab.vol_weights_physical(cells)
        np.add.at(F, dm.index["pp"][cells], np.einsum("cq,cq,qi->ci", wq, g, tab.phiq))

    def facet_data(name, facets, vector):
        g = _facet_geometry(mesh, tab, facets)
        nq = len(tab.seg_weights)
        nn = np.repeat(g.n, nq, axis=0)
        val = np.asarray(data.require(name)(g.x.reshape(-1, 2), nn, t))
        shape = (len(facets), nq, 2) if vector else (len(facets), nq)
        return g, val.reshape(shape)

    for flag, name, block in ((FacetTag.NEUMANN_S, "S_s", "ubar_s"),
                              (FacetTag.NEUMANN_B, "S_b", "ubar_b")):
        f = _has(mesh, flag)
        if len(f):
            g, S = facet_data(name, f, True)
            np.add.at(F, dm.index[block][f], np.einsum("fq,fqa,qia->fi", g.w, S, g.PV))
    f = _has(mesh, FacetTag.FLUX_B)
    if len(f):
        g, Z = facet_data("Z", f, False)
        np.add.at(F, dm.index["ppbar"][f], -np.einsum("fq,fq,qm->fm", g.w, Z, g.psi))
    f = _has(mesh, FacetTag.INTERFACE)
    if len(f):
        g, Mp = facet_data("M_p", f, False)
        _, Me = facet_data("M_e", f, True)
        _, Ms = facet_data("M_s", f, True)
        _, Mu = facet_data("M_u", f, False)
        Met = np.einsum("fqa,fa->fq", Me, g.t)
        jump = -np.einsum("fq,fq,fqi->fi", g.w, Mp, g.PVn) - np.einsum("fq,fq,fqi->fi", g.w, Met, g.PVt)
        np.add.at(F, dm.index["ubar_s"][f], jump)
        np.add.at(F, dm.index["ubar_b"][f], -jump + np.einsum("fq,fqa,qia->fi", g.w, Ms, g.PV))
        np.add.at(F, dm.index["ppbar"][f], -np.einsum("fq,fq,qm->fm", g.w, Mu, g.psi))
    F[dm.constrained] = 0.0
    return F


# --------------------------------------------------------------------------
# time levels

def stencil(mode: str, params: ParameterSet) -> tuple[float, tuple[float, ...]]:
    """Leading weight ``w`` and history coefficients ``c`` of the discrete
    time derivative ``w x^{n+1} + sum_i c_i x^{n-i}``."""
    if mode == "steady":
        if params.tau is None:
            raise InvalidParameterError("steady mode needs the regularization weight tau")
        return params.tau, ()
    if mode == "equilibrium":
        return 0.0, ()
    if params.dt is None:
        raise InvalidParameterError(f"{mode} mode needs a time step dt")
    dt = params.dt
    if mode == "BE":
        return 1.0 / dt, (-1.0 / dt,)
    if mode == "BDF2":
        return 1.5 / dt, (-2.0 / dt, 0.5 / dt)
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


@dataclass(eq=False)
class AssembledSystem:
    """Linear system on the free unknowns plus what is needed to rebuild the
    full coefficient vector."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    lift: np.ndarray          # full vector holding the essential values
    dofmap: DofMap
    weight: float
    mode: str
    t: float

    def expand(self, x_free: np.ndarray) -> np.ndarray:
        x = self.lift.copy()
        x[self.dofmap.free] = x_free
        return x


def operator_for(mesh: Mesh, params: ParameterSet, mode: str, workers: int = 1):
    """Cached ``(K, Mt, A_ff, A_fc)`` for a mode; ``A = K + w Mt``."""
    w, _ = stencil(mode, params)
    key = ("operator", params, w)
    if key in mesh.cache:
        return mesh.cache[key]
    okey = ("KMt", params)
    if okey not in mesh.cache:
        mesh.cache[okey] = assemble_operator(mesh, params, workers)
    K, Mt = mesh.cache[okey]
    dm = build_dofmap(mesh, params.k)
    A = (K + w * Mt).tocsr() if w else K
    free = dm.free
    cons = np.flatnonzero(dm.constrained)
    Af = A[free]
    out = (K, Mt, Af[:, free].tocsr(), Af[:, cons].tocsr())
    mesh.cache[key] = out
    return out


def assemble_system(mesh: Mesh, params: ParameterSet, data: ProblemData, t: float,
                    mode: str = "steady", history=(), workers: int = 1) -> AssembledSystem:
    """Monolithic system at time ``t`` with essential unknowns eliminated.

    ``history`` lists previous full states, most recent first; BE needs one,
    BDF2 two.
    """
    w, coeffs = stencil(mode, params)
    if len(history) < len(coeffs):
        raise ValueError(f"{mode} needs {len(coeffs)} previous states, got {len(history)}")
    K, Mt, Aff, Afc = operator_for(mesh, params, mode, workers)
    dm = build_dofmap(mesh, params.k)
    F = assemble_rhs(mesh, params, data, t)
    if coeffs:
        hist = sum(c * x for c, x in zip(coeffs, history))
        F = F - Mt @ hist
    lift = apply_essential_data(dm, mesh, data, t)
    cons = np.flatnonzero(dm.constrained)
    b = F[dm.free] - Afc @ lift[cons]
    return AssembledSystem(Aff, b, lift, dm, w, mode, t)
