"""Direct solution of the monolithic system.

The default strategy equilibrates rows and columns, eliminates the
cell-local unknowns (their block is block diagonal) and factors the
remaining facet system with a sparse LU. The monolithic matrix remains the
object being solved: the residual is measured on it and iterative
refinement is applied against it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

PIVOT_TOL = 1e-14
RESIDUAL_TOL = 1e-10


class SingularSystemError(RuntimeError):
    """The factorization met a pivot below the tolerance."""


class InaccurateSolveError(RuntimeError):
    """The relative residual stayed above the tolerance after refinement."""


def equilibrate(A: sp.csr_matrix, iterations: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Ruiz scaling: returns ``r, c`` with ``diag(r) A diag(c)`` having
    row and column max-norms close to one."""
    n, m = A.shape
    r = np.ones(n)
    c = np.ones(m)
    B = abs(A).tocsr()
    for _ in range(iterations):
        S = sp.diags(r) @ B @ sp.diags(c)
        rmax = S.max(axis=1).toarray().ravel()
        cmax = S.max(axis=0).toarray().ravel()
        rmax[rmax == 0] = 1.0
        cmax[cmax == 0] = 1.0
        r /= np.sqrt(rmax)
        c /= np.sqrt(cmax)
    return r, c


def _block_diagonal_blocks(A: sp.csr_matrix, sizes: list[tuple[int, int]]) -> list[np.ndarray]:
    """Dense diagonal blocks of a block-diagonal matrix; ``sizes`` lists
    ``(count, block_size)`` runs in order."""
    coo = A.tocoo()
    out = []
    start = 0
    for count, L in sizes:
        stop = start + count * L
        sel = (coo.row >= start) & (coo.row < stop)
        r = coo.row[sel] - start
        c = coo.col[sel] - start
        if np.any(r // L != c // L):
            raise ValueError("cell block is not block diagonal")
        blocks = np.zeros((count, L, L))
        np.add.at(blocks, (r // L, r % L, c % L), coo.data[sel])
        out.append(blocks)
        start = stop
    return out


def _bsr_block_diagonal(blocks: np.ndarray) -> sp.bsr_matrix:
    n, L, _ = blocks.shape
    return sp.bsr_matrix((blocks, np.arange(n), np.arange(n + 1)), shape=(n * L, n * L))


@dataclass(eq=False)
class Factorization:
    """Reusable factorization of a square sparse matrix."""

    matrix: sp.csr_matrix
    strategy: str
    row_scale: np.ndarray
    col_scale: np.ndarray
    lu: object
    min_pivot: float
    # condensation data
    perm: np.ndarray | None = None
    n_cell: int = 0
    cell_inv: sp.csr_matrix | None = None
    A_cf: sp.csr_matrix | None = None
    A_fc: sp.csr_matrix | None = None
    stats: dict = field(default_factory=dict)

    def _solve_scaled(self, b: np.ndarray) -> np.ndarray:
        if self.strategy == "direct":
            return self.lu.solve(b)
        nc = self.n_cell
        bc = b[:nc][self.perm]
        bf = b[nc:]
        y = self.cell_inv @ bc
        xf = self.lu.solve(bf - self.A_fc @ y)
        xc_p = self.cell_inv @ (bc - self.A_cf @ xf)
        x = np.empty_like(b)
        xc = np.empty(nc)
        xc[self.perm] = xc_p
        x[:nc] = xc
        x[nc:] = xf
        return x

    def solve(self, b: np.ndarray, refine: int = 4, tol: float = RESIDUAL_TOL) -> np.ndarray:
        """Solve with iterative refinement; raises ``InaccurateSolveError``
        if the relative residual exceeds ``tol``."""
        b = np.asarray(b, dtype=float)
        nb = np.linalg.norm(b)
        if nb == 0.0:
            return np.zeros_like(b)
        x = self.col_scale * self._solve_scaled(self.row_scale * b)
        rel = np.linalg.norm(b - self.matrix @ x) / nb
        # refine until the residual stagnates; downstream identities inherit it
        for _ in range(refine):
            if rel <= 1e-15:
                break
            r = b - self.matrix @ x
            x_new = x + self.col_scale * self._solve_scaled(self.row_scale * r)
            rel_new = np.linalg.norm(b - self.matrix @ x_new) / nb
            if not rel_new < rel:
                break
            improved = rel_new < 0.5 * rel
            x, rel = x_new, rel_new
            if not improved:
                break
        self.stats["residual"] = rel
        if not np.isfinite(rel) or rel > tol:
            raise InaccurateSolveError(f"relative residual {rel:.3e} exceeds {tol:.1e}")
        return x


def _sparse_lu(M: sp.spmatrix, scale: float):
    """Sparse LU of ``M``: minimum degree on ``A + A^T`` with diagonal
    preference first (low fill for these structurally symmetric systems),
    COLAMD with full partial pivoting if that meets a small pivot."""
    M = M.tocsc()
    attempts = (dict(permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.01,
                     options=dict(SymmetricMode=True)),
                dict(permc_spec="COLAMD", diag_pivot_thresh=1.0))
    error = None
    for opts in attempts:
        try:
            lu = spla.splu(M, **opts)
            return lu, _check_pivots(lu, scale)
        except (RuntimeError, SingularSystemError) as exc:
            log.debug("LU attempt %s failed: %s", opts["permc_spec"], exc)
            error = exc
    if isinstance(error, SingularSystemError):
        raise error
    raise SingularSystemError(str(error)) from error


def _check_pivots(lu, scale: float) -> float:
    d = np.abs(lu.U.diagonal())
    mn = float(d.min()) if len(d) else np.inf
    if not mn > PIVOT_TOL * scale:
        raise SingularSystemError(f"pivot {mn:.3e} below {PIVOT_TOL:.0e} * {scale:.3e}")
    return mn


def factorize(A: sp.spmatrix, cell_groups: list | None = None, n_cell: int = 0,
              strategy: str = "auto") -> Factorization:
    """Factor ``A``.

    Parameters
    ----------
    A : square sparse matrix
    cell_groups : list of ``(cells, index)`` pairs whose index arrays
        (n, L) partition ``range(n_cell)`` into cell-local blocks; enables
        static condensation.
    n_cell : number of leading unknowns that are cell-local.
    strategy : ``"condensed"``, ``"direct"`` or ``"auto"`` (condensed when
        groups are given).
    """
    A = sp.csr_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if strategy == "auto":
        strategy = "condensed" if cell_groups else "direct"
    r, c = equilibrate(A)
    As = (sp.diags(r) @ A @ sp.diags(c)).tocsr()
    scale = float(abs(As).max()) if As.nnz else 1.0
    if strategy == "direct":
        lu, mp = _sparse_lu(As, scale)
        return Factorization(A, "direct", r, c, lu, mp)
    if strategy != "condensed":
        raise ValueError(f"unknown strategy {strategy!r}")

    perm = np.concatenate([idx.ravel() for _, idx in cell_groups])
    if len(perm) != n_cell or not np.array_equal(np.sort(perm), np.arange(n_cell)):
        raise ValueError("cell groups must partition the leading cell unknowns")
    Acc = As[:n_cell][:, :n_cell]
    Acc = Acc[perm][:, perm]
    sizes = [(idx.shape[0], idx.shape[1]) for _, idx in cell_groups]
    blocks = _block_diagonal_blocks(Acc, sizes)
    inv_blocks = []
    min_sv = np.inf
    for B in blocks:
        sv = np.linalg.svd(B, compute_uv=False)
        min_sv = min(min_sv, float(sv[:, -1].min()))
        if not sv[:, -1].min() > PIVOT_TOL * scale:
            raise SingularSystemError(f"singular cell block (smallest singular value {sv[:, -1].min():.3e})")
        inv_blocks.append(np.linalg.inv(B))
    cell_inv = sp.block_diag([_bsr_block_diagonal(Bi) for Bi in inv_blocks], format="csr")
    A_cf = As[:n_cell][:, n_cell:][perm].tocsr()
    A_fc = As[n_cell:][:, :n_cell][:, perm].tocsr()
    S = (As[n_cell:][:, n_cell:] - A_fc @ cell_inv @ A_cf).tocsc()
    lu, mp = _sparse_lu(S, scale)
    mp = min(mp, min_sv)
    f = Factorization(A, "condensed", r, c, lu, mp, perm, n_cell, cell_inv, A_cf, A_fc)
    f.stats.update(schur_size=S.shape[0], schur_nnz=S.nnz, fill=lu.L.nnz + lu.U.nnz)
    log.debug("condensed factorization: %s", f.stats)
    return f


def export_matrix_market(path, A: sp.spmatrix, b: np.ndarray | None = None) -> None:
    """Write ``A`` (and optionally ``b`` as ``<stem>_rhs.mtx``)."""
    path = Path(path)
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), precision=17)
    if b is not None:
        scipy.io.mmwrite(str(path.with_name(path.stem + "_rhs.mtx")),
                         np.asarray(b).reshape(-1, 1), precision=17)
