"""Steady solves, time marching and initial projections."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .assembly import AssembledSystem, assemble_ah, assemble_system, stencil
from .data import ProblemData
from .dofs import DofMap, apply_essential_data, build_dofmap, project_facet
from .elements import data_exactness, element_tables, vectorize, vectorize_grad
from .linear_system import Factorization, SingularSystemError, factorize
from .mesh import BIOT, FacetTag, Mesh
from .parameters import InvalidParameterError, ParameterSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_n = n T / N`` on ``[0, T]``."""

    T: float
    n_steps: int

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise InvalidParameterError(f"final time must be positive, got {self.T}")
        if self.n_steps < 1:
            raise InvalidParameterError("a time grid needs at least one step")

    @classmethod
    def from_step(cls, T: float, dt: float) -> "TimeGrid":
        """Smallest uniform grid whose step does not exceed ``dt``."""
        if not dt > 0:
            raise InvalidParameterError(f"time step must be positive, got {dt}")
        return cls(T, max(1, math.ceil(T / dt - 1e-9)))

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    def time(self, n: int) -> float:
        return n * self.T / self.n_steps


@dataclass(eq=False)
class SystemState:
    """Full coefficient vector (constrained entries hold their imposed
    values) at time ``t``."""

    mesh: Mesh
    params: ParameterSet
    x: np.ndarray
    t: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def dofmap(self) -> DofMap:
        return build_dofmap(self.mesh, self.params.k)

    def block(self, name: str) -> np.ndarray:
        return self.x[self.dofmap.block(name)]

    def norm(self) -> float:
        return float(np.linalg.norm(self.x))


class Solver:
    """Factor-once, solve-many wrapper keyed by the stencil weight."""

    def __init__(self, mesh: Mesh, params: ParameterSet, strategy: str = "auto"):
        self.mesh = mesh
        self.params = params
        self.strategy = strategy
        self._factors: dict[float, Factorization] = {}

    def factor(self, system: AssembledSystem) -> Factorization:
        w = system.weight
        if w not in self._factors:
            dm = system.dofmap
            try:
                self._factors[w] = factorize(system.matrix, dm.cell_groups, dm.n_cell_dofs,
                                             self.strategy)
            except SingularSystemError as exc:
                raise SingularSystemError(f"{exc}; parameters: {self.params.as_dict()}") from exc
        return self._factors[w]

    def solve(self, system: AssembledSystem) -> np.ndarray:
        f = self.factor(system)
        x = system.expand(f.solve(system.rhs))
        return x


def solve_steady(mesh: Mesh, params: ParameterSet, data: ProblemData, t: float = 0.0,
                 workers: int = 1, solver: Solver | None = None) -> SystemState:
    """Solve the tau-regularized stationary problem."""
    if params.tau is None:
        raise InvalidParameterError("steady solve needs tau")
    system = assemble_system(mesh, params, data, t, "steady", workers=workers)
    solver = solver or Solver(mesh, params)
    x = solver.solve(system)
    return SystemState(mesh, params, x, t, {"mode": "steady"})


def solve_equilibrium(mesh: Mesh, params: ParameterSet, data: ProblemData, t: float = 0.0,
                      workers: int = 1) -> SystemState:
    """Solve the system with every time-derivative term removed; a fixed
    point of both time stencils for data that is constant in time."""
    system = assemble_system(mesh, params, data, t, "equilibrium", workers=workers)
    x = Solver(mesh, params).solve(system)
    return SystemState(mesh, params, x, t, {"mode": "equilibrium"})


def _elliptic_rhs(mesh: Mesh, params: ParameterSet, ub0, grad_ub0, t0: float) -> np.ndarray:
    """``a_h^b((u, u|facets), v)`` for a smooth displacement ``u``."""
    dm = build_dofmap(mesh, params.k)
    tab = element_tables(mesh, params.k, data_exactness(params.k))
    mu = params.mu_b
    cells = mesh.cells_of(BIOT)
    F = np.zeros(dm.n)
    if len(cells) == 0:
        return F
    x = tab.vol_physical_points(cells)
    G = np.asarray(grad_ub0(x.reshape(-1, 2), t0)).reshape(len(cells), -1, 2, 2)
    eps = 0.5 * (G + np.swapaxes(G, -1, -2))
    GV = vectorize_grad(tab.grads(cells))
    epsV = 0.5 * (GV + np.swapaxes(GV, -1, -2))
    vol = 2 * mu * np.einsum("cq,cqab,cqiab->ci", tab.vol_weights_physical(cells), eps, epsV)
    np.add.at(F, dm.index["u"][cells], vol)

    ephi, _, _ = tab.edge_tables(cells)
    EV = vectorize(ephi)
    # edge points in each cell's own traversal
    fac = mesh.cell_facets[cells]
    xe = tab.facet_points(mesh, fac.ravel()).reshape(len(cells), 3, -1, 2)
    Ge = np.asarray(grad_ub0(xe.reshape(-1, 2), t0)).reshape(len(cells), 3, -1, 2, 2)
    n = tab.normal_out[cells]
    trac = mu * (np.einsum("ceqab,ceb->ceqa", Ge, n) + np.einsum("ceqba,ceb->ceqa", Ge, n))
    W = tab.edge_weights(cells)
    np.add.at(F, dm.index["u"][cells], -np.einsum("ceq,ceqa,ceqia->ci", W, trac, EV))
    PV = vectorize(tab.psi)
    fb = np.einsum("ceq,ceqa,qma->cem", W, trac, PV)
    np.add.at(F, dm.index["ubar_b"][fac], fb)
    return F


def initialize(mesh: Mesh, params: ParameterSet, ub0: Callable, grad_ub0: Callable,
               pp0: Callable, t0: float = 0.0) -> SystemState:
    """Initial state from the displacement and pore pressure at ``t0``.

    The displacement pair is the elliptic projection through ``a_h^b`` with
    Dirichlet facets fixed to the projected trace; the pore pressure is the
    cellwise L2 projection; the total pressure follows from
    ``pb = alpha pp - lambda div u``. All other unknowns are zero.
    """
    dm = build_dofmap(mesh, params.k)
    tab = element_tables(mesh, params.k, data_exactness(params.k))
    cells = mesh.cells_of(BIOT)
    x = np.zeros(dm.n)

    A = assemble_ah(mesh, params, BIOT)
    F = _elliptic_rhs(mesh, params, ub0, grad_ub0, t0)
    dfac = mesh.facets_with(FacetTag.DIRICHLET_B)
    xd = np.zeros(dm.n)
    if len(dfac):
        xd[dm.index["ubar_b"][dfac]] = project_facet(mesh, params.k, dfac, ub0, t0, True)
    fixed = dm.index["ubar_b"][dfac].ravel()
    unknown = np.concatenate([dm.index["u"][cells].ravel(),
                              np.setdiff1d(dm.index["ubar_b"][mesh.facets_of(BIOT)].ravel(), fixed)])
    Auu = A[unknown][:, unknown]
    rhs = F[unknown] - A[unknown][:, fixed] @ xd[fixed]
    try:
        f = factorize(Auu, strategy="direct")
    except SingularSystemError as exc:
        raise SingularSystemError(f"elliptic projection failed (beta_b={params.beta_b}): {exc}") from exc
    x[unknown] = f.solve(rhs)
    x[fixed] = xd[fixed]

    # cellwise L2 projection of pp (orthonormal basis => moments / det)
    pts = tab.vol_physical_points(cells)
    wq = tab.vol_weights_physical(cells)
    vals = np.asarray(pp0(pts.reshape(-1, 2), t0)).reshape(len(cells), -1)
    cpp = np.einsum("cq,cq,qi->ci", wq, vals, tab.phiq) / tab.det[cells, None]
    x[dm.index["pp"][cells]] = cpp

    # pb = alpha pp - lambda div u, projected onto P_{k-1}
    if params.inv_lambda > 0:
        GV = vectorize_grad(tab.grads(cells))
        div = np.einsum("cqiaa->cqi", GV)
        cu = x[dm.index["u"][cells]]
        divu = np.einsum("ci,cqi->cq", cu, div)
        cdiv = np.einsum("cq,cq,qi->ci", wq, divu, tab.phiq) / tab.det[cells, None]
        x[dm.index["p"][cells]] = params.alpha * cpp - cdiv / params.inv_lambda
    else:
        x[dm.index["p"][cells]] = params.alpha * cpp
    return SystemState(mesh, params, x, t0, {"mode": "initial"})


def discrete_rate(states: list[SystemState], mode: str, params: ParameterSet) -> np.ndarray:
    """The discrete time derivative applied to the stored states
    (most recent first) with the stencil of ``mode``."""
    w, coeffs = stencil(mode, params)
    out = w * states[0].x
    for c, s in zip(coeffs, states[1:]):
        out = out + c * s.x
    return out


def march(mesh: Mesh, params: ParameterSet, data: ProblemData, grid: TimeGrid,
          initial: SystemState, scheme: str = "BE", callback: Optional[Callable] = None,
          keep: str = "all", workers: int = 1) -> list[SystemState]:
    """Advance ``initial`` over ``grid``.

    BDF2 starts with one backward-Euler step. ``callback(state, history)``
    is called after every step with the new state and the list of previous
    states used by its stencil (most recent first). Returns the computed
    states ``t_1 .. t_N`` (``keep="all"``) or only the last one.
    """
    if scheme not in ("BE", "BDF2"):
        raise ValueError(f"unknown scheme {scheme!r}")
    p = params.replace(dt=grid.dt)
    solver = Solver(mesh, p)
    history = [initial]
    out = []
    for n in range(1, grid.n_steps + 1):
        t = grid.time(n)
        mode = "BE" if scheme == "BE" or n == 1 else "BDF2"
        used = history[: 1 if mode == "BE" else 2]
        system = assemble_system(mesh, p, data, t, mode, [s.x for s in used], workers)
        x = solver.solve(system)
        state = SystemState(mesh, p, x, t, {"mode": mode, "step": n})
        if callback is not None:
            callback(state, used)
        history = [state] + history[:1]
        if keep == "all":
            out.append(state)
    if keep != "all":
        out.append(history[0])
    return out
