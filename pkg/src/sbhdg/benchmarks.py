"""Surface/subsurface flow benchmark.

A channel on top of a poroelastic layer, ``(0, 2) x (0, 1)`` over
``(0, 2) x (-1, 0)``, driven by a parabolic inflow that vanishes at the
right end. Every load and initial field is zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .data import ProblemData
from .diagnostics import ConformityReport, check_conformity
from .dofs import build_dofmap
from .drivers import SystemState, TimeGrid, discrete_rate, march
from .export import InterfaceProfile, interface_profile
from .mesh import GeometrySpec, Mesh, generate, refine
from .parameters import InvalidParameterError, ParameterSet

log = logging.getLogger(__name__)

# (kappa, c0, lambda, mu_b)
SURFSUB_SETS = {
    1: (1.0, 1.0, 1.0, 1.0),
    2: (1e-4, 1e-4, 1e6, 1.0),
    3: (1e-4, 1e-4, 1e6, 1e6),
}
SURFSUB_T = 3.0
SURFSUB_DT = 0.06


def surfsub_parameters(which: int, k: int = 2, **overrides) -> ParameterSet:
    """Parameters of set ``which`` in {1, 2, 3}; ``mu_s = alpha = gamma = 1``."""
    if which not in SURFSUB_SETS:
        raise InvalidParameterError(f"parameter set must be one of 1, 2, 3, got {which}")
    kappa, c0, lam, mu_b = SURFSUB_SETS[which]
    base = dict(mu_s=1.0, mu_b=mu_b, alpha=1.0, inv_lambda=1.0 / lam, kappa=kappa, c0=c0,
                gamma=1.0, k=k, dt=SURFSUB_DT)
    base.update(overrides)
    return ParameterSet(**base)


def inflow(x, t=0.0) -> np.ndarray:
    """Velocity imposed on the outer Stokes boundary."""
    X, Y = x[:, 0], x[:, 1]
    return np.column_stack([-20.0 * Y * (Y - 1.0) * (2.0 - X), np.zeros(len(X))])


def surfsub_data() -> ProblemData:
    return ProblemData.homogeneous().replace(U_s=inflow)


def surfsub_mesh(levels: int = 4, start_resolution: int = 4) -> Mesh:
    """Structured mesh after ``levels - 1`` uniform refinements of the
    ``8 r^2``-cell base mesh."""
    if levels < 1:
        raise InvalidParameterError("levels must be >= 1")
    mesh = generate(GeometrySpec("surf-sub", start_resolution))
    for _ in range(levels - 1):
        mesh = refine(mesh)
    return mesh


@dataclass
class StepRecord:
    step: int
    t: float
    conformity: ConformityReport
    profile: InterfaceProfile
    finite: bool


@dataclass
class SurfSubRun:
    params: ParameterSet
    mesh: Mesh
    final: SystemState
    records: list = field(default_factory=list)

    def all_finite(self) -> bool:
        return all(r.finite for r in self.records)

    def max_flux_defect(self) -> float:
        return max(r.conformity.relative("interface_flux") for r in self.records)

    def max_vertical_jump(self) -> float:
        return max(r.profile.vertical_jump() for r in self.records)


def run_surfsub(which: int, mesh: Mesh, k: int = 2, T: float = SURFSUB_T,
                dt: float = SURFSUB_DT, scheme: str = "BE",
                on_step: Optional[Callable] = None, workers: int = 1,
                **overrides) -> SurfSubRun:
    """March the benchmark from a zero state.

    ``on_step(state, rate)`` is called after each step with the discrete
    time derivative used by that step.
    """
    params = surfsub_parameters(which, k, dt=dt, **overrides)
    grid = TimeGrid.from_step(T, dt)
    dm = build_dofmap(mesh, k)
    initial = SystemState(mesh, params.replace(dt=grid.dt), np.zeros(dm.n), 0.0, {"mode": "initial"})
    data = surfsub_data()
    records = []

    def callback(state, used):
        mode = state.info["mode"]
        rate = discrete_rate([state] + list(used), mode, state.params)
        rep = check_conformity(state, used, mode, data)
        prof = interface_profile(state, rate)
        finite = bool(np.all(np.isfinite(state.x)))
        records.append(StepRecord(state.info["step"], state.t, rep, prof, finite))
        log.info("surfsub set %d step %d t=%.3f worst conformity %.2e", which,
                 state.info["step"], state.t, rep.worst())
        if on_step is not None:
            on_step(state, rate)

    states = march(mesh, params, data, grid, initial, scheme, callback, keep="last",
                   workers=workers)
    return SurfSubRun(params, mesh, states[-1], records)
