"""Closed-form exact solutions, the data they induce, L2 errors and the
convergence harness.

Every derivative below is written out by hand; the test suite checks each
one against central finite differences.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import ProblemData
from .drivers import SystemState, TimeGrid, initialize, march, solve_steady
from .elements import element_tables
from .evaluation import divergence_at, values_at
from .mesh import BIOT, STOKES, GeometrySpec, Mesh, generate, refine
from .parameters import ParameterSet

log = logging.getLogger(__name__)
PI = math.pi

FIELDS = ("us", "ps", "ub", "pb", "z", "pp", "div_us")


def _xy(x):
    x = np.asarray(x, dtype=float)
    return x[:, 0], x[:, 1]


def _tangent(n):
    return np.column_stack([-n[:, 1], n[:, 0]])


class ExactSolution:
    """Smooth solution of the coupled problem.

    Vector gradients are (N, 2, 2) with ``[:, a, b] = d_b u_a``; Hessians
    are (N, 2, 2, 2) with ``[:, a, b, c] = d_b d_c u_a``; scalar gradients
    (N, 2) and Hessians (N, 2, 2).

    Parameters
    ----------
    time_dependent : if False all fields are evaluated at ``t = 0``
        regardless of the time argument.
    shift : speed of the travelling phases ``x y - t`` (Stokes, pore
        pressure) and ``x - t``, ``y - t`` (displacement).
    displacement : ``"reference"`` for the standard test displacement, or
        ``"solenoidal"`` for a divergence-free displacement whose total
        pressure does not depend on lambda.
    """

    def __init__(self, params: ParameterSet, time_dependent: bool = False,
                 displacement: str = "reference"):
        if displacement not in ("reference", "solenoidal"):
            raise ValueError(f"unknown displacement variant {displacement!r}")
        if displacement == "reference" and params.inv_lambda == 0:
            raise ValueError("lambda = inf needs a divergence-free displacement")
        self.params = params
        self.time_dependent = time_dependent
        self.displacement = displacement

    def _t(self, t):
        return float(t) if self.time_dependent else 0.0

    # -- Stokes velocity ---------------------------------------------------
    def us(self, x, t=0.0):
        X, Y = _xy(x)
        c = np.cos(PI * (X * Y - self._t(t)))
        return np.column_stack([PI * X * c + 1.0, -PI * Y * c + 2.0 * X])

    def grad_us(self, x, t=0.0):
        X, Y = _xy(x)
        th = PI * (X * Y - self._t(t))
        c, s = np.cos(th), np.sin(th)
        g = np.empty((len(X), 2, 2))
        g[:, 0, 0] = PI * c - PI**2 * X * Y * s
        g[:, 0, 1] = -PI**2 * X**2 * s
        g[:, 1, 0] = PI**2 * Y**2 * s + 2.0
        g[:, 1, 1] = -PI * c + PI**2 * X * Y * s
        return g

    def hess_us(self, x, t=0.0):
        X, Y = _xy(x)
        th = PI * (X * Y - self._t(t))
        c, s = np.cos(th), np.sin(th)
        h = np.empty((len(X), 2, 2, 2))
        h[:, 0, 0, 0] = -2 * PI**2 * Y * s - PI**3 * X * Y**2 * c
        h[:, 0, 0, 1] = h[:, 0, 1, 0] = -2 * PI**2 * X * s - PI**3 * X**2 * Y * c
        h[:, 0, 1, 1] = -PI**3 * X**3 * c
        h[:, 1, 0, 0] = PI**3 * Y**3 * c
        h[:, 1, 0, 1] = h[:, 1, 1, 0] = 2 * PI**2 * Y * s + PI**3 * X * Y**2 * c
        h[:, 1, 1, 1] = 2 * PI**2 * X * s + PI**3 * X**2 * Y * c
        return h

    # -- Stokes pressure ---------------------------------------------------
    def ps(self, x, t=0.0):
        X, Y = _xy(x)
        return np.sin(3 * X) * np.cos(4 * (Y - self._t(t)))

    def grad_ps(self, x, t=0.0):
        X, Y = _xy(x)
        b = 4 * (Y - self._t(t))
        return np.column_stack([3 * np.cos(3 * X) * np.cos(b), -4 * np.sin(3 * X) * np.sin(b)])

    # -- displacement ------------------------------------------------------
    def _amp(self, t):
        """Time amplitude A(t), A'(t), A''(t) and phase speed."""
        if not self.time_dependent:
            return 1.0, 0.0, 0.0, 0.0
        w = 10 * PI
        return math.sin(w * t), w * math.cos(w * t), -w * w * math.sin(w * t), 1.0

    def ub(self, x, t=0.0):
        X, Y = _xy(x)
        A, _, _, sp = self._amp(self._t(t))
        t = self._t(t)
        if self.displacement == "solenoidal":
            return A * np.column_stack([np.cos(4 * X) * np.cos(3 * Y),
                                        4 / 3 * np.sin(4 * X) * np.sin(3 * Y)])
        a, b = 4 * (X - sp * t), 2 * (Y - sp * t)
        return A * np.column_stack([np.cos(a) * np.cos(3 * Y), np.sin(5 * X) * np.cos(b)])

    def grad_ub(self, x, t=0.0):
        X, Y = _xy(x)
        A, _, _, sp = self._amp(self._t(t))
        t = self._t(t)
        g = np.empty((len(X), 2, 2))
        if self.displacement == "solenoidal":
            g[:, 0, 0] = -4 * np.sin(4 * X) * np.cos(3 * Y)
            g[:, 0, 1] = -3 * np.cos(4 * X) * np.sin(3 * Y)
            g[:, 1, 0] = 16 / 3 * np.cos(4 * X) * np.sin(3 * Y)
            g[:, 1, 1] = 4 * np.sin(4 * X) * np.cos(3 * Y)
            return A * g
        a, b = 4 * (X - sp * t), 2 * (Y - sp * t)
        g[:, 0, 0] = -4 * np.sin(a) * np.cos(3 * Y)
        g[:, 0, 1] = -3 * np.cos(a) * np.sin(3 * Y)
        g[:, 1, 0] = 5 * np.cos(5 * X) * np.cos(b)
        g[:, 1, 1] = -2 * np.sin(5 * X) * np.sin(b)
        return A * g

    def hess_ub(self, x, t=0.0):
        X, Y = _xy(x)
        A, _, _, sp = self._amp(self._t(t))
        t = self._t(t)
        h = np.empty((len(X), 2, 2, 2))
        if self.displacement == "solenoidal":
            c4, s4, c3, s3 = np.cos(4 * X), np.sin(4 * X), np.cos(3 * Y), np.sin(3 * Y)
            h[:, 0, 0, 0] = -16 * c4 * c3
            h[:, 0, 0, 1] = h[:, 0, 1, 0] = 12 * s4 * s3
            h[:, 0, 1, 1] = -9 * c4 * c3
            h[:, 1, 0, 0] = -64 / 3 * s4 * s3
            h[:, 1, 0, 1] = h[:, 1, 1, 0] = 16 * c4 * c3
            h[:, 1, 1, 1] = -12 * s4 * s3
            return A * h
        a, b = 4 * (X - sp * t), 2 * (Y - sp * t)
        h[:, 0, 0, 0] = -16 * np.cos(a) * np.cos(3 * Y)
        h[:, 0, 0, 1] = h[:, 0, 1, 0] = 12 * np.sin(a) * np.sin(3 * Y)
        h[:, 0, 1, 1] = -9 * np.cos(a) * np.cos(3 * Y)
        h[:, 1, 0, 0] = -25 * np.sin(5 * X) * np.cos(b)
        h[:, 1, 0, 1] = h[:, 1, 1, 0] = -10 * np.cos(5 * X) * np.sin(b)
        h[:, 1, 1, 1] = -4 * np.sin(5 * X) * np.cos(b)
        return A * h

    def dt_ub(self, x, t=0.0):
        """Time derivative of the displacement (zero when not time dependent)."""
        X, Y = _xy(x)
        if not self.time_dependent:
            return np.zeros((len(X), 2))
        A, dA, _, sp = self._amp(t)
        if self.displacement == "solenoidal":
            return dA * np.column_stack([np.cos(4 * X) * np.cos(3 * Y),
                                         4 / 3 * np.sin(4 * X) * np.sin(3 * Y)])
        a, b = 4 * (X - sp * t), 2 * (Y - sp * t)
        return np.column_stack([
            dA * np.cos(a) * np.cos(3 * Y) + 4 * sp * A * np.sin(a) * np.cos(3 * Y),
            dA * np.sin(5 * X) * np.cos(b) + 2 * sp * A * np.sin(5 * X) * np.sin(b),
        ])

    def dtt_ub(self, x, t=0.0):
        X, Y = _xy(x)
        if not self.time_dependent:
            return np.zeros((len(X), 2))
        A, dA, ddA, sp = self._amp(t)
        if self.displacement == "solenoidal":
            return ddA * np.column_stack([np.cos(4 * X) * np.cos(3 * Y),
                                          4 / 3 * np.sin(4 * X) * np.sin(3 * Y)])
        a, b = 4 * (X - sp * t), 2 * (Y - sp * t)
        ca, sa = np.cos(a) * np.cos(3 * Y), np.sin(a) * np.cos(3 * Y)
        cb, sb = np.sin(5 * X) * np.cos(b), np.sin(5 * X) * np.sin(b)
        return np.column_stack([
            ddA * ca + 8 * sp * dA * sa - 16 * sp * sp * A * ca,
            ddA * cb + 4 * sp * dA * sb - 4 * sp * sp * A * cb,
        ])

    def div_ub(self, x, t=0.0):
        g = self.grad_ub(x, t)
        return g[:, 0, 0] + g[:, 1, 1]

    def dt_div_ub(self, x, t=0.0):
        X, Y = _xy(x)
        if not self.time_dependent or self.displacement == "solenoidal":
            return np.zeros(len(X))
        A, dA, _, sp = self._amp(t)
        a, b = 4 * (X - sp * t), 2 * (Y - sp * t)
        return (-4 * dA * np.sin(a) * np.cos(3 * Y) + 16 * sp * A * np.cos(a) * np.cos(3 * Y)
                - 2 * dA * np.sin(5 * X) * np.sin(b) + 4 * sp * A * np.sin(5 * X) * np.cos(b))

    # -- pore pressure -----------------------------------------------------
    def pp(self, x, t=0.0):
        X, Y = _xy(x)
        return np.sin(3 * (X * Y - self._t(t)))

    def grad_pp(self, x, t=0.0):
        X, Y = _xy(x)
        c = np.cos(3 * (X * Y - self._t(t)))
        return np.column_stack([3 * Y * c, 3 * X * c])

    def hess_pp(self, x, t=0.0):
        X, Y = _xy(x)
        ph = 3 * (X * Y - self._t(t))
        c, s = np.cos(ph), np.sin(ph)
        h = np.empty((len(X), 2, 2))
        h[:, 0, 0] = -9 * Y**2 * s
        h[:, 0, 1] = h[:, 1, 0] = 3 * c - 9 * X * Y * s
        h[:, 1, 1] = -9 * X**2 * s
        return h

    def dt_pp(self, x, t=0.0):
        X, Y = _xy(x)
        if not self.time_dependent:
            return np.zeros(len(X))
        return -3 * np.cos(3 * (X * Y - t))

    # -- derived -----------------------------------------------------------
    def pb(self, x, t=0.0):
        p = self.params
        out = p.alpha * self.pp(x, t)
        if self.displacement == "solenoidal":
            return out
        return out - self.div_ub(x, t) / p.inv_lambda

    def grad_pb(self, x, t=0.0):
        p = self.params
        out = p.alpha * self.grad_pp(x, t)
        if self.displacement == "solenoidal":
            return out
        h = self.hess_ub(x, t)
        grad_div = h[:, 0, 0, :] + h[:, 1, 1, :]
        return out - grad_div / p.inv_lambda

    def dt_pb(self, x, t=0.0):
        p = self.params
        out = p.alpha * self.dt_pp(x, t)
        if self.displacement == "solenoidal":
            return out
        return out - self.dt_div_ub(x, t) / p.inv_lambda

    def z(self, x, t=0.0):
        return -self.params.kappa * self.grad_pp(x, t)

    def div_z(self, x, t=0.0):
        h = self.hess_pp(x, t)
        return -self.params.kappa * (h[:, 0, 0] + h[:, 1, 1])

    def sigma_s(self, x, t=0.0):
        g = self.grad_us(x, t)
        return self.params.mu_s * (g + np.swapaxes(g, 1, 2)) - self.ps(x, t)[:, None, None] * np.eye(2)

    def sigma_b(self, x, t=0.0):
        g = self.grad_ub(x, t)
        return self.params.mu_b * (g + np.swapaxes(g, 1, 2)) - self.pb(x, t)[:, None, None] * np.eye(2)

    def div_sigma(self, hess, grad_p, mu):
        """div(2 mu eps(u) - p I) from the velocity Hessian and pressure gradient."""
        lap = hess[:, :, 0, 0] + hess[:, :, 1, 1]
        grad_div = hess[:, 0, 0, :] + hess[:, 1, 1, :]
        return mu * (lap + grad_div) - grad_p


def derive_data(ex: ExactSolution, params: ParameterSet | None = None,
                mode: str = "steady") -> ProblemData:
    """Loads, boundary and interface data reproducing ``ex``.

    In steady mode every time derivative of the displacement and pore
    pressure is replaced by ``tau`` times the field itself.
    """
    p = params or ex.params
    if mode == "steady":
        tau = p.tau

        def D_ub(x, t):
            return tau * ex.ub(x, t)

        def D_pp(x, t):
            return tau * ex.pp(x, t)

        def D_div_ub(x, t):
            return tau * ex.div_ub(x, t)
    elif mode == "transient":
        D_ub, D_pp, D_div_ub = ex.dt_ub, ex.dt_pp, ex.dt_div_ub
    else:
        raise ValueError(f"mode must be 'steady' or 'transient', got {mode!r}")

    def f_s(x, t):
        return -ex.div_sigma(ex.hess_us(x, t), ex.grad_ps(x, t), p.mu_s)

    def f_b(x, t):
        return -ex.div_sigma(ex.hess_ub(x, t), ex.grad_pb(x, t), p.mu_b)

    def g_b(x, t):
        return p.c0 * D_pp(x, t) + p.alpha * D_div_ub(x, t) + ex.div_z(x, t)

    def S_s(x, n, t):
        return np.einsum("nab,nb->na", ex.sigma_s(x, t), n)

    def S_b(x, n, t):
        return np.einsum("nab,nb->na", ex.sigma_b(x, t), n)

    def Z(x, n, t):
        return np.einsum("na,na->n", ex.z(x, t), n)

    def M_u(x, n, t):
        return np.einsum("na,na->n", ex.us(x, t) - D_ub(x, t) - ex.z(x, t), n)

    def M_s(x, n, t):
        return S_s(x, n, t) - S_b(x, n, t)

    def M_p(x, n, t):
        return -np.einsum("na,na->n", S_s(x, n, t), n) - ex.pp(x, t)

    def M_e(x, n, t):
        g = ex.grad_us(x, t)
        eps_n = 0.5 * np.einsum("nab,nb->na", g + np.swapaxes(g, 1, 2), n)
        tn = _tangent(n)
        slip = ex.us(x, t) - D_ub(x, t)
        val = -2 * p.mu_s * np.einsum("na,na->n", eps_n, tn) - p.bjs * np.einsum("na,na->n", slip, tn)
        return val[:, None] * tn

    return ProblemData(f_s=f_s, f_b=f_b, g_b=g_b, U_s=ex.us, U_b=ex.ub, S_s=S_s, S_b=S_b,
                       P_p=ex.pp, Z=Z, M_u=M_u, M_s=M_s, M_p=M_p, M_e=M_e)


def l2_error(state: SystemState, ex: ExactSolution | None, field: str,
             t: float | None = None) -> float:
    """L2 norm of (discrete - exact) for one field; ``ex=None`` gives the
    norm of the discrete field. ``div_us`` is the norm of div u_h^s."""
    if field not in FIELDS:
        raise ValueError(f"unknown field {field!r}; expected one of {FIELDS}")
    t = state.t if t is None else t
    mesh, dm = state.mesh, state.dofmap
    tab = element_tables(mesh, dm.k, 2 * dm.k + 4)
    cells = mesh.cells_of(STOKES if field in ("us", "ps", "div_us") else BIOT)
    if len(cells) == 0:
        return 0.0
    ref = tab.vol_points
    w = tab.vol_weights_physical(cells)
    if field == "div_us":
        d = divergence_at(state.x, dm, tab, "u", cells, ref)
        return float(np.sqrt(np.sum(w * d**2)))
    block = {"us": "u", "ub": "u", "ps": "p", "pb": "p", "z": "z", "pp": "pp"}[field]
    vals = values_at(state.x, dm, block, cells, ref)
    if ex is not None:
        xq = tab.vol_physical_points(cells).reshape(-1, 2)
        exact = np.asarray(getattr(ex, field)(xq, t)).reshape(vals.shape)
        vals = vals - exact
    sq = vals**2 if vals.ndim == 2 else np.sum(vals**2, axis=-1)
    return float(np.sqrt(np.sum(w * sq)))


CSV_FIELDS = ("us", "ps", "ub", "pb", "z", "pp")
CSV_HEADER = ("level,cells,h," + ",".join(f"err_{f},rate_{f}" for f in CSV_FIELDS) + ",div_us")


@dataclass
class ConvergenceReport:
    """Errors per refinement level and observed rates between consecutive levels."""

    case: str
    k: int
    cells: list = field(default_factory=list)
    h: list = field(default_factory=list)
    errors: dict = field(default_factory=lambda: {f: [] for f in CSV_FIELDS})
    div_us: list = field(default_factory=list)
    norms: dict = field(default_factory=lambda: {"us": []})

    def add(self, cells: int, h: float, errors: dict, div_us: float, us_norm: float) -> None:
        self.cells.append(cells)
        self.h.append(h)
        for f in CSV_FIELDS:
            self.errors[f].append(errors[f])
        self.div_us.append(div_us)
        self.norms["us"].append(us_norm)

    def rates(self, field: str) -> list:
        """``log2(e_{2h} / e_h)`` between consecutive levels (uses the
        actual h ratio, which is exactly 2 under uniform refinement)."""
        e, h = self.errors[field], self.h
        return [math.log(e[i - 1] / e[i]) / math.log(h[i - 1] / h[i])
                if e[i] > 0 and e[i - 1] > 0 else float("nan") for i in range(1, len(e))]

    def final_rate(self, field: str) -> float:
        r = self.rates(field)
        return r[-1] if r else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER.split(","))
        rates = {f: [None] + self.rates(f) for f in CSV_FIELDS}
        for i in range(len(self.cells)):
            row = [i, self.cells[i], f"{self.h[i]:.6e}"]
            for f in CSV_FIELDS:
                r = rates[f][i]
                row += [f"{self.errors[f][i]:.6e}", "" if r is None else f"{r:.4f}"]
            row.append(f"{self.div_us[i]:.6e}")
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, case: str = "", k: int = 0) -> "ConvergenceReport":
        rows = list(csv.DictReader(io.StringIO(text)))
        rep = cls(case, k)
        for r in rows:
            rep.cells.append(int(r["cells"]))
            rep.h.append(float(r["h"]))
            for f in CSV_FIELDS:
                rep.errors[f].append(float(r[f"err_{f}"]))
            rep.div_us.append(float(r["div_us"]))
            rep.norms["us"].append(float("nan"))
        return rep


def steady_parameters(k: int, **overrides) -> ParameterSet:
    """Constants of the stationary manufactured case."""
    base = dict(mu_s=1e-2, mu_b=1e-3, alpha=0.2, inv_lambda=1e-2, kappa=1e-2, c0=1e-2,
                gamma=0.3, tau=1e-2, k=k)
    base.update(overrides)
    return ParameterSet(**base)


def transient_parameters(k: int, **overrides) -> ParameterSet:
    base = dict(mu_s=1e-2, mu_b=1e-3, alpha=0.2, inv_lambda=1e-2, kappa=1e-2, c0=1e-2,
                gamma=0.3, k=k)
    base.update(overrides)
    return ParameterSet(**base)


def level_meshes(levels: int, start_resolution: int = 4) -> list[Mesh]:
    """Uniform refinement hierarchy of the split unit square; level 0 has
    ``8 r^2`` cells for resolution ``r``."""
    mesh = generate(GeometrySpec("unit-square-split", start_resolution))
    out = [mesh]
    for _ in range(levels - 1):
        mesh = refine(mesh)
        out.append(mesh)
    return out


def transient_grid(h: float, T: float = 0.01) -> TimeGrid:
    """Uniform grid with step at most ``h^(3/2) / 10``."""
    return TimeGrid.from_step(T, h**1.5 / 10.0)


def solve_case(mesh: Mesh, case: str, params: ParameterSet, ex: ExactSolution,
               callback: Callable | None = None, workers: int = 1,
               T: float = 0.01) -> SystemState:
    """One manufactured solve: steady, or BDF2 over ``[0, T]`` with the
    step rule ``h^(3/2)/10``; returns the (terminal) state."""
    if case == "steady":
        data = derive_data(ex, params, "steady")
        state = solve_steady(mesh, params, data, workers=workers)
        if callback is not None:
            callback(state, [])
        return state
    if case != "transient":
        raise ValueError(f"unknown case {case!r}")
    data = derive_data(ex, params, "transient")
    grid = transient_grid(mesh.h, T)
    init = initialize(mesh, params, ex.ub, ex.grad_ub, ex.pp, 0.0)
    states = march(mesh, params, data, grid, init, "BDF2", callback, keep="last", workers=workers)
    return states[-1]


def run_convergence(case: str, k: int, levels: int, params: ParameterSet | None = None,
                    start_resolution: int = 4, displacement: str = "reference",
                    callback: Callable | None = None, workers: int = 1,
                    T: float = 0.01) -> ConvergenceReport:
    """Solve on a refinement hierarchy and collect errors.

    ``callback(mesh, state, history)`` is invoked for every computed state.
    """
    if levels < 2:
        raise ValueError("levels must be >= 2 to observe rates")
    if params is None:
        params = steady_parameters(k) if case == "steady" else transient_parameters(k)
    ex = ExactSolution(params, time_dependent=(case == "transient"), displacement=displacement)
    report = ConvergenceReport(case, k)
    for mesh in level_meshes(levels, start_resolution):
        cb = None if callback is None else (lambda s, h, m=mesh: callback(m, s, h))
        state = solve_case(mesh, case, params, ex, cb, workers, T)
        errs = {f: l2_error(state, ex, f) for f in CSV_FIELDS}
        div = l2_error(state, None, "div_us")
        norm = l2_error(state, None, "us")
        report.add(mesh.n_cells, mesh.h, errs, div, norm)
        log.info("%s k=%d cells=%d errors=%s", case, k, mesh.n_cells,
                 {f: f"{e:.3e}" for f, e in errs.items()})
    return report


@dataclass(frozen=True)
class RateCheck:
    field: str
    rate: float
    low: float
    high: float

    @property
    def passed(self) -> bool:
        return self.low <= self.rate <= self.high


def expected_rates(case: str, k: int) -> dict:
    """Accepted final-pair rate window ``(low, high)`` per field."""
    if case == "steady":
        return {"us": (k + 0.8, k + 1.2), "ps": (k - 0.2, k + 0.2), "ub": (k + 0.7, k + 1.3),
                "pb": (k - 0.2, k + 0.2), "z": (k + 0.5, math.inf), "pp": (k - 0.2, k + 0.2)}
    if case == "transient":
        return {"us": (k + 0.7, k + 1.3), "ps": (k - 0.3, k + 0.3), "ub": (k + 0.7, k + 1.3),
                "pb": (k - 0.3, k + 0.3), "z": (k + 0.6, k + 1.4), "pp": (k + 0.6, k + 1.4)}
    raise ValueError(f"unknown case {case!r}")


def rate_checks(report: ConvergenceReport) -> list:
    """Final-pair rates of ``report`` against the accepted windows."""
    windows = expected_rates(report.case, report.k)
    return [RateCheck(f, report.final_rate(f), *windows[f]) for f in CSV_FIELDS]
