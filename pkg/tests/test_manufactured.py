import math

import numpy as np
import pytest

from helpers import fill
from sbhdg.drivers import SystemState
from sbhdg.manufactured import (CSV_FIELDS, ConvergenceReport, ExactSolution, derive_data,
                                expected_rates, l2_error, level_meshes, rate_checks,
                                run_convergence, steady_parameters, transient_grid,
                                transient_parameters)

H = 1e-5
TOL = 1e-7
T0 = 0.0123


@pytest.fixture(scope="module")
def pts():
    return np.random.default_rng(7).uniform(0.05, 0.95, (40, 2))


def _variants():
    out = []
    for disp in ("reference", "solenoidal"):
        for td in (False, True):
            out.append(ExactSolution(transient_parameters(2), time_dependent=td, displacement=disp))
    return out


def _fd_space(fn, x, t):
    """Central differences; last axis is the derivative direction."""
    cols = []
    for d in range(2):
        e = np.zeros(2)
        e[d] = H
        cols.append((np.asarray(fn(x + e, t)) - np.asarray(fn(x - e, t))) / (2 * H))
    return np.stack(cols, axis=-1)


def _fd_time(fn, x, t):
    return (np.asarray(fn(x, t + H)) - np.asarray(fn(x, t - H))) / (2 * H)


def _close(a, b):
    scale = max(1.0, float(np.abs(b).max()))
    assert np.abs(np.asarray(a) - b).max() <= TOL * scale


@pytest.mark.parametrize("ex", _variants(), ids=lambda e: f"{e.displacement}-{e.time_dependent}")
def test_space_derivatives(ex, pts):
    _close(ex.grad_us(pts, T0), _fd_space(ex.us, pts, T0))
    _close(ex.hess_us(pts, T0), _fd_space(ex.grad_us, pts, T0))
    _close(ex.grad_ps(pts, T0), _fd_space(ex.ps, pts, T0))
    _close(ex.grad_ub(pts, T0), _fd_space(ex.ub, pts, T0))
    _close(ex.hess_ub(pts, T0), _fd_space(ex.grad_ub, pts, T0))
    _close(ex.grad_pp(pts, T0), _fd_space(ex.pp, pts, T0))
    _close(ex.hess_pp(pts, T0), _fd_space(ex.grad_pp, pts, T0))
    _close(ex.grad_pb(pts, T0), _fd_space(ex.pb, pts, T0))
    g = _fd_space(ex.z, pts, T0)
    _close(ex.div_z(pts, T0), g[:, 0, 0] + g[:, 1, 1])
    g = ex.grad_ub(pts, T0)
    _close(ex.div_ub(pts, T0), g[:, 0, 0] + g[:, 1, 1])


@pytest.mark.parametrize("ex", _variants(), ids=lambda e: f"{e.displacement}-{e.time_dependent}")
def test_time_derivatives(ex, pts):
    _close(ex.dt_ub(pts, T0), _fd_time(ex.ub, pts, T0))
    _close(ex.dtt_ub(pts, T0), _fd_time(ex.dt_ub, pts, T0))
    _close(ex.dt_div_ub(pts, T0), _fd_time(ex.div_ub, pts, T0))
    _close(ex.dt_pp(pts, T0), _fd_time(ex.pp, pts, T0))
    _close(ex.dt_pb(pts, T0), _fd_time(ex.pb, pts, T0))


def test_constitutive_relations(pts):
    p = steady_parameters(2)
    ex = ExactSolution(p)
    _close(ex.z(pts), -p.kappa * ex.grad_pp(pts))
    _close(ex.pb(pts), p.alpha * ex.pp(pts) - ex.div_ub(pts) / p.inv_lambda)


def test_stokes_velocity_is_solenoidal(pts):
    ex = ExactSolution(transient_parameters(2), time_dependent=True)
    for t in (0.0, 0.3, 1.7):
        g = ex.grad_us(pts, t)
        assert np.abs(g[:, 0, 0] + g[:, 1, 1]).max() <= 1e-12


def test_solenoidal_displacement_is_lambda_free(pts):
    ex = ExactSolution(steady_parameters(2, inv_lambda=0.0), displacement="solenoidal")
    assert np.abs(ex.div_ub(pts)).max() <= 1e-12
    with pytest.raises(ValueError):
        ExactSolution(steady_parameters(2, inv_lambda=0.0))


@pytest.mark.parametrize("mode", ["steady", "transient"])
def test_derived_loads_satisfy_the_equations(mode, pts):
    p = steady_parameters(2) if mode == "steady" else transient_parameters(2)
    ex = ExactSolution(p, time_dependent=(mode == "transient"))
    data = derive_data(ex, p, mode)
    t = T0
    # momentum: f = -div sigma, checked by differencing the stresses
    for f, sig in ((data.f_s, ex.sigma_s), (data.f_b, ex.sigma_b)):
        G = _fd_space(sig, pts, t)
        _close(f(pts, t), -np.einsum("nabb->na", G))
    # mass: g = c0 D pp + alpha D div u + div z
    D = (lambda fn: (lambda x, tt: p.tau * fn(x, tt))) if mode == "steady" else _fd_time_fn
    dpp = D(ex.pp)(pts, t)
    ddiv = D(ex.div_ub)(pts, t)
    gz = _fd_space(ex.z, pts, t)
    _close(data.g_b(pts, t), p.c0 * dpp + p.alpha * ddiv + gz[:, 0, 0] + gz[:, 1, 1])
    # interface data on the line y = 1/2 with normal (0, -1)
    n = np.tile([0.0, -1.0], (len(pts), 1))
    xi = np.column_stack([pts[:, 0], np.full(len(pts), 0.5)])
    sn = np.einsum("nab,nb->na", ex.sigma_s(xi, t), n)
    _close(data.M_p(xi, n, t), -np.einsum("na,na->n", sn, n) - ex.pp(xi, t))
    _close(data.M_s(xi, n, t), sn - np.einsum("nab,nb->na", ex.sigma_b(xi, t), n))


def _fd_time_fn(fn):
    return lambda x, t: _fd_time(fn, x, t)


class _Polynomial:
    """Fields of degree <= k (pressures <= k - 1) representable exactly."""

    def __init__(self, k):
        self.k = k

    def us(self, x, t=0.0):
        return np.column_stack([x[:, 0] ** self.k, x[:, 1] ** self.k - x[:, 0] + 1.0])

    ub = us

    def z(self, x, t=0.0):
        return np.column_stack([x[:, 1] ** self.k, 2.0 + x[:, 0]])

    def ps(self, x, t=0.0):
        return x[:, 0] ** (self.k - 1) + 0.5

    pb = pp = ps


@pytest.mark.parametrize("k", [1, 2, 3])
def test_l2_error_vanishes_on_representable_fields(small_mesh, k):
    ex = _Polynomial(k)
    x = fill(small_mesh, k, {"u": ex.us, "z": ex.z, "p": ex.ps, "pp": ex.pp})
    state = SystemState(small_mesh, steady_parameters(k), x)
    for f in CSV_FIELDS:
        assert l2_error(state, ex, f) <= 1e-12
    assert l2_error(state, None, "pp") > 0.1
    with pytest.raises(ValueError):
        l2_error(state, ex, "velocity")


def test_l2_norm_of_constant(small_mesh):
    x = fill(small_mesh, 2, {"pp": lambda p: np.full(len(p), 3.0)})
    state = SystemState(small_mesh, steady_parameters(2), x)
    assert l2_error(state, None, "pp") == pytest.approx(3.0 * math.sqrt(0.5), rel=1e-13)


def test_report_rates_and_csv_round_trip():
    rep = ConvergenceReport("steady", 2)
    for i in range(3):
        h = 0.5 ** i
        rep.add(8 * 4 ** i, h, {f: 0.3 * h ** (2 + (f in ("us", "ub", "z"))) for f in CSV_FIELDS},
                1e-15, 1.0)
    assert rep.rates("us") == pytest.approx([3.0, 3.0])
    assert rep.final_rate("ps") == pytest.approx(2.0)
    back = ConvergenceReport.from_csv(rep.to_csv(), "steady", 2)
    assert back.cells == rep.cells
    for f in CSV_FIELDS:
        assert back.errors[f] == pytest.approx(rep.errors[f], rel=1e-6)
    checks = {c.field: c for c in rate_checks(rep)}
    assert checks["us"].passed and checks["ps"].passed and checks["z"].passed


def test_expected_windows():
    w = expected_rates("steady", 3)
    assert w["us"] == pytest.approx((3.8, 4.2)) and w["ub"] == pytest.approx((3.7, 4.3))
    assert w["z"] == (3.5, math.inf)
    w = expected_rates("transient", 2)
    assert w["pb"] == pytest.approx((1.7, 2.3)) and w["pp"] == pytest.approx((2.6, 3.4))
    with pytest.raises(ValueError):
        expected_rates("other", 1)


def test_level_meshes_and_time_step():
    meshes = level_meshes(3)
    assert [m.n_cells for m in meshes] == [128, 512, 2048]
    g = transient_grid(meshes[0].h)
    assert g.dt <= meshes[0].h ** 1.5 / 10


def test_coarse_k1_stokes_rate():
    rep = run_convergence("steady", 1, 2)
    assert 1.8 <= rep.final_rate("us") <= 2.2
    assert all(d <= 1e-11 * n for d, n in zip(rep.div_us, rep.norms["us"]))
