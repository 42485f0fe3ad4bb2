import numpy as np
import pytest

from sbhdg.data import ProblemData
from sbhdg.diagnostics import CHECKS, check_conformity
from sbhdg.drivers import SystemState, solve_steady
from sbhdg.manufactured import ExactSolution, derive_data, level_meshes, steady_parameters


@pytest.fixture(scope="module")
def mesh():
    return level_meshes(1)[0]


@pytest.fixture(scope="module", params=[1, 2])
def steady(request, mesh):
    params = steady_parameters(request.param)
    data = derive_data(ExactSolution(params), params)
    return solve_steady(mesh, params, data), data


def test_manufactured_state_passes(steady):
    state, data = steady
    rep = check_conformity(state, (), "steady", data)
    assert rep.passed(1e-10), rep.table()
    assert set(rep.raw) == {name for name, _ in CHECKS}
    assert rep.relative("div_us") <= 1e-11


def test_flux_identities_need_the_data_offset(steady):
    state, data = steady
    rep = check_conformity(state, (), "steady", None)
    assert rep.relative("interface_flux") > 1e-6 or rep.relative("mass_balance") > 1e-6


def test_corrupted_cell_coefficient_is_detected(steady):
    state, data = steady
    x = state.x.copy()
    dm = state.dofmap
    x[dm.index["u"][5, 0]] += 1.0
    rep = check_conformity(SystemState(state.mesh, state.params, x), (), "steady", data)
    assert rep.relative("normal_jump_u") >= 0.1
    assert "normal_jump_u" in rep.failures()
    assert not rep.passed()


def test_homogeneous_solve_is_clean(mesh):
    params = steady_parameters(2)
    state = solve_steady(mesh, params, ProblemData.homogeneous())
    rep = check_conformity(state, (), "steady", ProblemData.homogeneous())
    assert rep.passed() and rep.worst() <= 1e-12


def test_history_length_is_enforced(steady):
    state, _ = steady
    p = state.params.replace(dt=0.1)
    with pytest.raises(ValueError):
        check_conformity(SystemState(state.mesh, p, state.x), (), "BDF2")


def test_report_serialization(steady):
    state, data = steady
    rep = check_conformity(state, (), "steady", data)
    lines = rep.table().splitlines()
    assert len(lines) == len(CHECKS) + 1
    assert all(line.rstrip().endswith(("ok", "(data offset)")) for line in lines[1:])
    rows = rep.to_csv().splitlines()
    assert rows[0] == "check,raw,scale,relative,data_offset"
    assert len(rows) == len(CHECKS) + 1
    vals = {r.split(",")[0]: float(r.split(",")[3]) for r in rows[1:]}
    assert vals["div_us"] == pytest.approx(rep.relative("div_us"), rel=1e-5, abs=1e-300)
