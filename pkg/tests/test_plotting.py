import numpy as np
import pytest

from sbhdg.drivers import solve_steady
from sbhdg.export import interface_profile, snapshot
from sbhdg.manufactured import (CSV_FIELDS, ConvergenceReport, ExactSolution, derive_data,
                                level_meshes, steady_parameters)
from sbhdg.plotting import plot_convergence, plot_interface_profile, plot_snapshot

PNG = b"\x89PNG\r\n\x1a\n"


@pytest.fixture(scope="module")
def state():
    mesh = level_meshes(1, start_resolution=2)[0]
    params = steady_parameters(1)
    return solve_steady(mesh, params, derive_data(ExactSolution(params), params))


def _report():
    rep = ConvergenceReport("steady", 2)
    for i in range(3):
        h = 0.25 / 2 ** i
        rep.add(128 * 4 ** i, h, {f: h ** (2 + i % 2) for f in CSV_FIELDS}, 1e-15, 1.0)
    return rep


def test_convergence_plot_is_deterministic(tmp_path):
    a = plot_convergence(_report(), tmp_path / "a.png").read_bytes()
    b = plot_convergence(_report(), tmp_path / "b.png").read_bytes()
    assert a.startswith(PNG) and a == b


def test_snapshot_and_profile_plots(tmp_path, state):
    snap = snapshot(state)
    a = plot_snapshot(snap, tmp_path / "f.png", "title").read_bytes()
    b = plot_snapshot(snap, tmp_path / "g.png", "title").read_bytes()
    assert a.startswith(PNG) and a == b
    p = plot_interface_profile(interface_profile(state), tmp_path / "i.png", "profile")
    assert p.read_bytes().startswith(PNG)
