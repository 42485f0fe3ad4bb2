import math

import numpy as np
import pytest

from sbhdg.benchmarks import (SURFSUB_DT, SURFSUB_SETS, SURFSUB_T, inflow, run_surfsub,
                              surfsub_mesh, surfsub_parameters)
from sbhdg.parameters import InvalidParameterError


def test_parameter_sets():
    p = surfsub_parameters(3)
    assert (p.kappa, p.c0, p.lam, p.mu_b) == SURFSUB_SETS[3] == (1e-4, 1e-4, 1e6, 1e6)
    assert p.mu_s == p.alpha == p.gamma == 1.0 and p.dt == SURFSUB_DT
    assert math.isclose(SURFSUB_T / SURFSUB_DT, 50)
    with pytest.raises(InvalidParameterError):
        surfsub_parameters(4)


def test_inflow_profile():
    x = np.array([[0.0, 0.5], [2.0, 0.5], [1.0, 0.0], [1.0, 1.0]])
    v = inflow(x)
    assert v[0] == pytest.approx([10.0, 0.0])
    assert not v[1:].any()


def test_mesh_levels():
    assert surfsub_mesh(1).n_cells == 128
    assert surfsub_mesh(2).n_cells == 512
    with pytest.raises(InvalidParameterError):
        surfsub_mesh(0)


@pytest.mark.parametrize("which", [1, 2, 3])
def test_short_run_keeps_identities(which):
    mesh = surfsub_mesh(1)
    seen = []
    run = run_surfsub(which, mesh, k=2, T=3 * SURFSUB_DT,
                      on_step=lambda s, r: seen.append(s.info["step"]))
    assert seen == [1, 2, 3] and len(run.records) == 3
    assert run.all_finite()
    assert run.max_flux_defect() <= 1e-10
    assert run.max_vertical_jump() <= 1e-10
    assert all(r.conformity.passed() for r in run.records)
    assert run.final.t == pytest.approx(3 * SURFSUB_DT)
    assert run.final.norm() > 0
