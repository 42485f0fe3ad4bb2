import numpy as np
import pytest

from sbhdg.mesh import GeometrySpec, generate, refine
from sbhdg.parameters import ParameterSet


@pytest.fixture(scope="session")
def coarse_mesh():
    """8 cells on the split unit square."""
    return generate(GeometrySpec("unit-square-split", 1))


@pytest.fixture(scope="session")
def small_mesh(coarse_mesh):
    """32 cells, 4 of them touching the interface on each side."""
    return refine(coarse_mesh)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def generic_params(k: int, **overrides) -> ParameterSet:
    """Order-one constants with no special relations between them."""
    base = dict(k=k, mu_s=0.7, mu_b=1.3, inv_lambda=0.3, alpha=0.6, c0=0.2, kappa=0.4, gamma=0.9)
    base.update(overrides)
    return ParameterSet(**base)


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, passed: bool, detail: str) -> bool:
    """Queue one summary line for the terminal report and return ``passed``."""
    ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  criterion {number}: {detail}")
    print(ACCEPTANCE_LINES[-1])
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
