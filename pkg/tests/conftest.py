import warnings

import numpy as np
import pytest

from gradhom import CellGeometry, MicroMaterial, build_square_lattice_rve, homogenize
from gradhom.cell_solver import solve_cell_problems

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def report_line():
    """Record one acceptance line; shown in the terminal summary."""

    def record(line):
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


@pytest.fixture(scope="session")
def lattice_material():
    return MicroMaterial.lattice()


@pytest.fixture(scope="session")
def solid_material():
    return MicroMaterial.homogeneous(100.0, 0.3)


@pytest.fixture(scope="session")
def lattice_mesh():
    return build_square_lattice_rve(CellGeometry(1.0, 0.1), 20)


@pytest.fixture(scope="session")
def lattice_solution(lattice_mesh, lattice_material):
    return solve_cell_problems(lattice_mesh, lattice_material)


@pytest.fixture(scope="session")
def lattice_tensors(lattice_mesh, lattice_material):
    eff, _ = homogenize(lattice_mesh, lattice_material)
    return eff


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture
def no_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        yield
