import numpy as np
import pytest

from gradhom import CellGeometry, MicroMaterial, build_laminate_rve, build_square_lattice_rve, compute_CM, solve_cell_problems, solve_phi, solve_psi
from gradhom.cell_solver import PAIRS, SOURCE_DISTRIBUTIONS, TRIPLES, at_points, cell_system, psi_sources, source_means, source_weights
from gradhom.errors import ConsistencyError
from gradhom.lattice_mesh import INCLUSION, MATRIX, isotropic_stiffness


def mirrored_node(e):
    """Map structured node (i, j) to (j, i) on an e x e grid."""
    idx = np.arange((e + 1) ** 2)
    i, j = idx % (e + 1), idx // (e + 1)
    return i * (e + 1) + j


@pytest.fixture(scope="module")
def laminate():
    mesh = build_laminate_rve(1.0, 16)
    return mesh, MicroMaterial(100.0, 0.0, 50.0, 0.0)


class TestHomogeneous:
    @pytest.mark.parametrize("distribution", SOURCE_DISTRIBUTIONS)
    def test_fluctuations_vanish(self, distribution):
        mesh = build_square_lattice_rve(CellGeometry(1.0, 0.2), 10)
        mat = MicroMaterial.homogeneous(100.0, 0.3)
        sol = solve_cell_problems(mesh, mat, distribution=distribution)
        assert np.abs(sol.phi).max() < 1e-12
        assert np.abs(sol.psi).max() < 1e-12

    def test_CM_closed_form(self):
        mesh = build_square_lattice_rve(CellGeometry(1.0, 0.2), 10)
        mat = MicroMaterial.homogeneous(100.0, 0.3)
        CM = compute_CM(mesh, mat, solve_phi(mesh, mat).phi)
        # plane strain: lambda + 2 mu, lambda, mu
        assert CM[0, 0, 0, 0] == pytest.approx(134.6153846, rel=1e-8)
        assert CM[0, 0, 1, 1] == pytest.approx(57.6923077, rel=1e-8)
        assert CM[0, 1, 0, 1] == pytest.approx(38.4615385, rel=1e-8)
        np.testing.assert_allclose(CM, isotropic_stiffness(100.0, 0.3), atol=1e-10)


class TestLaminate:
    def test_piecewise_linear_phi(self, laminate):
        mesh, mat = laminate
        sol = solve_phi(mesh, mat)
        _, grads = at_points(sol.system, sol.phi[0, 0])
        slope = grads[:, :, 0, 0]
        # uniform stress: (1 + slope) E = harmonic mean 200/3
        np.testing.assert_allclose(slope[mesh.phase == MATRIX], -1 / 3, atol=1e-10)
        np.testing.assert_allclose(slope[mesh.phase == INCLUSION], 1 / 3, atol=1e-10)
        assert np.abs(grads[:, :, 1, :]).max() < 1e-10

    def test_CM_harmonic_mean(self, laminate):
        mesh, mat = laminate
        CM = compute_CM(mesh, mat, solve_phi(mesh, mat).phi)
        assert CM[0, 0, 0, 0] == pytest.approx(200 / 3, rel=1e-10)
        # along the layers the Voigt (arithmetic) bound is exact
        assert CM[1, 1, 1, 1] == pytest.approx(75.0, rel=1e-10)


class TestSolvability:
    def test_source_mean_vanishes(self, lattice_solution):
        sol = lattice_solution
        means = source_means(sol.system, sol.phi, sol.C_M)
        assert np.abs(means).max() < 1e-8 * np.abs(sol.C_M).max()

    @pytest.mark.parametrize("distribution", SOURCE_DISTRIBUTIONS)
    def test_pointwise_source_has_zero_mean(self, lattice_solution, distribution):
        sol = lattice_solution
        S = psi_sources(sol.system, sol.phi, sol.C_M, distribution)
        mean = sol.system.geometry.integrate(S) / sol.system.mesh.volume
        assert np.abs(mean).max() < 1e-8 * np.abs(sol.C_M).max()

    def test_stiffness_weights_have_unit_mean(self, lattice_solution):
        system = lattice_solution.system
        w = source_weights(system, "stiffness")
        assert system.mesh.element_areas() @ w == pytest.approx(system.mesh.volume)
        assert w[system.mesh.phase == INCLUSION].max() < 1e-6

    def test_wrong_CM_rejected(self, lattice_mesh, lattice_material, lattice_solution):
        bad = lattice_solution.C_M * 1.01
        with pytest.raises(ConsistencyError, match="does not belong"):
            solve_psi(lattice_mesh, lattice_material, lattice_solution, bad)

    def test_unknown_distribution(self, lattice_mesh, lattice_material, lattice_solution):
        with pytest.raises(ValueError, match="distribution"):
            solve_psi(lattice_mesh, lattice_material, lattice_solution, lattice_solution.C_M, distribution="mass")


class TestFields:
    def test_zero_mean_and_periodic(self, lattice_mesh, lattice_solution):
        sol = lattice_solution
        mesh = lattice_mesh
        for a, b in PAIRS:
            assert np.abs(sol.system.constraint_residual(sol.phi[a, b])).max() < 1e-12
            np.testing.assert_array_equal(sol.phi[a, b][mesh.pair_slave], sol.phi[a, b][mesh.pair_master])
        for a, b, c in TRIPLES:
            assert np.abs(sol.system.constraint_residual(sol.psi[a, b, c])).max() < 1e-12
            np.testing.assert_array_equal(sol.psi[a, b, c][mesh.pair_slave], sol.psi[a, b, c][mesh.pair_master])

    def test_minor_symmetric_loads(self, lattice_solution):
        phi = lattice_solution.phi
        np.testing.assert_allclose(phi[0, 1], phi[1, 0], atol=1e-10 * np.abs(phi).max())

    def test_mirror_symmetry(self, lattice_mesh, lattice_solution):
        e = lattice_mesh.info["elements_per_cell_edge"]
        mirror = mirrored_node(e)
        psi = lattice_solution.psi
        scale = np.abs(psi).max()
        # reflecting y1 <-> y2 swaps every index 1 <-> 2
        np.testing.assert_allclose(psi[0, 0, 1][mirror][:, ::-1], psi[1, 1, 0], atol=1e-6 * scale)  # CG tolerance limited
        phi = lattice_solution.phi
        np.testing.assert_allclose(phi[0, 0][mirror][:, ::-1], phi[1, 1], atol=1e-8 * np.abs(phi).max())

    def test_CM_ignores_constant_shift(self, lattice_mesh, lattice_material, lattice_solution):
        shifted = lattice_solution.phi + np.array([0.3, -0.7])
        np.testing.assert_allclose(
            compute_CM(lattice_mesh, lattice_material, shifted), lattice_solution.C_M, rtol=1e-12, atol=1e-14
        )

    def test_CM_symmetric_and_positive(self, lattice_solution):
        CM = lattice_solution.C_M
        np.testing.assert_array_equal(CM, CM.transpose(2, 3, 0, 1))
        V = np.array([[CM[0, 0, 0, 0], CM[0, 0, 1, 1], 0], [CM[1, 1, 0, 0], CM[1, 1, 1, 1], 0], [0, 0, CM[0, 1, 0, 1]]])
        assert np.linalg.eigvalsh(V).min() > 0

    def test_residuals_recorded(self, lattice_solution):
        names = set(lattice_solution.residuals)
        assert {"phi_11", "phi_12", "psi_111", "psi_221"} <= names and len(names) == 12


def test_refinement_converges():
    mat = MicroMaterial.lattice()
    values = []
    for e in (20, 40, 80):
        mesh = build_square_lattice_rve(CellGeometry(1.0, 0.1), e)
        sol = solve_phi(mesh, mat)
        values.append(compute_CM(mesh, mat, sol.phi, system=sol.system)[0, 0, 0, 0])
    d1, d2 = abs(values[1] - values[0]), abs(values[2] - values[1])
    assert d2 < d1
    # Q4 stiffening: the effective stiffness decreases under refinement
    assert values[0] > values[1] > values[2]


def test_cell_system_is_cached_on_solution(lattice_solution):
    assert lattice_solution.system.is_condensed
    assert cell_system is not None
