import numpy as np
import pytest

from gradhom import MicroMaterial, isotropic_stiffness
from gradhom.validation import (
    DEFAULT_THETAS,
    EnergyCurve,
    SpecimenSpec,
    bfs_basis,
    bfs_dofs,
    bfs_element_matrix,
    macro_classical_solve,
    macro_gradient_solve,
    micro_reference_solve,
    size_effect_study,
    study_specs,
)

SOLID = MicroMaterial.homogeneous(100.0, 0.3)
C_SOLID = isotropic_stiffness(100.0, 0.3)
ZERO_D = np.zeros((2,) * 6)


def corner_dofs(hx, hy):
    """Nodal dof values (16,) of a scalar field given as (f, f_x, f_y, f_xy) callables."""
    return [(cx * hx, cy * hy) for cx, cy in [(0, 0), (1, 0), (1, 1), (0, 1)]]


def li(corner, comp, kind):
    """Local element dof of a BFS rectangle, ordered by function then component."""
    return 2 * (4 * corner + kind) + comp


def interpolate(f, fx, fy, fxy, hx, hy):
    coeffs = []
    for x, y in corner_dofs(hx, hy):
        coeffs += [f(x, y), fx(x, y), fy(x, y), fxy(x, y)]
    return np.array(coeffs)


class TestSpecimenSpec:
    def test_properties(self):
        spec = SpecimenSpec(L=6.0, l=1.5)
        assert spec.ratio == 4 and spec.cells == 16
        assert spec.with_model("gradient").model == "gradient"

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(L=5.0, l=2.0),
            dict(L=0.0, l=1.0),
            dict(L=2.0, l=1.0, thetas=(0.0, 0.3)),
            dict(L=2.0, l=1.0, model="plate"),
            dict(L=2.0, l=1.0, t_ratio=0.0),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            SpecimenSpec(**kwargs)

    def test_study_lists(self):
        ratio = study_specs("ratio")
        assert [s.ratio for s in ratio] == [2, 4, 6, 10]
        cells = study_specs("cells", L=4.0)
        assert [s.cells for s in cells] == [16, 64, 400]
        assert all(s.L == 4.0 for s in cells)
        with pytest.raises(ValueError):
            study_specs("random")


class TestEnergyCurve:
    def test_quadratic_fit(self):
        th = np.array(DEFAULT_THETAS)
        curve = EnergyCurve(th, 0.5 * 3.0 * th**2, "micro", SpecimenSpec(2.0, 1.0))
        assert curve.k == pytest.approx(3.0)
        assert curve.fit_residual() < 1e-14
        assert curve.energy_at(0.2) == pytest.approx(0.06)
        assert curve.samples[0] == (0.0, 0.0)


class TestBFS:
    def test_reproduces_cubics(self):
        hx, hy = 0.7, 1.3
        w, N, G, H = bfs_basis(hx, hy)
        from gradhom.fem_core import gauss_rule

        p = gauss_rule(4).points
        x, y = 0.5 * (p[:, 0] + 1) * hx, 0.5 * (p[:, 1] + 1) * hy
        # bicubic test field x^3 y^2 + x y
        f = lambda x, y: x**3 * y**2 + x * y  # noqa: E731
        c = interpolate(f, lambda x, y: 3 * x**2 * y**2 + y, lambda x, y: 2 * x**3 * y + x, lambda x, y: 6 * x**2 * y + 1, hx, hy)
        np.testing.assert_allclose(N @ c, f(x, y), atol=1e-12)
        np.testing.assert_allclose(G[:, :, 0] @ c, 3 * x**2 * y**2 + y, atol=1e-12)
        np.testing.assert_allclose(H[:, :, 0, 1] @ c, 6 * x**2 * y + 1, atol=1e-12)
        np.testing.assert_allclose(H[:, :, 0, 0] @ c, 6 * x * y**2, atol=1e-12)
        assert w.sum() == pytest.approx(hx * hy)

    def test_rigid_modes(self):
        K = bfs_element_matrix(C_SOLID, ZERO_D, 1.0, 1.0)
        # translation in u1: value dofs of component 0 equal one
        t = np.zeros(32)
        rot = np.zeros(32)
        for c, (x, y) in enumerate(corner_dofs(1.0, 1.0)):
            t[li(c, 0, 0)] = 1.0
            rot[li(c, 0, 0)] = -y  # u1 = -y, du1/dy = -1
            rot[li(c, 0, 2)] = -1.0
            rot[li(c, 1, 0)] = x  # u2 = x, du2/dx = 1
            rot[li(c, 1, 1)] = 1.0
        assert np.abs(K @ t).max() < 1e-12 and np.abs(K @ rot).max() < 1e-10

    def test_uniform_strain_energy(self):
        hx, hy = 0.5, 0.8
        K = bfs_element_matrix(C_SOLID, ZERO_D, hx, hy)
        grad = np.array([[0.01, 0.004], [0.0, -0.02]])
        u = np.zeros(32)
        for c, (x, y) in enumerate(corner_dofs(hx, hy)):
            for a in range(2):
                u[li(c, a, 0)] = grad[a, 0] * x + grad[a, 1] * y
                u[li(c, a, 1)] = grad[a, 0]
                u[li(c, a, 2)] = grad[a, 1]
        eps = 0.5 * (grad + grad.T)
        assert 0.5 * u @ K @ u == pytest.approx(0.5 * np.einsum("ij,ijkl,kl", eps, C_SOLID, eps) * hx * hy, rel=1e-12)

    def test_gradient_term_energy(self):
        D = np.zeros((2,) * 6)
        D[0, 0, 0, 0, 0, 0] = 2.0
        K = bfs_element_matrix(np.zeros((2,) * 4), D, 1.0, 1.0)
        # u1 = x^2 / 2 has u1,11 = 1: energy D_111111 / 2 per unit area
        u = np.zeros(32)
        for c, (x, y) in enumerate(corner_dofs(1.0, 1.0)):
            u[li(c, 0, 0)] = 0.5 * x**2
            u[li(c, 0, 1)] = x
        assert 0.5 * u @ K @ u == pytest.approx(1.0, rel=1e-12)

    def test_dof_numbering(self):
        d = bfs_dofs(np.array([[0, 1, 3, 2]]))[0]
        assert list(d[:8]) == [0, 4, 1, 5, 2, 6, 3, 7]
        assert sorted(d) == list(range(32))


class TestSolves:
    def test_zero_rotation_zero_energy(self):
        spec = SpecimenSpec(L=2.0, l=1.0, thetas=(0.0, 0.1), macro_elements=8)
        for curve in (macro_classical_solve(spec, C_SOLID), macro_gradient_solve(spec, C_SOLID, ZERO_D)):
            assert curve.energies[0] == 0.0 and curve.energies[1] > 0

    def test_quadratic_in_angle(self):
        spec = SpecimenSpec(L=2.0, l=1.0, macro_elements=8)
        curve = macro_classical_solve(spec, C_SOLID)
        assert curve.energies[2] / curve.energies[1] == pytest.approx(4.0, rel=1e-12)
        assert curve.fit_residual() < 1e-12

    def test_homogeneous_micro_matches_classical(self):
        # L/l = 2 at 20 elements per cell is the same 40 x 40 grid as the macro mesh
        spec = SpecimenSpec(L=2.0, l=1.0, t_ratio=0.2)
        micro = micro_reference_solve(spec, SOLID)
        classical = macro_classical_solve(spec, C_SOLID)
        assert abs(micro.k - classical.k) / classical.k < 1e-3

    def test_homogeneous_models_agree(self):
        spec = SpecimenSpec(L=2.0, l=1.0, t_ratio=0.2)
        micro = micro_reference_solve(spec, SOLID)
        gradient = macro_gradient_solve(spec, C_SOLID, ZERO_D)
        assert abs(gradient.k - micro.k) / micro.k < 5e-3

    def test_zero_gradient_tensor_is_bfs_classical(self):
        spec = SpecimenSpec(L=2.0, l=1.0, macro_elements=10)
        a = macro_gradient_solve(spec, C_SOLID, ZERO_D)
        b = macro_classical_solve(spec, C_SOLID, element="bfs")
        np.testing.assert_allclose(a.energies, b.energies, rtol=1e-8)
        assert b.model == "classical"

    def test_unknown_element(self):
        with pytest.raises(ValueError):
            macro_classical_solve(SpecimenSpec(L=2.0, l=1.0), C_SOLID, element="q8")

    def test_indefinite_gradient_tensor_warns(self):
        D = np.zeros((2,) * 6)
        D[0, 0, 0, 0, 0, 0] = -1.0
        spec = SpecimenSpec(L=2.0, l=1.0, macro_elements=4)
        with pytest.warns(UserWarning, match="indefinite"):
            curve = macro_gradient_solve(spec, C_SOLID, D)
        assert curve.meta["warnings"]


class TestStudy:
    def test_lattice_ordering_at_ratio_two(self, lattice_tensors):
        spec = SpecimenSpec(L=2.0, l=1.0)
        curves, rows = size_effect_study([spec], lattice_tensors.C, lattice_tensors.D)
        by = {c.model: c for c in curves}
        e_mic, e_cl, e_gr = (by[m].energy_at(0.2) for m in ("micro", "classical", "gradient"))
        assert e_cl < e_mic
        assert abs(e_gr - e_mic) < abs(e_cl - e_mic)
        assert [r.model for r in rows] == ["micro", "classical", "gradient"]
        assert rows[0].rel_error_vs_micro == 0.0

    def test_cells_study_classical_independent_of_cell_size(self, lattice_tensors):
        specs = [s.with_model("classical") for s in study_specs("cells", L=4.0, macro_elements=16)]
        curves = [macro_classical_solve(s, lattice_tensors.C) for s in specs]
        for c in curves[1:]:
            np.testing.assert_allclose(c.energies, curves[0].energies, rtol=1e-12)
