"""Localization tensors, effective integrals, second-moment correction, Voigt packing.

Rank-6 tensors are indexed ``D[a, b, c, d, e, f]`` where ``(a, b)`` is the
displacement-gradient pair and ``c`` the extra derivative of ``u_a,bc``.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from gradhom.cell_solver import compute_CM, localization_L, solve_cell_problems
from gradhom.errors import ConsistencyError, SymmetryError
from gradhom.fem_core import SolverSettings

VOIGT2 = [(0, 0), (1, 1), (0, 1)]
VOIGT3 = [(0, 0, 0), (1, 1, 0), (0, 1, 1), (1, 1, 1), (0, 0, 1), (0, 1, 0)]
VOIGT2_LABELS = ["11", "22", "12"]
VOIGT3_LABELS = ["111", "221", "122", "222", "112", "121"]

SYMMETRY_TOL = 1e-6
IDENTITY_TOL = 1e-8


@dataclasses.dataclass
class LocalizationFields:
    """``L`` (ne, nq, 2, 2, 2, 2) and ``M`` (ne, nq, 2, 2, 2, 2, 2) at quadrature points."""

    L: np.ndarray
    M: np.ndarray


def localization_M(system, phi, psi, L=None):
    """``M[e, q, a, b, c, i, j] = y_c L_abij + phi_abi d_jc + d psi_abci / d y_j``."""
    geo = system.geometry
    elements = system.mesh.elements
    if L is None:
        L = localization_L(system, phi)
    phi_q = np.einsum("qn,xyenk->eqxyk", geo.N, phi[:, :, elements])
    dpsi = np.einsum("eqnl,xyzenk->eqxyzkl", geo.grad, psi[:, :, :, elements])
    M = np.einsum("eqc,eqabij->eqabcij", geo.points, L)
    M += np.einsum("eqabi,jc->eqabcij", phi_q, np.eye(2))
    M += dpsi
    return M


def localization_fields(system, solution):
    L = localization_L(system, solution.phi)
    return LocalizationFields(L=L, M=localization_M(system, solution.phi, solution.psi, L))


def integrate_effective(system, L, M, epsilon):
    """Volume averages ``C_bar``, ``D_bar`` (times eps^2) and ``G_bar`` (times 2 eps)."""
    geo = system.geometry
    C = system.element_C
    V = system.mesh.volume
    # 'P' indexes elements so that 'e' stays free for tensor slots
    CL = np.einsum("Pijkl,Pqcdkl->Pqijcd", C, L, optimize=True)
    Cbar = geo.integrate(np.einsum("Pqabij,Pqijcd->Pqabcd", L, CL, optimize=True)) / V
    CM_ = np.einsum("Pijkl,Pqdefkl->Pqijdef", C, M, optimize=True)
    Dbar = epsilon**2 * geo.integrate(np.einsum("Pqabcij,Pqijdef->Pqabcdef", M, CM_, optimize=True)) / V
    Gbar = 2 * epsilon * geo.integrate(np.einsum("Pqabij,Pqijcde->Pqabcde", L, CM_, optimize=True)) / V
    return Cbar, Dbar, Gbar


def second_moment(system, epsilon):
    """``I_kn = eps^2 / V * integral y_k y_n``, the global second moment per unit volume."""
    geo = system.geometry
    y = geo.points
    return epsilon**2 * geo.integrate(np.einsum("eqk,eqn->eqkn", y, y)) / system.mesh.volume


def apply_correction(Cbar, Dbar, I_bar):
    """``D^M_ijklmn = Dbar_ijklmn - C^M_ijlm I_kn``; ``C^M`` is ``Cbar`` unchanged."""
    return Cbar, Dbar - np.einsum("ijlm,kn->ijklmn", Cbar, I_bar)


def _worst(tensor, permuted, names, scale=None):
    scale = max(float(np.abs(tensor).max()), scale or 0.0, 1e-300)
    diff = np.abs(tensor - permuted) / scale
    idx = np.unravel_index(int(np.argmax(diff)), diff.shape)
    other = tuple(idx[k] for k in names)
    return float(diff[idx]), idx, other


def check_symmetry(tensor, permutations, tol=SYMMETRY_TOL, what="tensor", scale=None):
    """Raise :class:`SymmetryError` naming the worst index pair if any permutation fails.

    Deviations are measured against the largest entry, or against ``scale``
    when that is larger (a tensor that vanishes up to round-off has no
    meaningful relative symmetry).
    """
    for perm in permutations:
        dev, idx, other = _worst(tensor, tensor.transpose(perm), perm, scale)
        if dev > tol:
            a = "".join(str(i + 1) for i in idx)
            b = "".join(str(i + 1) for i in other)
            raise SymmetryError(
                f"{what} entries {a} and {b} differ by {dev:.3e} relative to the largest entry (tolerance {tol:g})"
            )


RANK4_SYMMETRIES = [(1, 0, 2, 3), (0, 1, 3, 2), (2, 3, 0, 1)]
RANK6_SYMMETRIES = [(1, 0, 2, 3, 4, 5), (0, 1, 2, 4, 3, 5), (3, 4, 5, 0, 1, 2)]


def voigt_pack(C, D=None, tol=SYMMETRY_TOL, D_scale=None):
    """Pack ``C`` into 3x3 and, when given, ``D`` into 6x6 Voigt matrices.

    Strain pairs map 11, 22, 12 to rows 1-3; gradient triples map
    111, 221, 122, 222, 112, 121 to rows 1-6.  ``D_scale`` sets a floor for
    the symmetry check of ``D``.
    """
    C = np.asarray(C, dtype=float)
    check_symmetry(C, RANK4_SYMMETRIES, tol, "C")
    C3 = np.array([[C[a + b] for b in VOIGT2] for a in VOIGT2])
    if D is None:
        return C3
    D = np.asarray(D, dtype=float)
    check_symmetry(D, RANK6_SYMMETRIES, tol, "D", D_scale)
    D6 = np.array([[D[a + b] for b in VOIGT3] for a in VOIGT3])
    return C3, D6


def block_deviation(D6):
    """Largest departure from the square-symmetric block pattern, relative to ``max|D|``.

    The two 3x3 diagonal blocks must agree and the off-diagonal blocks vanish.
    """
    scale = max(float(np.abs(D6).max()), 1e-300)
    A, B = D6[:3, :3], D6[3:, 3:]
    off = max(float(np.abs(D6[:3, 3:]).max()), float(np.abs(D6[3:, :3]).max()))
    return max(float(np.abs(A - B).max()), off) / scale


def consistency_identity(system, L, CM):
    """Relative gaps of ``<C L>`` and ``<L^T C L>`` to ``C^M``; both vanish for exact cell solutions."""
    geo = system.geometry
    V = system.mesh.volume
    CL = geo.integrate(np.einsum("eijkl,eqabkl->eqijab", system.element_C, L, optimize=True)) / V
    LCL = geo.integrate(np.einsum("eijkl,eqabij,eqcdkl->eqabcd", system.element_C, L, L, optimize=True)) / V
    scale = max(float(np.abs(CM).max()), 1e-300)
    return float(np.abs(CL - CM).max() / scale), float(np.abs(LCL - CM).max() / scale)


@dataclasses.dataclass
class EffectiveTensors:
    """Homogenized tensors in global units (MPa, N, N/mm, mm^2)."""

    C: np.ndarray
    D: np.ndarray
    G_bar: np.ndarray
    I_bar: np.ndarray
    epsilon: float
    diagnostics: dict = dataclasses.field(default_factory=dict)

    @property
    def C_voigt(self):
        return voigt_pack(self.C)

    @property
    def D_scale(self):
        """Magnitude of the uncorrected gradient integral, ``|C| tr(I)``."""
        return float(np.abs(self.C).max() * np.trace(self.I_bar))

    @property
    def D_voigt(self):
        return voigt_pack(self.C, self.D, D_scale=self.D_scale)[1]

    @property
    def G_norm(self):
        return float(np.linalg.norm(self.G_bar))

    @property
    def G_relative(self):
        """``|G_bar|`` divided by the natural scale ``(|C| |D|)^(1/2)``."""
        scale = np.sqrt(np.linalg.norm(self.C) * np.linalg.norm(self.D))
        return self.G_norm / scale if scale > 0 else self.G_norm

    def block_deviation(self):
        return block_deviation(self.D_voigt)

    def D_eigenvalues(self):
        return np.linalg.eigvalsh(0.5 * (self.D_voigt + self.D_voigt.T))


def homogenize(mesh, material, settings: SolverSettings | None = None, epsilon=1.0, distribution="stiffness"):
    """Full pipeline on a periodic RVE mesh; returns ``(EffectiveTensors, CellSolution)``.

    The consistency identity ``<C L> = <L^T C L> = C^M`` is checked on every
    run and raises :class:`ConsistencyError` beyond 1e-8 relative, which
    usually means the solver tolerance is too loose.
    """
    settings = settings or SolverSettings()
    sol = solve_cell_problems(mesh, material, settings, distribution=distribution)
    system = sol.system
    fields = localization_fields(system, sol)
    _, sym_dev = compute_CM(mesh, material, sol.phi, system=system, return_deviation=True)
    gap_CL, gap_LCL = consistency_identity(system, fields.L, sol.C_M)
    if max(gap_CL, gap_LCL) > IDENTITY_TOL:
        raise ConsistencyError(
            f"<C L> and <L^T C L> differ from C^M by {gap_CL:.3e} and {gap_LCL:.3e} "
            f"(limit {IDENTITY_TOL:g}); tighten rel_tol (now {settings.rel_tol:g})"
        )
    Cbar, Dbar, Gbar = integrate_effective(system, fields.L, fields.M, epsilon)
    I_bar = second_moment(system, epsilon)
    C, D = apply_correction(sol.C_M, Dbar, I_bar)
    diagnostics = {
        "identity_CL": gap_CL,
        "identity_LCL": gap_LCL,
        "CM_symmetry_deviation": sym_dev,
        "source_distribution": distribution,
        "residuals": {k: float(v["residual"]) for k, v in sol.residuals.items()},
        "iterations": {k: int(v["iterations"]) for k, v in sol.residuals.items()},
        "n_nodes": mesh.n_nodes,
        "n_elements": mesh.n_elements,
        "volume": mesh.volume,
    }
    eff = EffectiveTensors(C=C, D=D, G_bar=Gbar, I_bar=I_bar, epsilon=epsilon, diagnostics=diagnostics)
    return eff, sol
