"""First- and second-order periodic cell problems.

``phi[a, b]`` is the nodal fluctuation driven by a unit macroscopic
displacement gradient ``u_a,b``; ``psi[a, b, c]`` the fluctuation driven by a
unit second gradient ``u_a,bc``.  Fields are stored as arrays of shape
``(2, 2, N, 2)`` and ``(2, 2, 2, N, 2)`` (last axis = displacement component).
"""
from __future__ import annotations

import dataclasses
import itertools

import numpy as np

from gradhom.errors import ConsistencyError, SolverError
from gradhom.fem_core import (
    LinearSystem,
    SolverSettings,
    assemble,
    condense_periodic_zero_mean,
    scatter_indices,
    solve_many,
)

PAIRS = list(itertools.product(range(2), repeat=2))
TRIPLES = list(itertools.product(range(2), repeat=3))
DELTA = np.eye(2)
# unit displacement-gradient modes: E[a, b, i, j] = d_ia d_jb
UNIT_GRADIENTS = np.einsum("ai,bj->abij", DELTA, DELTA)


def label(indices):
    return "".join(str(k + 1) for k in indices)


@dataclasses.dataclass
class CellSolution:
    phi: np.ndarray
    psi: np.ndarray | None = None
    C_M: np.ndarray | None = None
    residuals: dict = dataclasses.field(default_factory=dict)
    system: LinearSystem | None = dataclasses.field(default=None, repr=False)


def cell_system(mesh, material):
    return condense_periodic_zero_mean(assemble(mesh, material))


def nodal_load(system, elem_load):
    """Scatter element loads (ne, 4, 2) into a full-length vector."""
    dofs = scatter_indices(system.mesh.elements)
    return np.bincount(dofs.ravel(), weights=elem_load.reshape(-1), minlength=system.n_full)


def at_points(system, field):
    """Values (ne, nq, 2) and gradients (ne, nq, 2, 2) of a nodal field, ``g[..., k, l] = du_k/dy_l``."""
    geo = system.geometry
    ue = field[system.mesh.elements]  # (ne, 4, 2)
    values = np.einsum("qa,eak->eqk", geo.N, ue)
    grads = np.einsum("eqal,eak->eqkl", geo.grad, ue)
    return values, grads


def localization_L(system, phi):
    """``L[e, q, a, b, i, j] = d_ia d_jb + d phi_abi / d y_j``."""
    geo = system.geometry
    ue = phi[:, :, system.mesh.elements]  # (2, 2, ne, 4, 2)
    grads = np.einsum("eqal,xyeak->eqxykl", geo.grad, ue)
    return grads + UNIT_GRADIENTS


def phi_loads(system):
    """Right-hand sides ``-integral C_ijab dv_i/dy_j`` for the four unit gradients."""
    geo = system.geometry
    C = system.element_C
    loads = []
    for a, b in PAIRS:
        f = -np.einsum("eq,eij,eqnj->eni", geo.wdet, C[:, :, :, a, b], geo.grad)
        loads.append(nodal_load(system, f))
    return loads


def _solve_labelled(system, loads, labels, settings):
    try:
        return solve_many(system, loads, settings, labels=labels)
    except SolverError as exc:
        raise SolverError(f"cell problem {exc.label}: {exc}", residual=exc.residual, label=exc.label) from exc


def solve_phi(mesh, material, settings: SolverSettings | None = None, system=None):
    """Solve the four first-order cell problems; returns a :class:`CellSolution`."""
    system = system or cell_system(mesh, material)
    labels = [f"phi_{label(p)}" for p in PAIRS]
    results = _solve_labelled(system, phi_loads(system), labels, settings)
    phi = np.zeros((2, 2, mesh.n_nodes, 2))
    residuals = {}
    for (a, b), name, res in zip(PAIRS, labels, results):
        phi[a, b] = res.field
        residuals[name] = res.info
    return CellSolution(phi=phi, residuals=residuals, system=system)


def compute_CM(mesh, material, phi, system=None, return_deviation=False):
    """``C^M_abcd = <C_ijkl L_abij L_cdkl>`` with minor and major symmetry enforced."""
    system = system or assemble(mesh, material)
    phi = phi.phi if isinstance(phi, CellSolution) else phi
    L = localization_L(system, phi)
    CM = system.geometry.integrate(np.einsum("eijkl,eqabij,eqcdkl->eqabcd", system.element_C, L, L, optimize=True))
    CM /= mesh.volume
    sym = symmetrize_rank4(CM)
    deviation = float(np.abs(sym - CM).max() / max(np.abs(CM).max(), 1e-300))
    return (sym, deviation) if return_deviation else sym


def symmetrize_rank4(C):
    C = 0.5 * (C + C.transpose(1, 0, 2, 3))
    C = 0.5 * (C + C.transpose(0, 1, 3, 2))
    return 0.5 * (C + C.transpose(2, 3, 0, 1))


SOURCE_DISTRIBUTIONS = ("stress", "stiffness", "uniform")


def source_weights(system, distribution):
    """Per-element weights ``w`` (mean 1) carrying the ``C^M`` term of the second-order source.

    ``uniform`` puts the same load density everywhere, including near-void
    phases.  ``stiffness`` spreads it in proportion to the Frobenius norm of
    the local stiffness.  For ``stress`` no weights are used (see
    :func:`psi_sources`); ``None`` is returned.
    """
    if distribution not in SOURCE_DISTRIBUTIONS:
        raise ValueError(f"source distribution must be one of {SOURCE_DISTRIBUTIONS}, got {distribution!r}")
    if distribution == "stress":
        return None
    ne = system.mesh.n_elements
    if distribution == "uniform":
        return np.ones(ne)
    norms = np.sqrt((system.element_C**2).sum(axis=(1, 2, 3, 4)))
    mean = system.geometry.integrate(np.broadcast_to(norms[:, None], system.geometry.wdet.shape)) / system.mesh.volume
    return norms / mean


def psi_sources(system, phi, CM, distribution="stiffness"):
    """Pointwise source ``S[e, q, a, b, c, i]`` of the second-order problem.

    The averaged equation fixes only the volume mean of the load,
    ``<C_ickl L_abkl> - C^M_icab = 0``; its distribution inside the cell is
    a modelling choice.  With ``uniform`` the source is
    ``C_ickl L_abkl - C^M_icab``, which loads near-void phases with a force
    their stiffness cannot carry, so the fluctuation there grows like the
    inverse phase contrast.  ``stiffness`` replaces ``C^M`` by ``w C^M``.
    ``stress`` lets the load follow the local first-order stress
    ``C_ickl L_abkl`` itself, which cancels the source pointwise and leaves the
    ``phi`` flux term as the only driver.  All three coincide for a
    homogeneous cell.
    """
    if distribution == "stress":
        geo = system.geometry
        return np.zeros(geo.wdet.shape + (2, 2, 2, 2))
    L = localization_L(system, phi)
    CL = np.einsum("eickl,eqabkl->eqabci", system.element_C, L, optimize=True)
    w = source_weights(system, distribution)
    return CL - w[:, None, None, None, None, None] * np.einsum("icab->abci", CM)


def psi_loads(system, phi, CM, distribution="stiffness"):
    """Right-hand sides of the eight second-order cell problems.

    ``b(v) = -integral C_ijkc phi_abk dv_i/dy_j + integral S_abci v_i``
    """
    geo = system.geometry
    C = system.element_C
    S = psi_sources(system, phi, CM, distribution)
    loads = []
    for a, b, c in TRIPLES:
        vals, _ = at_points(system, phi[a, b])
        flux = np.einsum("eijk,eqk->eqij", C[:, :, :, :, c], vals)
        f = -np.einsum("eq,eqij,eqnj->eni", geo.wdet, flux, geo.grad)
        if np.any(S[:, :, a, b, c]):
            f += np.einsum("eq,qn,eqi->eni", geo.wdet, geo.N, S[:, :, a, b, c])
        loads.append(nodal_load(system, f))
    return loads


def source_means(system, phi, CM):
    """``<C_ickl L_abkl> - C^M_icab`` indexed ``[a, b, c, i]``; zero when ``CM`` belongs to ``phi``."""
    S = psi_sources(system, phi, CM, "uniform")
    return system.geometry.integrate(S) / system.mesh.volume


def solve_psi(
    mesh,
    material,
    phi,
    CM,
    settings: SolverSettings | None = None,
    system=None,
    consistency_tol=1e-6,
    distribution="stiffness",
):
    """Solve the eight second-order cell problems.

    ``CM`` must be the effective stiffness computed from the same ``phi``:
    the sources then have zero mean, which is the solvability condition of
    the periodic problem.  A relative mean above ``consistency_tol`` raises
    :class:`ConsistencyError`.  ``distribution`` selects how the ``C^M`` load
    is spread over the cell (:func:`psi_sources`).
    """
    sol = phi if isinstance(phi, CellSolution) else None
    phi = phi.phi if sol is not None else phi
    system = system or (sol.system if sol is not None and sol.system is not None else cell_system(mesh, material))
    source_weights(system, distribution)  # validates the name before any work
    means = source_means(system, phi, CM)
    scale = max(float(np.abs(CM).max()), 1e-300)
    worst = float(np.abs(means).max()) / scale
    if worst > consistency_tol:
        raise ConsistencyError(
            f"second-order source has mean {worst:.3e} relative to |C^M|; "
            "C^M does not belong to the supplied phi fields, or phi is not converged (tighten rel_tol)"
        )
    labels = [f"psi_{label(t)}" for t in TRIPLES]
    results = _solve_labelled(system, psi_loads(system, phi, CM, distribution), labels, settings)
    psi = np.zeros((2, 2, 2, mesh.n_nodes, 2))
    residuals = {}
    for (a, b, c), name, res in zip(TRIPLES, labels, results):
        psi[a, b, c] = res.field
        residuals[name] = res.info
    return psi, residuals


def solve_cell_problems(mesh, material, settings: SolverSettings | None = None, distribution="stiffness"):
    """All phi, then C^M, then all psi."""
    sol = solve_phi(mesh, material, settings)
    sol.C_M = compute_CM(mesh, material, sol.phi, system=sol.system)
    sol.psi, res = solve_psi(mesh, material, sol.phi, sol.C_M, settings, system=sol.system, distribution=distribution)
    sol.residuals.update(res)
    return sol
