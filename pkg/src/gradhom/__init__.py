"""Strain-gradient asymptotic homogenization of periodic 2D lattices."""

from gradhom.lattice_mesh import (
    CellGeometry,
    MicroMaterial,
    PeriodicMesh,
    build_laminate_rve,
    build_square_lattice_rve,
    export_vtk,
    import_mesh,
    export_mesh,
    isotropic_stiffness,
)
from gradhom.fem_core import SolverSettings, assemble, condense_periodic_zero_mean, solve
from gradhom.cell_solver import CellSolution, compute_CM, solve_cell_problems, solve_phi, solve_psi
from gradhom.effective_tensors import EffectiveTensors, homogenize, voigt_pack
from gradhom.validation import (
    EnergyCurve,
    SpecimenSpec,
    macro_classical_solve,
    macro_gradient_solve,
    micro_reference_solve,
    size_effect_study,
)

__version__ = "0.1.0"

__all__ = [
    "CellGeometry",
    "MicroMaterial",
    "PeriodicMesh",
    "build_laminate_rve",
    "build_square_lattice_rve",
    "export_vtk",
    "import_mesh",
    "export_mesh",
    "isotropic_stiffness",
    "SolverSettings",
    "assemble",
    "condense_periodic_zero_mean",
    "solve",
    "CellSolution",
    "compute_CM",
    "solve_cell_problems",
    "solve_phi",
    "solve_psi",
    "EffectiveTensors",
    "homogenize",
    "voigt_pack",
    "EnergyCurve",
    "SpecimenSpec",
    "macro_classical_solve",
    "macro_gradient_solve",
    "micro_reference_solve",
    "size_effect_study",
]
