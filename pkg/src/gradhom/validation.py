"""Size-effect study on a square specimen clamped on the left and rotated on the right.

Three models are compared through their strain energy (mJ, i.e. N mm per mm
of thickness):

* ``micro``: the resolved lattice, bilinear quads, walls and near-void cells;
* ``classical``: homogeneous specimen with ``C^M`` on bilinear quads;
* ``gradient``: homogeneous specimen with ``C^M`` and ``D^M`` on
  Bogner-Fox-Schmidt rectangles (bicubic Hermite, C1).

Global coordinates put the specimen centre at the origin.  The left edge is
clamped; the right edge gets ``u1 = -theta * X2``, ``u2 = 0``, a linearized
rotation about its midpoint.
"""
from __future__ import annotations

import dataclasses
import math
import warnings

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from gradhom.fem_core import DEFAULT_RULE, assemble, gauss_rule
from gradhom.lattice_mesh import CellGeometry, MicroMaterial, PeriodicMesh, build_square_lattice_rve, structured_grid

MODELS = ("micro", "classical", "gradient")
DEFAULT_THETAS = (0.0, 0.05, 0.1, 0.15, 0.2)


@dataclasses.dataclass(frozen=True)
class SpecimenSpec:
    """Square specimen of edge ``L`` built from cells of edge ``l`` (mm)."""

    L: float
    l: float
    t_ratio: float = 0.1
    thetas: tuple = DEFAULT_THETAS
    model: str = "micro"
    elements_per_cell: int = 20
    macro_elements: int = 40

    def __post_init__(self):
        if not (self.L > 0 and self.l > 0):
            raise ValueError("specimen and cell sizes must be positive")
        ratio = self.L / self.l
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
            raise ValueError(f"L/l must be a positive integer, got {ratio:.12g}")
        if not 0 < self.t_ratio <= 1:
            raise ValueError(f"t/l must lie in (0, 1], got {self.t_ratio}")
        if any(abs(th) > 0.2 + 1e-12 for th in self.thetas):
            raise ValueError("rotation angles must satisfy |theta| <= 0.2 rad")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.macro_elements < 1:
            raise ValueError("macro_elements must be positive")

    @property
    def ratio(self):
        return int(round(self.L / self.l))

    @property
    def cells(self):
        return self.ratio**2

    def with_model(self, model):
        return dataclasses.replace(self, model=model)


@dataclasses.dataclass
class EnergyCurve:
    """Strain energy samples ``(theta, energy_mJ)`` of one model on one specimen."""

    thetas: np.ndarray
    energies: np.ndarray
    model: str
    spec: SpecimenSpec
    meta: dict = dataclasses.field(default_factory=dict)

    @property
    def samples(self):
        return list(zip(self.thetas.tolist(), self.energies.tolist()))

    @property
    def k(self):
        """Least-squares ``k`` of ``E = k theta^2 / 2``."""
        t2 = self.thetas**2
        denom = float(np.dot(t2, t2))
        return 2.0 * float(np.dot(self.energies, t2)) / denom if denom > 0 else 0.0

    def fit_residual(self):
        model = 0.5 * self.k * self.thetas**2
        scale = max(float(np.abs(self.energies).max()), 1e-300)
        return float(np.abs(self.energies - model).max()) / scale

    def energy_at(self, theta):
        return 0.5 * self.k * theta**2


def _solve_dirichlet(K, fixed, values):
    """Minimize ``u^T K u / 2`` with ``u[fixed] = values[:, k]``; returns fields and energies."""
    n = K.shape[0]
    free = np.setdiff1d(np.arange(n), fixed)
    K = K.tocsr()
    Kff = K[free][:, free].tocsc()
    Kfc = K[free][:, fixed]
    lu = spla.splu(Kff)
    fields, energies = [], []
    for col in values.T:
        u = np.zeros(n)
        u[fixed] = col
        if np.any(col):
            u[free] = lu.solve(-(Kfc @ col))
        fields.append(u)
        energies.append(0.5 * float(u @ (K @ u)))
    return fields, np.array(energies)


def _rotation_values(y, thetas):
    return -np.outer(y, thetas)


def _q4_curve(mesh: PeriodicMesh, system, spec, model, meta=None):
    nodes = mesh.nodes
    tol = 1e-9 * float(mesh.extent.max())
    left = np.flatnonzero(np.abs(nodes[:, 0] - mesh.lower[0]) <= tol)
    right = np.flatnonzero(np.abs(nodes[:, 0] - mesh.upper[0]) <= tol)
    thetas = np.asarray(spec.thetas, dtype=float)
    fixed = np.concatenate([2 * left, 2 * left + 1, 2 * right, 2 * right + 1])
    vals = np.vstack([
        np.zeros((2 * len(left), len(thetas))),
        _rotation_values(nodes[right, 1], thetas),
        np.zeros((len(right), len(thetas))),
    ])
    _, energies = _solve_dirichlet(system.matrix, fixed, vals)
    meta = dict(meta or {})
    meta.update(n_dofs=2 * mesh.n_nodes, n_elements=mesh.n_elements)
    return EnergyCurve(thetas=thetas, energies=energies, model=model, spec=spec.with_model(model), meta=meta)


def micro_mesh(spec: SpecimenSpec):
    geom = CellGeometry(l=spec.l, t=spec.t_ratio * spec.l, n=spec.ratio)
    return build_square_lattice_rve(geom, spec.elements_per_cell, periodic=False)


def micro_reference_solve(spec: SpecimenSpec, material: MicroMaterial | None = None):
    """Resolved lattice specimen; ``material`` defaults to the reference lattice materials."""
    material = material or MicroMaterial.lattice()
    mesh = micro_mesh(spec)
    system = assemble(mesh, material)
    return _q4_curve(mesh, system, spec, "micro", {"inclusion_fraction": mesh.phase_fraction()})


def macro_mesh(spec: SpecimenSpec):
    half = 0.5 * spec.L
    m = spec.macro_elements
    nodes, elements = structured_grid(m, m, (-half, -half), (half, half))
    return PeriodicMesh(
        nodes=nodes,
        elements=elements,
        phase=np.zeros(len(elements), dtype=np.int8),
        lower=np.array([-half, -half]),
        upper=np.array([half, half]),
    )


def macro_classical_solve(spec: SpecimenSpec, C_M, element="q4"):
    """Homogeneous specimen with stiffness ``C_M`` (rank 4).

    ``element="bfs"`` runs the C1 discretization with a zero gradient tensor,
    which isolates the gradient contribution from discretization effects.
    """
    C_M = np.asarray(C_M, dtype=float)
    if element == "bfs":
        curve = macro_gradient_solve(spec, C_M, np.zeros((2,) * 6))
        curve.model = "classical"
        curve.spec = spec.with_model("classical")
        return curve
    if element != "q4":
        raise ValueError(f"element must be 'q4' or 'bfs', got {element!r}")
    mesh = macro_mesh(spec)
    system = assemble(mesh, None, element_C=np.broadcast_to(C_M, (mesh.n_elements,) + C_M.shape))
    return _q4_curve(mesh, system, spec, "classical")


# --- Bogner-Fox-Schmidt rectangle ------------------------------------------------

# local node corners (counter-clockwise) and dof kinds (value/slope along x, y)
_CORNERS = [(0, 0), (1, 0), (1, 1), (0, 1)]
_KINDS = [(0, 0), (1, 0), (0, 1), (1, 1)]  # u, u_x, u_y, u_xy


def _hermite(s, h):
    """Cubic Hermite values, first and second derivatives on ``[0, h]`` at ``s`` in [0, 1].

    Columns: value at 0, slope at 0, value at 1, slope at 1.
    """
    s = np.asarray(s, dtype=float)
    H = np.stack([1 - 3 * s**2 + 2 * s**3, h * (s - 2 * s**2 + s**3), 3 * s**2 - 2 * s**3, h * (-(s**2) + s**3)], -1)
    dH = np.stack([-6 * s + 6 * s**2, h * (1 - 4 * s + 3 * s**2), 6 * s - 6 * s**2, h * (-2 * s + 3 * s**2)], -1) / h
    d2H = np.stack([-6 + 12 * s, h * (-4 + 6 * s), 6 - 12 * s, h * (-2 + 6 * s)], -1) / h**2
    return H, dH, d2H


def bfs_basis(hx, hy, order=4):
    """Quadrature data of the 16 BFS functions on an ``hx`` x ``hy`` rectangle.

    Returns weights (nq,), values (nq, 16), gradients (nq, 16, 2) and
    Hessians (nq, 16, 2, 2); function ``4*corner + kind`` follows
    ``_CORNERS`` and ``_KINDS``.
    """
    rule = gauss_rule(order)
    s = 0.5 * (rule.points[:, 0] + 1)
    t = 0.5 * (rule.points[:, 1] + 1)
    w = rule.weights * 0.25 * hx * hy
    Hx, dHx, d2Hx = _hermite(s, hx)
    Hy, dHy, d2Hy = _hermite(t, hy)
    nq = len(w)
    N = np.empty((nq, 16))
    G = np.empty((nq, 16, 2))
    Hs = np.empty((nq, 16, 2, 2))
    for c, (cx, cy) in enumerate(_CORNERS):
        for k, (kx, ky) in enumerate(_KINDS):
            ix, iy = 2 * cx + kx, 2 * cy + ky
            f = 4 * c + k
            N[:, f] = Hx[:, ix] * Hy[:, iy]
            G[:, f, 0] = dHx[:, ix] * Hy[:, iy]
            G[:, f, 1] = Hx[:, ix] * dHy[:, iy]
            Hs[:, f, 0, 0] = d2Hx[:, ix] * Hy[:, iy]
            Hs[:, f, 1, 1] = Hx[:, ix] * d2Hy[:, iy]
            Hs[:, f, 0, 1] = Hs[:, f, 1, 0] = dHx[:, ix] * dHy[:, iy]
    return w, N, G, Hs


def bfs_element_matrix(C, D, hx, hy):
    """32 x 32 stiffness, dofs ordered ``(function, component)`` as ``2*f + a``.

    Energy density ``C_abcd u_a,b u_c,d / 2 + D_abcdef u_a,bc u_d,ef / 2``.
    """
    w, _, G, Hs = bfs_basis(hx, hy)
    Kc = np.einsum("q,qAb,abcd,qBd->AaBc", w, G, C, G, optimize=True)
    Kd = np.einsum("q,qAbc,abcdef,qBef->AaBd", w, Hs, D, Hs, optimize=True)
    K = (Kc + Kd).reshape(32, 32)
    return 0.5 * (K + K.T)


def bfs_dofs(elements):
    """Global dofs (ne, 32): node ``n`` owns ``8 n + 4 a + kind`` for component ``a``."""
    ne = len(elements)
    kind = np.arange(4)
    comp = np.arange(2)
    # local order: function f = 4*corner + kind, then component
    d = 8 * elements[:, :, None, None] + 4 * comp[None, None, None, :] + kind[None, None, :, None]
    return d.reshape(ne, 32)


def macro_gradient_solve(spec: SpecimenSpec, C_M, D_M):
    """Homogeneous C1 specimen with ``C_M`` (rank 4) and ``D_M`` (rank 6, ``[a,b,c,d,e,f]`` of ``u_a,bc``).

    On the clamped and rotated edges the displacement and its tangential
    derivative ``u_,2`` are prescribed (the Hermite edge interpolant then
    reproduces the prescribed edge motion exactly); ``u_,1`` and ``u_,12``
    stay free.  An indefinite ``D_M`` only triggers a warning.
    """
    C_M = np.asarray(C_M, dtype=float)
    D_M = np.asarray(D_M, dtype=float)
    meta = {"warnings": []}
    Dv = _voigt_like(D_M)
    eig = float(np.linalg.eigvalsh(0.5 * (Dv + Dv.T)).min()) if np.any(D_M) else 0.0
    meta["D_min_eigenvalue"] = eig
    if eig < -1e-12 * max(1.0, float(np.abs(Dv).max())):
        msg = f"strain-gradient tensor is indefinite (smallest eigenvalue {eig:.4g} N); gradient energy may be negative"
        warnings.warn(msg, stacklevel=2)
        meta["warnings"].append(msg)
    mesh = macro_mesh(spec)
    m = spec.macro_elements
    h = spec.L / m
    Ke = bfs_element_matrix(C_M, D_M, h, h)
    dofs = bfs_dofs(mesh.elements)
    rows = np.repeat(dofs, 32, axis=1).ravel()
    cols = np.tile(dofs, (1, 32)).ravel()
    n = 8 * mesh.n_nodes
    K = sp.coo_matrix((np.tile(Ke.ravel(), mesh.n_elements), (rows, cols)), shape=(n, n)).tocsr()

    nodes = mesh.nodes
    tol = 1e-9 * spec.L
    left = np.flatnonzero(np.abs(nodes[:, 0] - mesh.lower[0]) <= tol)
    right = np.flatnonzero(np.abs(nodes[:, 0] - mesh.upper[0]) <= tol)
    thetas = np.asarray(spec.thetas, dtype=float)
    # prescribed: u_a (kind 0) and u_a,2 (kind 2) for both components on both edges
    fixed, vals = [], []
    for nodes_edge, is_right in ((left, False), (right, True)):
        for a in range(2):
            for kind in (0, 2):
                fixed.append(8 * nodes_edge + 4 * a + kind)
                if is_right and a == 0 and kind == 0:
                    vals.append(_rotation_values(nodes[nodes_edge, 1], thetas))
                elif is_right and a == 0 and kind == 2:
                    vals.append(-np.tile(thetas, (len(nodes_edge), 1)))
                else:
                    vals.append(np.zeros((len(nodes_edge), len(thetas))))
    _, energies = _solve_dirichlet(K, np.concatenate(fixed), np.vstack(vals))
    meta.update(n_dofs=n, n_elements=mesh.n_elements)
    return EnergyCurve(thetas=thetas, energies=energies, model="gradient", spec=spec.with_model("gradient"), meta=meta)


def _voigt_like(D):
    """6 x 6 matrix of ``D`` over the gradient triples without symmetry checks."""
    from gradhom.effective_tensors import VOIGT3

    return np.array([[D[a + b] for b in VOIGT3] for a in VOIGT3])


@dataclasses.dataclass
class StudyRow:
    L_over_l: int
    cells: int
    model: str
    k_coefficient: float
    rel_error_vs_micro: float


def run_specimen(spec: SpecimenSpec, C_M, D_M_unit, material=None):
    """Micro, classical and gradient curves of one specimen.

    ``D_M_unit`` is the gradient tensor of a 1 mm cell; it is scaled by
    ``l^2`` for the specimen's cell size.
    """
    D_M = np.asarray(D_M_unit, dtype=float) * spec.l**2
    return {
        "micro": micro_reference_solve(spec.with_model("micro"), material),
        "classical": macro_classical_solve(spec.with_model("classical"), C_M),
        "gradient": macro_gradient_solve(spec.with_model("gradient"), C_M, D_M),
    }


def size_effect_study(specs, C_M, D_M_unit, material=None):
    """Curves and summary rows (one per specimen and model) for a list of specimens."""
    curves, rows = [], []
    for spec in specs:
        per_model = run_specimen(spec, C_M, D_M_unit, material)
        k_micro = per_model["micro"].k
        for model in MODELS:
            curve = per_model[model]
            curves.append(curve)
            err = 0.0 if model == "micro" else (curve.k - k_micro) / k_micro
            rows.append(StudyRow(spec.ratio, spec.cells, model, curve.k, err))
    return curves, rows


def study_specs(kind, l=1.0, L=4.0, **kwargs):
    """Specimen lists of the two studies.

    ``"ratio"``: cells of edge ``l`` and L/l in {2, 4, 6, 10};
    ``"cells"``: fixed edge ``L`` split into 16, 64 and 400 cells.
    """
    if kind == "ratio":
        return [SpecimenSpec(L=r * l, l=l, **kwargs) for r in (2, 4, 6, 10)]
    if kind == "cells":
        return [SpecimenSpec(L=L, l=L / math.isqrt(c), **kwargs) for c in (16, 64, 400)]
    raise ValueError(f"unknown study kind {kind!r}")
