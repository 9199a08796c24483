"""Bilinear quadrilateral elasticity kernel with periodic condensation.

Degrees of freedom are interleaved per node, ``dof = 2 * node + component``.
Element matrices are computed in batches with ``einsum``; assembly goes
through COO triplets, whose duplicate summation in scipy is order independent
up to round-off.
"""
from __future__ import annotations

import dataclasses

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from gradhom.errors import ConstraintError, InvertedElementError, SolverError

# reference square, counter-clockwise
_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])


@dataclasses.dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 2) in the reference square
    weights: np.ndarray  # (nq,)

    def __len__(self):
        return len(self.weights)


def gauss_rule(order=2):
    """Tensor-product Gauss-Legendre rule with ``order`` points per direction."""
    x, w = np.polynomial.legendre.leggauss(order)
    X, Y = np.meshgrid(x, x)
    W = np.outer(w, w)
    return QuadratureRule(np.column_stack([X.ravel(), Y.ravel()]), W.ravel())


DEFAULT_RULE = gauss_rule(2)


def shape_functions(points):
    """Values (nq, 4) and reference gradients (nq, 4, 2) of the Q4 basis."""
    xi = points[:, 0:1]
    eta = points[:, 1:2]
    N = 0.25 * (1 + _XI * xi) * (1 + _ETA * eta)
    dN = np.stack([0.25 * _XI * (1 + _ETA * eta), 0.25 * _ETA * (1 + _XI * xi)], axis=-1)
    return N, dN


@dataclasses.dataclass
class ElementGeometry:
    """Quadrature data for a batch of elements.

    ``N`` (nq, 4); ``grad`` (ne, nq, 4, 2) physical shape gradients;
    ``wdet`` (ne, nq) weight times Jacobian; ``points`` (ne, nq, 2).
    """

    N: np.ndarray
    grad: np.ndarray
    wdet: np.ndarray
    points: np.ndarray

    def integrate(self, values):
        """Sum of ``values[e, q, ...] * wdet[e, q]`` over elements and points."""
        return np.tensordot(self.wdet, values, axes=([0, 1], [0, 1]))


def element_geometry(coords, rule=DEFAULT_RULE):
    """Shape data for element coordinates of shape (ne, 4, 2)."""
    coords = np.asarray(coords, dtype=float)
    N, dN = shape_functions(rule.points)
    J = np.einsum("qak,eai->eqik", dN, coords)  # J[i, k] = d y_i / d xi_k
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    bad = np.flatnonzero((det <= 0).any(axis=1))
    if len(bad):
        raise InvertedElementError(
            f"non-positive Jacobian in element {int(bad[0])} ({len(bad)} element(s) inverted)", element=int(bad[0])
        )
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1] / det
    inv[..., 1, 1] = J[..., 0, 0] / det
    inv[..., 0, 1] = -J[..., 0, 1] / det
    inv[..., 1, 0] = -J[..., 1, 0] / det
    grad = np.einsum("qak,eqkj->eqaj", dN, inv)
    points = np.einsum("qa,eai->eqi", N, coords)
    return ElementGeometry(N=N, grad=grad, wdet=det * rule.weights, points=points)


def element_stiffness_batch(C, geo: ElementGeometry):
    """Element matrices (ne, 8, 8) for per-element stiffness ``C`` (ne, 2, 2, 2, 2)."""
    Ke = np.einsum("eq,eqaj,eijkl,eqbl->eaibk", geo.wdet, geo.grad, C, geo.grad, optimize=True)
    ne = Ke.shape[0]
    return Ke.reshape(ne, 8, 8)


def element_stiffness(C, coords, rule=DEFAULT_RULE):
    """8x8 stiffness of one quadrilateral with constant stiffness tensor ``C``."""
    geo = element_geometry(np.asarray(coords, dtype=float)[None], rule)
    return element_stiffness_batch(np.asarray(C, dtype=float)[None], geo)[0]


@dataclasses.dataclass
class SolverSettings:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-10
    max_iter: int | None = None  # default 10 * ndof
    preconditioner: str = "diagonal"
    method: str = "cg"

    def __post_init__(self):
        if self.preconditioner not in ("diagonal", "none"):
            raise ValueError(f"preconditioner must be 'diagonal' or 'none', got {self.preconditioner!r}")
        if self.method not in ("cg", "direct"):
            raise ValueError(f"method must be 'cg' or 'direct', got {self.method!r}")
        if not (self.rel_tol > 0 and self.abs_tol >= 0):
            raise ValueError("tolerances must be positive")


@dataclasses.dataclass
class LinearSystem:
    """Stiffness matrix of a mesh, optionally condensed onto periodic masters.

    ``matrix`` acts on the reduced dofs; ``expand`` maps reduced to full dofs
    (``None`` means identity); ``mean_rows`` (2, n_red) are the functionals
    ``u -> integral of u_c over the RVE``.
    """

    matrix: sp.csr_matrix
    mesh: object
    element_C: np.ndarray
    geometry: ElementGeometry
    expand: sp.csr_matrix | None = None
    mean_rows: sp.csr_matrix | None = None
    _factor: object = dataclasses.field(default=None, repr=False)

    @property
    def n_full(self):
        return 2 * self.mesh.n_nodes

    @property
    def n_dofs(self):
        return self.matrix.shape[0]

    @property
    def is_condensed(self):
        return self.expand is not None

    def full_matrix(self):
        if self.expand is None:
            return self.matrix
        raise ValueError("full matrix is not retained after condensation")

    def reduce(self, vector):
        v = np.asarray(vector, dtype=float).reshape(-1)
        return v if self.expand is None else self.expand.T @ v

    def expand_field(self, reduced):
        v = reduced if self.expand is None else self.expand @ reduced
        return v.reshape(-1, 2)

    def constraint_residual(self, field):
        """Mean-constraint rows applied to a full nodal field (N, 2)."""
        weights = nodal_volumes(self.geometry, self.mesh)
        return weights @ np.asarray(field, dtype=float).reshape(-1, 2)

    def saddle_matrix(self):
        """``[[K, B^T], [B, 0]]`` with the zero-mean rows ``B``."""
        if self.mean_rows is None:
            raise ValueError("system has no mean constraints; condense it first")
        B = self.mean_rows
        return sp.bmat([[self.matrix, B.T], [B, None]], format="csc")


def element_tensors(mesh, material):
    by_phase = material.stiffness_by_phase()
    return by_phase[mesh.phase]


def scatter_indices(elements):
    """Element dof table (ne, 8) in interleaved order."""
    return (2 * elements[:, :, None] + np.arange(2)).reshape(len(elements), 8)


def assemble(mesh, material, rule=DEFAULT_RULE, element_C=None):
    """Global stiffness on all nodal dofs (no constraints applied).

    ``element_C`` overrides the per-element stiffness derived from ``material``.
    """
    C = element_tensors(mesh, material) if element_C is None else np.asarray(element_C, dtype=float)
    geo = element_geometry(mesh.nodes[mesh.elements], rule)
    Ke = element_stiffness_batch(C, geo)
    dofs = scatter_indices(mesh.elements)
    rows = np.repeat(dofs, 8, axis=1).ravel()
    cols = np.tile(dofs, (1, 8)).ravel()
    n = 2 * mesh.n_nodes
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    K.sum_duplicates()
    K = 0.5 * (K + K.T)  # remove round-off asymmetry from the einsum
    return LinearSystem(matrix=K.tocsr(), mesh=mesh, element_C=C, geometry=geo)


def nodal_volumes(geo: ElementGeometry, mesh):
    """Integral of each nodal shape function over the mesh, shape (N,)."""
    contrib = np.einsum("qa,eq->ea", geo.N, geo.wdet)
    return np.bincount(mesh.elements.ravel(), weights=contrib.ravel(), minlength=mesh.n_nodes)


def check_pairing(mesh, rel_tol=1e-8):
    """Validate the master/slave graph; returns the node -> master map."""
    if not mesh.is_periodic:
        raise ConstraintError("mesh carries no periodic pairing")
    slaves = np.concatenate([mesh.pair_slave, np.asarray(mesh.corner_group[1:], dtype=np.int64)])
    masters = np.concatenate([mesh.pair_master, np.full(3, mesh.corner_group[0], dtype=np.int64)])
    shifts = np.vstack([mesh.pair_shift, np.array([[mesh.extent[0], 0.0], [0.0, mesh.extent[1]], mesh.extent])])
    # corner slaves may repeat an edge pair; they must then agree on the master
    slaves, first = np.unique(slaves, return_index=True)
    for s, m in zip(np.concatenate([mesh.pair_slave, mesh.corner_group[1:]]), masters):
        if masters[first[np.searchsorted(slaves, s)]] != m:
            raise ConstraintError(f"node {int(s)} is slave of more than one master")
    masters, shifts = masters[first], shifts[first]
    chained = np.intersect1d(slaves, masters)
    if len(chained):
        raise ConstraintError(f"nodes {chained[:10].tolist()} are both master and slave (constraint cycle)")
    tol = rel_tol * float(mesh.extent.max())
    err = np.abs(mesh.nodes[slaves] - mesh.nodes[masters] - shifts).max() if len(slaves) else 0.0
    if err > tol:
        raise ConstraintError(f"periodic pair translation mismatch of {err:.3e} exceeds {tol:.3e}")
    target = np.arange(mesh.n_nodes)
    target[slaves] = masters
    return target


def condense_periodic_zero_mean(system: LinearSystem):
    """Eliminate slave dofs onto their masters and attach zero-mean functionals.

    The returned system's matrix is ``T^T K T`` with ``T`` the 0/1 expansion
    from master dofs to all dofs; ``mean_rows`` hold the two Lagrange rows
    ``integral of u_c dV`` acting on the reduced dofs.
    """
    if system.is_condensed:
        return system
    mesh = system.mesh
    target = check_pairing(mesh)
    masters, red_node = np.unique(target, return_inverse=True)
    n_red = 2 * len(masters)
    rows = np.arange(2 * mesh.n_nodes)
    cols = (2 * red_node[:, None] + np.arange(2)).ravel()
    T = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(2 * mesh.n_nodes, n_red))
    K = (T.T @ system.matrix @ T).tocsr()
    K = 0.5 * (K + K.T)
    vol = nodal_volumes(system.geometry, mesh)
    mass = np.bincount(red_node, weights=vol, minlength=len(masters))
    B = sp.csr_matrix(
        (np.concatenate([mass, mass]), (np.repeat([0, 1], len(masters)), np.concatenate([2 * np.arange(len(masters)), 2 * np.arange(len(masters)) + 1]))),
        shape=(2, n_red),
    )
    return dataclasses.replace(system, matrix=K.tocsr(), expand=T, mean_rows=B, _factor=None)


def _project_consistent(system, b):
    """Remove the net load per component so that ``b`` lies in the range of ``K``.

    The multipliers of the zero-mean constraints equal net load / volume.
    The removed part is spread in proportion to the stiffness diagonal rather
    than the nodal volume: in exact arithmetic the net load of every cell
    problem vanishes, and round-off residue must not land on near-void dofs,
    where ``K`` would amplify it by the inverse phase contrast.
    """
    out = b.copy()
    lam = np.zeros(2)
    diag = system.matrix.diagonal()
    volume = system.mesh.volume
    for c in range(2):
        total = b[c::2].sum()
        lam[c] = total / volume
        out[c::2] -= total * diag[c::2] / diag[c::2].sum()
    return out, lam


def _remove_mean(system, field):
    weights = nodal_volumes(system.geometry, system.mesh)
    mean = weights @ field / weights.sum()
    return field - mean, mean


def _direct_factor(system):
    if system._factor is None:
        K = system.matrix
        if system.mean_rows is not None:
            scale = float(np.abs(K.diagonal()).max()) / float(abs(system.mean_rows).max())
            A = sp.bmat([[K, scale * system.mean_rows.T], [scale * system.mean_rows, None]], format="csc")
        else:
            A = K.tocsc()
        system._factor = spla.splu(A)
    return system._factor


def solve(system: LinearSystem, rhs, settings: SolverSettings | None = None, label=None):
    """Solve ``K u = rhs`` for a full-length load vector; returns a nodal field (N, 2).

    On a condensed system the result is periodic (slaves copied from masters)
    and has zero volume mean; the net load per component is absorbed by the
    mean constraints.
    """
    return solve_many(system, [rhs], settings, labels=None if label is None else [label])[0].field


def solve_many(system: LinearSystem, rhs_list, settings: SolverSettings | None = None, labels=None):
    """Solve for several load vectors; returns :class:`SolveResult` objects with diagnostics."""
    settings = settings or SolverSettings()
    results = []
    for k, rhs in enumerate(rhs_list):
        label = None if labels is None else labels[k]
        b = system.reduce(rhs)
        info = {}
        if system.mean_rows is not None:
            b, lam = _project_consistent(system, b)
            info["multipliers"] = lam
        if not np.any(b):
            x = np.zeros(system.n_dofs)
            info["residual"] = 0.0
            info["iterations"] = 0
        elif settings.method == "direct":
            lu = _direct_factor(system)
            if system.mean_rows is not None:
                x = lu.solve(np.concatenate([b, np.zeros(2)]))[: system.n_dofs]
            else:
                x = lu.solve(b)
            info["residual"] = float(np.linalg.norm(system.matrix @ x - b))
            info["iterations"] = 0
        else:
            x, info["residual"], info["iterations"] = _pcg(system.matrix, b, settings, label)
        field = system.expand_field(x)
        if system.is_condensed:
            field, _ = _remove_mean(system, field)
        info["rhs_norm"] = float(np.linalg.norm(b))
        results.append(SolveResult(field=field, info=info))
    return results


@dataclasses.dataclass
class SolveResult:
    field: np.ndarray
    info: dict


def _pcg(K, b, settings, label):
    """Conjugate gradients; the diagonal preconditioner is applied as a symmetric scaling.

    Scaling ``D^-1/2 K D^-1/2`` is algebraically the Jacobi-preconditioned
    iteration, but the stopping test then sees the scaled residual, so dofs
    of near-void phases (diagonal ~1e-30) are not ignored by the tolerance.
    """
    n = K.shape[0]
    maxiter = settings.max_iter or 10 * n
    if settings.preconditioner == "diagonal":
        s = 1.0 / np.sqrt(K.diagonal())
        S = sp.diags(s)
        A, rhs = (S @ K @ S).tocsr(), s * b
    else:
        s, A, rhs = None, K, b
    iterations = [0]

    def count(_):
        iterations[0] += 1

    y, status = spla.cg(A, rhs, rtol=settings.rel_tol, atol=settings.abs_tol, maxiter=maxiter, callback=count)
    x = y if s is None else s * y
    residual = float(np.linalg.norm(A @ y - rhs))
    if status != 0:
        where = f" for {label}" if label is not None else ""
        raise SolverError(
            f"conjugate gradients did not converge{where} within {maxiter} iterations (residual {residual:.3e})",
            residual=residual,
            label=label,
        )
    return x, residual, iterations[0]
