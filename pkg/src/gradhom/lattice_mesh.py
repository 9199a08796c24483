"""Periodic RVE meshes for square lattices and the isotropic micro material.

Meshes live in local coordinates ``y`` with the RVE centroid at the origin.
A cell of global edge length ``l`` has local edge length ``l / epsilon``.

Periodicity is stored as explicit (master, slave, translation) triples.
For an RVE with ``m`` elements per side the edge pairs are::

    left  row j  -> right row j      j = 0 .. m-1   (top-left excluded)
    bottom col i -> top col i        i = 0 .. m-1   (bottom-right excluded)

and the top-right corner is reached through ``corner_group``, which maps
all four corners onto the bottom-left node.  No node is both a master and
a slave, so every slave resolves to its master in a single step.
"""
from __future__ import annotations

import dataclasses
import math
import warnings
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from gradhom.errors import MeshFormatError, PairingError, ResolutionError

MATRIX = 0
INCLUSION = 1
PHASE_NAMES = {MATRIX: "matrix", INCLUSION: "inclusion"}

MESH_HEADER = "gradhom-mesh v1"


@dataclasses.dataclass(frozen=True)
class CellGeometry:
    """Square lattice cell: edge ``l``, wall thickness ``t`` (mm), ``n``x``n`` cells per RVE."""

    l: float
    t: float
    n: int = 1
    epsilon: float = 1.0

    def __post_init__(self):
        if not self.l > 0:
            raise ValueError(f"cell edge length must be positive, got {self.l}")
        if not 0 < self.t <= self.l:
            raise ValueError(f"wall thickness must satisfy 0 < t <= l, got t={self.t}, l={self.l}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"repetitions must be a positive integer, got {self.n}")
        if not self.epsilon > 0:
            raise ValueError(f"homothetic ratio must be positive, got {self.epsilon}")

    @property
    def local_cell_length(self):
        return self.l / self.epsilon

    @property
    def w(self):
        """RVE edge length in local coordinates."""
        return self.n * self.l / self.epsilon

    @property
    def inclusion_fraction(self):
        return (1.0 - self.t / self.l) ** 2


@dataclasses.dataclass(frozen=True)
class MicroMaterial:
    E_matrix: float
    nu_matrix: float
    E_inclusion: float
    nu_inclusion: float

    def __post_init__(self):
        for name in ("E_matrix", "E_inclusion"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("nu_matrix", "nu_inclusion"):
            if not -1.0 < getattr(self, name) < 0.5:
                raise ValueError(f"{name} must lie in (-1, 0.5), got {getattr(self, name)}")

    @classmethod
    def homogeneous(cls, E, nu):
        return cls(E, nu, E, nu)

    @classmethod
    def lattice(cls, E=100.0, nu=0.3, contrast=1e-8, nu_void=1e-30):
        """Solid matrix with near-void inclusions of stiffness ``contrast * E``.

        ``contrast=1e-32`` reproduces the 1e-30 MPa voids of the reference material
        table; the default 1e-8 keeps the cell problems well conditioned.
        """
        return cls(E, nu, contrast * E, nu_void)

    @property
    def is_homogeneous(self):
        return self.E_matrix == self.E_inclusion and self.nu_matrix == self.nu_inclusion

    def stiffness_by_phase(self):
        """Array of shape (2, 2, 2, 2, 2) indexed by phase tag first."""
        return np.stack([
            isotropic_stiffness(self.E_matrix, self.nu_matrix),
            isotropic_stiffness(self.E_inclusion, self.nu_inclusion),
        ])

    def lame(self, phase=MATRIX):
        if phase == MATRIX:
            return lame_parameters(self.E_matrix, self.nu_matrix)
        return lame_parameters(self.E_inclusion, self.nu_inclusion)


def lame_parameters(E, nu):
    E = float(E)
    nu = float(nu)
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return lam, mu


def isotropic_stiffness(E, nu):
    """Rank-4 isotropic stiffness ``lam d_ij d_kl + mu (d_ik d_jl + d_il d_jk)`` in 2D.

    The 3D Lame constant is used, i.e. the plane-strain reading of the 2D model.
    ``nu = 0.5`` raises ``ZeroDivisionError``.
    """
    lam, mu = lame_parameters(E, nu)
    d = np.eye(2)
    return (
        lam * np.einsum("ij,kl->ijkl", d, d)
        + mu * np.einsum("ik,jl->ijkl", d, d)
        + mu * np.einsum("il,jk->ijkl", d, d)
    )


@dataclasses.dataclass
class PeriodicMesh:
    """Quadrilateral mesh of a rectangular RVE.

    ``nodes`` (N, 2); ``elements`` (E, 4) counter-clockwise; ``phase`` (E,);
    ``pair_master``/``pair_slave`` (P,) with ``pair_shift`` (P, 2) such that
    ``nodes[slave] = nodes[master] + shift``; ``corner_group`` lists the
    bottom-left, bottom-right, top-left, top-right corner nodes.
    """

    nodes: np.ndarray
    elements: np.ndarray
    phase: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    pair_master: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    pair_slave: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    pair_shift: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros((0, 2)))
    corner_group: tuple | None = None
    info: dict = dataclasses.field(default_factory=dict)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def extent(self):
        return self.upper - self.lower

    @property
    def w(self):
        """Edge length along y1 (the RVE is square for generated meshes)."""
        return float(self.extent[0])

    @property
    def volume(self):
        return float(np.prod(self.extent))

    @property
    def is_periodic(self):
        return self.corner_group is not None

    @property
    def periodic_pairs(self):
        return list(zip(self.pair_master.tolist(), self.pair_slave.tolist(), map(tuple, self.pair_shift.tolist())))

    def element_areas(self):
        """Exact quadrilateral areas (shoelace formula)."""
        xy = self.nodes[self.elements]
        x, y = xy[..., 0], xy[..., 1]
        return 0.5 * np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1)

    def phase_fraction(self, phase=INCLUSION):
        areas = self.element_areas()
        return float(areas[self.phase == phase].sum() / areas.sum())

    def slave_to_master(self):
        """Array ``m`` with ``m[node]`` the master of every node (identity for masters)."""
        target = np.arange(self.n_nodes)
        target[self.pair_slave] = self.pair_master
        if self.corner_group is not None:
            target[list(self.corner_group[1:])] = self.corner_group[0]
        return target

    def translated(self, shift):
        """Copy with all nodes shifted by ``shift``; pairs and tags are unchanged."""
        shift = np.asarray(shift, dtype=float)
        return dataclasses.replace(
            self, nodes=self.nodes + shift, lower=self.lower + shift, upper=self.upper + shift, info=dict(self.info)
        )

    def without_periodicity(self):
        return dataclasses.replace(
            self,
            pair_master=np.zeros(0, dtype=np.int64),
            pair_slave=np.zeros(0, dtype=np.int64),
            pair_shift=np.zeros((0, 2)),
            corner_group=None,
            info=dict(self.info),
        )


def structured_grid(nx, ny, lower, upper):
    """Nodes and counter-clockwise quads of a uniform ``nx`` x ``ny`` grid.

    Node ``j*(nx+1) + i`` sits at column ``i``, row ``j``; element ``j*nx + i``.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    xs = lower[0] + (upper[0] - lower[0]) * np.arange(nx + 1) / nx
    ys = lower[1] + (upper[1] - lower[1]) * np.arange(ny + 1) / ny
    # pin the far edge exactly so periodic translations are exact
    xs[-1], ys[-1] = upper[0], upper[1]
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n0 = (j * (nx + 1) + i).ravel()
    elements = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])
    return nodes, elements.astype(np.int64)


def wall_layers(geom: CellGeometry, elements_per_cell_edge: int):
    """Number of element layers forming each half-wall, and whether it was snapped."""
    exact = geom.t * elements_per_cell_edge / (2.0 * geom.l)
    layers = int(math.floor(exact + 0.5))
    if layers == 0:
        raise ResolutionError(
            f"wall thickness t={geom.t} is thinner than one element layer "
            f"(h={geom.l / elements_per_cell_edge}) at {elements_per_cell_edge} elements per cell edge"
        )
    snapped = abs(layers - exact) > 1e-9 * max(1.0, exact)
    return layers, snapped


def build_square_lattice_rve(geom: CellGeometry, elements_per_cell_edge: int, periodic=True):
    """Structured mesh of ``geom.n`` x ``geom.n`` square-lattice cells.

    Walls of width ``t/2`` run inside every cell boundary, so neighbouring
    cells share walls of full width ``t``.  When ``t/2`` is not a whole number
    of element layers it is rounded to the nearest layer with a warning; a
    wall that would vanish raises :class:`ResolutionError`.
    """
    e = int(elements_per_cell_edge)
    if e != elements_per_cell_edge or e < 10:
        raise ResolutionError(f"elements_per_cell_edge must be an integer >= 10, got {elements_per_cell_edge}")
    layers, snapped = wall_layers(geom, e)
    if snapped:
        warnings.warn(
            f"half-wall t/2={geom.t / 2} spans {geom.t * e / (2 * geom.l):.3f} element layers; "
            f"rounded to {layers}",
            stacklevel=2,
        )
    m = geom.n * e
    half = 0.5 * geom.w
    nodes, elements = structured_grid(m, m, (-half, -half), (half, half))

    col = np.arange(m) % e
    in_wall = (col < layers) | (col >= e - layers)
    ii, jj = np.meshgrid(in_wall, in_wall)  # ii varies along y1, jj along y2
    phase = np.where((ii | jj).ravel(), MATRIX, INCLUSION).astype(np.int8)

    mesh = PeriodicMesh(
        nodes=nodes,
        elements=elements,
        phase=phase,
        lower=np.array([-half, -half]),
        upper=np.array([half, half]),
        info={
            "elements_per_cell_edge": e,
            "wall_layers": layers,
            "wall_snapped": snapped,
            "effective_wall_thickness": 2 * layers * geom.l / e,
            "geometry": dataclasses.asdict(geom),
        },
    )
    if periodic:
        _attach_structured_pairs(mesh, m, m)
    return mesh


def _attach_structured_pairs(mesh, nx, ny):
    row = nx + 1
    j = np.arange(ny)
    i = np.arange(nx)
    wx, wy = mesh.extent
    left, right = j * row, j * row + nx
    bottom, top = i, ny * row + i
    mesh.pair_master = np.concatenate([left, bottom]).astype(np.int64)
    mesh.pair_slave = np.concatenate([right, top]).astype(np.int64)
    mesh.pair_shift = np.vstack([np.tile([wx, 0.0], (ny, 1)), np.tile([0.0, wy], (nx, 1))])
    mesh.corner_group = (0, nx, ny * row, ny * row + nx)


def pair_boundary_nodes(nodes, lower, upper, rel_tol=1e-8):
    """Recover periodic pairs of an arbitrary rectangular mesh by coordinate matching.

    Returns ``(master, slave, shift, corner_group)``.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    extent = upper - lower
    tol = rel_tol * float(extent.max())
    x, y = nodes[:, 0], nodes[:, 1]
    on_left = np.abs(x - lower[0]) <= tol
    on_right = np.abs(x - upper[0]) <= tol
    on_bottom = np.abs(y - lower[1]) <= tol
    on_top = np.abs(y - upper[1]) <= tol

    corners = []
    for cx, cy in ((on_left, on_bottom), (on_right, on_bottom), (on_left, on_top), (on_right, on_top)):
        hit = np.flatnonzero(cx & cy)
        if len(hit) != 1:
            raise PairingError(f"expected exactly one node at each RVE corner, found {len(hit)}")
        corners.append(int(hit[0]))

    masters, slaves, shifts = [], [], []
    unmatched = []
    for src_mask, dst_mask, shift in (
        (on_left & ~on_top, on_right & ~on_top, np.array([extent[0], 0.0])),
        (on_bottom & ~on_right, on_top & ~on_right, np.array([0.0, extent[1]])),
    ):
        src = np.flatnonzero(src_mask)
        dst = np.flatnonzero(dst_mask)
        tree = cKDTree(nodes[dst])
        dist, idx = tree.query(nodes[src] + shift)
        bad = dist > tol
        unmatched.extend(nodes[src[bad]].tolist())
        matched = dst[idx[~bad]]
        if len(dst) != len(src) or len(np.unique(matched)) != len(matched):
            extra = np.setdiff1d(dst, matched)
            unmatched.extend(nodes[extra].tolist())
        masters.append(src[~bad])
        slaves.append(matched)
        shifts.append(np.tile(shift, (int((~bad).sum()), 1)))
    if unmatched:
        listing = ", ".join(f"({p[0]:.12g}, {p[1]:.12g})" for p in unmatched[:20])
        raise PairingError(f"{len(unmatched)} boundary node(s) have no periodic partner: {listing}")
    return (
        np.concatenate(masters).astype(np.int64),
        np.concatenate(slaves).astype(np.int64),
        np.vstack(shifts),
        tuple(corners),
    )


def export_mesh(mesh: PeriodicMesh, path, header_lines=()):
    """Write ``mesh`` in the ASCII ``gradhom-mesh v1`` format."""
    lines = [f"# {h}" for h in header_lines]
    lines.append(MESH_HEADER)
    lines.append(str(mesh.n_nodes))
    lines.extend(f"{float(x)!r} {float(y)!r}" for x, y in mesh.nodes)
    lines.append(str(mesh.n_elements))
    lines.extend(
        f"{a} {b} {c} {d} {PHASE_NAMES[int(p)]}" for (a, b, c, d), p in zip(mesh.elements.tolist(), mesh.phase)
    )
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_phase(token, lineno):
    for tag, name in PHASE_NAMES.items():
        if token == name or token == str(tag):
            return tag
    raise MeshFormatError(f"line {lineno}: unknown phase {token!r}")


def import_mesh(path, periodic=True):
    """Read a ``gradhom-mesh v1`` file and rebuild its periodic pairing.

    The RVE is the bounding box of the nodes.  Pairing tolerance is 1e-8 of
    the larger RVE edge.
    """
    raw = Path(path).read_text().splitlines()
    lines = [(k + 1, s.strip()) for k, s in enumerate(raw) if s.strip() and not s.lstrip().startswith("#")]
    it = iter(lines)

    def take(what):
        try:
            return next(it)
        except StopIteration:
            raise MeshFormatError(f"unexpected end of file while reading {what}") from None

    lineno, head = take("header")
    if head != MESH_HEADER:
        raise MeshFormatError(f"line {lineno}: expected header {MESH_HEADER!r}, got {head!r}")
    lineno, s = take("node count")
    try:
        n_nodes = int(s)
    except ValueError:
        raise MeshFormatError(f"line {lineno}: bad node count {s!r}") from None
    nodes = np.empty((n_nodes, 2))
    for k in range(n_nodes):
        lineno, s = take("nodes")
        parts = s.split()
        if len(parts) != 2:
            raise MeshFormatError(f"line {lineno}: node needs 2 coordinates, got {len(parts)}")
        nodes[k] = [float(parts[0]), float(parts[1])]
    lineno, s = take("element count")
    try:
        n_elem = int(s)
    except ValueError:
        raise MeshFormatError(f"line {lineno}: bad element count {s!r}") from None
    elements = np.empty((n_elem, 4), dtype=np.int64)
    phase = np.empty(n_elem, dtype=np.int8)
    for k in range(n_elem):
        lineno, s = take("elements")
        parts = s.split()
        if len(parts) != 5:
            raise MeshFormatError(
                f"line {lineno}: element must have 4 node indices and a phase (quadrilaterals only), got {len(parts)} fields"
            )
        ids = [int(p) for p in parts[:4]]
        if min(ids) < 0 or max(ids) >= n_nodes:
            raise MeshFormatError(f"line {lineno}: node index out of range")
        elements[k] = ids
        phase[k] = _parse_phase(parts[4], lineno)
    leftover = next(it, None)
    if leftover is not None:
        raise MeshFormatError(f"line {leftover[0]}: trailing content after element block")

    lower = nodes.min(axis=0)
    upper = nodes.max(axis=0)
    mesh = PeriodicMesh(nodes=nodes, elements=elements, phase=phase, lower=lower, upper=upper, info={"source": str(path)})
    if periodic:
        master, slave, shift, corners = pair_boundary_nodes(nodes, lower, upper)
        mesh.pair_master, mesh.pair_slave, mesh.pair_shift = master, slave, shift
        mesh.corner_group = corners
    return mesh


def build_laminate_rve(width, elements_per_edge, fraction=0.5):
    """Two-phase laminate with layers normal to y1: matrix for ``y1 < y1_0 + fraction*width``.

    Used as an analytic oracle; the harmonic mean of the two phase moduli is
    the exact effective stiffness normal to the layers.
    """
    m = int(elements_per_edge)
    cut = fraction * m
    if abs(cut - round(cut)) > 1e-9 or not 0 < round(cut) < m:
        raise ResolutionError(f"layer fraction {fraction} is not a whole number of the {m} element columns")
    half = 0.5 * float(width)
    nodes, elements = structured_grid(m, m, (-half, -half), (half, half))
    col = np.tile(np.arange(m), m)
    phase = np.where(col < round(cut), MATRIX, INCLUSION).astype(np.int8)
    mesh = PeriodicMesh(
        nodes=nodes,
        elements=elements,
        phase=phase,
        lower=np.array([-half, -half]),
        upper=np.array([half, half]),
        info={"laminate_fraction": fraction, "elements_per_edge": m},
    )
    _attach_structured_pairs(mesh, m, m)
    return mesh


def export_vtk(mesh: PeriodicMesh, path, point_data=None, title="gradhom mesh"):
    """Legacy-VTK ASCII unstructured grid with the phase tag as cell data.

    ``point_data`` maps names to nodal arrays of shape (N,) or (N, 2); vector
    fields are written with a zero third component.
    """
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    out.append(f"POINTS {mesh.n_nodes} double")
    out.extend(f"{float(x)!r} {float(y)!r} 0.0" for x, y in mesh.nodes)
    out.append(f"CELLS {mesh.n_elements} {5 * mesh.n_elements}")
    out.extend("4 " + " ".join(map(str, e)) for e in mesh.elements.tolist())
    out.append(f"CELL_TYPES {mesh.n_elements}")
    out.extend(["9"] * mesh.n_elements)  # VTK_QUAD
    out.append(f"CELL_DATA {mesh.n_elements}")
    out.append("SCALARS phase int 1")
    out.append("LOOKUP_TABLE default")
    out.extend(str(int(p)) for p in mesh.phase)
    if point_data:
        out.append(f"POINT_DATA {mesh.n_nodes}")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float)
            if values.ndim == 1:
                out.append(f"SCALARS {name} double 1")
                out.append("LOOKUP_TABLE default")
                out.extend(repr(float(v)) for v in values)
            else:
                out.append(f"VECTORS {name} double")
                out.extend(f"{float(u)!r} {float(v)!r} 0.0" for u, v in values)
    Path(path).write_text("\n".join(out) + "\n")
