"""Command-line front end: ``gradhom homogenize|validate|sweep -c CONFIG``.

Exit codes: 0 success, 1 solver or runtime failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from gradhom import __version__
from gradhom.cell_solver import PAIRS, SOURCE_DISTRIBUTIONS, TRIPLES, label
from gradhom.effective_tensors import VOIGT2, VOIGT2_LABELS, VOIGT3, VOIGT3_LABELS, homogenize
from gradhom.errors import ConfigError, GradhomError, MeshFormatError, PairingError, ResolutionError
from gradhom.fem_core import SolverSettings
from gradhom.lattice_mesh import CellGeometry, MicroMaterial, build_square_lattice_rve, export_vtk, import_mesh
from gradhom.validation import MODELS, SpecimenSpec, size_effect_study

log = logging.getLogger("gradhom")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

REQUIRED = {
    "geometry": ("cell_edge_length", "wall_thickness"),
    "material": ("E_matrix", "nu_matrix", "E_inclusion", "nu_inclusion"),
    "mesh": ("elements_per_cell_edge",),
}
GEOMETRY_SECTIONS = ("geometry", "material", "mesh")
ASSUMPTIONS = [
    "plane strain: lambda = E nu / ((1 + nu)(1 - 2 nu)), mu = E / (2 (1 + nu))",
    "second moment I_kn = eps^2 / V * integral y_k y_n dV (normalized by the RVE volume)",
    "correction D_ijklmn = Dbar_ijklmn - C_ijlm I_kn",
    "fluctuations are periodic with zero volume mean (Lagrange multipliers, no pinned node)",
]
SOURCE_NOTES = {
    "stiffness": "second-order source: the C^M load is spread over the cell in proportion to the local stiffness norm",
    "stress": "second-order source: the C^M load follows the local first-order stress C L (pointwise zero source)",
    "uniform": "second-order source: the C^M load is spread uniformly over the cell, voids included",
}


@dataclasses.dataclass
class RunConfig:
    path: Path
    parser: configparser.ConfigParser
    digest: str
    geometry_digest: str
    geometry: CellGeometry
    material: MicroMaterial
    elements_per_cell_edge: int
    mesh_file: Path | None
    settings: SolverSettings
    distribution: str
    output: Path

    def get(self, section, key, fallback=None):
        return self.parser.get(section, key, fallback=fallback)


def _number(parser, section, key, kind=float, fallback=None, required=False):
    if not parser.has_option(section, key):
        if required:
            raise ConfigError(f"missing required key [{section}] {key}")
        return fallback
    raw = parser.get(section, key)
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read {raw!r} as {kind.__name__}") from None


def _number_list(parser, section, key, kind=float, fallback=None):
    if not parser.has_option(section, key):
        return fallback
    raw = parser.get(section, key)
    items = [s.strip() for s in raw.replace(";", ",").split(",") if s.strip()]
    try:
        return [kind(s) for s in items]
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read {raw!r} as a list of {kind.__name__}") from None


def geometry_digest(parser):
    """Hash of the sections that determine the effective tensors."""
    lines = []
    for section in GEOMETRY_SECTIONS:
        if parser.has_section(section):
            for key in sorted(parser.options(section)):
                lines.append(f"{section}.{key}={parser.get(section, key).strip()}")
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]


def load_config(path, output=None):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case sensitive (E_matrix)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        message = exc.message.splitlines()[0]
        if isinstance(exc, configparser.ParsingError) and exc.errors:
            lineno, bad = exc.errors[0]
            message = f"cannot parse {bad}"
        where = f"line {lineno}: " if lineno is not None else ""
        raise ConfigError(f"{path}: {where}{message}") from None
    for section, keys in REQUIRED.items():
        for key in keys:
            if not parser.has_option(section, key):
                raise ConfigError(f"missing required key [{section}] {key}")
    try:
        geometry = CellGeometry(
            l=_number(parser, "geometry", "cell_edge_length"),
            t=_number(parser, "geometry", "wall_thickness"),
            n=_number(parser, "geometry", "repetitions", int, 1),
            epsilon=_number(parser, "geometry", "epsilon", float, 1.0),
        )
        material = MicroMaterial(
            E_matrix=_number(parser, "material", "E_matrix"),
            nu_matrix=_number(parser, "material", "nu_matrix"),
            E_inclusion=_number(parser, "material", "E_inclusion"),
            nu_inclusion=_number(parser, "material", "nu_inclusion"),
        )
        settings = SolverSettings(
            rel_tol=_number(parser, "solver", "rel_tol", float, SolverSettings.rel_tol),
            abs_tol=_number(parser, "solver", "abs_tol", float, SolverSettings.abs_tol),
            max_iter=_number(parser, "solver", "max_iter", int, None),
            preconditioner=parser.get("solver", "preconditioner", fallback="diagonal"),
            method=parser.get("solver", "method", fallback="cg"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    distribution = parser.get("solver", "source_distribution", fallback="stiffness")
    if distribution not in SOURCE_DISTRIBUTIONS:
        raise ConfigError(f"[solver] source_distribution must be one of {', '.join(SOURCE_DISTRIBUTIONS)}")
    mesh_file = parser.get("mesh", "file", fallback=None)
    if mesh_file:
        mesh_file = (path.parent / mesh_file).resolve()
        if not mesh_file.exists():
            raise ConfigError(f"[mesh] file: {mesh_file} does not exist")
    out = Path(output) if output else Path(parser.get("output", "directory", fallback="gradhom_out"))
    return RunConfig(
        path=path,
        parser=parser,
        digest=hashlib.sha256(text.encode()).hexdigest()[:16],
        geometry_digest=geometry_digest(parser),
        geometry=geometry,
        material=material,
        elements_per_cell_edge=_number(parser, "mesh", "elements_per_cell_edge", int, required=True),
        mesh_file=mesh_file or None,
        settings=settings,
        distribution=distribution,
        output=out,
    )


def header(cfg: RunConfig, extra=()):
    lines = [f"# gradhom {__version__}", f"# config_sha256 {cfg.digest}", f"# geometry_sha256 {cfg.geometry_digest}"]
    lines.extend(f"# {e}" for e in extra)
    return lines


def fmt(x):
    return repr(float(x))


def build_mesh(cfg: RunConfig, geometry=None):
    if cfg.mesh_file is not None:
        return import_mesh(cfg.mesh_file)
    return build_square_lattice_rve(geometry or cfg.geometry, cfg.elements_per_cell_edge)


# --- tensor CSV ----------------------------------------------------------------------


def tensor_rows(eff):
    C3, D6 = eff.C_voigt, eff.D_voigt
    rows = []
    for i, a in enumerate(VOIGT2_LABELS):
        for j, b in enumerate(VOIGT2_LABELS):
            rows.append(("C", a, b, C3[i, j], "MPa"))
    for i, a in enumerate(VOIGT3_LABELS):
        for j, b in enumerate(VOIGT3_LABELS):
            rows.append(("D", a, b, D6[i, j], "N"))
    return rows


def write_tensor_csv(path, cfg, eff, extra=()):
    lines = header(cfg, [f"epsilon {fmt(eff.epsilon)}", f"cell_edge_length {fmt(cfg.geometry.l)}", *extra])
    lines.append("tensor,row,col,value,unit")
    lines.extend(f"{t},{a},{b},{fmt(v)},{u}" for t, a, b, v, u in tensor_rows(eff))
    Path(path).write_text("\n".join(lines) + "\n")


def read_tensor_csv(path):
    """Full ``C`` (rank 4) and ``D`` (rank 6) plus header fields from a tensor CSV."""
    meta, C, D = {}, np.zeros((2,) * 4), np.zeros((2,) * 6)
    idx2 = dict(zip(VOIGT2_LABELS, VOIGT2))
    idx3 = dict(zip(VOIGT3_LABELS, VOIGT3))
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read tensor file {path}: {exc.strerror}") from None
    for line in lines:
        if line.startswith("#"):
            parts = line[1:].split(None, 1)
            if len(parts) == 2:
                meta[parts[0]] = parts[1]
            continue
        if line.startswith("tensor,") or not line.strip():
            continue
        t, a, b, v, _ = line.split(",")
        if t == "C":
            for p in {idx2[a], idx2[a][::-1]}:
                for q in {idx2[b], idx2[b][::-1]}:
                    C[p + q] = float(v)
        else:
            (a1, a2, a3), (b1, b2, b3) = idx3[a], idx3[b]
            for p in {(a1, a2), (a2, a1)}:
                for q in {(b1, b2), (b2, b1)}:
                    D[p + (a3,) + q + (b3,)] = float(v)
    return C, D, meta


# --- report --------------------------------------------------------------------------


def matrix_lines(M, labels, fmt_spec="{:>14.6g}"):
    out = ["      " + "".join(f"{lab:>14}" for lab in labels)]
    for lab, row in zip(labels, M):
        out.append(f"{lab:>6}" + "".join(fmt_spec.format(v) for v in row))
    return out


def homogenize_report(cfg, mesh, eff):
    d = eff.diagnostics
    lines = header(cfg)
    lines += ["", "effective tensors", "================="]
    lines += ["C_M (MPa, Voigt 11 22 12):"] + matrix_lines(eff.C_voigt, VOIGT2_LABELS)
    lines += ["", "D_M (N, Voigt 111 221 122 222 112 121):"] + matrix_lines(eff.D_voigt, VOIGT3_LABELS)
    lines += [
        "",
        f"epsilon: {fmt(eff.epsilon)}",
        f"I_bar (mm^2): [[{eff.I_bar[0, 0]:.10g}, {eff.I_bar[0, 1]:.10g}], [{eff.I_bar[1, 0]:.10g}, {eff.I_bar[1, 1]:.10g}]]",
        f"|G_bar| (N/mm): {eff.G_norm:.3e}  relative to (|C| |D|)^1/2: {eff.G_relative:.3e}",
        f"D block deviation (square symmetry): {eff.block_deviation():.3e}",
        f"D Voigt eigenvalues (N): {', '.join(f'{v:.6g}' for v in eff.D_eigenvalues())}",
    ]
    lines += ["", "checks", "======"]
    lines.append(f"<C L> vs C^M: {d['identity_CL']:.3e}   <L^T C L> vs C^M: {d['identity_LCL']:.3e}")
    lines.append(f"C^M symmetrization deviation: {d['CM_symmetry_deviation']:.3e}")
    if cfg.material.is_homogeneous:
        dmax = float(np.abs(eff.D).max())
        verdict = "passed: D ≈ 0" if dmax <= 1e-6 else f"FAILED: max |D| = {dmax:.3e} N"
        lines.append(f"compatibility check {verdict}")
    if eff.D_eigenvalues().min() < -1e-9 * eff.D_scale:
        lines.append("warning: D_M is indefinite")
    lines += ["", "mesh", "===="]
    lines.append(f"nodes: {mesh.n_nodes}  elements: {mesh.n_elements}  RVE edge (local): {mesh.w:.10g}")
    lines.append(f"inclusion fraction: {mesh.phase_fraction():.6f}")
    if mesh.info.get("wall_snapped"):
        lines.append(f"warning: wall thickness rounded to {mesh.info['effective_wall_thickness']:.6g} mm")
    lines += ["", "solver", "======"]
    s = cfg.settings
    lines.append(f"method: {s.method}  rel_tol: {s.rel_tol:g}  abs_tol: {s.abs_tol:g}  preconditioner: {s.preconditioner}")
    for name in sorted(d["residuals"]):
        lines.append(f"{name}: residual {d['residuals'][name]:.3e}  iterations {d['iterations'][name]}")
    lines += ["", "assumptions", "==========="]
    lines += [f"- {a}" for a in ASSUMPTIONS] + [f"- {SOURCE_NOTES[cfg.distribution]}"]
    return "\n".join(lines) + "\n"


def dump_fields(path, mesh, sol):
    data = {f"phi_{label(p)}": sol.phi[p] for p in PAIRS}
    data.update({f"psi_{label(t)}": sol.psi[t] for t in TRIPLES})
    export_vtk(mesh, path, point_data=data, title="gradhom cell solution")


# --- commands ------------------------------------------------------------------------


def run_homogenization(cfg, geometry=None):
    mesh = build_mesh(cfg, geometry)
    eps = (geometry or cfg.geometry).epsilon
    eff, sol = homogenize(mesh, cfg.material, cfg.settings, epsilon=eps, distribution=cfg.distribution)
    return mesh, eff, sol


def cmd_homogenize(cfg, args):
    mesh, eff, sol = run_homogenization(cfg)
    cfg.output.mkdir(parents=True, exist_ok=True)
    write_tensor_csv(cfg.output / "effective_tensors.csv", cfg, eff)
    (cfg.output / "report.txt").write_text(homogenize_report(cfg, mesh, eff))
    if args.dump_fields:
        dump_fields(cfg.output / "cell_fields.vtk", mesh, sol)
    if args.mesh_export == "vtk":
        export_vtk(mesh, cfg.output / "mesh.vtk")
    log.info("wrote %s", cfg.output / "effective_tensors.csv")
    return EXIT_OK


def validation_specs(cfg):
    p = cfg.parser
    study = p.get("validate", "study", fallback="ratio")
    l = cfg.geometry.l
    common = dict(
        t_ratio=cfg.geometry.t / l,
        thetas=tuple(_number_list(p, "validate", "thetas", float, [0.0, 0.05, 0.1, 0.15, 0.2])),
        elements_per_cell=_number(p, "validate", "elements_per_cell", int, 20),
        macro_elements=_number(p, "validate", "macro_elements", int, 40),
    )
    try:
        if study == "ratio":
            ratios = _number_list(p, "validate", "ratios", int, [2, 4, 6, 10])
            specs = [SpecimenSpec(L=r * l, l=l, **common) for r in ratios]
        elif study == "cells":
            edge = _number(p, "validate", "specimen_edge", float, 4.0)
            cells = _number_list(p, "validate", "cells", int, [16, 64, 400])
            for c in cells:
                if math.isqrt(c) ** 2 != c:
                    raise ConfigError(f"[validate] cells: {c} is not a square number")
            specs = [SpecimenSpec(L=edge, l=edge / math.isqrt(c), **common) for c in cells]
        else:
            raise ConfigError(f"[validate] study must be 'ratio' or 'cells', got {study!r}")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not specs:
        raise ConfigError("[validate] specimen list is empty")
    return study, specs


def cmd_validate(cfg, args):
    study, specs = validation_specs(cfg)
    notes = []
    tensor_file = cfg.get("validate", "tensors")
    if tensor_file:
        tensor_path = (cfg.path.parent / tensor_file).resolve()
        C, D, meta = read_tensor_csv(tensor_path)
        if meta.get("geometry_sha256") != cfg.geometry_digest:
            notes.append(
                f"warning: tensors in {tensor_path.name} were computed for geometry hash "
                f"{meta.get('geometry_sha256', 'unknown')}, this config has {cfg.geometry_digest}; they may be stale"
            )
        l_ref = float(meta.get("cell_edge_length", cfg.geometry.l))
    else:
        _, eff, _ = run_homogenization(cfg)
        C, D, l_ref = eff.C, eff.D, cfg.geometry.l
    cfg.output.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        curves, rows = size_effect_study(specs, C, D / l_ref**2, cfg.material)
    notes.extend(sorted({f"warning: {w.message}" for w in caught}))
    for curve in curves:
        s = curve.spec
        name = f"curve_L{s.L:g}_l{s.l:g}_{curve.model}.csv"
        lines = header(cfg, [f"model {curve.model}", f"L {fmt(s.L)}", f"l {fmt(s.l)}"])
        lines.append("theta,energy_mJ")
        lines.extend(f"{fmt(t)},{fmt(e)}" for t, e in curve.samples)
        (cfg.output / name).write_text("\n".join(lines) + "\n")
    lines = header(cfg, [f"study {study}"])
    lines.append("L_over_l,cells,model,k_coefficient,rel_error_vs_micro")
    lines.extend(f"{r.L_over_l},{r.cells},{r.model},{fmt(r.k_coefficient)},{fmt(r.rel_error_vs_micro)}" for r in rows)
    (cfg.output / "study.csv").write_text("\n".join(lines) + "\n")

    report = header(cfg) + ["", f"size-effect study ({study})", ""]
    report.append(f"{'L/l':>5} {'cells':>6} " + " ".join(f"{m + ' k':>14}" for m in MODELS) + f" {'err classical':>14} {'err gradient':>14}")
    by_spec = {}
    for r in rows:
        by_spec.setdefault((r.L_over_l, r.cells), {})[r.model] = r
    for (ratio, cells), group in by_spec.items():
        ks = " ".join(f"{group[m].k_coefficient:>14.6g}" for m in MODELS)
        report.append(
            f"{ratio:>5} {cells:>6} {ks} {group['classical'].rel_error_vs_micro:>14.4%} {group['gradient'].rel_error_vs_micro:>14.4%}"
        )
    report += ["", "boundary conditions: left edge u = 0; right edge u1 = -theta X2, u2 = 0 (linearized rotation)"]
    report.append("gradient model: u and u,2 prescribed on both loaded edges; u,1 and u,12 free")
    report += [""] + (notes or ["no warnings"])
    (cfg.output / "validate_report.txt").write_text("\n".join(report) + "\n")
    return EXIT_OK


def cmd_sweep(cfg, args):
    sizes = _number_list(cfg.parser, "sweep", "cell_sizes", float, None)
    if sizes is None:
        raise ConfigError("missing required key [sweep] cell_sizes")
    if not sizes:
        raise ConfigError("[sweep] cell_sizes is empty")
    if cfg.mesh_file is not None:
        raise ConfigError("[sweep] needs a generated mesh; remove [mesh] file")
    t_ratio = cfg.geometry.t / cfg.geometry.l
    results = []
    for size in sizes:
        try:
            geom = dataclasses.replace(cfg.geometry, l=size, t=t_ratio * size)
        except ValueError as exc:
            raise ConfigError(f"[sweep] cell size {size}: {exc}") from None
        _, eff, _ = run_homogenization(cfg, geom)
        results.append((size, tensor_rows(eff)))
        log.info("cell size %g done", size)
    ref = results[0][1]
    scale = {t: max(abs(v) for tt, _, _, v, _ in ref if tt == t) for t in ("C", "D")}
    lines = header(cfg, [f"reference cell size {fmt(sizes[0])}"])
    lines.append("cell_size,tensor,row,col,value,unit,ratio")
    for size, rows in results:
        for (t, a, b, v, u), (_, _, _, v0, _) in zip(rows, ref):
            if abs(v0) <= 1e-9 * scale[t]:
                continue  # structurally zero entry; ratio undefined
            lines.append(f"{fmt(size)},{t},{a},{b},{fmt(v)},{u},{fmt(v / v0)}")
    cfg.output.mkdir(parents=True, exist_ok=True)
    (cfg.output / "sweep.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK


COMMANDS = {"homogenize": cmd_homogenize, "validate": cmd_validate, "sweep": cmd_sweep}


def build_parser():
    p = argparse.ArgumentParser(prog="gradhom", description="Strain-gradient homogenization of periodic lattices.")
    p.add_argument("--version", action="version", version=f"gradhom {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("homogenize", "compute C_M and D_M of the configured RVE"),
        ("validate", "run the clamped/rotated specimen size-effect study"),
        ("sweep", "homogenize several cell sizes and tabulate D scaling"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("-c", "--config", required=True, help="INI configuration file")
        s.add_argument("-o", "--output", help="output directory (overrides [output] directory)")
        s.add_argument("--dump-fields", action="store_true", help="write phi/psi fields as legacy VTK")
        s.add_argument("--mesh-export", choices=["vtk"], help="write the RVE mesh")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(args.config, args.output)
    except ConfigError as exc:
        print(f"gradhom: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, ResolutionError, MeshFormatError, PairingError) as exc:
        print(f"gradhom: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GradhomError as exc:
        print(f"gradhom: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
