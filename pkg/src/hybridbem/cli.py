"""Command-line front end: ``hybridbem {solve,leadfield,validate-sphere,info} --config run.ini``.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 validation bound exceeded.
"""
from __future__ import annotations

import argparse
import contextlib
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import formulation as fm
from .analytic import Dipole, LayeredSphereModel, analytic_layered_sphere, relative_error
from .config import ConfigError, RunConfig, load_config
from .elements.basis import SwgBasis, WireHatBasis, tet_subset
from .geometry import (
    ElectrodeSet,
    MeshError,
    NestedHeadModel,
    generate_sphere_surface,
    load_electrodes,
    load_surface_mesh,
    load_tet_region,
    load_wire_bundle,
    sphere_electrodes,
    validate_nesting,
)
from .operators import AssemblyOptions

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_BOUND = 0, 2, 3, 4


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage} failed: {message}")
        self.stage = stage


class BoundExceeded(RuntimeError):
    pass


@contextlib.contextmanager
def stage(name: str):
    """Tag numerical failures with the pipeline stage they came from."""
    try:
        yield
    except (ConfigError, MeshError, StageError):
        raise
    except fm.FormulationError as exc:
        raise ConfigError(f"{name}: {exc}") from exc
    except (fm.SolverError, np.linalg.LinAlgError, FloatingPointError, RuntimeError, ValueError) as exc:
        raise StageError(name, str(exc)) from exc


@dataclass
class Scenario:
    model: NestedHeadModel
    electrodes: ElectrodeSet
    regions: tuple
    bundles: tuple


def assembly_options(cfg: RunConfig) -> AssemblyOptions:
    s = cfg.solver
    return AssemblyOptions(
        quadrature_order=s.quadrature_order, tet_order=s.tet_order, wire_order=s.wire_order,
        threads=s.threads, test_refinement=s.test_refinement,
    )


def sphere_scenario(cfg: RunConfig) -> Scenario:
    sp = cfg.sphere
    surfaces = tuple(generate_sphere_surface(r, sp.level, i + 1) for i, r in enumerate(sp.radii))
    model = NestedHeadModel(surfaces, sp.sigma)
    outer = surfaces[-1]
    if sp.electrodes is None:
        elec = ElectrodeSet(outer.vertices, tuple(f"V{i + 1:04d}" for i in range(outer.n_vertices)))
    else:
        elec = sphere_electrodes(sp.electrodes, sp.radii[-1]).snapped(outer, tolerance=sp.radii[-1])
    return Scenario(model, elec, (), ())


def load_scenario(cfg: RunConfig) -> Scenario:
    if cfg.source == "sphere":
        base = sphere_scenario(cfg)
        model, elec = base.model, base.electrodes
    else:
        surfaces = tuple(load_surface_mesh(p, i + 1) for i, p in enumerate(cfg.surfaces))
        model = NestedHeadModel(surfaces, cfg.sigma)
        report = validate_nesting(model)
        if not report.passed:
            raise ConfigError("surfaces are not nested: " + "; ".join(report.failures()))
        elec = load_electrodes(cfg.electrodes).snapped(surfaces[-1])
    regions = tuple(load_tet_region(p, h) for p, h in zip(cfg.tets, cfg.tet_hosts))
    bundles = tuple(load_wire_bundle(p, h, cfg.max_seg_len) for p, h in zip(cfg.wires, cfg.wire_hosts))
    return Scenario(model, elec, regions, bundles)


def assemble(sc: Scenario, cfg: RunConfig, regions=None, bundles=None) -> fm.BlockSystem:
    regions = sc.regions if regions is None else regions
    bundles = sc.bundles if bundles is None else bundles
    with stage("assembly"):
        system = fm.build_system(sc.model, regions, bundles, assembly_options(cfg))
    with stage("deflation"):
        return fm.deflate(system)


def electrode_potentials(system: fm.BlockSystem, dipoles, electrodes: np.ndarray, cfg: RunConfig) -> np.ndarray:
    """Mean-referenced electrode potentials (V), one column per dipole."""
    with stage("right-hand side"):
        B = system.rhs(list(dipoles))
    with stage("solve"):
        X = fm.solve_many(system, B, cfg.solver.method, cfg.solver.tol)
    with stage("evaluation"):
        out = np.zeros((len(electrodes), len(dipoles)))
        for j, d in enumerate(dipoles):
            sigma_s = system.model.sigma_of(fm.host_compartment(system.model, d))
            sol = fm.ForwardSolution(X[:, j], system.layout, tuple(system.families), d, sigma_s)
            out[:, j] = fm.eval_potential(sol, electrodes, cfg.solver.threads)
    return fm.mean_referenced(out)


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".12e")


def write_csv(path: Path, cfg: RunConfig, header: list[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# hybridbem {__version__} config_sha256={cfg.digest}", ",".join(header)]
    for row in rows:
        lines.append(",".join(c if isinstance(c, str) else _fmt(c) for c in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def _safe(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in label)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_solve(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    if not cfg.dipoles:
        raise ConfigError("[dipoles] needs at least one dipole")
    sc = load_scenario(cfg)
    labels = [lab for lab, _ in cfg.dipoles]
    dipoles = [d for _, d in cfg.dipoles]
    system = assemble(sc, cfg)
    phi = electrode_potentials(system, dipoles, sc.electrodes.positions, cfg) * 1e3
    idx = range(1, len(sc.electrodes) + 1)
    for j, lab in enumerate(labels):
        p = write_csv(
            cfg.output_dir / f"potentials_{_safe(lab)}.csv", cfg, ["electrode_index", "label", "phi_mV"],
            ([str(i), e, v] for i, e, v in zip(idx, sc.electrodes.labels, phi[:, j])),
        )
        print(f"wrote {p}", file=out)
    if cfg.compare_models and (sc.regions or sc.bundles):
        iso = assemble(sc, cfg, regions=(), bundles=())
        phi_iso = electrode_potentials(iso, dipoles, sc.electrodes.positions, cfg) * 1e3
        for j, lab in enumerate(labels):
            p = write_csv(
                cfg.output_dir / f"compare_{_safe(lab)}.csv", cfg,
                ["electrode_index", "phi_mV_isotropic", "phi_mV_hybrid"],
                ([str(i), a, b] for i, a, b in zip(idx, phi_iso[:, j], phi[:, j])),
            )
            print(f"wrote {p}", file=out)
    return EXIT_OK


def cmd_leadfield(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    if not cfg.dipoles:
        raise ConfigError("[dipoles] needs at least one dipole position")
    sc = load_scenario(cfg)
    system = assemble(sc, cfg)
    positions = np.array([d.position for _, d in cfg.dipoles])
    with stage("leadfield"):
        for _, d in cfg.dipoles:
            fm.host_compartment(sc.model, d)
        lf = fm.compute_leadfield(system, positions, sc.electrodes.positions, cfg.solver.method, cfg.solver.tol)
    cols = [f"{_safe(lab)}_{c}_V_per_Am" for lab, _ in cfg.dipoles for c in "xyz"]
    p = write_csv(
        cfg.output_dir / "leadfield.csv", cfg, ["electrode_index", "label"] + cols,
        ([str(i + 1), e] + list(lf.matrix[i]) for i, e in enumerate(sc.electrodes.labels)),
    )
    print(f"wrote {p}", file=out)
    report = cfg.output_dir / "leadfield_timings.txt"
    lines = [f"# hybridbem {__version__} config_sha256={cfg.digest}"]
    lines += [f"{k}_s = {v:.6f}" for k, v in sorted(lf.timings.items())]
    report.write_text("\n".join(lines) + "\n")
    for line in lines[1:]:
        print(line, file=out)
    return EXIT_OK


def sphere_sweep(cfg: RunConfig) -> list[tuple[float, float]]:
    """``(eccentricity_pct, relative_error_pct)`` for every configured eccentricity.

    Dipoles sit on the +z axis; with orientation ``both`` the larger of the
    radial and tangential errors is reported.
    """
    sp = cfg.sphere
    sc = sphere_scenario(cfg)
    system = assemble(sc, cfg)
    oracle = LayeredSphereModel(sp.radii, sp.sigma, sp.n_max, sp.tol)
    moments = {"radial": [np.array([0.0, 0.0, sp.moment])], "tangential": [np.array([sp.moment, 0.0, 0.0])]}
    moments["both"] = moments["radial"] + moments["tangential"]
    dirs = moments[sp.orientation]
    dipoles = [Dipole([0.0, 0.0, e / 100.0 * sp.radii[0]], m) for e in sp.eccentricities for m in dirs]
    E = sc.electrodes.positions
    phi = electrode_potentials(system, dipoles, E, cfg)
    with stage("analytic oracle"):
        ref = np.column_stack([analytic_layered_sphere(oracle, d, E) for d in dipoles])
    re = np.array([relative_error(phi[:, j], ref[:, j]) for j in range(len(dipoles))]) * 100.0
    re = re.reshape(len(sp.eccentricities), len(dirs)).max(axis=1)
    return list(zip(sp.eccentricities, re))


def cmd_validate_sphere(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    rows = sphere_sweep(cfg)
    p = write_csv(cfg.output_dir / "validate_sphere.csv", cfg, ["eccentricity_pct", "relative_error_pct"], rows)
    for e, r in rows:
        print(f"eccentricity {e:5.1f}%  relative error {r:7.3f}%", file=out)
    print(f"wrote {p}", file=out)
    worst = max(r for _, r in rows)
    if worst > cfg.sphere.bound_pct:
        raise BoundExceeded(f"max relative error {worst:.3f}% exceeds bound {cfg.sphere.bound_pct}%")
    return EXIT_OK


def dof_summary(sc: Scenario) -> list[tuple[str, int]]:
    """Unknown counts per block without assembling anything."""
    out = [(f"surface {s.layer_index}", s.n_vertices) for s in sc.model.surfaces]
    for k, region in enumerate(sc.regions):
        con = fm.compute_contrast(sc.model.sigma_of(region.host_layer), region.sigma)
        n = SwgBasis(tet_subset(region, con.active)).size if np.any(con.active) else 0
        out.append((f"tet region {k}", n))
    for k, bundle in enumerate(sc.bundles):
        con = fm.compute_contrast(sc.model.sigma_of(bundle.host_layer), sigma_l=bundle.sigma_l)
        n = WireHatBasis(bundle.subset(con.wire_active)).size if np.any(con.wire_active) else 0
        out.append((f"wire bundle {k}", n))
    return out


def cmd_info(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    sc = load_scenario(cfg)
    print(f"hybridbem {__version__}  config_sha256={cfg.digest}", file=out)
    for s, sig in zip(sc.model.surfaces, sc.model.sigma):
        print(
            f"surface {s.layer_index}: {s.n_vertices} vertices, {s.n_triangles} triangles, "
            f"mean edge {s.mean_edge_length() * 1e3:.3f} mm, sigma {sig:g} S/m",
            file=out,
        )
    for k, r in enumerate(sc.regions):
        print(f"tet region {k}: {r.n_tets} tets, volume {r.volume * 1e6:.3f} cm^3, host {r.host_layer}", file=out)
    for k, b in enumerate(sc.bundles):
        print(f"wire bundle {k}: {b.n_fibers} fibers, total length {b.lengths.sum() * 1e3:.2f} mm, host {b.host_layer}", file=out)
    print(f"electrodes: {len(sc.electrodes)}", file=out)
    dofs = dof_summary(sc)
    for name, n in dofs:
        print(f"dofs {name}: {n}", file=out)
    print(f"dofs total: {sum(n for _, n in dofs)}", file=out)
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "leadfield": cmd_leadfield,
    "validate-sphere": cmd_validate_sphere,
    "info": cmd_info,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybridbem", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"hybridbem {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--threads", type=int)
        p.add_argument("--output", type=Path)
        p.add_argument("--solver", choices=("direct", "iterative"))
        p.add_argument("--quadrature-order", type=int)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(
            threads=args.threads, output=args.output, solver=args.solver, quadrature_order=args.quadrature_order
        )
        return COMMANDS[args.command](cfg)
    except (ConfigError, MeshError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except BoundExceeded as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_BOUND


if __name__ == "__main__":
    sys.exit(main())
