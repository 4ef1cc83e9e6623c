"""Command-line driver.

Subcommands:
    run -c CONFIG             execute a load program, write CSV/VTU/JSON
    convergence -c CONFIG -r N1,N2,...   mesh-sensitivity sweep
    calibrate --E ... --sigma-max ...    print G_c and l for a modulus
    mesh-info PATH            inspect a Gmsh MSH file

Exit codes: 0 success, 1 config/input error, 2 solver failure (partial
outputs are kept).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .backend import BACKEND, set_workers
from .config import ConfigError, RunConfig, build_scenario, load_run_config
from .materials import (
    DEFAULT_BETA,
    DEFAULT_E0,
    DEFAULT_GC0,
    MaterialError,
    gc_power_law,
    length_scale,
)
from .mesh import MeshError, parse_msh
from .postprocess import CurveSeries, write_curves_csv, write_vtu
from .solvers import run_load_program

SUMMARY_SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_CONFIG


def cmd_run(args) -> int:
    try:
        cfg = load_run_config(args.config)
        set_workers(cfg.workers)
        mesh, materials, program = build_scenario(cfg)
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
    except (ConfigError, OSError, ValueError) as exc:
        return _fail(str(exc))

    out = cfg.output_dir
    t0 = time.perf_counter()
    snapshots = []
    probe_disp = []
    probe = program.probe_nodes if program.probe_nodes is not None else program.reaction_nodes

    def on_step(report, state):
        if report.converged:
            u3 = state.u.reshape(-1, 3)[probe]
            probe_disp.append(float(np.linalg.norm(u3, axis=1).mean()))
        if cfg.vtu_every and report.converged and report.step % cfg.vtu_every == 0:
            path = out / f"state_{report.step:04d}.vtu"
            write_vtu(mesh, state, materials, path)
            snapshots.append(path.name)

    reports, state = run_load_program(
        mesh, materials, program, cfg.solver,
        csv_path=out / "steps.csv", on_step=on_step,
    )
    wall = time.perf_counter() - t0
    write_vtu(mesh, state, materials, out / "state_final.vtu")

    done = [r for r in reports if r.converged]
    if done:
        # force vs the mean displacement magnitude of the loaded node set
        series = CurveSeries(
            abscissa=np.asarray(probe_disp), ordinate=np.asarray([r.reaction for r in done]),
            label=f"{program.motion}_reaction",
        )
        fv = CurveSeries(
            abscissa=np.asarray([r.step for r in done], dtype=float),
            ordinate=np.asarray([r.fractured_volume for r in done]),
            label="fractured_volume",
        )
        write_curves_csv([series, fv], out / "curves.csv")

    ok = bool(reports) and all(r.converged for r in reports)
    peak_idx = int(np.argmax([abs(r.reaction) for r in reports])) if reports else -1
    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "backend": BACKEND,
        "version": __version__,
        "converged": ok,
        "n_steps_completed": sum(1 for r in reports if r.converged),
        "n_steps_requested": program.n_steps,
        "peak_load": abs(reports[peak_idx].reaction) if reports else 0.0,
        "peak_step": reports[peak_idx].step if reports else 0,
        "total_fractured_volume": reports[-1].fractured_volume if reports else 0.0,
        "wall_time_s": wall,
        "snapshots": snapshots,
        "halted_early": bool(reports and reports[-1].message),
        "message": reports[-1].message if reports else "no steps executed",
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if not ok:
        print(f"solver failure at step {reports[-1].step}: {reports[-1].message}",
              file=sys.stderr)
        return EXIT_SOLVER
    print(f"completed {summary['n_steps_completed']} steps, "
          f"peak load {summary['peak_load']:.6g} N at step {summary['peak_step']}, "
          f"outputs in {out}")
    return EXIT_OK


def cmd_convergence(args) -> int:
    try:
        refinements = [int(tok) for tok in args.refinements.split(",") if tok.strip()]
    except ValueError:
        return _fail(f"refinement list {args.refinements!r} is not comma-separated integers")
    if len(refinements) < 2:
        return _fail("need at least 2 refinement levels")
    try:
        cfg = load_run_config(args.config)
        set_workers(cfg.workers)
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
    except (ConfigError, OSError) as exc:
        return _fail(str(exc))

    from .postprocess import relative_error_curve

    peaks, dof_counts = [], []
    for level in refinements:
        try:
            mesh, materials, program = build_scenario(cfg, refinement=level)
        except ConfigError as exc:
            return _fail(str(exc))
        reports, _ = run_load_program(mesh, materials, program, cfg.solver)
        if not reports or not all(r.converged for r in reports):
            print(f"solver failure at refinement {level}", file=sys.stderr)
            return EXIT_SOLVER
        peak = max(abs(r.reaction) for r in reports)
        peaks.append(peak)
        dof_counts.append(3 * mesh.n_nodes)
        print(f"refinement {level}: {mesh.n_tets} elements, "
              f"{3 * mesh.n_nodes} dofs, peak load {peak:.6g} N")

    series, converged_at = relative_error_curve(peaks, dof_counts)
    write_curves_csv(series, cfg.output_dir / "convergence.csv")
    for level, dofs, err in zip(refinements, dof_counts, series.ordinate):
        print(f"  refinement {level} ({dofs} dofs): relative error {err:.3f}%")
    if converged_at is None:
        print("no refinement reached the 5% relative-error criterion")
    else:
        print(f"5% relative-error criterion first met at refinement "
              f"{refinements[converged_at]}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    try:
        gc = gc_power_law(args.E, args.E0, args.Gc0, args.beta)
        ell = length_scale(args.E, gc, args.sigma_max)
    except MaterialError as exc:
        return _fail(str(exc))
    print(f"G_c = {gc:.12g} N/mm")
    print(f"l   = {ell:.12g} mm")
    return EXIT_OK


def cmd_mesh_info(args) -> int:
    path = Path(args.path)
    if not path.exists():
        return _fail(f"mesh file not found: {path}")
    try:
        with open(path) as fh:
            mesh = parse_msh(fh)
    except (MeshError, OSError) as exc:
        return _fail(f"cannot parse {path}: {exc}")
    from .assembly import element_operators

    vols = element_operators(mesh).vols
    print(f"nodes:    {mesh.n_nodes}")
    print(f"tets:     {mesh.n_tets}")
    print(f"facets:   {mesh.boundary_facets.shape[0]}")
    print(f"volume:   {vols.sum():.12g} mm^3")
    regions = sorted(set(mesh.region_tags.tolist()))
    print(f"region tags: {regions}")
    tags = sorted(set(mesh.facet_tags.tolist()))
    print(f"facet tags:  {tags}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bonefrac",
        description="Quasi-static phase-field fracture on tetrahedral meshes",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a load program from a TOML config")
    p_run.add_argument("-c", "--config", required=True, help="TOML config path")
    p_run.set_defaults(func=cmd_run)

    p_conv = sub.add_parser("convergence", help="mesh-sensitivity sweep")
    p_conv.add_argument("-c", "--config", required=True)
    p_conv.add_argument("-r", "--refinements", required=True,
                        help="comma-separated refinement levels, e.g. 8,12,16")
    p_conv.set_defaults(func=cmd_convergence)

    p_cal = sub.add_parser("calibrate", help="print G_c and l for a modulus")
    p_cal.add_argument("--E", type=float, required=True, help="Young's modulus (MPa)")
    p_cal.add_argument("--sigma-max", dest="sigma_max", type=float, required=True,
                       help="failure stress (MPa)")
    p_cal.add_argument("--E0", type=float, default=DEFAULT_E0)
    p_cal.add_argument("--Gc0", type=float, default=DEFAULT_GC0)
    p_cal.add_argument("--beta", type=float, default=DEFAULT_BETA)
    p_cal.set_defaults(func=cmd_calibrate)

    p_info = sub.add_parser("mesh-info", help="inspect a Gmsh MSH file")
    p_info.add_argument("path")
    p_info.set_defaults(func=cmd_mesh_info)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
