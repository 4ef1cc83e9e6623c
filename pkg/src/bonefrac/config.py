"""TOML run configuration.

Schema (all tables optional unless noted):

    [scenario]              # required
    kind = "sent" | "vertebra_analog"

    # kind = "sent"
    mode = "tension"        # or "shear"
    resolution = 20         # cells per edge (even)
    size = 1.0              # mm
    notch_length = 0.5      # mm
    E = 210000.0            # MPa
    nu = 0.3
    Gc = 2.7                # N/mm
    ell = 0.1               # mm
    k = 1e-8
    n_steps = 25
    u_max = 0.008           # mm, total prescribed displacement

    # kind = "vertebra_analog"
    alpha = [-5.0, 0.0]     # degrees (cranio-caudal, medio-lateral)
    motion = "flexion"      # flexion | extension | torsion_ccw
    divisions = [10, 10, 6]
    block = [50.0, 50.0, 30.0]   # mm
    F_v = 5.0               # N superior compressive preload
    n_steps = 40
    seed = 0
    shell_thickness = 3.0   # mm cortical layer
    sigma_max = 100.0       # MPa for the length-scale calibration
    ell_override = "auto"   # "auto" | number | "calibrated"
    mirror_symmetric_materials = true
    force_step_fraction = 0.1

    [solver]
    mode = "staggered"      # staggered | monolithic
    staggered_tol = 1e-4
    newton_tol = 1e-6
    max_staggered_iters = 200
    max_newton_iters = 25
    linear_solver = "direct"  # direct | cg
    cg_rel_tol = 1e-10
    cg_max_iters = 10000
    monolithic_fallback_staggered = false

    [output]
    directory = "out"
    vtu_every = 5           # snapshot cadence in steps (0 disables)
    fracture_threshold = 0.95

    [run]
    workers = 1             # numba thread count (BONEFRAC_WORKERS default)
    deterministic = true    # workers forced to 1
    seed = 0                # overrides scenario seed when set
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backend import default_workers
from .solvers import SolverConfig


class ConfigError(Exception):
    pass


_SENT_KEYS = {
    "mode", "resolution", "size", "notch_length", "E", "nu", "Gc", "ell", "k",
    "n_steps", "u_max",
}
_ANALOG_KEYS = {
    "alpha", "motion", "divisions", "block", "F_v", "n_steps", "seed",
    "shell_thickness", "pedicle_offset", "entry_height_frac", "sigma_max",
    "ell_override", "mirror_symmetric_materials", "flexion_direction",
    "force_step_fraction",
}


@dataclass
class RunConfig:
    scenario: dict
    solver: SolverConfig
    output_dir: Path
    vtu_every: int = 5
    fracture_threshold: float = 0.95
    workers: int = 1
    deterministic: bool = True
    seed: int | None = None


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return parse_run_config(raw, base_dir=path.parent)


def parse_run_config(raw: dict, base_dir: Path | None = None) -> RunConfig:
    if "scenario" not in raw:
        raise ConfigError("config is missing the [scenario] table")
    scenario = dict(raw["scenario"])
    kind = scenario.pop("kind", None)
    if kind not in ("sent", "vertebra_analog"):
        raise ConfigError(f"scenario.kind must be 'sent' or 'vertebra_analog', got {kind!r}")
    allowed = _SENT_KEYS if kind == "sent" else _ANALOG_KEYS
    unknown = set(scenario) - allowed
    if unknown:
        raise ConfigError(f"unknown scenario keys for kind={kind}: {sorted(unknown)}")
    scenario["kind"] = kind

    solver_raw = dict(raw.get("solver", {}))
    known = {f.name for f in dataclasses.fields(SolverConfig)}
    unknown = set(solver_raw) - known
    if unknown:
        raise ConfigError(f"unknown solver keys: {sorted(unknown)}")
    try:
        solver = SolverConfig(**solver_raw)
    except Exception as exc:
        raise ConfigError(f"invalid solver config: {exc}") from exc

    out_raw = dict(raw.get("output", {}))
    directory = Path(out_raw.get("directory", "out"))
    if base_dir is not None and not directory.is_absolute():
        directory = base_dir / directory
    vtu_every = int(out_raw.get("vtu_every", 5))
    if vtu_every < 0:
        raise ConfigError("output.vtu_every must be >= 0")
    threshold = float(out_raw.get("fracture_threshold", 0.95))
    if not (0.0 < threshold < 1.0):
        raise ConfigError("output.fracture_threshold must lie in (0, 1)")

    run_raw = dict(raw.get("run", {}))
    workers = int(run_raw.get("workers", default_workers()))
    if workers < 1:
        raise ConfigError("run.workers must be >= 1")
    deterministic = bool(run_raw.get("deterministic", True))
    if deterministic:
        workers = 1
    seed = run_raw.get("seed")

    return RunConfig(
        scenario=scenario,
        solver=solver,
        output_dir=directory,
        vtu_every=vtu_every,
        fracture_threshold=threshold,
        workers=workers,
        deterministic=deterministic,
        seed=None if seed is None else int(seed),
    )


def build_scenario(cfg: RunConfig, refinement: int | None = None):
    """Instantiate (mesh, materials, program) from the scenario table."""
    from . import scenarios

    params = dict(cfg.scenario)
    kind = params.pop("kind")
    try:
        if kind == "sent":
            if refinement is not None:
                params["resolution"] = refinement
            mesh, materials, program = scenarios.build_sent(**params)
        else:
            if cfg.seed is not None:
                params["seed"] = cfg.seed
            if refinement is not None:
                block = params.get("block", (50.0, 50.0, 30.0))
                nz = max(1, round(refinement * block[2] / block[0]))
                params["divisions"] = [refinement, refinement, nz]
            if "alpha" in params:
                params["alpha"] = tuple(params["alpha"])
            mesh, materials, program = scenarios.build_vertebra_analog(**params)
    except (TypeError, scenarios.ScenarioError) as exc:
        raise ConfigError(f"cannot build scenario: {exc}") from exc
    program.fracture_threshold = cfg.fracture_threshold
    return mesh, materials, program
