"""Nonlinear drivers: staggered alternate minimization and monolithic Newton.

A load step advances the state under prescribed displacements/forces.
The staggered scheme alternates (i) a Newton solve of the mechanical
problem at frozen damage, (ii) the elementwise history update
H <- max(H, psi+), (iii) one linear solve of the damage problem, until
the relative change of both fields drops below the staggered tolerance
(L2 norms with a 1e-12 denominator floor). The monolithic scheme applies
Newton to the coupled residual with the full tangent, refreshing H from
the current strain before every assembly.

History never decreases, and is pinned to zero on damage-immune
(implant) elements.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from . import kernels
from .assembly import (
    BoundaryConditions,
    DirichletBC,
    FieldState,
    SparseSystem,
    apply_dirichlet,
    assemble_displacement,
    assemble_monolithic,
    assemble_phase,
    element_operators,
    element_strains,
    internal_force,
    monolithic_dirichlet,
)
from .materials import MaterialField
from .mesh import Mesh

_NORM_FLOOR = 1e-12


class SolverError(Exception):
    """Raised for solver misconfiguration."""


class LinearSolveError(SolverError):
    """Linear system could not be solved to tolerance."""


class NewtonError(SolverError):
    """Newton iteration diverged or hit its cap."""


@dataclass(frozen=True)
class SolverConfig:
    staggered_tol: float = 1e-4
    newton_tol: float = 1e-6
    max_staggered_iters: int = 200
    max_newton_iters: int = 25
    linear_solver: str = "direct"  # "direct" | "cg"
    cg_rel_tol: float = 1e-10
    cg_max_iters: int = 10000
    mode: str = "staggered"  # "staggered" | "monolithic"
    monolithic_fallback_staggered: bool = False
    verbose: bool = False

    def __post_init__(self):
        if self.staggered_tol <= 0 or self.newton_tol <= 0:
            raise SolverError("tolerances must be positive")
        if self.max_staggered_iters < 1 or self.max_newton_iters < 1:
            raise SolverError("iteration caps must be >= 1")
        if self.linear_solver not in ("direct", "cg"):
            raise SolverError(f"unknown linear solver {self.linear_solver!r}")
        if self.mode not in ("staggered", "monolithic"):
            raise SolverError(f"unknown mode {self.mode!r}")


@dataclass
class StepReport:
    step: int
    load_factor: float
    reaction: float = 0.0
    fractured_volume: float = 0.0
    staggered_iters: int = 0
    newton_iters: int = 0
    residual_u: float = 0.0
    residual_s: float = 0.0
    converged: bool = True
    halved: bool = False
    fallback: bool = False
    message: str = ""
    wall_time: float = 0.0


def solve_linear(system: SparseSystem, config: SolverConfig | None = None) -> np.ndarray:
    """Solve a constrained sparse system by sparse LU or Jacobi-CG."""
    config = config or SolverConfig()
    mat, rhs = system.matrix, system.rhs
    if not np.any(rhs):
        return np.zeros_like(rhs)
    if config.linear_solver == "direct":
        try:
            lu = spla.splu(mat.tocsc())
        except RuntimeError as exc:
            raise LinearSolveError(f"direct factorization failed: {exc}") from exc
        return lu.solve(rhs)
    diag = mat.diagonal()
    if (diag <= 0).any():
        raise LinearSolveError("CG requires a positive diagonal")
    precond = spla.LinearOperator(mat.shape, matvec=lambda x: x / diag)
    x, info = spla.cg(
        mat, rhs, rtol=config.cg_rel_tol, atol=0.0, maxiter=config.cg_max_iters, M=precond
    )
    if info != 0:
        res = np.linalg.norm(mat @ x - rhs) / max(np.linalg.norm(rhs), _NORM_FLOOR)
        raise LinearSolveError(
            f"CG did not converge within {config.cg_max_iters} iterations "
            f"(info={info}, relative residual {res:.3e})"
        )
    return x


def _free_residual(residual: np.ndarray, dofs: np.ndarray) -> np.ndarray:
    out = residual.copy()
    out[dofs] = 0.0
    return out


def newton_displacement(
    mesh: Mesh,
    materials: MaterialField,
    state: FieldState,
    bcs: BoundaryConditions,
    config: SolverConfig,
) -> tuple[np.ndarray, int, float]:
    """Solve the mechanical problem at frozen damage.

    Returns (u, iterations, final residual norm). The constitutive law is
    piecewise linear in the strain, so pure-branch states converge in one
    correction.
    """
    u = state.u.copy()
    u[bcs.dirichlet.dofs] = bcs.dirichlet.values
    work = FieldState(u=u, s=state.s, H=state.H)

    r_free = _free_residual(internal_force(mesh, materials, work) - bcs.f_ext,
                            bcs.dirichlet.dofs)
    norm = float(np.linalg.norm(r_free))
    norm0 = norm
    for it in range(config.max_newton_iters + 1):
        if norm <= config.newton_tol * (1.0 + norm0):
            return work.u, it, norm
        if it == config.max_newton_iters:
            break
        _, jac = assemble_displacement(mesh, materials, work, bcs)
        du = solve_linear(SparseSystem(matrix=jac, rhs=-r_free), config)
        work.u = work.u + du
        r_free = _free_residual(internal_force(mesh, materials, work) - bcs.f_ext,
                                bcs.dirichlet.dofs)
        norm = float(np.linalg.norm(r_free))
        if config.verbose:
            print(f"    newton it {it + 1}: |F| = {norm:.3e}")
    raise NewtonError(
        f"displacement Newton hit {config.max_newton_iters} iterations "
        f"(|F| = {norm:.3e}, target {config.newton_tol * (1.0 + norm0):.3e})"
    )


def update_history(
    mesh: Mesh, materials: MaterialField, state: FieldState
) -> np.ndarray:
    """max(H, psi+) from the current strains, clamped on immune elements."""
    ops = element_operators(mesh)
    eps = element_strains(ops, state.u)
    psi_p = kernels.batch_psi_plus(eps, materials.lam, materials.mu)
    h_new = np.maximum(state.H, psi_p)
    if materials.no_damage.any():
        h_new[materials.no_damage] = 0.0
    return h_new


def _rel_change(new: np.ndarray, old: np.ndarray) -> float:
    return float(
        np.linalg.norm(new - old) / max(np.linalg.norm(new), _NORM_FLOOR)
    )


def staggered_step(
    mesh: Mesh,
    materials: MaterialField,
    state: FieldState,
    bcs: BoundaryConditions,
    config: SolverConfig,
    step: int = 0,
    load_factor: float = 0.0,
) -> tuple[FieldState, StepReport]:
    """One load step of the alternate-minimization scheme."""
    t0 = time.perf_counter()
    new = state.copy()
    report = StepReport(step=step, load_factor=load_factor)
    newton_total = 0

    for k in range(1, config.max_staggered_iters + 1):
        u_prev = new.u.copy()
        s_prev = new.s.copy()
        try:
            new.u, n_it, _ = newton_displacement(mesh, materials, new, bcs, config)
        except (NewtonError, LinearSolveError) as exc:
            report.converged = False
            report.staggered_iters = k
            report.newton_iters = newton_total
            report.message = str(exc)
            report.wall_time = time.perf_counter() - t0
            return new, report
        newton_total += n_it

        new.H = update_history(mesh, materials, new)

        system = assemble_phase(mesh, materials, new.H)
        if bcs.phase_dirichlet is not None and bcs.phase_dirichlet.dofs.size:
            system = apply_dirichlet(system, bcs.phase_dirichlet)
        new.s = solve_linear(system, config)

        du = _rel_change(new.u, u_prev)
        ds = _rel_change(new.s, s_prev)
        if config.verbose:
            print(f"  staggered it {k}: du = {du:.3e}, ds = {ds:.3e}, "
                  f"max s = {new.s.max():.4f}")
        if max(du, ds) < config.staggered_tol:
            report.staggered_iters = k
            report.newton_iters = newton_total
            report.residual_u = du
            report.residual_s = ds
            report.wall_time = time.perf_counter() - t0
            return new, report

    report.converged = False
    report.staggered_iters = config.max_staggered_iters
    report.newton_iters = newton_total
    report.residual_u = du
    report.residual_s = ds
    report.message = (
        f"staggered cap {config.max_staggered_iters} reached "
        f"(du = {du:.3e}, ds = {ds:.3e})"
    )
    report.wall_time = time.perf_counter() - t0
    return new, report


def _monolithic_newton(mesh, materials, state, bcs, config):
    """Coupled Newton loop; returns (state, iterations, norm) or raises."""
    new = state.copy()
    n = mesh.n_nodes
    all_bc = monolithic_dirichlet(bcs, n)
    new.u[bcs.dirichlet.dofs] = bcs.dirichlet.values
    if bcs.phase_dirichlet is not None and bcs.phase_dirichlet.dofs.size:
        new.s[bcs.phase_dirichlet.dofs] = bcs.phase_dirichlet.values

    norm0 = None
    norm = np.inf
    best = np.inf
    stagnant = 0
    for it in range(config.max_newton_iters + 1):
        residual, tangent = assemble_monolithic(mesh, materials, new, bcs)
        r_free = _free_residual(residual, all_bc.dofs)
        norm = float(np.linalg.norm(r_free))
        if norm0 is None:
            norm0 = norm
        if norm <= config.newton_tol * (1.0 + norm0):
            new.H = update_history(mesh, materials, new)
            return new, it, norm
        if not np.isfinite(norm) or norm > 1e6 * (1.0 + norm0):
            raise NewtonError(f"monolithic Newton diverged (|F| = {norm:.3e})")
        # bail out early when the residual stops improving; the caller
        # retries with a halved increment
        window = max(8, config.max_newton_iters // 3)
        if norm < 0.999 * best:
            best = norm
            stagnant = 0
        else:
            stagnant += 1
            if stagnant >= window:
                raise NewtonError(
                    f"monolithic Newton stagnated after {it} iterations (|F| = {norm:.3e})"
                )
        if it == config.max_newton_iters:
            break
        dx = solve_linear(SparseSystem(matrix=tangent, rhs=-r_free), config)
        new.u = new.u + dx[: 3 * n]
        new.s = new.s + dx[3 * n:]
        if config.verbose:
            print(f"    monolithic it {it + 1}: |F| = {norm:.3e}")
    raise NewtonError(
        f"monolithic Newton hit {config.max_newton_iters} iterations (|F| = {norm:.3e})"
    )


def interpolate_bcs(
    a: BoundaryConditions, b: BoundaryConditions, t: float
) -> BoundaryConditions:
    """Linear interpolation between two steps' boundary data (same dof sets)."""
    if not np.array_equal(a.dirichlet.dofs, b.dirichlet.dofs):
        raise SolverError("cannot interpolate between differing constraint sets")
    dir_vals = (1 - t) * a.dirichlet.values + t * b.dirichlet.values
    f_ext = (1 - t) * a.f_ext + t * b.f_ext
    phase = b.phase_dirichlet
    return BoundaryConditions(
        dirichlet=DirichletBC(b.dirichlet.dofs, dir_vals),
        f_ext=f_ext,
        phase_dirichlet=phase,
    )


def monolithic_step(
    mesh: Mesh,
    materials: MaterialField,
    state: FieldState,
    bcs: BoundaryConditions,
    config: SolverConfig,
    step: int = 0,
    load_factor: float = 0.0,
    prev_bcs: BoundaryConditions | None = None,
) -> tuple[FieldState, StepReport]:
    """One load step of the coupled Newton scheme.

    On divergence the load increment is halved once (an intermediate
    solve at the midpoint, then the full target); if that also fails and
    the config allows it, the step falls back to the staggered scheme,
    flagged in the report.
    """
    t0 = time.perf_counter()
    report = StepReport(step=step, load_factor=load_factor)
    try:
        new, iters, norm = _monolithic_newton(mesh, materials, state, bcs, config)
        report.newton_iters = iters
        report.residual_u = norm
        report.wall_time = time.perf_counter() - t0
        return new, report
    except (NewtonError, LinearSolveError) as first_exc:
        message = str(first_exc)

    if prev_bcs is not None:
        report.halved = True
        try:
            mid_bcs = interpolate_bcs(prev_bcs, bcs, 0.5)
            mid, it1, _ = _monolithic_newton(mesh, materials, state, mid_bcs, config)
            new, it2, norm = _monolithic_newton(mesh, materials, mid, bcs, config)
            report.newton_iters = it1 + it2
            report.residual_u = norm
            report.wall_time = time.perf_counter() - t0
            return new, report
        except (NewtonError, LinearSolveError, SolverError) as exc:
            message = f"{message}; after halving: {exc}"

    if config.monolithic_fallback_staggered:
        new, stag_report = staggered_step(
            mesh, materials, state, bcs, config, step=step, load_factor=load_factor
        )
        stag_report.fallback = True
        stag_report.halved = report.halved
        stag_report.wall_time = time.perf_counter() - t0
        return new, stag_report

    report.converged = False
    report.message = message
    report.wall_time = time.perf_counter() - t0
    return state.copy(), report


def run_load_program(
    mesh: Mesh,
    materials: MaterialField,
    program,
    config: SolverConfig,
    csv_path=None,
    on_step=None,
) -> tuple[list[StepReport], FieldState]:
    """Run all load steps, warm-starting each from the previous state.

    Stops early on a failed step or once the specimen is fully fractured
    (reaction below 1% of its peak while the fractured volume has
    plateaued). When ``csv_path`` is given, one report row is appended
    and flushed per step so aborted runs keep partial results.
    """
    from .postprocess import fractured_volume, reaction_force, step_report_csv_header, step_report_csv_row

    state = FieldState.zeros(mesh)
    if program.initial_damage is not None:
        state.s = np.asarray(program.initial_damage, dtype=np.float64).copy()

    reports: list[StepReport] = []
    peak_reaction = 0.0
    prev_fv = 0.0
    csv_file = open(csv_path, "w", newline="") if csv_path is not None else None
    if csv_file is not None:
        csv_file.write(step_report_csv_header() + "\n")
        csv_file.flush()

    try:
        prev_bcs = program.step_bcs(0)
        for n in range(1, program.n_steps + 1):
            bcs = program.step_bcs(n)
            load_factor = program.load_factor(n)
            if config.mode == "staggered":
                state_new, report = staggered_step(
                    mesh, materials, state, bcs, config, step=n, load_factor=load_factor
                )
            else:
                state_new, report = monolithic_step(
                    mesh, materials, state, bcs, config,
                    step=n, load_factor=load_factor, prev_bcs=prev_bcs,
                )

            if report.converged:
                report.reaction = reaction_force(
                    mesh, materials, state_new, bcs,
                    program.reaction_nodes, program.reaction_direction,
                )
                report.fractured_volume = fractured_volume(
                    mesh, state_new.s, program.fracture_threshold
                )
            reports.append(report)
            if csv_file is not None:
                csv_file.write(step_report_csv_row(report) + "\n")
                csv_file.flush()
            if on_step is not None:
                on_step(report, state_new)
            if not report.converged:
                break

            state = state_new
            prev_bcs = bcs
            peak_reaction = max(peak_reaction, abs(report.reaction))
            fv = report.fractured_volume
            plateau = n >= 3 and abs(fv - prev_fv) <= 1e-9 * max(fv, 1.0)
            collapsed = peak_reaction > 0 and abs(report.reaction) < 0.01 * peak_reaction
            if plateau and collapsed and fv > 0:
                report.message = "halted: full section fracture"
                break
            prev_fv = fv
    finally:
        if csv_file is not None:
            csv_file.close()
    return reports, state


__all__ = [
    "SolverConfig", "StepReport", "SolverError", "LinearSolveError", "NewtonError",
    "solve_linear", "newton_displacement", "update_history",
    "staggered_step", "monolithic_step", "run_load_program", "interpolate_bcs",
]
