"""Boundary-value problem builders.

Two families: the single-edge-notched (SENT) validation specimens as
pseudo-2D thin plates (one element through the thickness, in-plane
displacement control, the notch realized as an s = 1 nodal seam with an
exponential initial profile), and the vertebra-analog block with two
tilted screw cylinders, a constant compressive preload on the superior
face, a fully fixed inferior face, and per-step incremental screw-head
forces realizing flexion, extension or counter-clockwise torsion.

Axis convention for the analog block: x = medio-lateral (mirror axis),
y = antero-posterior (screws enter through y = Ly), z = cranio-caudal
(inferior endplate at z = 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import BoundaryConditions, DirichletBC, make_dirichlet
from .materials import (
    DEFAULT_RESIDUAL_STIFFNESS,
    MaterialField,
    ScrewCylinder,
    VertebraAnalogSpec,
    assign_vertebra_analog,
    homogeneous_field,
)
from .mesh import Mesh, XMAX, XMIN, YMAX, YMIN, ZMAX, ZMIN, generate_box_tet_mesh
from .postprocess import DEFAULT_FRACTURE_THRESHOLD

MOTIONS = ("flexion", "extension", "torsion_ccw", "benchmark")

SCREW_LENGTH = 40.0  # mm
SCREW_RADIUS = 3.25  # mm, major diameter 6.5


class ScenarioError(Exception):
    pass


@dataclass
class LoadProgram:
    """Compiled per-step boundary data plus run metadata.

    step_bcs(0) is the zero-load baseline used for increment halving;
    steps 1..n_steps carry the actual program.
    """

    n_steps: int
    motion: str
    alpha: tuple
    F_v: float
    reaction_nodes: np.ndarray
    reaction_direction: np.ndarray
    load_factors: np.ndarray  # (n_steps + 1,)
    initial_damage: np.ndarray | None = None
    fracture_threshold: float = DEFAULT_FRACTURE_THRESHOLD
    probe_nodes: np.ndarray | None = None  # displacement probe for F-d curves
    _bcs: list = field(default_factory=list, repr=False)

    def step_bcs(self, n: int) -> BoundaryConditions:
        return self._bcs[n]

    def load_factor(self, n: int) -> float:
        return float(self.load_factors[n])


def _validate_program(mesh: Mesh, program: LoadProgram) -> None:
    ndof = 3 * mesh.n_nodes
    if program.motion not in MOTIONS:
        raise ScenarioError(f"unknown motion {program.motion!r}")
    for n in range(program.n_steps + 1):
        bcs = program.step_bcs(n)
        if bcs.f_ext.shape != (ndof,):
            raise ScenarioError("external force vector length mismatch")
        if not np.isfinite(bcs.f_ext).all():
            raise ScenarioError("non-finite external forces")
        if bcs.dirichlet.dofs.size and bcs.dirichlet.dofs.max() >= ndof:
            raise ScenarioError("Dirichlet dof out of range")
    if program.reaction_nodes.size == 0:
        raise ScenarioError("empty monitored reaction node set")


# ---------------------------------------------------------------------------
# SENT benchmarks
# ---------------------------------------------------------------------------


def build_sent(
    mode: str = "tension",
    resolution: int = 20,
    size: float = 1.0,
    notch_length: float = 0.5,
    E: float = 210000.0,
    nu: float = 0.3,
    Gc: float = 2.7,
    ell: float = 0.1,
    k: float = DEFAULT_RESIDUAL_STIFFNESS,
    n_steps: int = 25,
    u_max: float = 8e-3,
) -> tuple[Mesh, MaterialField, LoadProgram]:
    """Single-edge-notched thin plate under tension or shear.

    The plate spans x,z in [0, size] with one element through y; the
    notch runs from x = 0 to x = notch_length at mid-height. Loading is
    displacement-controlled on the top face (normal pull for tension,
    tangential slide for shear) with the bottom face fixed and u_y = 0
    everywhere (plane-strain-like constraint).
    """
    if mode not in ("tension", "shear"):
        raise ScenarioError(f"SENT mode must be 'tension' or 'shear', got {mode!r}")
    if notch_length > 0.5 * size + 1e-12:
        raise ScenarioError(
            f"notch length {notch_length} exceeds half the specimen width {0.5 * size}"
        )
    if resolution % 2:
        raise ScenarioError("resolution must be even so the notch lies on a node plane")

    thickness = size / resolution
    mesh = generate_box_tet_mesh([size, thickness, size], [resolution, 1, resolution])
    materials = homogeneous_field(mesh.n_tets, E=E, nu=nu, Gc=Gc, ell=ell, k=k)

    coords = mesh.node_coords
    mid = 0.5 * size
    tol = 1e-9 * size

    # exponential damage profile around the notch segment, seam held at 1
    dx = np.maximum(coords[:, 0] - notch_length, 0.0)
    dz = coords[:, 2] - mid
    dist = np.hypot(dx, dz)
    initial_damage = np.exp(-dist / ell)
    seam = np.flatnonzero((np.abs(coords[:, 2] - mid) <= tol) & (coords[:, 0] <= notch_length + tol))
    initial_damage[seam] = 1.0
    phase_dirichlet = DirichletBC(seam.astype(np.int64), np.ones(seam.size))

    bottom = mesh.facet_nodes(ZMIN)
    top = mesh.facet_nodes(ZMAX)
    all_nodes = np.arange(mesh.n_nodes)

    pull_comp = 2 if mode == "tension" else 0
    hold_comp = 0 if mode == "tension" else 2

    fixed_dofs = [(3 * bottom[:, None] + np.arange(3)).ravel(), 3 * all_nodes + 1]
    fixed_dofs.append(3 * top + hold_comp)
    top_dofs = 3 * top + pull_comp

    ndof = 3 * mesh.n_nodes
    f_zero = np.zeros(ndof)
    bcs_list = []
    factors = np.linspace(0.0, u_max, n_steps + 1)
    for n in range(n_steps + 1):
        dofs = np.concatenate(fixed_dofs + [top_dofs])
        vals = np.concatenate([
            np.zeros(sum(d.size for d in fixed_dofs)),
            np.full(top_dofs.size, factors[n]),
        ])
        bcs_list.append(BoundaryConditions(
            dirichlet=make_dirichlet(dofs, vals),
            f_ext=f_zero,
            phase_dirichlet=phase_dirichlet,
        ))

    direction = np.zeros(3)
    direction[pull_comp] = 1.0
    program = LoadProgram(
        n_steps=n_steps,
        motion="benchmark",
        alpha=(0.0, 0.0),
        F_v=0.0,
        reaction_nodes=top,
        reaction_direction=direction,
        load_factors=factors,
        initial_damage=initial_damage,
        probe_nodes=top,
        _bcs=bcs_list,
    )
    _validate_program(mesh, program)
    return mesh, materials, program


# ---------------------------------------------------------------------------
# Vertebra analog
# ---------------------------------------------------------------------------


def _screw_axes(alpha, block, pedicle_offset, entry_height_frac):
    """Two screw cylinders tilted by (a1 CC, +-a2 ML), entering the posterior face."""
    a1 = math.radians(alpha[0])
    a2 = math.radians(alpha[1])
    lx, ly, lz = block
    cx = 0.5 * lx
    entry_z = entry_height_frac * lz
    ca, sa = math.cos(a1), math.sin(a1)
    screws = []
    for side in (-1.0, +1.0):
        # base direction (0, -1, 0) into the block, CC-tilted about the ML
        # (x) axis, then ML-tilted about the CC (z) axis with mirrored sign
        d = np.array([0.0, -ca, sa])
        cb, sb = math.cos(side * a2), math.sin(side * a2)
        d = np.array([cb * d[0] - sb * d[1], sb * d[0] + cb * d[1], d[2]])
        d /= np.linalg.norm(d)
        entry = np.array([cx + side * pedicle_offset, ly, entry_z])
        screws.append(ScrewCylinder(start=entry, direction=d, length=SCREW_LENGTH,
                                    radius=SCREW_RADIUS))
    return screws


def _check_screw_fits(screw: ScrewCylinder, block) -> None:
    lx, ly, lz = block
    for t in np.linspace(0.0, screw.length, 9):
        p = screw.start + t * screw.direction
        if p[1] < -1e-9:  # exits the anterior face: just truncated, fine
            break
        if not (screw.radius - 1e-9 <= p[0] <= lx - screw.radius + 1e-9):
            raise ScenarioError(
                f"screw exits a lateral face at x = {p[0]:.2f} (angle too large for block)"
            )
        if not (screw.radius - 1e-9 <= p[2] <= lz - screw.radius + 1e-9):
            raise ScenarioError(
                f"screw exits a horizontal face at z = {p[2]:.2f} (angle too large for block)"
            )


def _head_node_sets(coords, posterior, screws, block):
    """Posterior-face node sets under each screw head.

    The capture radius starts at the screw radius and grows to the next
    node distance until the tangential pure-couple system on the joint
    set is solvable (coarse grids may put a whole head on one node
    column, which leaves no lever-arm variety). Head sets are identical
    across motions so programs stay comparable.
    """
    pts = coords[posterior]
    d2 = [
        (pts[:, 0] - s.start[0]) ** 2 + (pts[:, 2] - s.start[2]) ** 2
        for s in screws
    ]
    center_xy = np.array([0.5 * block[0], 0.5 * block[1]])
    candidates = np.unique(np.concatenate([np.sqrt(d) for d in d2]))
    candidates = np.concatenate([[SCREW_RADIUS], candidates[candidates > SCREW_RADIUS]])
    last_exc = None
    for radius in candidates:
        head_sets = [posterior[d <= radius**2 + 1e-9] for d in d2]
        if any(h.size == 0 for h in head_sets):
            continue
        try:
            _pure_couple_forces(coords[np.concatenate(head_sets)], center_xy, 1.0)
        except ScenarioError as exc:
            last_exc = exc
            continue
        return head_sets
    raise ScenarioError(
        f"no posterior-face node set under the screw heads supports a pure couple "
        f"({last_exc})"
    )


def _pure_couple_forces(points: np.ndarray, center_xy: np.ndarray, torque: float) -> np.ndarray:
    """Tangential nodal forces forming an exact couple about the vertical axis.

    Directions are the unit tangents of circles about the axis; the
    magnitudes are the least-norm solution of (zero net force, prescribed
    torque), so sum F = 0 to machine precision while every force stays
    tangential (orthogonal to both the radial and axial directions).
    """
    rel = points[:, :2] - center_xy[None, :]
    radius = np.linalg.norm(rel, axis=1)
    if (radius < 1e-9).any():
        raise ScenarioError("torsion node on the rotation axis")
    tangent = np.stack([-rel[:, 1], rel[:, 0]], axis=1) / radius[:, None]
    n = points.shape[0]
    a = np.zeros((3, n))
    a[0] = tangent[:, 0]
    a[1] = tangent[:, 1]
    a[2] = radius  # moment arm of a unit tangential force
    b = np.array([0.0, 0.0, torque])
    m, *_ = np.linalg.lstsq(a, b, rcond=None)
    residual = a @ m - b
    if np.abs(residual).max() > 1e-9 * max(1.0, abs(torque)):
        raise ScenarioError("could not realize a pure torsion couple on the node set")
    forces = np.zeros((n, 3))
    forces[:, 0] = m * tangent[:, 0]
    forces[:, 1] = m * tangent[:, 1]
    return forces


def build_vertebra_analog(
    alpha=(-5.0, 0.0),
    motion: str = "flexion",
    divisions=(10, 10, 6),
    block=(50.0, 50.0, 30.0),
    F_v: float = 5.0,
    n_steps: int = 40,
    seed: int = 0,
    shell_thickness: float = 3.0,
    pedicle_offset: float = 10.0,
    entry_height_frac: float = 0.6,
    sigma_max: float = 100.0,
    ell_override="auto",
    mirror_symmetric_materials: bool = True,
    flexion_direction=(0.0, -1.0, -1.0),
    fracture_threshold: float = DEFAULT_FRACTURE_THRESHOLD,
    force_step_fraction: float = 0.1,
) -> tuple[Mesh, MaterialField, LoadProgram]:
    """Block vertebra stand-in with two pedicle-screw cylinders.

    The inferior face (z = 0) is fully fixed; the superior face carries
    the constant compressive force F_v from step 1 on; the screw-head
    node sets (posterior-face cross sections) collect incremental forces
    of total magnitude ``force_step_fraction * F_v`` per step: a shared
    anterior-downward direction for flexion (opposite for extension) or
    an exact tangential couple about the block's vertical center axis
    for counter-clockwise torsion.

    ``ell_override='auto'`` sets the regularization length to twice the
    largest cell edge, keeping the damage band resolvable at desk-scale
    meshes; pass a number to pin it, or None for the per-element
    strength-based calibration.
    """
    if motion not in ("flexion", "extension", "torsion_ccw"):
        raise ScenarioError(f"analog motion must be flexion/extension/torsion_ccw, got {motion!r}")
    if not (abs(alpha[0]) <= 15.0 and abs(alpha[1]) <= 15.0):
        raise ScenarioError(f"insertion angles must lie in [-15, 15] degrees, got {alpha}")
    if F_v <= 0:
        raise ScenarioError("F_v must be positive")

    block = tuple(float(v) for v in block)
    mesh = generate_box_tet_mesh(block, divisions)
    screws = _screw_axes(alpha, block, pedicle_offset, entry_height_frac)
    for screw in screws:
        _check_screw_fits(screw, block)

    if ell_override == "auto":
        h = max(block[i] / divisions[i] for i in range(3))
        ell_value = 2.0 * h
    else:
        ell_value = ell_override
    spec = VertebraAnalogSpec(
        block_lengths=np.asarray(block),
        shell_thickness=shell_thickness,
        screws=tuple(screws),
        seed=seed,
        mirror_axis=0 if mirror_symmetric_materials else None,
        sample_cell=tuple(block[i] / divisions[i] for i in range(3)),
        sigma_max=sigma_max,
        ell_override=ell_value,
    )
    materials = assign_vertebra_analog(mesh, spec)

    inferior = mesh.facet_nodes(ZMIN)
    superior = mesh.facet_nodes(ZMAX)
    posterior = mesh.facet_nodes(YMAX)
    coords = mesh.node_coords

    head_sets = _head_node_sets(coords, posterior, screws, block)

    ndof = 3 * mesh.n_nodes
    fixed_dofs = (3 * inferior[:, None] + np.arange(3)).ravel()
    dirichlet = make_dirichlet(fixed_dofs, np.zeros(fixed_dofs.size))

    f_preload = np.zeros(ndof)
    per_node = F_v / superior.size
    f_preload[3 * superior + 2] -= per_node

    if motion in ("flexion", "extension"):
        direction = np.asarray(flexion_direction, dtype=np.float64)
        direction = direction / np.linalg.norm(direction)
        if motion == "extension":
            direction = -direction
        head_forces = []
        for head in head_sets:
            per = np.tile(direction / (2.0 * head.size), (head.size, 1))
            head_forces.append(per)

        def step_force(n):
            f = f_preload.copy()
            mag = n * force_step_fraction * F_v
            for head, per in zip(head_sets, head_forces):
                for c in range(3):
                    np.add.at(f, 3 * head + c, mag * per[:, c])
            return f
    else:
        all_head = np.concatenate(head_sets)
        center_xy = np.array([0.5 * block[0], 0.5 * block[1]])
        lever = np.mean(
            np.linalg.norm(coords[all_head][:, :2] - center_xy[None, :], axis=1)
        )
        unit_couple = _pure_couple_forces(coords[all_head], center_xy, lever)

        def step_force(n):
            f = f_preload.copy()
            mag = n * force_step_fraction * F_v
            for c in range(3):
                np.add.at(f, 3 * all_head + c, mag * unit_couple[:, c])
            return f

    bcs_list = [BoundaryConditions(dirichlet=dirichlet, f_ext=np.zeros(ndof))]
    for n in range(1, n_steps + 1):
        bcs_list.append(BoundaryConditions(dirichlet=dirichlet, f_ext=step_force(n)))

    program = LoadProgram(
        n_steps=n_steps,
        motion=motion,
        alpha=tuple(alpha),
        F_v=F_v,
        reaction_nodes=inferior,
        reaction_direction=np.array([0.0, 0.0, 1.0]),
        load_factors=np.arange(n_steps + 1, dtype=np.float64) * force_step_fraction,
        fracture_threshold=fracture_threshold,
        probe_nodes=np.concatenate(head_sets),
        _bcs=bcs_list,
    )
    _validate_program(mesh, program)
    if motion == "torsion_ccw":
        _check_torsion_couple(program)
    return mesh, materials, program


def _check_torsion_couple(program: LoadProgram) -> None:
    """The per-step screw-force increment must sum to the zero vector."""
    inc = program.step_bcs(2).f_ext - program.step_bcs(1).f_ext
    net = inc.reshape(-1, 3).sum(axis=0)
    if np.abs(net).max() > 1e-10:
        raise ScenarioError(f"torsion couple has non-zero net force {net}")
