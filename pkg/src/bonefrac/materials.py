"""Per-element material fields and fracture-parameter calibration.

Elastic constants come in as (E, nu) and are stored alongside the Lame
pair; the fracture constants follow two calibration rules:

    G_c = G_c0 * (E / E0)^beta          (toughness from stiffness)
    l   = (27/256) * G_c * E / s_max^2  (length scale from strength)

The vertebra-analog builder classifies every element by centroid into
screw / cortical shell / trabecular core, drawing the bone moduli from a
seeded, position-hashed uniform distribution so fields are reproducible
and optionally mirror-symmetric.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh

# Region classes stored in MaterialField.region.
TRABECULAR, CORTICAL, SCREW = 0, 1, 2

SCREW_E = 110000.0  # MPa, Ti-6Al-4V
SCREW_NU = 0.4
BONE_NU = 0.3
CORTICAL_E_RANGE = (12000.0, 14000.0)  # MPa
TRABECULAR_E_MAX = 3000.0  # MPa

DEFAULT_E0 = 20000.0  # MPa
DEFAULT_GC0 = 0.01  # N/mm
DEFAULT_BETA = 0.8
DEFAULT_SIGMA_MAX = 100.0  # MPa
DEFAULT_RESIDUAL_STIFFNESS = 1e-8

# Floor on trabecular E: the source range starts at 0, which breaks the
# elastic tensor.
TRABECULAR_E_MIN = 50.0  # MPa


class MaterialError(Exception):
    """Raised for invalid material parameters or classification failures."""


def lame_constants(E: float, nu: float) -> tuple[float, float]:
    """Lame pair (lambda, mu) in MPa from Young's modulus and Poisson ratio."""
    if E <= 0:
        raise MaterialError(f"Young's modulus must be positive, got {E}")
    if not (-1.0 < nu < 0.5):
        raise MaterialError(f"Poisson ratio must lie in (-1, 0.5), got {nu}")
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return lam, mu


def gc_power_law(
    E: float,
    E0: float = DEFAULT_E0,
    Gc0: float = DEFAULT_GC0,
    beta: float = DEFAULT_BETA,
) -> float:
    """Critical energy release rate G_c = Gc0 * (E/E0)^beta, in N/mm."""
    if E <= 0 or E0 <= 0 or Gc0 <= 0:
        raise MaterialError("gc_power_law requires positive E, E0 and Gc0")
    return Gc0 * (E / E0) ** beta


def length_scale(E: float, Gc: float, sigma_max: float) -> float:
    """Regularization length l = (27/256) * Gc * E / sigma_max^2, in mm."""
    if E <= 0 or Gc <= 0 or sigma_max <= 0:
        raise MaterialError("length_scale requires positive E, Gc and sigma_max")
    return (27.0 / 256.0) * Gc * E / sigma_max**2


@dataclass(frozen=True)
class MaterialField:
    """Per-element constants; immutable after construction.

    Units: E, lam, mu in MPa; gc in N/mm; ell in mm; k dimensionless.
    ``no_damage`` marks elements where the history field is clamped to
    zero (implants never fracture).
    """

    E: np.ndarray
    nu: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    gc: np.ndarray
    ell: np.ndarray
    k: np.ndarray
    region: np.ndarray
    no_damage: np.ndarray

    def __post_init__(self):
        n = self.E.shape[0]
        for name in ("nu", "lam", "mu", "gc", "ell", "k", "region", "no_damage"):
            if getattr(self, name).shape[0] != n:
                raise MaterialError(f"field {name} length differs from E length {n}")
        if (self.E <= 0).any() or (self.gc <= 0).any() or (self.ell <= 0).any():
            raise MaterialError("E, gc and ell must be positive everywhere")
        if ((self.nu < 0) | (self.nu >= 0.5)).any():
            raise MaterialError("nu must lie in [0, 0.5)")

    @property
    def n_elements(self) -> int:
        return self.E.shape[0]


def homogeneous_field(
    n_elements: int,
    E: float,
    nu: float,
    Gc: float,
    ell: float,
    k: float = DEFAULT_RESIDUAL_STIFFNESS,
) -> MaterialField:
    """Uniform material over all elements (benchmark specimens)."""
    lam, mu = lame_constants(E, nu)
    full = lambda v: np.full(n_elements, v, dtype=np.float64)  # noqa: E731
    return MaterialField(
        E=full(E), nu=full(nu), lam=full(lam), mu=full(mu),
        gc=full(Gc), ell=full(ell), k=full(k),
        region=np.zeros(n_elements, dtype=np.int64),
        no_damage=np.zeros(n_elements, dtype=bool),
    )


# ---------------------------------------------------------------------------
# Vertebra-analog assignment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScrewCylinder:
    """Solid screw idealization: a finite segment with a radius (mm)."""

    start: np.ndarray  # (3,) entry point on the posterior face
    direction: np.ndarray  # (3,) unit vector into the block
    length: float
    radius: float

    def contains(self, points: np.ndarray) -> np.ndarray:
        d = np.asarray(self.direction, dtype=np.float64)
        p0 = np.asarray(self.start, dtype=np.float64)
        rel = points - p0
        t = np.clip(rel @ d, 0.0, self.length)
        closest = p0 + t[:, None] * d
        dist = np.linalg.norm(points - closest, axis=1)
        return dist <= self.radius


@dataclass(frozen=True)
class VertebraAnalogSpec:
    """Geometry + sampling rules for the block vertebra stand-in."""

    block_lengths: np.ndarray  # (3,) mm
    shell_thickness: float  # mm, cortical layer below the block surface
    screws: tuple  # ScrewCylinder pair (may be empty for plain blocks)
    seed: int = 0
    mirror_axis: int | None = None  # fold this axis so mirror pairs draw equal E
    sample_cell: tuple | None = None  # per-axis cell sizes (mm) for one draw per cell
    trabecular_e_min: float = TRABECULAR_E_MIN
    trabecular_e_max: float = TRABECULAR_E_MAX
    cortical_e_range: tuple = CORTICAL_E_RANGE
    sigma_max: float = DEFAULT_SIGMA_MAX
    ell_override: float | None = None
    k: float = DEFAULT_RESIDUAL_STIFFNESS
    gc_params: tuple = (DEFAULT_E0, DEFAULT_GC0, DEFAULT_BETA)


def _hash_uniform(quantized: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic uniforms in [0, 1) from integer coordinate triples.

    splitmix64-style mixing keyed on the seed; identical triples give
    identical draws, which is what makes mirrored and refined meshes
    sample consistently.
    """
    h0 = (int(seed) * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    h = np.full(quantized.shape[0], h0, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for col in range(quantized.shape[1]):
            h ^= quantized[:, col].astype(np.uint64) * np.uint64(0xBF58476D1CE4E5B9)
            h ^= h >> np.uint64(31)
            h *= np.uint64(0x94D049BB133111EB)
            h ^= h >> np.uint64(29)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def assign_vertebra_analog(mesh: Mesh, spec: VertebraAnalogSpec) -> MaterialField:
    """Classify every element by centroid and build the material field.

    Priority: screw cylinder, then cortical shell (within shell_thickness
    of the block boundary), then trabecular core. Bone E is drawn from a
    position-hashed uniform over each class range.
    """
    lengths = np.asarray(spec.block_lengths, dtype=np.float64)
    if spec.shell_thickness < 0:
        raise MaterialError("shell thickness must be non-negative")
    if spec.shell_thickness > 0.5 * lengths.min():
        raise MaterialError(
            f"shell thickness {spec.shell_thickness} exceeds half the smallest "
            f"block extent {0.5 * lengths.min():.3g}"
        )

    centroids = mesh.node_coords[mesh.tets].mean(axis=1)
    n = centroids.shape[0]
    region = np.full(n, TRABECULAR, dtype=np.int64)

    dist_to_boundary = np.minimum(centroids, lengths[None, :] - centroids).min(axis=1)
    region[dist_to_boundary <= spec.shell_thickness] = CORTICAL

    for screw in spec.screws:
        inside = screw.contains(centroids)
        if not inside.any():
            raise MaterialError("screw cylinder does not intersect any element centroid")
        region[inside] = SCREW

    # Hash key: quantized centroid, with the mirror axis folded about the
    # mid-plane so mirrored positions draw identical values. Quantizing at
    # the sample_cell scale makes all tets of one grid cell (and its
    # mirror image) share a draw; tet splits are chiral, so a finer
    # quantization would break the field's mirror symmetry.
    key = centroids.copy()
    if spec.mirror_axis is not None:
        a = spec.mirror_axis
        key[:, a] = np.abs(key[:, a] - 0.5 * lengths[a])
    if spec.sample_cell is not None:
        cell = np.asarray(spec.sample_cell, dtype=np.float64)
        quantized = np.floor(key / cell[None, :] + 1e-9).astype(np.int64)
    else:
        quantized = np.round(key * 1024.0).astype(np.int64)
    u = _hash_uniform(quantized, spec.seed)

    E = np.empty(n, dtype=np.float64)
    trab = region == TRABECULAR
    cort = region == CORTICAL
    scrw = region == SCREW
    E[trab] = spec.trabecular_e_min + u[trab] * (spec.trabecular_e_max - spec.trabecular_e_min)
    lo, hi = spec.cortical_e_range
    E[cort] = lo + u[cort] * (hi - lo)
    E[scrw] = SCREW_E

    nu = np.where(scrw, SCREW_NU, BONE_NU)
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))

    E0, Gc0, beta = spec.gc_params
    gc = Gc0 * (E / E0) ** beta
    if spec.ell_override is not None:
        ell = np.full(n, float(spec.ell_override))
    else:
        ell = (27.0 / 256.0) * gc * E / spec.sigma_max**2

    return MaterialField(
        E=E, nu=nu, lam=lam, mu=mu, gc=gc, ell=ell,
        k=np.full(n, spec.k), region=region, no_damage=scrw.copy(),
    )


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------

_CSV_HEADER = ["element_index", "E", "nu", "Gc", "l", "region_tag"]


def write_material_csv(materials: MaterialField, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_HEADER)
        for i in range(materials.n_elements):
            writer.writerow([
                i,
                f"{materials.E[i]:.17g}",
                f"{materials.nu[i]:.17g}",
                f"{materials.gc[i]:.17g}",
                f"{materials.ell[i]:.17g}",
                int(materials.region[i]),
            ])


def read_material_csv(path, k: float = DEFAULT_RESIDUAL_STIFFNESS) -> MaterialField:
    """Rebuild a MaterialField from the CSV schema; lam/mu recomputed from (E, nu)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != _CSV_HEADER:
            raise MaterialError(f"unexpected material CSV header {header}")
        for row in reader:
            rows.append(row)
    rows.sort(key=lambda r: int(r[0]))
    E = np.array([float(r[1]) for r in rows])
    nu = np.array([float(r[2]) for r in rows])
    gc = np.array([float(r[3]) for r in rows])
    ell = np.array([float(r[4]) for r in rows])
    region = np.array([int(r[5]) for r in rows], dtype=np.int64)
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return MaterialField(
        E=E, nu=nu, lam=lam, mu=mu, gc=gc, ell=ell,
        k=np.full(E.shape[0], k), region=region, no_damage=region == SCREW,
    )
