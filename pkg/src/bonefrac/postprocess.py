"""Derived quantities and output writers.

Reactions are recovered from the unconstrained internal-force residual
at Dirichlet dofs ("vincular" support reactions), the crack extent as
the volume of elements whose mean nodal damage exceeds a threshold.
Writers emit VTK XML UnstructuredGrid (.vtu, ASCII) snapshots and plain
CSV curves with fixed 17-significant-digit formatting so identical
inputs produce identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import BoundaryConditions, FieldState, element_operators, internal_force
from .materials import MaterialField
from .mesh import Mesh
from .solvers import StepReport

DEFAULT_FRACTURE_THRESHOLD = 0.95


class PostprocessError(Exception):
    pass


def _fmt(x: float) -> str:
    return f"{x:.17g}"


@dataclass
class CurveSeries:
    """Paired abscissa/ordinate samples with labels for CSV interchange."""

    abscissa: np.ndarray
    ordinate: np.ndarray
    label: str = ""
    abscissa_name: str = "abscissa"
    ordinate_name: str = "ordinate"

    def __post_init__(self):
        self.abscissa = np.asarray(self.abscissa, dtype=np.float64)
        self.ordinate = np.asarray(self.ordinate, dtype=np.float64)
        if self.abscissa.shape != self.ordinate.shape:
            raise PostprocessError("abscissa and ordinate lengths differ")


def reaction_force(
    mesh: Mesh,
    materials: MaterialField,
    state: FieldState,
    bcs: BoundaryConditions,
    nodes: np.ndarray,
    direction,
) -> float:
    """Support reaction on a constrained node set, projected on a direction.

    Sums the unconstrained residual (internal minus applied force) over
    the constrained dofs of ``nodes``; raises if none of them carries a
    Dirichlet constraint.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    direction = np.asarray(direction, dtype=np.float64)
    residual = internal_force(mesh, materials, state) - bcs.f_ext
    constrained = np.zeros(3 * mesh.n_nodes, dtype=bool)
    constrained[bcs.dirichlet.dofs] = True

    dofs = (3 * nodes[:, None] + np.arange(3)[None, :]).ravel()
    mask = constrained[dofs]
    if not mask.any():
        raise PostprocessError("monitored surface has no constrained dofs")
    comp = np.tile(direction, nodes.size)
    return float(np.sum(residual[dofs] * comp * mask))


def fractured_volume(mesh: Mesh, s: np.ndarray, threshold: float = DEFAULT_FRACTURE_THRESHOLD) -> float:
    """Total volume (mm^3) of elements with mean nodal damage above threshold."""
    if not (0.0 < threshold < 1.0):
        raise PostprocessError(f"threshold must lie in (0, 1), got {threshold}")
    ops = element_operators(mesh)
    sbar = np.asarray(s)[mesh.tets].mean(axis=1)
    return float(ops.vols[sbar > threshold].sum())


def relative_error_curve(peak_values, dof_counts, tolerance_pct: float = 5.0):
    """Mesh-sensitivity curve: percent error of each refinement vs the finest.

    Returns (CurveSeries over dof count, index of the first refinement
    under ``tolerance_pct`` or None). The last entry is the reference.
    """
    q = np.asarray(peak_values, dtype=np.float64)
    dofs = np.asarray(dof_counts, dtype=np.float64)
    if q.size < 2:
        raise PostprocessError("need at least two refinements")
    ref = q[-1]
    if ref == 0.0:
        raise PostprocessError("reference (finest) value is zero")
    errors = np.abs(q - ref) / abs(ref) * 100.0
    series = CurveSeries(
        abscissa=dofs, ordinate=errors, label="relative_error_pct",
        abscissa_name="dof_count", ordinate_name="relative_error_pct",
    )
    under = np.flatnonzero(errors < tolerance_pct)
    converged_at = int(under[0]) if under.size else None
    return series, converged_at


# ---------------------------------------------------------------------------
# Writers
# ---------------------------------------------------------------------------


def write_curves_csv(series_list, path) -> None:
    """CSV with header abscissa,ordinate,label; one record per sample."""
    if isinstance(series_list, CurveSeries):
        series_list = [series_list]
    try:
        with open(path, "w", newline="") as fh:
            fh.write("abscissa,ordinate,label\n")
            for series in series_list:
                for x, y in zip(series.abscissa, series.ordinate):
                    fh.write(f"{_fmt(x)},{_fmt(y)},{series.label}\n")
    except OSError as exc:
        raise PostprocessError(f"cannot write curves CSV {path}: {exc}") from exc


def read_curves_csv(path) -> list[CurveSeries]:
    groups: dict[str, list] = {}
    order: list[str] = []
    with open(path, newline="") as fh:
        header = fh.readline().strip()
        if header != "abscissa,ordinate,label":
            raise PostprocessError(f"unexpected curves CSV header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            x, y, label = line.split(",", 2)
            if label not in groups:
                groups[label] = []
                order.append(label)
            groups[label].append((float(x), float(y)))
    out = []
    for label in order:
        pts = np.asarray(groups[label])
        out.append(CurveSeries(abscissa=pts[:, 0], ordinate=pts[:, 1], label=label))
    return out


def write_vtu(mesh: Mesh, state: FieldState, materials: MaterialField, path) -> None:
    """VTK XML UnstructuredGrid, ASCII: u and s on points; E, region, H on cells."""
    n, m = mesh.n_nodes, mesh.n_tets
    u3 = state.u.reshape(-1, 3)
    try:
        with open(path, "w") as fh:
            w = fh.write
            w('<?xml version="1.0"?>\n')
            w('<VTKFile type="UnstructuredGrid" version="1.0" byte_order="LittleEndian">\n')
            w("  <UnstructuredGrid>\n")
            w(f'    <Piece NumberOfPoints="{n}" NumberOfCells="{m}">\n')
            w("      <Points>\n")
            w('        <DataArray type="Float64" NumberOfComponents="3" format="ascii">\n')
            for p in mesh.node_coords:
                w(f"          {_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}\n")
            w("        </DataArray>\n      </Points>\n")
            w("      <Cells>\n")
            w('        <DataArray type="Int64" Name="connectivity" format="ascii">\n')
            for tet in mesh.tets:
                w(f"          {tet[0]} {tet[1]} {tet[2]} {tet[3]}\n")
            w("        </DataArray>\n")
            w('        <DataArray type="Int64" Name="offsets" format="ascii">\n')
            for i in range(m):
                w(f"          {4 * (i + 1)}\n")
            w("        </DataArray>\n")
            w('        <DataArray type="UInt8" Name="types" format="ascii">\n')
            for _ in range(m):
                w("          10\n")
            w("        </DataArray>\n      </Cells>\n")
            w("      <PointData>\n")
            w('        <DataArray type="Float64" Name="u" NumberOfComponents="3" format="ascii">\n')
            for v in u3:
                w(f"          {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}\n")
            w("        </DataArray>\n")
            w('        <DataArray type="Float64" Name="s" format="ascii">\n')
            for v in state.s:
                w(f"          {_fmt(v)}\n")
            w("        </DataArray>\n      </PointData>\n")
            w("      <CellData>\n")
            w('        <DataArray type="Float64" Name="E" format="ascii">\n')
            for v in materials.E:
                w(f"          {_fmt(v)}\n")
            w("        </DataArray>\n")
            w('        <DataArray type="Int64" Name="region" format="ascii">\n')
            for v in materials.region:
                w(f"          {v}\n")
            w("        </DataArray>\n")
            w('        <DataArray type="Float64" Name="H" format="ascii">\n')
            for v in state.H:
                w(f"          {_fmt(v)}\n")
            w("        </DataArray>\n      </CellData>\n")
            w("    </Piece>\n  </UnstructuredGrid>\n</VTKFile>\n")
    except OSError as exc:
        raise PostprocessError(f"cannot write VTU {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Step-report streaming
# ---------------------------------------------------------------------------

_REPORT_COLUMNS = (
    "step", "load_factor", "reaction_N", "fractured_volume_mm3",
    "staggered_iters", "newton_iters", "residual_u", "residual_s",
    "converged", "halved", "fallback",
)


def step_report_csv_header() -> str:
    return ",".join(_REPORT_COLUMNS)


def step_report_csv_row(r: StepReport) -> str:
    return ",".join([
        str(r.step), _fmt(r.load_factor), _fmt(r.reaction), _fmt(r.fractured_volume),
        str(r.staggered_iters), str(r.newton_iters),
        _fmt(r.residual_u), _fmt(r.residual_s),
        str(int(r.converged)), str(int(r.halved)), str(int(r.fallback)),
    ])
