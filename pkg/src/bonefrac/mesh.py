"""Tetrahedral mesh ingestion, generation and element geometry.

Meshes carry 4-node tetrahedra plus tagged triangular boundary facets.
Two sources are supported: Gmsh MSH ASCII files (versions 2.2 and 4.1,
element types 2 = triangle and 4 = tetrahedron only) and a structured
box generator that splits each hexahedral cell into 6 tetrahedra.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Facet tags produced by generate_box_tet_mesh, one per axis-aligned side.
XMIN, XMAX, YMIN, YMAX, ZMIN, ZMAX = 1, 2, 3, 4, 5, 6

_DEGENERATE_VOLUME = 1e-14

# Local faces of a tet (outward-oriented for a positively oriented element).
_TET_FACES = ((0, 2, 1), (0, 1, 3), (1, 2, 3), (2, 0, 3))


class MeshError(Exception):
    """Raised for malformed mesh files or invalid mesh data."""


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable tetrahedral mesh.

    Attributes:
        node_coords: (n_nodes, 3) float64, coordinates in mm.
        tets: (n_tets, 4) int64, 0-based node indices, positive orientation.
        boundary_facets: (n_facets, 3) int64 triangle node indices.
        facet_tags: (n_facets,) int64 surface tag per boundary facet.
        region_tags: (n_tets,) int64 region tag per tet.
    """

    node_coords: np.ndarray
    tets: np.ndarray
    boundary_facets: np.ndarray
    facet_tags: np.ndarray
    region_tags: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.node_coords.shape[0]

    @property
    def n_tets(self) -> int:
        return self.tets.shape[0]

    def facet_nodes(self, tag: int) -> np.ndarray:
        """Sorted unique node indices of all boundary facets carrying ``tag``."""
        sel = self.boundary_facets[self.facet_tags == tag]
        return np.unique(sel)

    def nodes_on_plane(self, axis: int, value: float, tol: float = 1e-9) -> np.ndarray:
        """Node indices whose ``axis`` coordinate equals ``value`` within ``tol``."""
        return np.flatnonzero(np.abs(self.node_coords[:, axis] - value) <= tol)

    def __repr__(self) -> str:  # keep the frozen-dataclass default short
        return (
            f"Mesh(nodes={self.n_nodes}, tets={self.n_tets}, "
            f"facets={self.boundary_facets.shape[0]})"
        )


def _as_mesh(coords, tets, facets, facet_tags, region_tags) -> Mesh:
    coords = np.ascontiguousarray(coords, dtype=np.float64)
    tets = np.array(tets, dtype=np.int64)  # copy: orientation fixes mutate in place
    facets = np.ascontiguousarray(facets, dtype=np.int64).reshape(-1, 3)
    facet_tags = np.ascontiguousarray(facet_tags, dtype=np.int64)
    region_tags = np.ascontiguousarray(region_tags, dtype=np.int64)

    n = coords.shape[0]
    if tets.size and (tets.min() < 0 or tets.max() >= n):
        raise MeshError("tetrahedron references a node index out of range")
    if facets.size and (facets.min() < 0 or facets.max() >= n):
        raise MeshError("boundary facet references a node index out of range")

    # Reorient tets so the stored ordering has positive signed volume.
    p = coords[tets]
    vol6 = np.einsum(
        "ij,ij->i",
        np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]),
        p[:, 3] - p[:, 0],
    )
    flip = vol6 < 0
    if flip.any():
        tets[flip, 2], tets[flip, 3] = tets[flip, 3].copy(), tets[flip, 2].copy()
        vol6 = np.abs(vol6)
    if tets.size and vol6.min() <= 6.0 * _DEGENERATE_VOLUME:
        bad = int(np.argmin(vol6))
        raise MeshError(f"tetrahedron {bad} is degenerate (volume ~ {vol6[bad] / 6.0:.3e} mm^3)")

    if facets.size:
        face_count: dict[tuple, int] = {}
        for tet in tets:
            for f in _TET_FACES:
                key = tuple(sorted((tet[f[0]], tet[f[1]], tet[f[2]])))
                face_count[key] = face_count.get(key, 0) + 1
        for i, tri in enumerate(facets):
            key = tuple(sorted(tri))
            owners = face_count.get(key, 0)
            if owners != 1:
                raise MeshError(
                    f"boundary facet {i} {tuple(tri)} is a face of {owners} tets, expected 1"
                )

    return Mesh(coords, tets, facets, facet_tags, region_tags)


# ---------------------------------------------------------------------------
# Gmsh MSH parsing (ASCII 2.2 and 4.1)
# ---------------------------------------------------------------------------


class _LineReader:
    def __init__(self, stream):
        self._lines = stream.read().splitlines() if hasattr(stream, "read") else list(stream)
        self._pos = 0

    def next(self) -> str:
        while self._pos < len(self._lines):
            line = self._lines[self._pos].strip()
            self._pos += 1
            if line:
                return line
        raise MeshError("unexpected end of MSH stream")

    def lineno(self) -> int:
        return self._pos

    def at_end(self) -> bool:
        return all(not l.strip() for l in self._lines[self._pos:])


def parse_msh(stream) -> Mesh:
    """Parse a Gmsh MSH ASCII stream (version 2.2 or 4.1) into a Mesh.

    Tetrahedra (type 4) become elements with their physical tag as region
    tag; triangles (type 2) become boundary facets with their physical
    surface tag. Any other element type is rejected. Node numbering is
    compacted to 0-based contiguous indices in file order.
    """
    rd = _LineReader(stream)
    line = rd.next()
    if line != "$MeshFormat":
        raise MeshError(f"expected $MeshFormat header, got {line!r} (line {rd.lineno()})")
    fmt = rd.next().split()
    version = fmt[0]
    if version not in ("2.2", "4.1"):
        raise MeshError(f"unsupported MSH version {version}; only 2.2 and 4.1 are handled")
    if len(fmt) >= 2 and fmt[1] != "0":
        raise MeshError("binary MSH files are not supported, re-export as ASCII")
    if rd.next() != "$EndMeshFormat":
        raise MeshError("$MeshFormat section not terminated by $EndMeshFormat")

    if version == "2.2":
        return _parse_msh22(rd)
    return _parse_msh41(rd)


def _parse_msh22(rd: _LineReader) -> Mesh:
    tag_to_idx: dict[int, int] = {}
    coords: list = []
    tets, regions, tris, tritags = [], [], [], []

    while not rd.at_end():
        section = rd.next()
        if section == "$Nodes":
            n = int(rd.next())
            for _ in range(n):
                parts = rd.next().split()
                tag_to_idx[int(parts[0])] = len(coords)
                coords.append([float(parts[1]), float(parts[2]), float(parts[3])])
            _expect_end(rd, "$EndNodes")
        elif section == "$Elements":
            n = int(rd.next())
            for _ in range(n):
                parts = rd.next().split()
                etype = int(parts[1])
                ntags = int(parts[2])
                phys = int(parts[3]) if ntags >= 1 else 0
                nodes = [int(t) for t in parts[3 + ntags:]]
                _collect_element(
                    etype, phys, nodes, tag_to_idx, tets, regions, tris, tritags, rd.lineno()
                )
            _expect_end(rd, "$EndElements")
        elif section == "$PhysicalNames":
            n = int(rd.next())
            for _ in range(n):
                rd.next()
            _expect_end(rd, "$EndPhysicalNames")
        else:
            _skip_section(rd, section)

    return _as_mesh(coords, tets, tris, tritags, regions)


def _parse_msh41(rd: _LineReader) -> Mesh:
    tag_to_idx: dict[int, int] = {}
    coords: list = []
    tets, regions, tris, tritags = [], [], [], []
    # (dim, entity tag) -> physical tag, from the $Entities section.
    entity_phys: dict[tuple, int] = {}

    while not rd.at_end():
        section = rd.next()
        if section == "$Entities":
            counts = [int(t) for t in rd.next().split()]
            npoints, ncurves, nsurfs, nvols = counts
            for dim, count in ((0, npoints), (1, ncurves), (2, nsurfs), (3, nvols)):
                for _ in range(count):
                    parts = rd.next().split()
                    tag = int(parts[0])
                    # points: tag, x, y, z, numPhys, ...; others: tag, 6 bbox floats, numPhys, ...
                    off = 4 if dim == 0 else 7
                    nphys = int(parts[off])
                    if nphys >= 1:
                        entity_phys[(dim, tag)] = int(parts[off + 1])
            _expect_end(rd, "$EndEntities")
        elif section == "$Nodes":
            header = rd.next().split()
            nblocks, nnodes = int(header[0]), int(header[1])
            for _ in range(nblocks):
                block = rd.next().split()
                nin = int(block[3])
                block_tags = [int(rd.next()) for _ in range(nin)]
                for t in block_tags:
                    parts = rd.next().split()
                    tag_to_idx[t] = len(coords)
                    coords.append([float(parts[0]), float(parts[1]), float(parts[2])])
            if len(coords) != nnodes:
                raise MeshError(
                    f"$Nodes declares {nnodes} nodes but blocks contain {len(coords)}"
                )
            _expect_end(rd, "$EndNodes")
        elif section == "$Elements":
            header = rd.next().split()
            nblocks = int(header[0])
            for _ in range(nblocks):
                block = rd.next().split()
                edim, etag, etype, nin = (int(t) for t in block)
                phys = entity_phys.get((edim, etag), etag)
                for _ in range(nin):
                    parts = [int(t) for t in rd.next().split()]
                    _collect_element(
                        etype, phys, parts[1:], tag_to_idx, tets, regions, tris, tritags,
                        rd.lineno(),
                    )
            _expect_end(rd, "$EndElements")
        elif section == "$PhysicalNames":
            n = int(rd.next())
            for _ in range(n):
                rd.next()
            _expect_end(rd, "$EndPhysicalNames")
        else:
            _skip_section(rd, section)

    return _as_mesh(coords, tets, tris, tritags, regions)


def _collect_element(etype, phys, node_tags, tag_to_idx, tets, regions, tris, tritags, lineno):
    try:
        nodes = [tag_to_idx[t] for t in node_tags]
    except KeyError as exc:
        raise MeshError(f"element on line {lineno} references unknown node {exc.args[0]}")
    if etype == 4:
        if len(nodes) != 4:
            raise MeshError(f"tetrahedron on line {lineno} has {len(nodes)} nodes")
        tets.append(nodes)
        regions.append(phys)
    elif etype == 2:
        if len(nodes) != 3:
            raise MeshError(f"triangle on line {lineno} has {len(nodes)} nodes")
        tris.append(nodes)
        tritags.append(phys)
    else:
        raise MeshError(
            f"unsupported element type {etype} on line {lineno}; "
            "only type 2 (triangle) and type 4 (tetrahedron) are handled"
        )


def _expect_end(rd: _LineReader, marker: str) -> None:
    line = rd.next()
    if line != marker:
        raise MeshError(f"expected {marker}, got {line!r} (line {rd.lineno()})")


def _skip_section(rd: _LineReader, section: str) -> None:
    if not section.startswith("$") or section.startswith("$End"):
        raise MeshError(f"malformed section header {section!r} (line {rd.lineno()})")
    end = "$End" + section[1:]
    while True:
        if rd.next() == end:
            return


def write_msh(mesh: Mesh, stream, version: str = "2.2") -> None:
    """Write a Mesh as Gmsh MSH ASCII 2.2 (1-based tags, physical = region/facet tag)."""
    if version != "2.2":
        raise MeshError(f"only MSH 2.2 output is supported, got {version}")
    w = stream.write
    w("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n")
    w(f"$Nodes\n{mesh.n_nodes}\n")
    for i, (x, y, z) in enumerate(mesh.node_coords):
        w(f"{i + 1} {x:.17g} {y:.17g} {z:.17g}\n")
    w("$EndNodes\n")
    nelem = mesh.n_tets + mesh.boundary_facets.shape[0]
    w(f"$Elements\n{nelem}\n")
    eid = 1
    for tri, tag in zip(mesh.boundary_facets, mesh.facet_tags):
        w(f"{eid} 2 2 {tag} {tag} {tri[0] + 1} {tri[1] + 1} {tri[2] + 1}\n")
        eid += 1
    for tet, tag in zip(mesh.tets, mesh.region_tags):
        w(f"{eid} 4 2 {tag} {tag} {tet[0] + 1} {tet[1] + 1} {tet[2] + 1} {tet[3] + 1}\n")
        eid += 1
    w("$EndElements\n")


# ---------------------------------------------------------------------------
# Structured box generator
# ---------------------------------------------------------------------------

# Kuhn split of the unit cube: six tets around the main diagonal 0->7,
# one per permutation of the axis walk. Corner ids are binary (x + 2y + 4z).
_KUHN_TETS = (
    (0, 1, 3, 7),
    (0, 3, 2, 7),
    (0, 2, 6, 7),
    (0, 6, 4, 7),
    (0, 4, 5, 7),
    (0, 5, 1, 7),
)


def generate_box_tet_mesh(lengths, divisions, region_tag: int = 1) -> Mesh:
    """Structured tetrahedral mesh of an axis-aligned box.

    Each of the nx*ny*nz grid cells is split into 6 tets sharing the cell
    main diagonal, which makes neighbouring cells face-conforming. The six
    exterior sides carry facet tags XMIN..ZMAX.
    """
    lengths = np.asarray(lengths, dtype=np.float64)
    divisions = np.asarray(divisions, dtype=np.int64)
    if lengths.shape != (3,) or divisions.shape != (3,):
        raise MeshError("lengths and divisions must be 3-vectors")
    if (lengths <= 0).any():
        raise MeshError(f"box lengths must be positive, got {lengths.tolist()}")
    if (divisions < 1).any():
        raise MeshError(f"divisions must be >= 1, got {divisions.tolist()}")

    nx, ny, nz = (int(d) for d in divisions)
    xs = np.linspace(0.0, lengths[0], nx + 1)
    ys = np.linspace(0.0, lengths[1], ny + 1)
    zs = np.linspace(0.0, lengths[2], nz + 1)
    # Node index (i, j, k) -> flat id with x fastest.
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    coords = np.stack(
        [X.ravel(order="F"), Y.ravel(order="F"), Z.ravel(order="F")], axis=1
    )

    def nid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    tets = []
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                corner = [
                    nid(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1))
                    for c in range(8)
                ]
                for t in _KUHN_TETS:
                    tets.append([corner[t[0]], corner[t[1]], corner[t[2]], corner[t[3]]])
    tets = np.asarray(tets, dtype=np.int64)

    facets, tags = _exterior_facets(coords, tets, lengths)
    region = np.full(tets.shape[0], region_tag, dtype=np.int64)
    return _as_mesh(coords, tets, facets, tags, region)


def _exterior_facets(coords, tets, lengths):
    """Collect faces owned by exactly one tet and tag them by box side."""
    faces = {}
    for e, tet in enumerate(tets):
        for f in _TET_FACES:
            tri = (tet[f[0]], tet[f[1]], tet[f[2]])
            key = tuple(sorted(tri))
            if key in faces:
                faces[key] = None
            else:
                faces[key] = tri
    tol = 1e-12 * max(1.0, float(lengths.max()))
    planes = (
        (0, 0.0, XMIN), (0, lengths[0], XMAX),
        (1, 0.0, YMIN), (1, lengths[1], YMAX),
        (2, 0.0, ZMIN), (2, lengths[2], ZMAX),
    )
    facets, tags = [], []
    for key, tri in sorted(faces.items()):
        if tri is None:
            continue
        pts = coords[list(tri)]
        tag = 0
        for axis, value, side in planes:
            if np.all(np.abs(pts[:, axis] - value) <= tol):
                tag = side
                break
        if tag == 0:
            raise MeshError(f"exterior facet {tri} does not lie on a box side")
        facets.append(tri)
        tags.append(tag)
    return facets, tags


# ---------------------------------------------------------------------------
# Element geometry
# ---------------------------------------------------------------------------

_REF_GRADS = np.array(
    [[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
)


def element_volume(mesh: Mesh, tet_index: int) -> float:
    """Volume |det J| / 6 of one tet, in mm^3."""
    p = mesh.node_coords[mesh.tets[tet_index]]
    jac = p[1:] - p[0]
    vol = abs(np.linalg.det(jac)) / 6.0
    if vol < _DEGENERATE_VOLUME:
        raise MeshError(f"tetrahedron {tet_index} is degenerate (volume {vol:.3e} mm^3)")
    return float(vol)


def element_gradient_matrix(mesh: Mesh, tet_index: int) -> np.ndarray:
    """(4, 3) constant spatial gradients of the linear shape functions (1/mm)."""
    p = mesh.node_coords[mesh.tets[tet_index]]
    jac = p[1:] - p[0]
    det = np.linalg.det(jac)
    if abs(det) / 6.0 < _DEGENERATE_VOLUME:
        raise MeshError(f"tetrahedron {tet_index} is degenerate (volume {abs(det) / 6.0:.3e} mm^3)")
    return _REF_GRADS @ np.linalg.inv(jac).T


def all_volumes_and_gradients(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized (n_tets,) volumes and (n_tets, 4, 3) shape gradients."""
    p = mesh.node_coords[mesh.tets]
    jac = p[:, 1:, :] - p[:, :1, :]
    det = np.linalg.det(jac)
    vols = np.abs(det) / 6.0
    if vols.size and vols.min() < _DEGENERATE_VOLUME:
        bad = int(np.argmin(vols))
        raise MeshError(f"tetrahedron {bad} is degenerate (volume {vols[bad]:.3e} mm^3)")
    grads = np.einsum("ij,ekj->eik", _REF_GRADS, np.linalg.inv(jac))
    return vols, grads
