"""Discretization of the coupled displacement / phase-field weak forms.

Linear tetrahedra with single-point quadrature throughout: strains are
element-constant, the damage entering the stress is the element mean of
the nodal field, and the history variable lives at the one quadrature
point per element. Dof numbering is 3 * node + component for
displacements; the monolithic system stacks the nodal damage dofs after
all displacement dofs.

Assembly is a map over elements followed by an additive reduction into
COO triplets whose ordering is fixed by element index, so repeated runs
produce bit-identical matrices.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .materials import MaterialField
from .mesh import Mesh, all_volumes_and_gradients


class AssemblyError(Exception):
    """Raised for inconsistent state/bc data."""


@dataclass
class FieldState:
    """Solution state: nodal displacements/damage plus per-element history.

    u is stored flat, (3 * n_nodes,), component-major per node; s in
    [0, 1] nodal; H >= 0 per element (MPa).
    """

    u: np.ndarray
    s: np.ndarray
    H: np.ndarray

    @classmethod
    def zeros(cls, mesh: Mesh) -> "FieldState":
        return cls(
            u=np.zeros(3 * mesh.n_nodes),
            s=np.zeros(mesh.n_nodes),
            H=np.zeros(mesh.n_tets),
        )

    def copy(self) -> "FieldState":
        return FieldState(self.u.copy(), self.s.copy(), self.H.copy())

    @property
    def u3(self) -> np.ndarray:
        return self.u.reshape(-1, 3)


@dataclass(frozen=True)
class DirichletBC:
    """Constrained dofs with prescribed values (already conflict-checked)."""

    dofs: np.ndarray
    values: np.ndarray


@dataclass
class SparseSystem:
    """Symmetric sparse system with an attached Dirichlet constraint map."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    constraints: DirichletBC | None = None


@dataclass(frozen=True)
class BoundaryConditions:
    """One load step's boundary data.

    dirichlet: prescribed displacement dofs/values; f_ext: assembled
    nodal force vector (3 * n_nodes,); phase_dirichlet: prescribed nodal
    damage (node indices, not dofs), e.g. an initial crack seam held at
    s = 1.
    """

    dirichlet: DirichletBC
    f_ext: np.ndarray
    phase_dirichlet: DirichletBC | None = None


@dataclass(frozen=True)
class ElementOperators:
    """Per-mesh precomputed geometry and scatter indices."""

    vols: np.ndarray  # (m,)
    grads: np.ndarray  # (m, 4, 3)
    bmat: np.ndarray  # (m, 6, 12) engineering-shear strain-displacement
    dof_map: np.ndarray  # (m, 12)
    coo_u: tuple  # (rows, cols) for 12x12 displacement blocks
    coo_s: tuple  # (rows, cols) for 4x4 phase blocks
    n_nodes: int = field(default=0)


_OPS_CACHE: "weakref.WeakKeyDictionary[Mesh, ElementOperators]" = weakref.WeakKeyDictionary()


def element_operators(mesh: Mesh) -> ElementOperators:
    ops = _OPS_CACHE.get(mesh)
    if ops is not None:
        return ops
    vols, grads = all_volumes_and_gradients(mesh)
    m = mesh.n_tets

    bmat = np.zeros((m, 6, 12))
    for i in range(4):
        gx, gy, gz = grads[:, i, 0], grads[:, i, 1], grads[:, i, 2]
        bmat[:, 0, 3 * i + 0] = gx
        bmat[:, 1, 3 * i + 1] = gy
        bmat[:, 2, 3 * i + 2] = gz
        bmat[:, 3, 3 * i + 0] = gy
        bmat[:, 3, 3 * i + 1] = gx
        bmat[:, 4, 3 * i + 1] = gz
        bmat[:, 4, 3 * i + 2] = gy
        bmat[:, 5, 3 * i + 0] = gz
        bmat[:, 5, 3 * i + 2] = gx

    dof_map = (3 * mesh.tets[:, :, None] + np.arange(3)[None, None, :]).reshape(m, 12)
    rows_u = np.repeat(dof_map, 12, axis=1).ravel()
    cols_u = np.tile(dof_map, (1, 12)).ravel()
    rows_s = np.repeat(mesh.tets, 4, axis=1).ravel()
    cols_s = np.tile(mesh.tets, (1, 4)).ravel()

    ops = ElementOperators(
        vols=vols, grads=grads, bmat=bmat, dof_map=dof_map.astype(np.int64),
        coo_u=(rows_u, cols_u), coo_s=(rows_s, cols_s), n_nodes=mesh.n_nodes,
    )
    _OPS_CACHE[mesh] = ops
    return ops


def element_strains(ops: ElementOperators, u: np.ndarray) -> np.ndarray:
    """(m, 3, 3) element strain tensors from the flat displacement vector."""
    u_e = u[ops.dof_map]
    eps6 = np.einsum("eij,ej->ei", ops.bmat, u_e)
    return kernels.strain_voigt_to_tensor_batch(eps6)


def element_mean_damage(mesh: Mesh, s: np.ndarray) -> np.ndarray:
    return s[mesh.tets].mean(axis=1)


def _scatter(values: np.ndarray, index_map: np.ndarray, size: int) -> np.ndarray:
    return np.bincount(index_map.ravel(), weights=values.ravel(), minlength=size)


# ---------------------------------------------------------------------------
# Displacement problem (frozen s)
# ---------------------------------------------------------------------------


def internal_force(mesh: Mesh, materials: MaterialField, state: FieldState) -> np.ndarray:
    """Assembled internal force vector at the current (u, s)."""
    ops = element_operators(mesh)
    eps = element_strains(ops, state.u)
    sbar = element_mean_damage(mesh, state.s)
    g = (1.0 - sbar) ** 2 + materials.k
    _, _, sigma6, _ = kernels.batch_stress(eps, g, materials.lam, materials.mu)
    f_e = np.einsum("e,eki,ek->ei", ops.vols, ops.bmat, sigma6)
    return _scatter(f_e, ops.dof_map, 3 * mesh.n_nodes)


def assemble_displacement(
    mesh: Mesh,
    materials: MaterialField,
    state: FieldState,
    bcs,
) -> tuple[np.ndarray, sp.csr_matrix]:
    """Residual (internal minus external force) and constrained Jacobian.

    The residual is returned unconstrained so reactions can be read off
    the Dirichlet dofs; the Jacobian has those rows/cols eliminated
    symmetrically (unit diagonal), which is exact for increment solves
    where the constrained correction is zero.
    """
    ops = element_operators(mesh)
    ndof = 3 * mesh.n_nodes
    eps = element_strains(ops, state.u)
    sbar = element_mean_damage(mesh, state.s)
    g = (1.0 - sbar) ** 2 + materials.k
    _, _, sigma6, _, dmat = kernels.batch_stress_tangent(eps, g, materials.lam, materials.mu)

    f_e = np.einsum("e,eki,ek->ei", ops.vols, ops.bmat, sigma6)
    residual = _scatter(f_e, ops.dof_map, ndof) - bcs.f_ext

    k_e = np.einsum("e,eki,ekl,elj->eij", ops.vols, ops.bmat, dmat, ops.bmat)
    jac = sp.coo_matrix((k_e.ravel(), ops.coo_u), shape=(ndof, ndof)).tocsr()
    jac = eliminate_dirichlet_matrix(jac, bcs.dirichlet.dofs)
    return residual, jac


# ---------------------------------------------------------------------------
# Phase-field problem (frozen H)
# ---------------------------------------------------------------------------


def assemble_phase(mesh: Mesh, materials: MaterialField, H: np.ndarray) -> SparseSystem:
    """Linear damage system: find s with

        int Gc*l grad s . grad phi + int (Gc/l + 2H) s phi = int 2H phi.

    The gradient term is exact for linear tets; the screening/source
    terms are lumped to the nodes (one quarter of the element integral
    each), which keeps the system an M-matrix on meshes without obtuse
    stiffness couplings and hence the solution inside [0, 1).
    """
    if (np.asarray(H) < 0).any():
        raise AssemblyError("history field must be non-negative")
    ops = element_operators(mesh)
    n = mesh.n_nodes

    a_e = np.einsum(
        "e,ejc,ekc->ejk", ops.vols * materials.gc * materials.ell, ops.grads, ops.grads
    )
    screen = ops.vols * (materials.gc / materials.ell + 2.0 * H) / 4.0
    idx = np.arange(4)
    a_e[:, idx, idx] += screen[:, None]
    mat = sp.coo_matrix((a_e.ravel(), ops.coo_s), shape=(n, n)).tocsr()

    b_e = np.repeat((ops.vols * 2.0 * H / 4.0)[:, None], 4, axis=1)
    rhs = _scatter(b_e, mesh.tets, n)
    return SparseSystem(matrix=mat, rhs=rhs)


def phase_residual(
    mesh: Mesh, materials: MaterialField, s: np.ndarray, H: np.ndarray
) -> np.ndarray:
    """Damage-equation residual A s - b without assembling the matrix."""
    ops = element_operators(mesh)
    grad_s = np.einsum("ejc,ej->ec", ops.grads, s[mesh.tets])
    term_grad = np.einsum(
        "e,ejc,ec->ej", ops.vols * materials.gc * materials.ell, ops.grads, grad_s
    )
    s_nodes = np.asarray(s)[mesh.tets]
    term_local = (
        ops.vols[:, None]
        * ((materials.gc / materials.ell + 2.0 * H)[:, None] * s_nodes - 2.0 * H[:, None])
        / 4.0
    )
    return _scatter(term_grad + term_local, mesh.tets, mesh.n_nodes)


# ---------------------------------------------------------------------------
# Monolithic coupled problem
# ---------------------------------------------------------------------------


def assemble_monolithic(
    mesh: Mesh,
    materials: MaterialField,
    state: FieldState,
    bcs,
) -> tuple[np.ndarray, sp.csr_matrix]:
    """Residual and full tangent of the coupled (u, s) problem.

    The history field is refreshed from the current strain before
    assembly (H = max(state.H, psi+)); where the current psi+ drives H,
    the damage residual picks up a strain sensitivity and the tangent
    carries both coupling blocks.
    """
    ops = element_operators(mesh)
    n = mesh.n_nodes
    ndof_u = 3 * n
    ndof = ndof_u + n

    eps = element_strains(ops, state.u)
    sbar = element_mean_damage(mesh, state.s)
    g = (1.0 - sbar) ** 2 + materials.k
    psi_p, _, sigma6, sigp6, dmat = kernels.batch_stress_tangent(
        eps, g, materials.lam, materials.mu
    )
    h_used = np.maximum(state.H, psi_p)
    active = psi_p >= state.H
    if materials.no_damage.any():
        h_used = np.where(materials.no_damage, 0.0, h_used)
        active = active & ~materials.no_damage

    # residuals
    f_e = np.einsum("e,eki,ek->ei", ops.vols, ops.bmat, sigma6)
    res_u = _scatter(f_e, ops.dof_map, ndof_u) - bcs.f_ext
    res_s = _phase_residual_with_h(mesh, ops, materials, state.s, h_used)
    residual = np.concatenate([res_u, res_s])

    # uu block
    k_uu = np.einsum("e,eki,ekl,elj->eij", ops.vols, ops.bmat, dmat, ops.bmat)

    # coupling: d/ds_j of g(sbar) sigma+ gives (sbar - 1)/2 * B^T sigma+
    # (mean damage enters the stress); dR_s[j]/du picks up (s_j - 1)/2
    # times the same vector wherever H is driven by the current strain.
    bt_sigp = np.einsum("e,eki,ek->ei", ops.vols, ops.bmat, sigp6)
    k_us_data = np.repeat(
        (0.5 * (sbar - 1.0)[:, None] * bt_sigp)[:, :, None], 4, axis=2
    )  # (m, 12, 4)
    s_nodes = state.s[mesh.tets]
    # transpose block shares the (i, j) ravel order of the us triplets
    k_su_data = np.einsum(
        "e,ei,ej->eij", active.astype(np.float64), bt_sigp, 0.5 * (s_nodes - 1.0)
    )

    # ss block: the phase operator with h_used (lumped screening)
    k_ss = np.einsum(
        "e,ejc,ekc->ejk", ops.vols * materials.gc * materials.ell, ops.grads, ops.grads
    )
    screen = ops.vols * (materials.gc / materials.ell + 2.0 * h_used) / 4.0
    idx4 = np.arange(4)
    k_ss[:, idx4, idx4] += screen[:, None]

    rows_u, cols_u = ops.coo_u
    rows_s, cols_s = ops.coo_s
    tet_cols = ndof_u + mesh.tets
    rows_us = np.repeat(ops.dof_map, 4, axis=1).ravel()
    cols_us = np.tile(tet_cols, (1, 12)).ravel()

    rows = np.concatenate([rows_u, rows_us, cols_us, ndof_u + rows_s])
    cols = np.concatenate([cols_u, cols_us, rows_us, ndof_u + cols_s])
    data = np.concatenate([
        k_uu.ravel(), k_us_data.ravel(), k_su_data.ravel(), k_ss.ravel()
    ])
    tangent = sp.coo_matrix((data, (rows, cols)), shape=(ndof, ndof)).tocsr()

    all_dofs = monolithic_dirichlet(bcs, n)
    tangent = eliminate_dirichlet_matrix(tangent, all_dofs.dofs)
    return residual, tangent


def _phase_residual_with_h(mesh, ops, materials, s, h_used):
    grad_s = np.einsum("ejc,ej->ec", ops.grads, s[mesh.tets])
    term_grad = np.einsum(
        "e,ejc,ec->ej", ops.vols * materials.gc * materials.ell, ops.grads, grad_s
    )
    s_nodes = np.asarray(s)[mesh.tets]
    local = (
        ops.vols[:, None]
        * ((materials.gc / materials.ell + 2.0 * h_used)[:, None] * s_nodes
           - 2.0 * h_used[:, None])
        / 4.0
    )
    return _scatter(term_grad + local, mesh.tets, mesh.n_nodes)


def monolithic_dirichlet(bcs, n_nodes: int) -> DirichletBC:
    """Stacked constraint map: u dofs as-is, phase dofs offset by 3n."""
    dofs = [bcs.dirichlet.dofs]
    vals = [bcs.dirichlet.values]
    if bcs.phase_dirichlet is not None and bcs.phase_dirichlet.dofs.size:
        dofs.append(3 * n_nodes + bcs.phase_dirichlet.dofs)
        vals.append(bcs.phase_dirichlet.values)
    return DirichletBC(np.concatenate(dofs), np.concatenate(vals))


# ---------------------------------------------------------------------------
# Constraints and loads
# ---------------------------------------------------------------------------


def make_dirichlet(dofs, values) -> DirichletBC:
    """Validated constraint map; duplicate dofs must agree in value."""
    dofs = np.asarray(dofs, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    if dofs.shape != values.shape:
        raise AssemblyError("constraint dofs and values differ in length")
    order = np.argsort(dofs, kind="stable")
    dofs, values = dofs[order], values[order]
    dup = dofs[1:] == dofs[:-1]
    if dup.any():
        conflict = dup & (values[1:] != values[:-1])
        if conflict.any():
            bad = dofs[1:][conflict][0]
            raise AssemblyError(f"conflicting Dirichlet values on dof {bad}")
        keep = np.concatenate([[True], ~dup])
        dofs, values = dofs[keep], values[keep]
    return DirichletBC(dofs, values)


def eliminate_dirichlet_matrix(mat: sp.csr_matrix, dofs: np.ndarray) -> sp.csr_matrix:
    """Zero constrained rows/cols and put ones on their diagonal."""
    n = mat.shape[0]
    free = np.ones(n)
    free[dofs] = 0.0
    pf = sp.diags(free)
    fixed = np.zeros(n)
    fixed[dofs] = 1.0
    return (pf @ mat @ pf + sp.diags(fixed)).tocsr()


def apply_dirichlet(system: SparseSystem, constraints: DirichletBC) -> SparseSystem:
    """Symmetric elimination with RHS lift for inhomogeneous values."""
    mat, rhs = system.matrix, system.rhs
    n = mat.shape[0]
    x_c = np.zeros(n)
    x_c[constraints.dofs] = constraints.values
    rhs = rhs - mat @ x_c
    mat = eliminate_dirichlet_matrix(mat, constraints.dofs)
    rhs[constraints.dofs] = constraints.values
    return SparseSystem(matrix=mat, rhs=rhs, constraints=constraints)


def apply_nodal_forces(rhs: np.ndarray, nodes: np.ndarray, forces: np.ndarray) -> np.ndarray:
    """Accumulate nodal force vectors (N) into the global RHS."""
    nodes = np.asarray(nodes, dtype=np.int64)
    forces = np.asarray(forces, dtype=np.float64)
    if forces.ndim == 1:
        forces = np.broadcast_to(forces, (nodes.size, 3))
    if not np.isfinite(forces).all():
        raise AssemblyError("nodal forces must be finite")
    out = rhs.copy()
    for c in range(3):
        np.add.at(out, 3 * nodes + c, forces[:, c])
    return out
