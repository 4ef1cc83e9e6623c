"""Vectorized numpy implementation of the batched strain-split kernels.

All functions take stacked element quantities: strains as (N, 3, 3)
symmetric tensors, scalars as (N,) arrays. Voigt order is
[xx, yy, zz, xy, yz, xz]; strain vectors carry engineering shear
(gamma = 2 eps), stress vectors plain components, and 6x6 tangents map
engineering strain to stress.

Split convention (tension degraded, compression intact):

    eps+/- from the eigenvalue signs,
    psi+- = lam/2 <+-tr eps>^2 + mu tr(eps+-^2),
    sigma = g * (lam <tr eps> I + 2 mu eps+) - lam <-tr eps> I + 2 mu eps-.
"""

from __future__ import annotations

import numpy as np

# Pairwise eigenvalue gaps below GAP_REL * max(1, |eps|) are opened up by
# that amount before the tangent is formed; the stress always uses the
# exact eigenvalues.
GAP_REL = 1e-8

_VOIGT_IJ = ((0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2))
_I6 = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])

# I_sym in the engineering-strain convention.
_ISYM6 = np.diag([1.0, 1.0, 1.0, 0.5, 0.5, 0.5])


def eigh_batch(eps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and column eigenvectors with deterministic signs.

    Each eigenvector is flipped so its largest-magnitude component is
    positive (first index wins ties), making the decomposition
    reproducible across backends.
    """
    w, v = np.linalg.eigh(eps)
    comp = np.argmax(np.abs(v), axis=1)  # (N, 3): row index of max |component|
    picked = np.take_along_axis(v, comp[:, None, :], axis=1)[:, 0, :]
    v = v * np.where(picked < 0.0, -1.0, 1.0)[:, None, :]
    return w, v


def _tensor_to_voigt(t: np.ndarray) -> np.ndarray:
    """(N, 3, 3) symmetric tensors to plain-component (N, 6) Voigt vectors."""
    out = np.empty(t.shape[:-2] + (6,))
    for a, (i, j) in enumerate(_VOIGT_IJ):
        out[..., a] = t[..., i, j]
    return out


def _split_parts(eps: np.ndarray):
    w, v = eigh_batch(eps)
    wp = np.maximum(w, 0.0)
    wn = np.minimum(w, 0.0)
    # eps+- = V diag(w+-) V^T
    eps_p = np.einsum("nia,na,nja->nij", v, wp, v)
    eps_n = np.einsum("nia,na,nja->nij", v, wn, v)
    return w, v, wp, wn, eps_p, eps_n


def batch_stress(eps, g, lam, mu):
    """Degraded stress and split energy densities for N strain states.

    Returns (psi_plus, psi_minus, sigma6, sigma_plus6) where sigma_plus6
    is the undegraded tensile stress (the part multiplied by g).
    """
    w, v, wp, wn, eps_p, eps_n = _split_parts(eps)
    tr = w.sum(axis=1)
    trp = np.maximum(tr, 0.0)
    trn = np.minimum(tr, 0.0)

    psi_p = 0.5 * lam * trp**2 + mu * (wp**2).sum(axis=1)
    psi_n = 0.5 * lam * trn**2 + mu * (wn**2).sum(axis=1)

    sig_p = lam[:, None, None] * trp[:, None, None] * np.eye(3) + 2.0 * mu[:, None, None] * eps_p
    sig_n = lam[:, None, None] * trn[:, None, None] * np.eye(3) + 2.0 * mu[:, None, None] * eps_n
    sigma = g[:, None, None] * sig_p + sig_n
    return psi_p, psi_n, _tensor_to_voigt(sigma), _tensor_to_voigt(sig_p)


def batch_psi_plus(eps, lam, mu):
    """Tensile energy density only (history-field updates)."""
    w, _ = np.linalg.eigh(eps)
    wp = np.maximum(w, 0.0)
    trp = np.maximum(w.sum(axis=1), 0.0)
    return 0.5 * lam * trp**2 + mu * (wp**2).sum(axis=1)


def _opened_gaps(w: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Eigenvalues with near-degenerate pairs pushed apart (tangent only)."""
    scale = np.maximum(1.0, np.linalg.norm(eps, axis=(1, 2)))
    delta = GAP_REL * scale
    wt = w.copy()
    wt[:, 1] = np.minimum(wt[:, 1], wt[:, 2] - delta)
    wt[:, 0] = np.minimum(wt[:, 0], wt[:, 1] - delta)
    return wt


def batch_stress_tangent(eps, g, lam, mu):
    """Stress plus the consistent 6x6 tangent d(sigma)/d(eps_eng).

    Returns (psi_plus, psi_minus, sigma6, sigma_plus6, dmat).
    """
    w, v, wp, wn, eps_p, eps_n = _split_parts(eps)
    n = eps.shape[0]
    tr = w.sum(axis=1)
    trp = np.maximum(tr, 0.0)
    trn = np.minimum(tr, 0.0)

    psi_p = 0.5 * lam * trp**2 + mu * (wp**2).sum(axis=1)
    psi_n = 0.5 * lam * trn**2 + mu * (wn**2).sum(axis=1)
    sig_p = lam[:, None, None] * trp[:, None, None] * np.eye(3) + 2.0 * mu[:, None, None] * eps_p
    sig_n = lam[:, None, None] * trn[:, None, None] * np.eye(3) + 2.0 * mu[:, None, None] * eps_n
    sigma = g[:, None, None] * sig_p + sig_n

    # Projection P+ = d(eps+)/d(eps) in 6x6 form, from the eigenbasis:
    # diagonal terms H(w_a) M_a x M_a and pair terms theta_ab/2 G_ab x G_ab.
    wt = _opened_gaps(w, eps)
    heav = (wt > 0.0).astype(np.float64)

    m6 = np.empty((n, 3, 6))
    for a in range(3):
        ma = np.einsum("ni,nj->nij", v[:, :, a], v[:, :, a])
        m6[:, a, :] = _tensor_to_voigt(ma)
    pplus = np.einsum("na,nai,naj->nij", heav, m6, m6)

    for a, b in ((0, 1), (0, 2), (1, 2)):
        theta = (np.maximum(wt[:, a], 0.0) - np.maximum(wt[:, b], 0.0)) / (wt[:, a] - wt[:, b])
        gab = np.einsum("ni,nj->nij", v[:, :, a], v[:, :, b])
        g6 = _tensor_to_voigt(gab + np.swapaxes(gab, 1, 2))
        pplus += 0.5 * theta[:, None, None] * np.einsum("ni,nj->nij", g6, g6)

    ii = np.einsum("i,j->ij", _I6, _I6)
    hp = (tr > 0.0).astype(np.float64)
    dplus = lam[:, None, None] * hp[:, None, None] * ii + 2.0 * mu[:, None, None] * pplus
    dminus = (
        lam[:, None, None] * (1.0 - hp)[:, None, None] * ii
        + 2.0 * mu[:, None, None] * (_ISYM6 - pplus)
    )
    dmat = g[:, None, None] * dplus + dminus
    return psi_p, psi_n, _tensor_to_voigt(sigma), _tensor_to_voigt(sig_p), dmat
