"""Numba njit implementation of the batched strain-split kernels.

Mirrors `_kernels_numpy` function-for-function; see that module for the
conventions. The 3x3 symmetric eigensolver is a closed-form/iterative
hybrid: trigonometric eigenvalues with cross-product eigenvectors, and a
cyclic Jacobi fallback whenever the analytic vectors fail an
orthogonality/residual check (near-degenerate spectra).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

GAP_REL = 1e-8
# Squared residual/orthogonality bound for accepting the closed-form
# eigenvectors; anything worse falls back to Jacobi so that split
# reconstruction holds to ~1e-12 relative.
_ANALYTIC_TOL = 1e-24


@njit(cache=True)
def _jacobi3(A):
    """Cyclic Jacobi diagonalization; returns (eigvals, eigvecs cols)."""
    B = A.copy()
    V = np.eye(3)
    for _ in range(50):
        off = math.sqrt(B[0, 1] ** 2 + B[0, 2] ** 2 + B[1, 2] ** 2)
        if off < 1e-15:
            break
        for p in range(2):
            for q in range(p + 1, 3):
                if abs(B[p, q]) < 1e-300:
                    continue
                theta = (B[q, q] - B[p, p]) / (2.0 * B[p, q])
                t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for k in range(3):
                    bkp = B[k, p]
                    bkq = B[k, q]
                    B[k, p] = c * bkp - s * bkq
                    B[k, q] = s * bkp + c * bkq
                for k in range(3):
                    bpk = B[p, k]
                    bqk = B[q, k]
                    B[p, k] = c * bpk - s * bqk
                    B[q, k] = s * bpk + c * bqk
                for k in range(3):
                    vkp = V[k, p]
                    vkq = V[k, q]
                    V[k, p] = c * vkp - s * vkq
                    V[k, q] = s * vkp + c * vkq
    w = np.array([B[0, 0], B[1, 1], B[2, 2]])
    return w, V


@njit(cache=True)
def _cross(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@njit(cache=True)
def _eigvec_cross(A, w, out):
    """Eigenvector of A for eigenvalue w from the largest row cross product.

    Returns the squared norm of the best cross product (0 means failure).
    """
    r0 = np.array([A[0, 0] - w, A[0, 1], A[0, 2]])
    r1 = np.array([A[1, 0], A[1, 1] - w, A[1, 2]])
    r2 = np.array([A[2, 0], A[2, 1], A[2, 2] - w])
    best = 0.0
    c = np.empty(3)
    _cross(r0, r1, c)
    n2 = c[0] ** 2 + c[1] ** 2 + c[2] ** 2
    if n2 > best:
        best = n2
        out[0], out[1], out[2] = c[0], c[1], c[2]
    _cross(r0, r2, c)
    n2 = c[0] ** 2 + c[1] ** 2 + c[2] ** 2
    if n2 > best:
        best = n2
        out[0], out[1], out[2] = c[0], c[1], c[2]
    _cross(r1, r2, c)
    n2 = c[0] ** 2 + c[1] ** 2 + c[2] ** 2
    if n2 > best:
        best = n2
        out[0], out[1], out[2] = c[0], c[1], c[2]
    if best > 0.0:
        inv = 1.0 / math.sqrt(best)
        out[0] *= inv
        out[1] *= inv
        out[2] *= inv
    return best


@njit(cache=True)
def _eigh3(A):
    """Symmetric 3x3 eigensolver, ascending eigenvalues, orthonormal columns.

    Eigenvectors carry the deterministic sign convention: the largest
    magnitude component is positive (lowest index on ties).
    """
    scale = 0.0
    for i in range(3):
        for j in range(3):
            a = abs(A[i, j])
            if a > scale:
                scale = a
    w = np.zeros(3)
    V = np.eye(3)
    if scale == 0.0:
        return w, V
    S = A / scale

    p1 = S[0, 1] ** 2 + S[0, 2] ** 2 + S[1, 2] ** 2
    if p1 < 1e-30:
        # already diagonal: sort the diagonal
        w = np.array([S[0, 0], S[1, 1], S[2, 2]])
        order = np.argsort(w)
        w = w[order] * scale
        eye = np.eye(3)
        for col in range(3):
            for i in range(3):
                V[i, col] = eye[i, order[col]]
        return w, _fix_signs(V)

    q = (S[0, 0] + S[1, 1] + S[2, 2]) / 3.0
    p2 = (S[0, 0] - q) ** 2 + (S[1, 1] - q) ** 2 + (S[2, 2] - q) ** 2 + 2.0 * p1
    p = math.sqrt(p2 / 6.0)
    Bm = (S - q * np.eye(3)) / p
    detb = (
        Bm[0, 0] * (Bm[1, 1] * Bm[2, 2] - Bm[1, 2] * Bm[2, 1])
        - Bm[0, 1] * (Bm[1, 0] * Bm[2, 2] - Bm[1, 2] * Bm[2, 0])
        + Bm[0, 2] * (Bm[1, 0] * Bm[2, 1] - Bm[1, 1] * Bm[2, 0])
    )
    r = detb / 2.0
    if r < -1.0:
        r = -1.0
    elif r > 1.0:
        r = 1.0
    phi = math.acos(r) / 3.0
    w2 = q + 2.0 * p * math.cos(phi)
    w0 = q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
    w1 = 3.0 * q - w0 - w2
    w = np.array([w0, w1, w2])

    # analytic vectors for the two outer eigenvalues, middle by cross
    ok = True
    v0 = np.empty(3)
    v2 = np.empty(3)
    if _eigvec_cross(S, w0, v0) <= 0.0:
        ok = False
    if ok and _eigvec_cross(S, w2, v2) <= 0.0:
        ok = False
    if ok:
        dot02 = abs(v0[0] * v2[0] + v0[1] * v2[1] + v0[2] * v2[2])
        if dot02 > _ANALYTIC_TOL:
            ok = False
    if ok:
        v1 = np.empty(3)
        _cross(v2, v0, v1)
        for a in range(3):
            V[a, 0] = v0[a]
            V[a, 1] = v1[a]
            V[a, 2] = v2[a]
        # residual check ||S v - w v||
        for col in range(3):
            res = 0.0
            for i in range(3):
                acc = -w[col] * V[i, col]
                for j in range(3):
                    acc += S[i, j] * V[j, col]
                res += acc * acc
            if res > _ANALYTIC_TOL:
                ok = False
                break
    if not ok:
        w, V = _jacobi3(S)
        order = np.argsort(w)
        w = w[order]
        V = V[:, order]
    return w * scale, _fix_signs(V)


@njit(cache=True)
def _fix_signs(V):
    for col in range(3):
        imax = 0
        vmax = abs(V[0, col])
        for i in range(1, 3):
            if abs(V[i, col]) > vmax:
                vmax = abs(V[i, col])
                imax = i
        if V[imax, col] < 0.0:
            for i in range(3):
                V[i, col] = -V[i, col]
    return V


@njit(cache=True)
def eigh_batch(eps):
    n = eps.shape[0]
    w = np.empty((n, 3))
    v = np.empty((n, 3, 3))
    for e in range(n):
        we, ve = _eigh3(eps[e])
        w[e] = we
        v[e] = ve
    return w, v


@njit(cache=True, inline="always")
def _voigt_pack(t, out):
    out[0] = t[0, 0]
    out[1] = t[1, 1]
    out[2] = t[2, 2]
    out[3] = t[0, 1]
    out[4] = t[1, 2]
    out[5] = t[0, 2]


@njit(cache=True)
def _stress_from_eig(w, V, g, lam, mu, sigma6, sigp6):
    """Stress for one eigendecomposed strain; returns (psi_plus, psi_minus)."""
    tr = w[0] + w[1] + w[2]
    trp = tr if tr > 0.0 else 0.0
    trn = tr if tr < 0.0 else 0.0

    eps_p = np.zeros((3, 3))
    eps_n = np.zeros((3, 3))
    sum_wp2 = 0.0
    sum_wn2 = 0.0
    for a in range(3):
        wp = w[a] if w[a] > 0.0 else 0.0
        wn = w[a] if w[a] < 0.0 else 0.0
        sum_wp2 += wp * wp
        sum_wn2 += wn * wn
        for i in range(3):
            for j in range(3):
                eps_p[i, j] += wp * V[i, a] * V[j, a]
                eps_n[i, j] += wn * V[i, a] * V[j, a]

    psi_p = 0.5 * lam * trp * trp + mu * sum_wp2
    psi_n = 0.5 * lam * trn * trn + mu * sum_wn2

    sig_p = 2.0 * mu * eps_p
    sig_n = 2.0 * mu * eps_n
    for i in range(3):
        sig_p[i, i] += lam * trp
        sig_n[i, i] += lam * trn
    sigma = g * sig_p + sig_n
    _voigt_pack(sigma, sigma6)
    _voigt_pack(sig_p, sigp6)
    return psi_p, psi_n


@njit(cache=True, parallel=True)
def batch_stress(eps, g, lam, mu):
    n = eps.shape[0]
    psi_p = np.empty(n)
    psi_n = np.empty(n)
    sigma6 = np.empty((n, 6))
    sigp6 = np.empty((n, 6))
    for e in prange(n):
        w, V = _eigh3(eps[e])
        psi_p[e], psi_n[e] = _stress_from_eig(w, V, g[e], lam[e], mu[e], sigma6[e], sigp6[e])
    return psi_p, psi_n, sigma6, sigp6


@njit(cache=True, parallel=True)
def batch_psi_plus(eps, lam, mu):
    n = eps.shape[0]
    out = np.empty(n)
    for e in prange(n):
        w, _ = _eigh3(eps[e])
        tr = w[0] + w[1] + w[2]
        trp = tr if tr > 0.0 else 0.0
        s2 = 0.0
        for a in range(3):
            if w[a] > 0.0:
                s2 += w[a] * w[a]
        out[e] = 0.5 * lam[e] * trp * trp + mu[e] * s2
    return out


@njit(cache=True)
def _tangent_one(eps, g, lam, mu, w, V, dmat):
    """Consistent 6x6 tangent at one strain state, written into dmat."""
    fro = 0.0
    for i in range(3):
        for j in range(3):
            fro += eps[i, j] * eps[i, j]
    scale = max(1.0, math.sqrt(fro))
    delta = GAP_REL * scale
    wt0, wt1, wt2 = w[0], w[1], w[2]
    if wt1 > wt2 - delta:
        wt1 = wt2 - delta
    if wt0 > wt1 - delta:
        wt0 = wt1 - delta
    wt = (wt0, wt1, wt2)

    m6 = np.empty((3, 6))
    tmp = np.empty((3, 3))
    for a in range(3):
        for i in range(3):
            for j in range(3):
                tmp[i, j] = V[i, a] * V[j, a]
        _voigt_pack(tmp, m6[a])

    pplus = np.zeros((6, 6))
    for a in range(3):
        if wt[a] > 0.0:
            for i in range(6):
                for j in range(6):
                    pplus[i, j] += m6[a, i] * m6[a, j]

    g6 = np.empty(6)
    for a in range(2):
        for b in range(a + 1, 3):
            wa = wt[a] if wt[a] > 0.0 else 0.0
            wb = wt[b] if wt[b] > 0.0 else 0.0
            theta = (wa - wb) / (wt[a] - wt[b])
            if theta != 0.0:
                for i in range(3):
                    for j in range(3):
                        tmp[i, j] = V[i, a] * V[j, b] + V[i, b] * V[j, a]
                _voigt_pack(tmp, g6)
                half_theta = 0.5 * theta
                for i in range(6):
                    for j in range(6):
                        pplus[i, j] += half_theta * g6[i] * g6[j]

    tr = w[0] + w[1] + w[2]
    hp = 1.0 if tr > 0.0 else 0.0
    for i in range(6):
        for j in range(6):
            dp = 2.0 * mu * pplus[i, j]
            dm = -2.0 * mu * pplus[i, j]
            if i < 3 and j < 3:
                dp += lam * hp
                dm += lam * (1.0 - hp)
            if i == j:
                dm += 2.0 * mu * (1.0 if i < 3 else 0.5)
            dmat[i, j] = g * dp + dm


@njit(cache=True, parallel=True)
def batch_stress_tangent(eps, g, lam, mu):
    n = eps.shape[0]
    psi_p = np.empty(n)
    psi_n = np.empty(n)
    sigma6 = np.empty((n, 6))
    sigp6 = np.empty((n, 6))
    dmat = np.empty((n, 6, 6))
    for e in prange(n):
        w, V = _eigh3(eps[e])
        psi_p[e], psi_n[e] = _stress_from_eig(w, V, g[e], lam[e], mu[e], sigma6[e], sigp6[e])
        _tangent_one(eps[e], g[e], lam[e], mu[e], w, V, dmat[e])
    return psi_p, psi_n, sigma6, sigp6, dmat
