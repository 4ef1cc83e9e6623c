"""Pointwise constitutive mathematics for the tension/compression split.

The strain measure is the small-strain symmetric gradient. A strain
tensor is decomposed spectrally,

    eps = sum_a w_a e_a (x) e_a,
    eps+ = sum_a <w_a> e_a (x) e_a,   eps- = -sum_a <-w_a> e_a (x) e_a,

with the Macaulay bracket <x> = (x + |x|)/2. Only the tensile branch is
degraded by g(s) = (1 - s)^2 + k:

    psi+- = lam/2 <+-tr eps>^2 + mu tr(eps+-^2)
    sigma = g(s) (lam <tr eps> I + 2 mu eps+) - lam <-tr eps> I + 2 mu eps-

so that sigma is the exact strain derivative of g(s) psi+ + psi-.
The consistent tangent uses eigenvalue/eigenvector derivative formulas;
near-repeated eigenvalues are separated by a tiny perturbation in the
tangent only (the stress always uses exact eigenvalues).

Voigt order: [xx, yy, zz, xy, yz, xz]; strain vectors use engineering
shear (gamma_xy = 2 eps_xy), stress vectors plain components.

Batched entry points (`batch_stress`, `batch_stress_tangent`,
`batch_psi_plus`, `eigh_batch`) dispatch to the numba or numpy backend
selected in `bonefrac.backend`.
"""

from __future__ import annotations

import numpy as np

from .backend import HAS_NUMBA

if HAS_NUMBA:
    from . import _kernels_numba as _impl
else:
    from . import _kernels_numpy as _impl

batch_stress = _impl.batch_stress
batch_stress_tangent = _impl.batch_stress_tangent
batch_psi_plus = _impl.batch_psi_plus
eigh_batch = _impl.eigh_batch

_ASYM_TOL = 1e-12

VOIGT_ORDER = ("xx", "yy", "zz", "xy", "yz", "xz")


class KernelError(Exception):
    """Raised for invalid pointwise inputs (asymmetry, out-of-range damage)."""


def macaulay(x: float) -> float:
    """Positive-part bracket (x + |x|) / 2."""
    return (x + abs(x)) / 2.0


def _check_symmetric(eps: np.ndarray) -> np.ndarray:
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != (3, 3):
        raise KernelError(f"strain must be a 3x3 tensor, got shape {eps.shape}")
    scale = max(1.0, float(np.abs(eps).max()))
    asym = float(np.abs(eps - eps.T).max())
    if asym > _ASYM_TOL * scale:
        raise KernelError(f"strain tensor is not symmetric (max asymmetry {asym:.3e})")
    return 0.5 * (eps + eps.T)


def strain_eigensystem(eps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues and orthonormal column eigenvectors of a strain."""
    eps = _check_symmetric(eps)
    w, v = eigh_batch(eps[None, :, :])
    return w[0], v[0]


def spectral_split(eps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tensile/compressive tensor parts (eps+, eps-) with eps+ + eps- = eps."""
    w, v = strain_eigensystem(eps)
    eps_p = (v * np.maximum(w, 0.0)) @ v.T
    eps_n = (v * np.minimum(w, 0.0)) @ v.T
    return eps_p, eps_n


def energy_split(eps: np.ndarray, lam: float, mu: float) -> tuple[float, float]:
    """Split energy densities (psi+, psi-) in MPa."""
    if mu <= 0 or lam < 0:
        raise KernelError(f"need mu > 0 and lam >= 0, got lam={lam}, mu={mu}")
    eps = _check_symmetric(eps)
    one = lambda x: np.asarray([x], dtype=np.float64)  # noqa: E731
    psi_p, psi_n, _, _ = batch_stress(eps[None, :, :], one(1.0), one(lam), one(mu))
    return float(psi_p[0]), float(psi_n[0])


def degradation(s: float, k: float) -> float:
    """Stiffness multiplier g(s) = (1 - s)^2 + k on the tensile branch."""
    if not (-1e-9 <= s <= 1.0 + 1e-9):
        raise KernelError(f"damage value {s} outside [0, 1] beyond slack")
    return (1.0 - s) ** 2 + k


def stress(eps: np.ndarray, s: float, lam: float, mu: float, k: float) -> np.ndarray:
    """Degraded Cauchy stress tensor (3x3, MPa)."""
    eps = _check_symmetric(eps)
    g = degradation(s, k)
    one = lambda x: np.asarray([x], dtype=np.float64)  # noqa: E731
    _, _, sigma6, _ = batch_stress(eps[None, :, :], one(g), one(lam), one(mu))
    return voigt_to_tensor(sigma6[0])


def consistent_tangent(eps: np.ndarray, s: float, lam: float, mu: float, k: float) -> np.ndarray:
    """6x6 tangent d(sigma)/d(eps) in Voigt form with engineering shear."""
    eps = _check_symmetric(eps)
    g = degradation(s, k)
    one = lambda x: np.asarray([x], dtype=np.float64)  # noqa: E731
    out = batch_stress_tangent(eps[None, :, :], one(g), one(lam), one(mu))
    return out[4][0]


def crack_density(s: float, grad_s, ell: float) -> float:
    """Regularized crack surface density (1/mm): (s^2/l + l |grad s|^2) / 2."""
    if ell <= 0:
        raise KernelError(f"length scale must be positive, got {ell}")
    grad_s = np.asarray(grad_s, dtype=np.float64)
    return 0.5 * (s**2 / ell + ell * float(grad_s @ grad_s))


def history_update(h_old, psi_plus):
    """Irreversibility: running maximum of the tensile energy density."""
    return np.maximum(h_old, psi_plus)


def strain_tensor_to_voigt(eps: np.ndarray) -> np.ndarray:
    """Strain tensor to engineering-shear Voigt vector."""
    return np.array([
        eps[0, 0], eps[1, 1], eps[2, 2],
        2.0 * eps[0, 1], 2.0 * eps[1, 2], 2.0 * eps[0, 2],
    ])


def voigt_to_tensor(v6: np.ndarray, engineering: bool = False) -> np.ndarray:
    """Voigt vector back to a symmetric 3x3 tensor."""
    h = 0.5 if engineering else 1.0
    return np.array([
        [v6[0], h * v6[3], h * v6[5]],
        [h * v6[3], v6[1], h * v6[4]],
        [h * v6[5], h * v6[4], v6[2]],
    ])


def strain_voigt_to_tensor_batch(eps6: np.ndarray) -> np.ndarray:
    """(N, 6) engineering-shear strain vectors to (N, 3, 3) tensors."""
    n = eps6.shape[0]
    out = np.empty((n, 3, 3))
    out[:, 0, 0] = eps6[:, 0]
    out[:, 1, 1] = eps6[:, 1]
    out[:, 2, 2] = eps6[:, 2]
    out[:, 0, 1] = out[:, 1, 0] = 0.5 * eps6[:, 3]
    out[:, 1, 2] = out[:, 2, 1] = 0.5 * eps6[:, 4]
    out[:, 0, 2] = out[:, 2, 0] = 0.5 * eps6[:, 5]
    return out
