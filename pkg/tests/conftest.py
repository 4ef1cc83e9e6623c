import numpy as np
import pytest

from bonefrac import kernels


@pytest.fixture(scope="session", autouse=True)
def warm_backend():
    """Trigger JIT compilation before any timed test runs."""
    eps = np.zeros((2, 3, 3))
    eps[0] = np.diag([1e-3, -2e-3, 3e-3])
    ones = np.ones(2)
    kernels.batch_stress(eps, ones, ones, ones)
    kernels.batch_stress_tangent(eps, ones, ones, ones)
    kernels.batch_psi_plus(eps, ones, ones)


def random_symmetric(rng, n, scale=1e-2):
    a = rng.normal(size=(n, 3, 3))
    return 0.5 * (a + a.transpose(0, 2, 1)) * scale


def random_rotations(rng, n):
    """Uniform-ish rotation matrices via QR of Gaussian samples."""
    a = rng.normal(size=(n, 3, 3))
    qs = np.empty_like(a)
    for i in range(n):
        q, r = np.linalg.qr(a[i])
        q = q * np.sign(np.diag(r))[None, :]
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        qs[i] = q
    return qs
