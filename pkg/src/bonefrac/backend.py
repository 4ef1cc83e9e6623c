"""Compute-backend selection for the hot constitutive kernels.

Two interchangeable implementations of the batched strain-split kernels
exist: a numba ``@njit`` version and a vectorized pure-numpy version.
The active one is chosen once at import time:

* ``BONEFRAC_BACKEND=numpy`` forces the pure-numpy path,
* ``BONEFRAC_BACKEND=numba`` requires numba (ImportError if missing),
* unset: numba when importable, numpy otherwise.

``BONEFRAC_WORKERS`` sets the default thread count for the numba layer
(also reachable through the CLI worker flag); the numpy path is always
single-threaded apart from BLAS internals.
"""

from __future__ import annotations

import os

_env = os.environ.get("BONEFRAC_BACKEND", "").strip().lower()

if _env not in ("", "numba", "numpy"):
    raise RuntimeError(
        f"BONEFRAC_BACKEND must be 'numba' or 'numpy', got {_env!r}"
    )

if _env == "numpy":
    HAS_NUMBA = False
else:
    try:
        import numba  # noqa: F401

        HAS_NUMBA = True
    except ImportError:
        if _env == "numba":
            raise
        HAS_NUMBA = False

BACKEND = "numba" if HAS_NUMBA else "numpy"


def set_workers(count: int) -> None:
    """Set the numba thread count. No-op on the numpy backend."""
    if count < 1:
        raise ValueError(f"worker count must be >= 1, got {count}")
    if HAS_NUMBA:
        import numba

        numba.set_num_threads(count)


def default_workers() -> int:
    raw = os.environ.get("BONEFRAC_WORKERS", "1")
    try:
        count = int(raw)
    except ValueError as exc:
        raise RuntimeError(f"BONEFRAC_WORKERS must be an integer, got {raw!r}") from exc
    if count < 1:
        raise RuntimeError(f"BONEFRAC_WORKERS must be >= 1, got {count}")
    return count
