"""Phase-field brittle fracture on tetrahedral meshes.

Finite-element library and CLI for quasi-static crack evolution with a
tension/compression spectral strain split, a history-field staggered
solver and a fully coupled monolithic alternative, plus bone/implant
material calibration and vertebra-analog loading scenarios.
"""

from .backend import BACKEND, HAS_NUMBA

__version__ = "0.1.0"

__all__ = ["BACKEND", "HAS_NUMBA", "__version__"]
