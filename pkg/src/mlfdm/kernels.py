"""Backend selection for the numerical hot loops.

The compiled Cython module is used when importable; set ``MLFDM_PURE_PYTHON=1``
to force the pure-Python fallback (useful for debugging and benchmarking).
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("MLFDM_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pykernels

arma_kalman = _impl.arma_kalman
life_expectancy_batch = _impl.life_expectancy_batch
frac_diff = _impl.frac_diff
frac_integrate = _impl.frac_integrate

__all__ = [
    "BACKEND",
    "arma_kalman",
    "life_expectancy_batch",
    "frac_diff",
    "frac_integrate",
]
