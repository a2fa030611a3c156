"""Kernel backend selection: numba-compiled loops vs pure numpy.

The convolution and max-pooling inner loops dominate training time, so
they exist twice with identical signatures: `kernels_numba` (@njit) and
`kernels_numpy` (shift-and-matmul / reshape tricks).  The active backend
is chosen once from the environment and can be overridden at runtime,
which the benchmark and the cross-checking tests rely on.

    SIAMNET_BACKEND=numpy   force the pure-numpy path
    SIAMNET_BACKEND=numba   force numba (ImportError if unavailable)

Unset, numba is used when importable, numpy otherwise.
"""

import os
from importlib import import_module

_VALID = ("numba", "numpy")
_active = None  # module, resolved lazily


def _resolve_default() -> str:
    env = os.environ.get("SIAMNET_BACKEND", "").strip().lower()
    if env:
        if env not in _VALID:
            raise ValueError(f"SIAMNET_BACKEND must be one of {_VALID}, got {env!r}")
        return env
    try:
        import numba  # noqa: F401
        return "numba"
    except ImportError:
        return "numpy"


def set_backend(name: str) -> None:
    """Switch kernel backend; 'numba' or 'numpy'."""
    global _active
    if name not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}, got {name!r}")
    _active = import_module(f"siamnet.kernels_{name}")


def kernels():
    """Return the active kernel module."""
    global _active
    if _active is None:
        set_backend(_resolve_default())
    return _active


def backend_name() -> str:
    return kernels().__name__.rsplit("_", 1)[-1]
