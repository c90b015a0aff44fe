"""Kernel backend selection.

The compiled extension is preferred when importable; setting ``LYAPCO_PURE=1``
in the environment forces the pure-numpy fallback.  Both backends expose the
same API (``rollout``, ``qr_propagated_logs``, ``qr_local_logs``,
``gram_svd_logs``); the compiled one only handles state dimensions up to 8,
so dispatch is per-call via :func:`kernels_for`.
"""

import os

from . import _purekernels

_COMPILED_MAX_DIM = 8

if os.environ.get("LYAPCO_PURE") == "1":
    _active = _purekernels
else:
    try:
        from . import _kernels as _active  # type: ignore[no-redef]
    except ImportError:
        _active = _purekernels

COMPILED_ACTIVE = bool(getattr(_active, "COMPILED", False))


def backend_name():
    return "compiled" if COMPILED_ACTIVE else "pure-python"


def kernels_for(dim):
    """Kernel module to use for a given state dimension."""
    if COMPILED_ACTIVE and dim <= _COMPILED_MAX_DIM:
        return _active
    return _purekernels


def pure_kernels():
    return _purekernels
