"""Backend selection for the stepping kernels.

The compiled extension is preferred when importable; otherwise the numpy
fallback is used.  Set SPDELAB_FORCE_FALLBACK=1 to force the fallback (used
by the parity tests and the benchmark).
"""

import os

from . import fallback


def _load_compiled():
    try:
        from . import _core
        return _core
    except ImportError:
        return None


_compiled = _load_compiled()

if os.environ.get("SPDELAB_FORCE_FALLBACK"):
    _impl = fallback
    BACKEND = "fallback"
elif _compiled is not None:
    _impl = _compiled
    BACKEND = "compiled"
else:
    _impl = fallback
    BACKEND = "fallback"

step_periodic = _impl.step_periodic
step_dirichlet = _impl.step_dirichlet


def available_backends():
    """Mapping of backend name -> kernel module, for parity tests and timing."""
    out = {"fallback": fallback}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out
