"""Backend selection for the hot numerical kernels.

The compiled Cython core is used when it was built; otherwise the NumPy
fallback takes over. Set ``COORDGATE_LAB_BACKEND`` to ``python`` or
``cython`` to force one (``auto`` is the default).
"""
import logging
import os

from . import _kernels_py

log = logging.getLogger(__name__)

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _kernels_py}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels


def available():
    return sorted(_BACKENDS)


def get_backend(name="auto"):
    if name == "auto":
        return _BACKENDS.get("cython", _kernels_py)
    if name not in _BACKENDS:
        raise ValueError(f"kernel backend {name!r} unavailable; have {available()}")
    return _BACKENDS[name]


active = get_backend(os.environ.get("COORDGATE_LAB_BACKEND", "auto"))
log.debug("kernel backend: %s", active.NAME)


def use(name):
    """Switch the process-wide backend; returns the previous one's name."""
    global active
    prev = active.NAME
    active = get_backend(name)
    return prev
