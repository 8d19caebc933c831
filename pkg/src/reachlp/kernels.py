"""Backend selection for the hot loops.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
NumPy implementations in ``_pykernels`` are used. Both produce identical
results, so the choice only affects speed.
"""
from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["compiled"] = _ckernels

_active = "compiled" if _ckernels is not None else "python"


def backend():
    return _active


def set_backend(name):
    """Select ``"compiled"`` or ``"python"``; returns the previous name."""
    global _active
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}")
    prev, _active = _active, name
    return prev


def get(name=None):
    return BACKENDS[name or _active]


# counter-based streams are shared by both backends
mix64 = _pykernels.mix64
stream_key = _pykernels.stream_key
uniform = _pykernels.uniform
