"""Hot-loop dispatch: compiled kernels when built, numpy fallback otherwise."""
from __future__ import annotations

from types import ModuleType

from . import _fallback

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS: dict[str, ModuleType] = {"python": _fallback}
if _ckernels is not None:
    BACKENDS["compiled"] = _ckernels

_active: ModuleType = _ckernels if _ckernels is not None else _fallback


def backend_name() -> str:
    return "compiled" if _active is _ckernels and _ckernels is not None else "python"


def use_backend(name: str) -> None:
    global _active
    try:
        _active = BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None


def sinc_resample(x, up, down, n_out, cutoff, half_zc):
    return _active.sinc_resample(x, up, down, n_out, cutoff, half_zc)


def wsola(xp, window, positions, hs, tol):
    return _active.wsola(xp, window, positions, hs, tol)
