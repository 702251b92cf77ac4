"""Backend selection for the geometric-median kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback is used. ``set_backend`` switches explicitly (tests, benchmarks).
"""

from __future__ import annotations

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

_active = _compiled if _compiled is not None else _kernels_py


def backend() -> str:
    return "cython" if _active is _compiled and _compiled is not None else "python"


def set_backend(name: str) -> None:
    global _active
    try:
        _active = BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None


def _c(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def objective(pts, z) -> float:
    return float(_active.objective(_c(pts), _c(z)))


def objective_many(pts, cands) -> np.ndarray:
    return np.asarray(_active.objective_many(_c(pts), _c(cands)))


def weiszfeld(pts, z0, move_tol: float, obj_tol: float, max_iter: int, floor: float):
    return _active.weiszfeld(_c(pts), _c(z0), float(move_tol), float(obj_tol),
                             int(max_iter), float(floor))
