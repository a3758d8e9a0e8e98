"""Hot-loop kernels with a compiled backend and a numpy fallback.

The Cython extension ``tonemeter._ckernels`` is used when it was built;
otherwise the numpy implementations in ``tonemeter._pykernels`` are used.
``use_backend`` switches at runtime (benchmarks and equivalence tests).
"""

from __future__ import annotations

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

BACKEND = "cython" if _ckernels is not None else "python"
_impl = _BACKENDS[BACKEND]


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def use_backend(name: str) -> str:
    """Select the kernel backend; returns the previous one."""
    global BACKEND, _impl
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    prev, BACKEND, _impl = BACKEND, name, _BACKENDS[name]
    return prev


def im2col(x, kh: int, kw: int) -> np.ndarray:
    return _impl.im2col(np.ascontiguousarray(x, dtype=np.float64), kh, kw)


def col2im(cols, shape, kh: int, kw: int) -> np.ndarray:
    return _impl.col2im(np.ascontiguousarray(cols, dtype=np.float64), tuple(int(s) for s in shape), kh, kw)


def maxpool_forward(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape[1] % 2 or x.shape[2] % 2:
        raise ValueError(f"max pooling needs even spatial dims, got {x.shape[1:3]}")
    return _impl.maxpool_forward(x)


def maxpool_backward(grad, idx) -> np.ndarray:
    return _impl.maxpool_backward(
        np.ascontiguousarray(grad, dtype=np.float64), np.ascontiguousarray(idx, dtype=np.intp)
    )


def kmeans_assign(points, centers):
    return _impl.kmeans_assign(
        np.ascontiguousarray(points, dtype=np.float64), np.ascontiguousarray(centers, dtype=np.float64)
    )
