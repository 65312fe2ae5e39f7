"""Backend selection for the message-passing hot loops.

The Cython extension is used when it was built; otherwise the numpy
fallback is loaded. Set ``GCLVIEWS_BACKEND=python`` to force the fallback.

All entry points take C-contiguous float64 / int64 arrays; the wrappers
below coerce inputs so callers never have to care.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("GCLVIEWS_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def scatter_add_rows(src, index, out_size, impl=None):
    """Sum rows of ``src`` into ``out_size`` buckets chosen by ``index``."""
    src = _f64(src)
    if src.ndim != 2:
        raise ValueError(f"scatter_add_rows expects a 2-d source, got shape {src.shape}")
    index = _i64(index)
    if index.shape[0] != src.shape[0]:
        raise ValueError(f"index length {index.shape[0]} != source rows {src.shape[0]}")
    return (impl or _impl).scatter_add_rows(src, index, int(out_size))


def neighbor_sum(h, src, dst, out_size=None, impl=None):
    """Aggregate ``h[src]`` into rows ``dst`` (sum over incoming arcs)."""
    h = _f64(h)
    out_size = h.shape[0] if out_size is None else int(out_size)
    return (impl or _impl).neighbor_sum(h, _i64(src), _i64(dst), out_size)


def keep_arcs(src, dst, dropped, impl=None):
    dropped = np.ascontiguousarray(dropped, dtype=np.uint8)
    return (impl or _impl).keep_arcs(_i64(src), _i64(dst), dropped)
