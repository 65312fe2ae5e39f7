"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def scatter_add_rows(src, index, out_size):
    index = np.asarray(index)
    if index.size and (index.min() < 0 or index.max() >= out_size):
        bad = index[(index < 0) | (index >= out_size)][0]
        raise IndexError(f"index {bad} out of range for out_size {out_size}")
    out = np.zeros((out_size, src.shape[1]), dtype=np.float64)
    np.add.at(out, index, src)
    return out


def neighbor_sum(h, src, dst, out_size):
    """out[dst[e]] += h[src[e]] for every arc e."""
    if src.size and (src.min() < 0 or src.max() >= h.shape[0] or dst.min() < 0 or dst.max() >= out_size):
        raise IndexError("arc endpoint out of range")
    return scatter_add_rows(h[src], dst, out_size)


def keep_arcs(src, dst, dropped):
    dropped = np.asarray(dropped, dtype=bool)
    return ~(dropped[src] | dropped[dst])
