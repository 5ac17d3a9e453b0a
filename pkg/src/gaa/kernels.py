"""Hot inner loops: sparse products and segment reductions over CSR-ordered edges.

Every kernel has two implementations with identical signatures, ``*_numpy``
(vectorised numpy) and ``*_numba`` (``@njit`` loops). The public names bind to
one of them at import time according to :data:`gaa._accel.USE_NUMBA`.

Segments are described by a CSR pointer array ``indptr`` of length ``S + 1``;
segment ``s`` owns rows ``indptr[s]:indptr[s + 1]`` of the value array.
"""

import numpy as np

from gaa._accel import USE_NUMBA, njit


# ---------------------------------------------------------------------------
# numpy paths
# ---------------------------------------------------------------------------


def _nonempty_starts(indptr):
    counts = np.diff(indptr)
    mask = counts > 0
    return indptr[:-1][mask], mask


def segment_sum_numpy(vals, indptr):
    n_seg = len(indptr) - 1
    out = np.zeros((n_seg, vals.shape[1]), dtype=vals.dtype)
    if vals.shape[0] == 0:
        return out
    starts, mask = _nonempty_starts(indptr)
    out[mask] = np.add.reduceat(vals, starts, axis=0)
    return out


def segment_max_numpy(vals, indptr):
    """Per-segment column max and the absolute row index attaining it (first on ties)."""
    n_seg = len(indptr) - 1
    n_col = vals.shape[1]
    out = np.zeros((n_seg, n_col), dtype=vals.dtype)
    arg = np.full((n_seg, n_col), -1, dtype=np.int64)
    if vals.shape[0] == 0:
        return out, arg
    starts, mask = _nonempty_starts(indptr)
    out[mask] = np.maximum.reduceat(vals, starts, axis=0)
    counts = np.diff(indptr)
    seg_of_row = np.repeat(np.arange(n_seg), counts)
    hit = vals == out[seg_of_row]
    rows = np.arange(vals.shape[0])
    # first hit per (segment, column): the smallest row index among hits
    cand = np.where(hit, rows[:, None], np.iinfo(np.int64).max)
    arg[mask] = np.minimum.reduceat(cand, starts, axis=0)
    return out, arg


def scatter_add_rows_numpy(vals, idx, n_rows):
    out = np.zeros((n_rows, vals.shape[1]), dtype=vals.dtype)
    np.add.at(out, idx, vals)
    return out


def csr_matmat_numpy(indptr, indices, data, x):
    prod = data[:, None] * x[indices]
    return segment_sum_numpy(prod, indptr)


def edge_aggregate_numpy(coef, h, src, indptr, n_heads):
    width = h.shape[1] // n_heads
    weights = np.repeat(coef, width, axis=1)
    return segment_sum_numpy(weights * h[src], indptr)


def edge_dot_numpy(g, h, dst, src, n_heads):
    width = h.shape[1] // n_heads
    prod = g[dst] * h[src]
    return prod.reshape(prod.shape[0], n_heads, width).sum(axis=2)


def elu_numpy(x, alpha):
    """ELU values and their derivative with respect to ``x``."""
    neg = alpha * np.expm1(np.minimum(x, 0.0))
    pos = x > 0
    return np.where(pos, x, neg), np.where(pos, 1.0, neg + alpha)


def leaky_relu_numpy(x, slope):
    pos = x > 0
    return np.where(pos, x, slope * x), np.where(pos, 1.0, slope)


def segment_softmax_numpy(logits, indptr):
    counts = np.diff(indptr)
    peak, _ = segment_max_numpy(logits, indptr)
    ex = np.exp(logits - np.repeat(peak, counts, axis=0))
    total = segment_sum_numpy(ex, indptr)
    return ex / np.repeat(total, counts, axis=0)


# ---------------------------------------------------------------------------
# numba paths
# ---------------------------------------------------------------------------


@njit
def segment_sum_numba(vals, indptr):
    n_seg = indptr.shape[0] - 1
    n_col = vals.shape[1]
    out = np.zeros((n_seg, n_col), dtype=vals.dtype)
    for s in range(n_seg):
        for r in range(indptr[s], indptr[s + 1]):
            for c in range(n_col):
                out[s, c] += vals[r, c]
    return out


@njit
def segment_max_numba(vals, indptr):
    n_seg = indptr.shape[0] - 1
    n_col = vals.shape[1]
    out = np.zeros((n_seg, n_col), dtype=vals.dtype)
    arg = np.full((n_seg, n_col), -1, dtype=np.int64)
    for s in range(n_seg):
        lo = indptr[s]
        hi = indptr[s + 1]
        if hi == lo:
            continue
        for c in range(n_col):
            best = vals[lo, c]
            at = lo
            for r in range(lo + 1, hi):
                if vals[r, c] > best:
                    best = vals[r, c]
                    at = r
            out[s, c] = best
            arg[s, c] = at
    return out, arg


@njit
def scatter_add_rows_numba(vals, idx, n_rows):
    n_col = vals.shape[1]
    out = np.zeros((n_rows, n_col), dtype=vals.dtype)
    for r in range(vals.shape[0]):
        t = idx[r]
        for c in range(n_col):
            out[t, c] += vals[r, c]
    return out


@njit
def csr_matmat_numba(indptr, indices, data, x):
    n_rows = indptr.shape[0] - 1
    n_col = x.shape[1]
    out = np.zeros((n_rows, n_col), dtype=x.dtype)
    for i in range(n_rows):
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            v = data[p]
            for c in range(n_col):
                out[i, c] += v * x[j, c]
    return out


@njit
def edge_aggregate_numba(coef, h, src, indptr, n_heads):
    n_rows = indptr.shape[0] - 1
    width = h.shape[1] // n_heads
    out = np.zeros((n_rows, h.shape[1]), dtype=h.dtype)
    for i in range(n_rows):
        for e in range(indptr[i], indptr[i + 1]):
            j = src[e]
            for k in range(n_heads):
                w = coef[e, k]
                base = k * width
                for f in range(width):
                    out[i, base + f] += w * h[j, base + f]
    return out


@njit
def edge_dot_numba(g, h, dst, src, n_heads):
    n_edges = dst.shape[0]
    width = h.shape[1] // n_heads
    out = np.zeros((n_edges, n_heads), dtype=h.dtype)
    for e in range(n_edges):
        i = dst[e]
        j = src[e]
        for k in range(n_heads):
            base = k * width
            acc = 0.0
            for f in range(width):
                acc += g[i, base + f] * h[j, base + f]
            out[e, k] = acc
    return out


@njit
def elu_numba(x, alpha):
    out = np.empty_like(x)
    der = np.empty_like(x)
    flat_x = x.ravel()
    flat_o = out.ravel()
    flat_d = der.ravel()
    for i in range(flat_x.shape[0]):
        v = flat_x[i]
        if v > 0:
            flat_o[i] = v
            flat_d[i] = 1.0
        else:
            e = alpha * np.expm1(v)
            flat_o[i] = e
            flat_d[i] = e + alpha
    return out, der


@njit
def leaky_relu_numba(x, slope):
    out = np.empty_like(x)
    der = np.empty_like(x)
    flat_x = x.ravel()
    flat_o = out.ravel()
    flat_d = der.ravel()
    for i in range(flat_x.shape[0]):
        v = flat_x[i]
        if v > 0:
            flat_o[i] = v
            flat_d[i] = 1.0
        else:
            flat_o[i] = slope * v
            flat_d[i] = slope
    return out, der


@njit
def segment_softmax_numba(logits, indptr):
    n_seg = indptr.shape[0] - 1
    n_col = logits.shape[1]
    out = np.empty_like(logits)
    for s in range(n_seg):
        lo = indptr[s]
        hi = indptr[s + 1]
        if hi == lo:
            continue
        for c in range(n_col):
            peak = logits[lo, c]
            for r in range(lo + 1, hi):
                if logits[r, c] > peak:
                    peak = logits[r, c]
            total = 0.0
            for r in range(lo, hi):
                v = np.exp(logits[r, c] - peak)
                out[r, c] = v
                total += v
            for r in range(lo, hi):
                out[r, c] /= total
    return out


NUMPY_KERNELS = {
    "segment_sum": segment_sum_numpy,
    "segment_max": segment_max_numpy,
    "scatter_add_rows": scatter_add_rows_numpy,
    "csr_matmat": csr_matmat_numpy,
    "edge_aggregate": edge_aggregate_numpy,
    "edge_dot": edge_dot_numpy,
    "segment_softmax": segment_softmax_numpy,
    "elu": elu_numpy,
    "leaky_relu": leaky_relu_numpy,
}

NUMBA_KERNELS = {
    "segment_sum": segment_sum_numba,
    "segment_max": segment_max_numba,
    "scatter_add_rows": scatter_add_rows_numba,
    "csr_matmat": csr_matmat_numba,
    "edge_aggregate": edge_aggregate_numba,
    "edge_dot": edge_dot_numba,
    "segment_softmax": segment_softmax_numba,
    "elu": elu_numba,
    "leaky_relu": leaky_relu_numba,
}

BACKEND = "numba" if USE_NUMBA else "numpy"
_ACTIVE = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS

segment_sum = _ACTIVE["segment_sum"]
segment_max = _ACTIVE["segment_max"]
scatter_add_rows = _ACTIVE["scatter_add_rows"]
csr_matmat = _ACTIVE["csr_matmat"]
edge_aggregate = _ACTIVE["edge_aggregate"]
edge_dot = _ACTIVE["edge_dot"]
segment_softmax = _ACTIVE["segment_softmax"]
elu = _ACTIVE["elu"]
leaky_relu = _ACTIVE["leaky_relu"]
