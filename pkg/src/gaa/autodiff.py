"""Define-by-run reverse-mode autodiff over dense 2-D float64 arrays.

A :class:`Tape` records every operation applied to its tensors. Calling
:meth:`Tape.backward` on a ``1 x 1`` result walks the record in reverse and
accumulates gradients into ``Tensor.grad``. A tape can be differentiated once.

Only the operations the model needs are provided; each is a plain function
taking and returning :class:`Tensor` objects.
"""

from __future__ import annotations

import os
import weakref
from typing import Callable, Sequence

import numpy as np

from gaa import kernels

CHECK_FINITE = os.environ.get("GAA_DEBUG", "0") not in ("0", "", "false", "off")

LEAKY_SLOPE = 0.2
ELU_ALPHA = 1.0


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_tape", "index", "name")

    def __init__(self, value, tape, index, requires_grad, name=None):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        # weak: the tape already owns its tensors, and a strong back-reference
        # would leave every finished tape to the cycle collector
        self._tape = weakref.ref(tape)
        self.index = index
        self.name = name

    @property
    def tape(self) -> "Tape":
        tape = self._tape()
        if tape is None:
            raise RuntimeError("the tape that recorded this tensor no longer exists")
        return tape

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Tensor{label} {self.shape[0]}x{self.shape[1]} grad={self.requires_grad}>"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    def __init__(self):
        # one entry per tensor: (tensor, inputs, backward_fn); leaves have no fn
        self._records: list[tuple[Tensor, tuple, Callable | None]] = []
        self._done = False

    def __len__(self):
        return len(self._records)

    def _append(self, value, requires_grad, inputs=(), fn=None, name=None) -> Tensor:
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {value.shape}")
        if CHECK_FINITE and not np.all(np.isfinite(value)):
            raise FloatingPointError(f"non-finite values in {name or 'tensor'}")
        t = Tensor(value, self, len(self._records), requires_grad, name)
        self._records.append((t, tuple(inputs), fn))
        return t

    def variable(self, value, name=None) -> Tensor:
        return self._append(value, True, name=name)

    def constant(self, value, name=None) -> Tensor:
        return self._append(value, False, name=name)

    def record(self, value, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
        needs = any(x.requires_grad for x in inputs)
        return self._append(value, needs, inputs, backward if needs else None)

    def backward(self, loss: Tensor) -> None:
        """Populate ``.grad`` on every tensor upstream of ``loss`` that requires one."""
        if self._done:
            raise RuntimeError("backward() already ran on this tape")
        if loss.tape is not self:
            raise ValueError("loss belongs to a different tape")
        if loss.shape != (1, 1):
            raise ValueError(f"loss must be 1x1, got {loss.shape}")
        self._done = True
        grads: dict[int, np.ndarray] = {loss.index: np.ones((1, 1))}
        for index in range(loss.index, -1, -1):
            g = grads.pop(index, None)
            if g is None:
                continue
            out, inputs, fn = self._records[index]
            out.grad = g
            if fn is None:
                continue
            for x, gx in zip(inputs, fn(g)):
                if gx is None or not x.requires_grad:
                    continue
                if x.index in grads:
                    grads[x.index] = grads[x.index] + gx
                else:
                    grads[x.index] = gx


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Tensor):
            return x.tape
    raise TypeError("at least one operand must be a Tensor")


def _lift(tape: Tape, x) -> Tensor:
    return x if isinstance(x, Tensor) else tape.constant(x)


def _check_shape(cond, msg):
    if not cond:
        raise ValueError(msg)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _check_shape(a.shape[1] == b.shape[0], f"matmul shape mismatch {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return tape.record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a: Tensor) -> Tensor:
    return a.tape.record(a.value.T.copy(), (a,), lambda g: (g.T,))


def add(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _check_shape(a.shape == b.shape, f"add shape mismatch {a.shape} + {b.shape}")
    return tape.record(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _check_shape(a.shape == b.shape, f"sub shape mismatch {a.shape} - {b.shape}")
    return tape.record(a.value - b.value, (a, b), lambda g: (g, -g))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return a.tape.record(c * a.value, (a,), lambda g: (c * g,))


def broadcast_add_bias(a: Tensor, bias) -> Tensor:
    """``a + bias`` with a ``1 x n`` bias row repeated over the rows of ``a``."""
    tape = _tape_of(a, bias)
    a, bias = _lift(tape, a), _lift(tape, bias)
    _check_shape(bias.shape == (1, a.shape[1]), f"bias {bias.shape} does not fit {a.shape}")
    return tape.record(a.value + bias.value, (a, bias), lambda g: (g, g.sum(axis=0, keepdims=True)))


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    tape = _tape_of(*parts)
    parts = [_lift(tape, p) for p in parts]
    rows = parts[0].shape[0]
    _check_shape(all(p.shape[0] == rows for p in parts), "concat_cols needs equal row counts")
    edges = np.cumsum([0] + [p.shape[1] for p in parts])

    def back(g):
        return tuple(g[:, lo:hi] for lo, hi in zip(edges[:-1], edges[1:]))

    return tape.record(np.concatenate([p.value for p in parts], axis=1), parts, back)


def reshape(a: Tensor, shape: tuple[int, int]) -> Tensor:
    """Row-major reshape."""
    old = a.shape
    return a.tape.record(a.value.reshape(shape).copy(), (a,), lambda g: (g.reshape(old),))


def col_slice(a: Tensor, lo: int, hi: int) -> Tensor:
    shape = a.shape

    def back(g):
        ga = np.zeros(shape)
        ga[:, lo:hi] = g
        return (ga,)

    return a.tape.record(a.value[:, lo:hi].copy(), (a,), back)


def row_select(a: Tensor, idx) -> Tensor:
    """Gather rows ``a[idx]``; repeated indices accumulate in the backward pass."""
    idx = np.asarray(idx, dtype=np.int64)
    n = a.shape[0]
    return a.tape.record(a.value[idx], (a,), lambda g: (kernels.scatter_add_rows(g, idx, n),))


def spmm(adj, h) -> Tensor:
    """``adj @ h`` for a constant scipy CSR matrix ``adj``."""
    tape = _tape_of(h)
    h = _lift(tape, h)
    _check_shape(adj.shape[1] == h.shape[0], f"spmm shape mismatch {adj.shape} @ {h.shape}")
    ip, ix, dv = (np.asarray(adj.indptr, np.int64), np.asarray(adj.indices, np.int64),
                  np.asarray(adj.data, np.float64))
    adj_t = adj.T.tocsr()
    adj_t.sort_indices()
    tp, tx, tv = (np.asarray(adj_t.indptr, np.int64), np.asarray(adj_t.indices, np.int64),
                  np.asarray(adj_t.data, np.float64))
    out = kernels.csr_matmat(ip, ix, dv, np.ascontiguousarray(h.value))
    return tape.record(out, (h,), lambda g: (kernels.csr_matmat(tp, tx, tv, np.ascontiguousarray(g)),))


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def leaky_relu(a: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    out, der = kernels.leaky_relu(np.ascontiguousarray(a.value), float(slope))
    return a.tape.record(out, (a,), lambda g: (g * der,))


def elu(a: Tensor, alpha: float = ELU_ALPHA) -> Tensor:
    out, der = kernels.elu(np.ascontiguousarray(a.value), float(alpha))
    return a.tape.record(out, (a,), lambda g: (g * der,))


# ---------------------------------------------------------------------------
# segment reductions (segments given as CSR row pointers)
# ---------------------------------------------------------------------------


def segment_sum(a: Tensor, indptr) -> Tensor:
    indptr = np.asarray(indptr, dtype=np.int64)
    counts = np.diff(indptr)
    out = kernels.segment_sum(np.ascontiguousarray(a.value), indptr)
    return a.tape.record(out, (a,), lambda g: (np.repeat(g, counts, axis=0),))


def segment_mean(a: Tensor, indptr) -> Tensor:
    indptr = np.asarray(indptr, dtype=np.int64)
    counts = np.diff(indptr)
    inv = 1.0 / np.maximum(counts, 1)[:, None]
    out = kernels.segment_sum(np.ascontiguousarray(a.value), indptr) * inv
    return a.tape.record(out, (a,), lambda g: (np.repeat(g * inv, counts, axis=0),))


def segment_max(a: Tensor, indptr) -> Tensor:
    """Column-wise max per segment; the gradient goes to the first maximiser."""
    indptr = np.asarray(indptr, dtype=np.int64)
    out, arg = kernels.segment_max(np.ascontiguousarray(a.value), indptr)
    shape = a.shape

    def back(g):
        ga = np.zeros(shape)
        ok = arg >= 0
        cols = np.broadcast_to(np.arange(shape[1]), arg.shape)
        ga[arg[ok], cols[ok]] = g[ok]
        return (ga,)

    return a.tape.record(out, (a,), back)


def segment_softmax(logits: Tensor, indptr) -> Tensor:
    """Softmax of each column within each segment of rows."""
    indptr = np.asarray(indptr, dtype=np.int64)
    counts = np.diff(indptr)
    s = kernels.segment_softmax(np.ascontiguousarray(logits.value), indptr)

    def back(g):
        inner = kernels.segment_sum(g * s, indptr)
        return (s * (g - np.repeat(inner, counts, axis=0)),)

    return logits.tape.record(s, (logits,), back)


def softmax_rows(a: Tensor) -> Tensor:
    v = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(v)
    s = e / e.sum(axis=1, keepdims=True)
    return a.tape.record(s, (a,), lambda g: (s * (g - (g * s).sum(axis=1, keepdims=True)),))


def head_dot(h: Tensor, att: Tensor) -> Tensor:
    """Per-head score ``out[i, k] = h[i, k*F:(k+1)*F] . att[k]`` for ``att`` of shape ``K x F``."""
    n_heads, width = att.shape
    _check_shape(h.shape[1] == n_heads * width, f"head_dot: {h.shape} vs attention {att.shape}")
    hv, av = h.value, att.value
    blocks = [slice(k * width, (k + 1) * width) for k in range(n_heads)]
    out = np.empty((h.shape[0], n_heads))
    for k, blk in enumerate(blocks):
        out[:, k] = hv[:, blk] @ av[k]

    def back(g):
        dh = np.empty(hv.shape)
        da = np.empty(av.shape)
        for k, blk in enumerate(blocks):
            dh[:, blk] = np.outer(g[:, k], av[k])
            da[k] = g[:, k] @ hv[:, blk]
        return dh, da

    return h.tape.record(out, (h, att), back)


def edge_aggregate(coef: Tensor, h: Tensor, nb) -> Tensor:
    """``out[i] = sum_{e into i} coef[e] * h[src[e]]`` per head block.

    ``coef`` is ``E x K`` and ``h`` is ``N x (K*F)``; ``nb`` is a symmetric
    :class:`gaa.graph.Neighborhoods`.
    """
    n_heads = coef.shape[1]
    _check_shape(coef.shape[0] == nb.n_edges, "edge_aggregate: one coefficient row per edge")
    _check_shape(h.shape[0] == nb.n_nodes and h.shape[1] % n_heads == 0,
                 f"edge_aggregate: features {h.shape} do not fit {nb.n_nodes} nodes / {n_heads} heads")
    cv = np.ascontiguousarray(coef.value)
    hv = np.ascontiguousarray(h.value)
    out = kernels.edge_aggregate(cv, hv, nb.src, nb.indptr, n_heads)

    def back(g):
        g = np.ascontiguousarray(g)
        dcoef = kernels.edge_dot(g, hv, nb.dst, nb.src, n_heads)
        dh = kernels.edge_aggregate(np.ascontiguousarray(cv[nb.rev]), g, nb.src, nb.indptr, n_heads)
        return dcoef, dh

    return coef.tape.record(out, (coef, h), back)


# ---------------------------------------------------------------------------
# reductions and losses
# ---------------------------------------------------------------------------


def total(a: Tensor) -> Tensor:
    shape = a.shape
    return a.tape.record(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def mean(a: Tensor) -> Tensor:
    shape = a.shape
    n = a.value.size
    return a.tape.record(np.array([[a.value.mean()]]), (a,), lambda g: (np.full(shape, g[0, 0] / n),))


def cross_entropy_weighted(logits: Tensor, labels, class_weights) -> Tensor:
    """Mean over rows of ``w[y] * -log softmax(logits)[y]``."""
    labels = np.asarray(labels, dtype=np.int64)
    w = np.asarray(class_weights, dtype=np.float64)[labels]
    _check_shape(logits.shape[0] == labels.size, "one label per logits row")
    v = logits.value
    shift = v - v.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shift).sum(axis=1))
    rows = np.arange(labels.size)
    nll = logz - shift[rows, labels]
    n = labels.size
    # mean of w * nll: with unit weights this is bit-identical to the unweighted mean
    out = np.array([[np.mean(w * nll)]])

    def back(g):
        p = np.exp(shift - logz[:, None])
        p[rows, labels] -= 1.0
        return (g[0, 0] * (w / n)[:, None] * p,)

    return logits.tape.record(out, (logits,), back)


def l2_loss(a, b, indptr=None) -> Tensor:
    """Frobenius norm of ``a - b``, per row-segment when ``indptr`` is given (``S x 1``)."""
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _check_shape(a.shape == b.shape, f"l2_loss shape mismatch {a.shape} vs {b.shape}")
    d = a.value - b.value
    if indptr is None:
        indptr = np.array([0, a.shape[0]], dtype=np.int64)
    indptr = np.asarray(indptr, dtype=np.int64)
    counts = np.diff(indptr)
    sq = kernels.segment_sum(np.ascontiguousarray((d * d).sum(axis=1, keepdims=True)), indptr)
    norm = np.sqrt(sq)
    # the norm is not differentiable at 0; use the zero subgradient there
    inv = np.divide(1.0, norm, out=np.zeros_like(norm), where=norm > 0)

    def back(g):
        ga = np.repeat(g * inv, counts, axis=0) * d
        return ga, -ga

    return tape.record(norm, (a, b), back)
