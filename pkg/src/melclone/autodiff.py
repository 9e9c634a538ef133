"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ndarray and records, per op, vector-Jacobian
closures against its parents.  ``backward()`` walks the tape in reverse
topological order.  The op set is exactly what the model needs: broadcasted
arithmetic, matmul, reshape/transpose, reductions, relu/abs/exp/sqrt,
same-padded 1-D convolution, embedding lookup, time-axis gather, and a
masked softmax.  Everything runs in the dtype of its inputs; tests use
float64, training may use float32.
"""

from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NonFiniteError, ShapeError

_grad_enabled = True
check_finite = False


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (inference / evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_vjps")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf", vjps=()):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self._vjps = vjps

    # -- basics ------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, op="detach")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate gradients of ``self`` into every reachable leaf."""
        if grad is None:
            grad = np.ones_like(self.data)
        order, visited, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent, _ in node._vjps:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(order):
            g = node.grad
            if g is None:
                continue
            for parent, vjp in node._vjps:
                if parent.requires_grad:
                    contrib = vjp(g)
                    parent.grad = contrib if parent.grad is None else parent.grad + contrib


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype), op="const")


def _make(data: np.ndarray, op: str, vjps) -> Tensor:
    if check_finite and not np.isfinite(data).all():
        raise NonFiniteError(op)
    if not _grad_enabled:
        return Tensor(data, requires_grad=False, op=op)
    vjps = tuple((p, fn) for p, fn in vjps if p.requires_grad)
    return Tensor(data, requires_grad=bool(vjps), op=op, vjps=vjps)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- arithmetic --------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    b = _wrap(b, a.dtype)
    return _make(
        a.data + b.data,
        "add",
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(g, b.shape))],
    )


def sub(a: Tensor, b) -> Tensor:
    b = _wrap(b, a.dtype)
    return _make(
        a.data - b.data,
        "sub",
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(-g, b.shape))],
    )


def mul(a: Tensor, b) -> Tensor:
    b = _wrap(b, a.dtype)
    return _make(
        a.data * b.data,
        "mul",
        [
            (a, lambda g: _unbroadcast(g * b.data, a.shape)),
            (b, lambda g: _unbroadcast(g * a.data, b.shape)),
        ],
    )


def div(a: Tensor, b) -> Tensor:
    b = _wrap(b, a.dtype)
    out = a.data / b.data
    return _make(
        out,
        "div",
        [
            (a, lambda g: _unbroadcast(g / b.data, a.shape)),
            (b, lambda g: _unbroadcast(-g * out / b.data, b.shape)),
        ],
    )


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, "sqrt", [(a, lambda g: g * (0.5 / out))])


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, "exp", [(a, lambda g: g * out)])


def absolute(a: Tensor) -> Tensor:
    if sign_log is not None:
        sign_log.append(np.packbits((a.data > 0).ravel()).tobytes())
    return _make(np.abs(a.data), "abs", [(a, lambda g: g * np.sign(a.data))])


relu_kink_log: list | None = None  # when a list, collects min |pre-activation| per relu
sign_log: list | None = None  # when a list, collects relu/abs sign patterns


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0
    if relu_kink_log is not None:
        relu_kink_log.append(float(np.min(np.abs(a.data))))
    if sign_log is not None:
        sign_log.append(np.packbits(keep.ravel()).tobytes())
    return _make(np.where(keep, a.data, 0.0), "relu", [(a, lambda g: g * keep)])


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, "square", [(a, lambda g: g * (2.0 * a.data))])


# -- structure ----------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), "reshape", [(a, lambda g: g.reshape(old))])


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), "transpose", [(a, lambda g: g.transpose(inv))])


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.shape).astype(a.dtype, copy=False)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape).astype(a.dtype, copy=False)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), "sum", [(a, vjp)])


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod(
        [a.shape[ax] for ax in np.atleast_1d(axis)]
    )
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must have at least 2 dims")

    def vjp_a(g):
        return _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)

    def vjp_b(g):
        return _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)

    return _make(np.matmul(a.data, b.data), "matmul", [(a, vjp_a), (b, vjp_b)])


# -- network-specific ops ------------------------------------------------------

def _im2col(xdata: np.ndarray, kernel: int) -> np.ndarray:
    b, c, t = xdata.shape
    pad = (kernel - 1) // 2
    xp = np.pad(xdata, ((0, 0), (0, 0), (pad, pad)))
    win = sliding_window_view(xp, kernel, axis=2)  # (B, C, T, K)
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(b, c * kernel, t)


def _conv_raw(xdata: np.ndarray, wdata: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c_out, c_in, kernel = wdata.shape
    patches = _im2col(xdata, kernel)
    return np.matmul(wdata.reshape(c_out, c_in * kernel), patches), patches


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Same-padded cross-correlation over the last axis.

    ``x`` is (B, C_in, T), ``w`` is (C_out, C_in, K) with K odd, ``b`` is
    (C_out,).  Output is (B, C_out, T).
    """
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d expects 3-D input/weight, got {x.shape} and {w.shape}")
    c_out, c_in, kernel = w.shape
    if kernel % 2 != 1:
        raise ShapeError(f"conv1d kernel must be odd, got {kernel}")
    if x.shape[1] != c_in:
        raise ShapeError(f"conv1d channel mismatch: input has {x.shape[1]}, weight wants {c_in}")

    out, patches = _conv_raw(x.data, w.data)

    def vjp_x(g):
        flipped = np.ascontiguousarray(w.data.transpose(1, 0, 2)[:, :, ::-1])
        return _conv_raw(g, flipped)[0]

    def vjp_w(g):
        bsz, _, t = g.shape
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(c_out, bsz * t)
        p2 = np.ascontiguousarray(patches.transpose(1, 0, 2)).reshape(c_in * kernel, bsz * t)
        return (g2 @ p2.T).reshape(c_out, c_in, kernel)

    vjps = [(x, vjp_x), (w, vjp_w)]
    if b is not None:
        out = out + b.data[None, :, None]
        vjps.append((b, lambda g: g.sum(axis=(0, 2))))
    return _make(out, "conv1d", vjps)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: (V, D) table gathered by an integer (B, P) id array -> (B, P, D)."""
    ids = np.asarray(ids)

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return gt

    return _make(table.data[ids], "embedding", [(table, vjp)])


def gather_time(x: Tensor, idx: np.ndarray) -> Tensor:
    """out[b, :, t] = x[b, :, idx[b, t]] — the length-regulator primitive."""
    idx = np.asarray(idx)
    if x.ndim != 3 or idx.ndim != 2 or idx.shape[0] != x.shape[0]:
        raise ShapeError(f"gather_time expects (B,C,P) and (B,T), got {x.shape}, {idx.shape}")
    idx3 = idx[:, None, :]

    def vjp(g):
        gx = np.zeros_like(x.data)
        bsz, chans, t = g.shape
        bi = np.arange(bsz)[:, None, None]
        ci = np.arange(chans)[None, :, None]
        np.add.at(gx, (bi, ci, np.broadcast_to(idx3, g.shape)), g)
        return gx

    return _make(np.take_along_axis(x.data, np.broadcast_to(idx3, (x.shape[0], x.shape[1], idx.shape[1])), axis=2), "gather_time", [(x, vjp)])


def masked_softmax(logits: Tensor, mask: np.ndarray | None = None, axis: int = -1) -> Tensor:
    """Softmax along ``axis``; positions where ``mask`` is 0 get zero weight.

    Rows that are entirely masked come out as all-zero (no NaNs); callers
    mask those rows downstream.
    """
    z = logits.data
    if mask is None:
        keep = np.ones_like(z, dtype=bool)
    else:
        keep = np.broadcast_to(np.asarray(mask) > 0, z.shape)
    z = np.where(keep, z, np.float64(-1e30).astype(z.dtype))
    e = np.exp(z - z.max(axis=axis, keepdims=True)) * keep
    denom = e.sum(axis=axis, keepdims=True)
    p = e / np.maximum(denom, np.finfo(z.dtype).tiny)

    def vjp(g):
        return p * (g - (g * p).sum(axis=axis, keepdims=True))

    return _make(p, "masked_softmax", [(logits, vjp)])
