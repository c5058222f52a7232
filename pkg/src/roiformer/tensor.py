"""Dense float64 tensors with reverse-mode automatic differentiation.

Each operation records its inputs and a backward closure on the output node;
``backward`` on a scalar loss topologically sorts the recorded graph and
visits every node exactly once in reverse order, accumulating (summing)
gradients into every ``requires_grad`` leaf.  All forward results are checked
for NaN/Inf: an operation that produces non-finite values from finite inputs
raises instead of propagating silently.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from . import kernels


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


class NumericsError(ArithmeticError):
    """An operation produced NaN/Inf, or received values it cannot accept."""


class DegenerateMaskError(ValueError):
    """A softmax row was masked everywhere (over-aggressive mask upstream)."""


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _guard_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericsError(f"non-finite values produced by '{op}'")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.op = "leaf"

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple["Tensor", ...], op: str,
                 check: bool = True) -> "Tensor":
        if check:
            _guard_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        out._parents = parents if out.requires_grad else ()
        out._backward = None
        out.op = op
        return out

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> np.ndarray:
        return self.data.copy()

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic -------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor._from_op(a.data + b.data, (a, b), "add")

    def _bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    out._backward = _bwd
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor._from_op(a.data - b.data, (a, b), "sub")

    def _bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    out._backward = _bwd
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor._from_op(a.data * b.data, (a, b), "mul")

    def _bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    out._backward = _bwd
    return out


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor._from_op(-a.data, (a,), "neg")

    def _bwd(g):
        if a.requires_grad:
            a._accumulate(-g)

    out._backward = _bwd
    return out


# -- linear algebra ----------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.data.shape} x {b.data.shape}")
    out = Tensor._from_op(a.data @ b.data, (a, b), "matmul")

    def _bwd(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    out._backward = _bwd
    return out


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got {a.data.shape}")
    out = Tensor._from_op(a.data.T.copy(), (a,), "transpose")

    def _bwd(g):
        if a.requires_grad:
            a._accumulate(g.T)

    out._backward = _bwd
    return out


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor._from_op(a.data.reshape(shape).copy(), (a,), "reshape")

    def _bwd(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    out._backward = _bwd
    return out


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along ``axis``."""
    a = as_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor._from_op(a.data[idx].copy(), (a,), "narrow")

    def _bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            a._accumulate(full)

    out._backward = _bwd
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    out = Tensor._from_op(np.concatenate([p.data for p in parts], axis=axis),
                          tuple(parts), "concat")
    sizes = [p.data.shape[axis] for p in parts]

    def _bwd(g):
        offset = 0
        for p, n in zip(parts, sizes):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offset, offset + n)
                p._accumulate(g[tuple(idx)])
            offset += n

    out._backward = _bwd
    return out


# -- reductions --------------------------------------------------------------


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor._from_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), "sum")

    def _bwd(g):
        if a.requires_grad:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    out._backward = _bwd
    return out


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    out = Tensor._from_op(a.data.mean(axis=axis, keepdims=keepdims), (a,), "mean")

    def _bwd(g):
        if a.requires_grad:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.data.shape) / count)

    out._backward = _bwd
    return out


def global_avg_pool(a, axis: int = -1) -> Tensor:
    """Mean over one axis, dropping it (sequence pooling)."""
    return reduce_mean(a, axis=axis)


# -- nonlinearities ----------------------------------------------------------


def gelu(a) -> Tensor:
    """Exact-erf form x * Phi(x)."""
    a = as_tensor(a)
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    out = Tensor._from_op(a.data * cdf, (a,), "gelu")

    def _bwd(g):
        if a.requires_grad:
            pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT2PI
            a._accumulate(g * (cdf + a.data * pdf))

    out._backward = _bwd
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = np.empty_like(a.data)
    pos = a.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor._from_op(y, (a,), "sigmoid")

    def _bwd(g):
        if a.requires_grad:
            a._accumulate(g * y * (1.0 - y))

    out._backward = _bwd
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)
    out = Tensor._from_op(data, (a,), "log")

    def _bwd(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    out._backward = _bwd
    return out


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only through unclamped entries."""
    a = as_tensor(a)
    out = Tensor._from_op(np.clip(a.data, lo, hi), (a,), "clip")
    passthrough = (a.data >= lo) & (a.data <= hi)

    def _bwd(g):
        if a.requires_grad:
            a._accumulate(g * passthrough)

    out._backward = _bwd
    return out


# -- softmax and normalization ----------------------------------------------


def softmax_rows(a, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax of a 2-D tensor with per-row max subtraction.

    ``mask``, when given, is a constant additive matrix of {0, -inf} applied
    to the scores before normalization; masked positions get exactly zero
    weight.  A row that is -inf everywhere raises ``DegenerateMaskError``.
    """
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"softmax_rows expects a 2-D tensor, got {a.data.shape}")
    z = a.data
    if np.any(np.isnan(z)) or np.any(z == np.inf):
        raise NumericsError("softmax_rows input contains NaN or +inf")
    if mask is not None:
        if mask.shape != z.shape:
            raise ShapeError(f"mask shape {mask.shape} does not match scores {z.shape}")
        z = z + mask
    row_max = z.max(axis=1, keepdims=True)
    dead = ~np.isfinite(row_max)
    if np.any(dead):
        rows = np.nonzero(dead.ravel())[0].tolist()
        raise DegenerateMaskError(f"softmax rows fully masked: {rows}")
    ez = np.exp(z - row_max)
    y = ez / ez.sum(axis=1, keepdims=True)
    out = Tensor._from_op(y, (a,), "softmax_rows")

    def _bwd(g):
        if a.requires_grad:
            inner = (g * y).sum(axis=1, keepdims=True)
            a._accumulate((g - inner) * y)

    out._backward = _bwd
    return out


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.data.shape}/{beta.data.shape} "
            f"do not match last extent {d}")
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor._from_op(xhat * gamma.data + beta.data, (x, gamma, beta), "layer_norm")

    def _bwd(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gy = g * gamma.data
            term = gy - gy.mean(axis=-1, keepdims=True) \
                - xhat * (gy * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(term * inv)

    out._backward = _bwd
    return out


# -- convolution and pooling --------------------------------------------------


def _conv_pads(length: int, k: int, stride: int, padding: str) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    if padding == "same":
        l_out = -(-length // stride)  # ceil
        total = max((l_out - 1) * stride + k - length, 0)
        left = total // 2
        return left, total - left
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv1d(x, filters, stride: int = 1, padding: str = "same") -> Tensor:
    """Cross-correlation along the last axis.

    ``x`` is ``(C_in, L)`` or batched ``(N, C_in, L)``; ``filters`` is
    ``(C_out, C_in, K)``.  Output length follows standard same/valid
    arithmetic for the given stride.
    """
    x, filters = as_tensor(x), as_tensor(filters)
    if stride < 1:
        raise ValueError("conv1d stride must be >= 1")
    squeeze = x.data.ndim == 2
    xb = x.data[None] if squeeze else x.data
    if xb.ndim != 3 or filters.data.ndim != 3:
        raise ShapeError(f"conv1d expects (N,C,L) x (C_out,C_in,K), got "
                         f"{x.data.shape} and {filters.data.shape}")
    if xb.shape[1] != filters.data.shape[1]:
        raise ShapeError(f"conv1d channel mismatch: input {x.data.shape} "
                         f"vs filters {filters.data.shape}")
    length, k = xb.shape[2], filters.data.shape[2]
    left, right = _conv_pads(length, k, stride, padding)
    if length + left + right < k:
        raise ShapeError(f"kernel size {k} exceeds padded input length "
                         f"{length + left + right}")
    xp = np.pad(xb, ((0, 0), (0, 0), (left, right))) if (left or right) else xb
    data = kernels.conv1d_forward(xp, filters.data, stride)
    out = Tensor._from_op(data[0] if squeeze else data, (x, filters), "conv1d")

    def _bwd(g):
        gb = g[None] if squeeze else g
        dx_pad, dw = kernels.conv1d_backward(np.ascontiguousarray(gb), xp,
                                             filters.data, stride)
        if x.requires_grad:
            dx = dx_pad[:, :, left : left + length]
            x._accumulate(dx[0] if squeeze else dx)
        if filters.requires_grad:
            filters._accumulate(dw)

    out._backward = _bwd
    return out


def avg_pool1d(x, window: int, stride: int | None = None) -> Tensor:
    """Per-channel mean over sliding windows; a trailing remainder shorter
    than the window is dropped."""
    x = as_tensor(x)
    stride = window if stride is None else stride
    length = x.data.shape[-1]
    if window > length:
        raise ShapeError(f"pool window {window} exceeds input length {length}")
    if window < 1 or stride < 1:
        raise ValueError("pool window and stride must be >= 1")
    l_out = (length - window) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x.data, window, axis=-1)[..., ::stride, :]
    out = Tensor._from_op(win.mean(axis=-1), (x,), "avg_pool1d")

    def _bwd(g):
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            share = g / window
            for s in range(l_out):
                lo = s * stride
                dx[..., lo : lo + window] += share[..., s : s + 1]
            x._accumulate(dx)

    out._backward = _bwd
    return out


def dropout(x, p: float, mode: str, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: train mode zeroes elements with probability ``p``
    and scales survivors by 1/(1-p); eval mode is the identity."""
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if mode == "eval":
        return x
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if rng is None:
        raise ValueError("train-mode dropout requires an rng stream")
    keep = rng.random(x.data.shape) >= p
    scale = 1.0 / (1.0 - p)
    out = Tensor._from_op(x.data * keep * scale, (x,), "dropout")

    def _bwd(g):
        if x.requires_grad:
            x._accumulate(g * keep * scale)

    out._backward = _bwd
    return out


# -- reverse pass -------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable ``requires_grad`` tensor.

    Gradients sum over fan-out.  ``loss`` must be a scalar (one element).
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
