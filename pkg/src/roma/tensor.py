"""Dense tensors with tape-based reverse-mode differentiation.

Only the small, fixed op set used by the losses, encoder and trainer is
supported. Shapes are checked strictly: there is no general broadcasting,
only the explicit row-broadcast helpers ``add_row`` and ``mul_row``.

Every op that produces a tensor from gradient-participating inputs records a
node holding its parents and a backward closure. Nodes get monotonically
increasing ids at creation, so sorting reachable nodes by id reproduces the
recording order of the tape; ``backward`` walks it in reverse.
"""

from __future__ import annotations

import itertools
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import BatchSizeError, ContractError, DimensionError, NumericError

_ids = itertools.count()

DTYPES = {"float64": np.float64, "float32": np.float32}


class Tensor:
    """A numpy array plus the bookkeeping needed to differentiate through it."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_id", "op", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float64
        self.data = np.array(data, dtype=dtype, copy=True) if not isinstance(data, np.ndarray) \
            else np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._id = next(_ids)
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def check_finite(self, what: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"non-finite values in {what}")
        return self

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    __add__ = lambda self, other: add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)
    __radd__ = lambda self, other: add_scalar(self, other)
    __sub__ = lambda self, other: sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)
    __rsub__ = lambda self, other: add_scalar(scale(self, -1.0), other)
    __mul__ = lambda self, other: mul(self, other) if isinstance(other, Tensor) else scale(self, other)
    __rmul__ = lambda self, other: scale(self, other)
    __neg__ = lambda self: scale(self, -1.0)
    __matmul__ = lambda self, other: matmul(self, other)
    __truediv__ = lambda self, c: scale(self, 1.0 / c)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _record(data: np.ndarray, parents: tuple, backward_fn, op: str) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward() on a tensor that was not recorded")

    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t._id in nodes:
            continue
        nodes[t._id] = t
        for p in t._parents:
            if p.requires_grad and p._id not in nodes:
                stack.append(p)

    grads = {loss._id: np.ones_like(loss.data)}
    for nid in sorted(nodes, reverse=True):
        t = nodes[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        if t.is_leaf:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for parent, pg in zip(t._parents, t._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg


# -- elementwise and linear ops ------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    ga, gb = a.requires_grad, b.requires_grad
    return _record(ad @ bd, (a, b),
                   lambda g: (g @ bd.T if ga else None, ad.T @ g if gb else None), "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _record(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _record(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record(a.data * a.data.dtype.type(c), (a,), lambda g: (g * c,), "scale")


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _record(a.data + a.data.dtype.type(c), (a,), lambda g: (g,), "add_scalar")


def add_row(x: Tensor, b: Tensor) -> Tensor:
    """x[n, d] + b[d], the bias pattern."""
    if x.ndim != 2 or b.shape != (x.shape[1],):
        raise DimensionError(f"add_row: {x.shape} and {b.shape}")
    return _record(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)), "add_row")


def mul_row(x: Tensor, s: Tensor) -> Tensor:
    """x[n, d] * s[d], column-wise scaling."""
    if x.ndim != 2 or s.shape != (x.shape[1],):
        raise DimensionError(f"mul_row: {x.shape} and {s.shape}")
    xd, sd = x.data, s.data
    return _record(xd * sd, (x, s), lambda g: (g * sd, (g * xd).sum(axis=0)), "mul_row")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _record(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _record(np.log(xd), (x,), lambda g: (g / xd,), "log")


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the derivative at exactly 0 is taken as 0."""
    mask = x.data > 0
    return _record(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


hinge = relu


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    # x == 0 takes the negative branch for the derivative
    xd = x.data
    pos = xd > 0
    s = xd.dtype.type(slope)

    def bw(g):
        # exactly 1 or exactly s; a dense multiply is far cheaper than a masked copy
        d = pos.astype(xd.dtype)
        d += (~pos).astype(xd.dtype) * s
        return (g * d,)

    # for slope <= 1 the larger of x and slope * x is the leaky branch value
    pick_ = np.maximum if slope <= 1 else np.minimum
    return _record(pick_(xd, xd * s), (x,), bw, "leaky_relu")


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError("transpose needs a 2-d tensor")
    return _record(np.ascontiguousarray(x.data.T), (x,), lambda g: (g.T,), "transpose")


def stop_gradient(x: Tensor) -> Tensor:
    """Identity forward; nothing flows back to ``x``."""
    out = Tensor(x.data.copy(), dtype=x.dtype)
    out.op = "stop_gradient"
    return out


# -- reductions ----------------------------------------------------------------

def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = x.shape
    if axis is None:
        return _record(np.asarray(x.data.sum()), (x,),
                       lambda g: (np.broadcast_to(g, shape).copy(),), "sum")
    y = x.data.sum(axis=axis)
    return _record(y, (x,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),), "sum")


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return scale(sum(x, axis), 1.0 / n)


def rowdot(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise inner products of two n x d tensors, shape (n,)."""
    return sum(mul(a, b), axis=1)


def logsumexp(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise log-sum-exp of a 2-d tensor with max subtraction.

    ``mask`` (same shape, boolean) selects which entries take part; masked-out
    entries contribute nothing and get zero gradient.
    """
    if x.ndim != 2:
        raise DimensionError("logsumexp needs a 2-d tensor")
    xd = x.data
    if mask is None:
        mask = np.ones(xd.shape, dtype=bool)
    elif mask.shape != xd.shape:
        raise DimensionError(f"logsumexp mask {mask.shape} vs {xd.shape}")
    if not mask.any(axis=1).all():
        raise ContractError("logsumexp: a row has no active entries")
    neg = np.asarray(-np.inf, dtype=xd.dtype)
    m = np.where(mask, xd, neg).max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(np.where(mask, xd - m, 0)), 0).astype(xd.dtype)
    s = e.sum(axis=1, keepdims=True)
    y = (m + np.log(s))[:, 0]
    soft = e / s
    return _record(y, (x,), lambda g: (g[:, None] * soft,), "logsumexp")


# -- indexing ------------------------------------------------------------------

def take_rows(x: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    shape = x.shape

    def bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, idx, g)
        return (out,)

    return _record(x.data[idx], (x,), bw, "take_rows")


def pick(x: Tensor, rows, cols) -> Tensor:
    """Gather x[rows[k], cols[k]] into a 1-d tensor."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    shape = x.shape

    def bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, (rows, cols), g)
        return (out,)

    return _record(x.data[rows, cols], (x,), bw, "pick")


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    shape = x.shape

    def bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[start:stop] = g
        return (out,)

    return _record(x.data[start:stop], (x,), bw, "slice_rows")


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    cols = {p.shape[1:] for p in parts}
    if len(cols) != 1:
        raise DimensionError(f"concat_rows: inconsistent trailing shapes {cols}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])
    data = np.concatenate([p.data for p in parts], axis=0)
    return _record(data, tuple(parts),
                   lambda g: tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts))), "concat_rows")


# -- normalization -------------------------------------------------------------

def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Divide each row by max(||row||_2, eps)."""
    if eps <= 0:
        raise ContractError("l2_normalize: eps must be positive")
    if x.ndim == 1:
        return reshape(_l2_rows(reshape(x, (1, x.shape[0])), eps), x.shape)
    return _l2_rows(x, eps)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    old = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def _l2_rows(x: Tensor, eps: float) -> Tensor:
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=1, keepdims=True))
    clipped = norm > eps
    denom = np.where(clipped, norm, eps).astype(xd.dtype)
    y = xd / denom

    def bw(g):
        proj = (g * y).sum(axis=1, keepdims=True)
        return (np.where(clipped, (g - y * proj) / denom, g / denom),)

    return _record(y, (x,), bw, "l2_normalize")


def batch_standardize(x: Tensor, eps: float) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """(x - mean) / sqrt(var + eps) with biased batch statistics.

    Returns the standardized tensor and the batch mean and biased variance.
    """
    n = x.shape[0]
    xd = x.data
    mu = xd.mean(axis=0)
    xc = xd - mu
    var = (xc * xc).mean(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g):
        gm = g.mean(axis=0)
        gx = (g * xhat).mean(axis=0)
        return ((g - gm - xhat * gx) * inv,)

    return _record(xhat.astype(xd.dtype), (x,), bw, "batch_standardize"), mu, var


def fixed_standardize(x: Tensor, mean_: np.ndarray, var: np.ndarray, eps: float) -> Tensor:
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    return _record((x.data - mean_.astype(x.dtype)) * inv, (x,), lambda g: (g * inv,), "fixed_standardize")


class BatchNorm:
    """Per-feature batch normalization with an affine transform.

    Train mode normalizes with biased batch statistics and updates the running
    estimates by an exponential moving average (the running variance uses the
    unbiased batch estimate). Eval mode uses the running estimates only.
    """

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float64):
        self.dim = dim
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(dim, dtype=dtype)
        self.running_var = np.ones(dim, dtype=dtype)

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        return batch_norm(x, self, mode)


def batch_norm(x: Tensor, bn: BatchNorm, mode: str = "train") -> Tensor:
    if x.ndim != 2 or x.shape[1] != bn.dim:
        raise DimensionError(f"batch_norm: expected (n, {bn.dim}), got {x.shape}")
    if mode == "train":
        n = x.shape[0]
        if n < 2:
            raise BatchSizeError(f"batch_norm in train mode needs at least 2 rows, got {n}")
        xhat, mu, var = batch_standardize(x, bn.eps)
        m = bn.momentum
        bn.running_mean = ((1 - m) * bn.running_mean + m * mu).astype(bn.running_mean.dtype)
        bn.running_var = ((1 - m) * bn.running_var + m * var * n / (n - 1)).astype(bn.running_var.dtype)
    elif mode == "eval":
        xhat = fixed_standardize(x, bn.running_mean, bn.running_var, bn.eps)
    else:
        raise ContractError(f"unknown batch_norm mode {mode!r}")
    return add_row(mul_row(xhat, bn.gamma), bn.beta)


def stack_cols(cols: Sequence[Tensor]) -> Tensor:
    """Stack k tensors of shape (n,) into an (n, k) tensor."""
    shapes = {c.shape for c in cols}
    if len(shapes) != 1 or cols[0].ndim != 1:
        raise DimensionError(f"stack_cols: need equal 1-d shapes, got {shapes}")
    data = np.stack([c.data for c in cols], axis=1)
    return _record(data, tuple(cols), lambda g: tuple(g[:, i].copy() for i in range(len(cols))), "stack_cols")
