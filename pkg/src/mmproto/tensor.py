"""Minimal dense-tensor library with reverse-mode automatic differentiation.

Tensors wrap numpy arrays (float32 by default, float64 available for
gradient checking). Every differentiable op links its output to its
parents, so each forward pass records an implicit tape: backward() walks
the graph in reverse topological order and accumulates exactly one
gradient array per requires_grad node. Non-finite forward values are an
error state and raise NumericError immediately.

Tensors are immutable after construction. Independent graphs can run in
parallel threads; a single graph's forward/backward is single-threaded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    DimensionError,
    NumericError,
    UndefinedSimilarityError,
    UsageError,
)

DEFAULT_DTYPE = np.float32

Array = np.ndarray


class Tensor:
    """One node of the autodiff graph.

    Leaf tensors hold data (and optionally require gradients); op outputs
    additionally hold references to their parents and per-parent gradient
    closures. ``grad`` is populated by backward().
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fns", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        keep = (isinstance(data, np.ndarray)
                and data.dtype in (np.float32, np.float64))
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not keep:
            arr = arr.astype(DEFAULT_DTYPE)
        if not np.isfinite(arr).all():
            raise NumericError("tensor constructed with non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fns: tuple[Callable[[Array], Array], ...] = ()
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # operator sugar; scalars and arrays are promoted to constant tensors
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self.dtype))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=dtype)


def _result(data: Array, op: str, parents: Sequence[Tensor],
            grad_fns: Sequence[Callable[[Array], Array] | None]) -> Tensor:
    """Wrap an op output, registering parent links for the tape."""
    if not np.isfinite(data).all():
        raise NumericError(f"non-finite values produced by op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    if out.requires_grad:
        out._parents = tuple(parents)
        out._grad_fns = tuple(grad_fns)
    else:
        out._parents = ()
        out._grad_fns = ()
    out._op = op
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcasted gradient back down to the parent's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise ops (broadcasting)
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    return _result(
        a.data + b.data, "add", (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _result(
        a.data - b.data, "sub", (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _result(
        a.data * b.data, "mul", (a, b),
        (lambda g: _unbroadcast(g * b.data, a.shape),
         lambda g: _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        data = a.data / b.data
    return _result(
        data, "div", (a, b),
        (lambda g: _unbroadcast(g / b.data, a.shape),
         lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
    )


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    return _result(x.data * np.asarray(s, dtype=x.dtype), "scale", (x,),
                   (lambda g: g * s,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0).astype(x.dtype, copy=False),
                   "relu", (x,), (lambda g: g * mask,))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(x.data)
    return _result(y, "exp", (x,), (lambda g: g * y,))


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(x.data)
    return _result(y, "log", (x,), (lambda g: g / x.data,))


def sqrt(x: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        y = np.sqrt(x.data)
    return _result(y, "sqrt", (x,), (lambda g: g * 0.5 / y,))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d)))).astype(d.dtype)
    return _result(y, "sigmoid", (x,), (lambda g: g * y * (1.0 - y),))


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    return _result(x.data.reshape(shape), "reshape", (x,),
                   (lambda g: g.reshape(x.shape),))


def transpose(x: Tensor) -> Tensor:
    """2-D transpose."""
    if x.data.ndim != 2:
        raise DimensionError(f"transpose expects a 2-D tensor, got shape {x.shape}")
    return _result(np.ascontiguousarray(x.data.T), "transpose", (x,),
                   (lambda g: g.T,))


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    data = np.ascontiguousarray(np.broadcast_to(x.data, shape))
    return _result(data, "broadcast_to", (x,),
                   (lambda g: _unbroadcast(g, x.shape),))


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    if not (0 <= start and start + length <= x.shape[axis]):
        raise DimensionError(
            f"narrow [{start}:{start + length}) out of range for axis {axis} "
            f"of shape {x.shape}")
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def grad_fn(g: Array) -> Array:
        full = np.zeros(x.shape, dtype=g.dtype)
        full[index] = g
        return full

    return _result(np.ascontiguousarray(x.data[index]), "narrow", (x,), (grad_fn,))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise UsageError("concat of an empty tensor list")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def make_grad_fn(i: int) -> Callable[[Array], Array]:
        return lambda g: np.split(g, offsets, axis=axis)[i]

    return _result(data, "concat", tensors,
                   [make_grad_fn(i) for i in range(len(tensors))])


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    axes = tuple(a % ndim for a in axis)
    if len(set(axes)) != len(axes):
        raise UsageError(f"duplicate reduction axes {axis}")
    return axes


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.data.ndim)
    data = x.data.sum(axis=axes, keepdims=keepdims)

    def grad_fn(g: Array) -> Array:
        g_shaped = g
        if not keepdims:
            for a in sorted(axes):
                g_shaped = np.expand_dims(g_shaped, a)
        return np.ascontiguousarray(np.broadcast_to(g_shaped, x.shape))

    return _result(np.asarray(data), "sum", (x,), (grad_fn,))


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.data.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    return scale(sum_(x, axis=axes, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul expects 2-D tensors, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul inner extents differ: {a.shape} x {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        product = a.data @ b.data
    return _result(
        product, "matmul", (a, b),
        (lambda g: g @ b.data.T, lambda g: a.data.T @ g),
    )


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Row-max-stabilized softmax along one axis."""
    axis = axis % x.data.ndim if x.data.ndim else 0
    if x.data.ndim == 0:
        raise UsageError("softmax of a 0-d tensor")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g: Array) -> Array:
        dot = (g * y).sum(axis=axis, keepdims=True)
        return y * (g - dot)

    return _result(y, "softmax", (x,), (grad_fn,))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = axis % x.data.ndim if x.data.ndim else 0
    if x.data.ndim == 0:
        raise UsageError("log_softmax of a 0-d tensor")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse

    def grad_fn(g: Array) -> Array:
        return g - np.exp(y) * g.sum(axis=axis, keepdims=True)

    return _result(y, "log_softmax", (x,), (grad_fn,))


# ---------------------------------------------------------------------------
# norms and similarities
# ---------------------------------------------------------------------------

def l2_norm(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return sqrt(sum_(mul(x, x), axis=axis, keepdims=keepdims))


def sq_distance(a: Tensor, b: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Squared L2 distance, summed over `axis` (all axes by default)."""
    d = sub(a, b)
    return sum_(mul(d, d), axis=axis, keepdims=keepdims)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two vectors: dot(a,b) / (|a| |b|).

    Raises UndefinedSimilarityError on a zero-norm input rather than
    silently returning 0.
    """
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise DimensionError(
            f"cosine_similarity expects vectors, got {a.shape} and {b.shape}")
    if a.shape != b.shape:
        raise DimensionError(
            f"cosine_similarity shape mismatch: {a.shape} vs {b.shape}")
    if float(np.linalg.norm(a.data)) == 0.0 or float(np.linalg.norm(b.data)) == 0.0:
        raise UndefinedSimilarityError("cosine similarity of a zero-norm vector")
    dot = sum_(mul(a, b))
    return div(dot, mul(l2_norm(a), l2_norm(b)))


# ---------------------------------------------------------------------------
# multi-head attention
# ---------------------------------------------------------------------------

@dataclass
class MhaParams:
    """Projection weights for multi-head attention (no biases).

    w_q/w_k/w_v: (d_in, d_model); w_o: (d_model, d_out). `heads` must
    divide d_model.
    """
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    heads: int

    def __post_init__(self):
        d_model = self.w_q.shape[1]
        if d_model % self.heads != 0:
            raise ConfigurationError(
                f"heads={self.heads} does not divide model width {d_model}")

    @property
    def d_model(self) -> int:
        return self.w_q.shape[1]

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        return [("w_q", self.w_q), ("w_k", self.w_k),
                ("w_v", self.w_v), ("w_o", self.w_o)]


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int,
                dtype=DEFAULT_DTYPE, zero: bool = False) -> Tensor:
    """Trainable weight matrix, uniform in +-1/sqrt(fan_in) (or zeros)."""
    if zero:
        w = np.zeros((fan_in, fan_out))
    else:
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    return Tensor(w.astype(dtype), requires_grad=True)


def init_mha(rng: np.random.Generator, d_in: int, d_model: int, d_out: int,
             heads: int, dtype=DEFAULT_DTYPE, zero_output: bool = False) -> MhaParams:
    return MhaParams(
        w_q=init_linear(rng, d_in, d_model, dtype),
        w_k=init_linear(rng, d_in, d_model, dtype),
        w_v=init_linear(rng, d_in, d_model, dtype),
        w_o=init_linear(rng, d_model, d_out, dtype, zero=zero_output),
        heads=heads,
    )


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, params: MhaParams,
                         return_weights: bool = False):
    """Scaled dot-product attention with `params.heads` heads.

    q: (s_q, d_in), k/v: (s_k, d_in) -> (s_q, d_out). Per head the scores
    are scaled by 1/sqrt(d_model/heads); the per-query attention weights
    form a simplex over the s_k key rows.
    """
    if k.shape != v.shape:
        raise DimensionError(f"key/value shape mismatch: {k.shape} vs {v.shape}")
    if q.shape[1] != k.shape[1]:
        raise DimensionError(
            f"query width {q.shape[1]} differs from key width {k.shape[1]}")
    heads = params.heads
    d_model = params.d_model
    d_head = d_model // heads
    inv_scale = 1.0 / math.sqrt(d_head)

    q_proj = matmul(q, params.w_q)   # (s_q, d_model)
    k_proj = matmul(k, params.w_k)   # (s_k, d_model)
    v_proj = matmul(v, params.w_v)   # (s_k, d_model)

    head_outputs = []
    head_weights = []
    for h in range(heads):
        qh = narrow(q_proj, 1, h * d_head, d_head)
        kh = narrow(k_proj, 1, h * d_head, d_head)
        vh = narrow(v_proj, 1, h * d_head, d_head)
        weights = softmax(scale(matmul(qh, transpose(kh)), inv_scale), axis=1)
        head_outputs.append(matmul(weights, vh))
        if return_weights:
            head_weights.append(weights)
    merged = concat(head_outputs, axis=1) if heads > 1 else head_outputs[0]
    out = matmul(merged, params.w_o)
    if return_weights:
        return out, head_weights
    return out


# ---------------------------------------------------------------------------
# backward pass and gradient checking
# ---------------------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    """Post-order over the recorded graph; inputs precede their ops."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into .grad for every requires_grad node.

    Deterministic: the same graph always visits nodes in the same order,
    so repeated runs produce bitwise-equal gradients.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node.grad is None:
            continue
        for parent, grad_fn in zip(node._parents, node._grad_fns):
            if not parent.requires_grad:
                continue
            contribution = grad_fn(node.grad)
            if parent.grad is None:
                parent.grad = contribution.astype(parent.dtype, copy=False)
            else:
                parent.grad = parent.grad + contribution.astype(parent.dtype, copy=False)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor],
                      eps: float = 1e-3) -> float:
    """Max relative error between backward() and central finite differences.

    f re-evaluates the scalar loss from the current values of `params`.
    Relative error per element: |analytic - numeric| / max(|analytic|,
    |numeric|, 1e-8). Leaf data is perturbed in place and restored; run
    with float64 params for trustworthy numerics.
    """
    if eps <= 0:
        raise ConfigurationError(f"finite-difference eps must be > 0, got {eps}")
    zero_grads(params)
    out = f()
    if out.data.size != 1:
        raise UsageError("finite_diff_check needs f to return a scalar")
    backward(out)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    max_err = 0.0
    for p, grads in zip(params, analytic):
        for i in range(p.data.size):
            orig = p.data.flat[i]
            p.data.flat[i] = orig + eps
            f_plus = float(f().data)
            p.data.flat[i] = orig - eps
            f_minus = float(f().data)
            p.data.flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            ana = float(grads.flat[i])
            err = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-8)
            if err > max_err:
                max_err = err
    zero_grads(params)
    return max_err
