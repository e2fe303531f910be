"""
Dense float64 arrays with a small reverse-mode differentiation engine.

Every value is a numpy ``float64`` array wrapped in a :class:`Tensor`.  Each
operation below returns a new tensor that records its parents and a closure
propagating the output gradient back to them.  ``Tensor.backward`` walks the
recorded graph once, in reverse topological order.

Most operations are 2-D ("matrix") operations; a few reductions and the
broadcasting elementwise arithmetic also accept other shapes.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DegenerateInputError, DimensionError, NumericHealthError

NORM_EPS = 1e-12

__all__ = [
    "NORM_EPS",
    "Tensor",
    "add",
    "concat_rows",
    "constant",
    "cosine_rows",
    "exp",
    "grad_check",
    "l2_normalize_rows",
    "log",
    "log_softmax_rows",
    "make_rng",
    "masked_min",
    "matmul",
    "mean",
    "mul",
    "pairwise_distances",
    "parameter",
    "relu",
    "reshape",
    "row_mean",
    "scale",
    "sigmoid",
    "softmax_rows",
    "sub",
    "sum",
    "take_rows",
    "transpose",
]


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based (Philox) generator; ``stream`` selects an independent substream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


class Tensor:
    """A float64 array node in a differentiation graph."""

    __slots__ = ("value", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, parents: tuple = (), op: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward: Callable[[np.ndarray], None] | None = None

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, op={self.op or 'leaf'})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        return transpose(self)

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float("nan")

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def backward(self, seed=None):
        """Accumulate d(self)/d(node) into ``node.grad`` for every node upstream."""
        order = _topological_order(self)
        for node in order:
            if node is not self and node._parents:
                node.grad = np.zeros_like(node.value)
        self.grad = np.ones_like(self.value) if seed is None else np.asarray(seed, dtype=np.float64)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _topological_order(root: Tensor) -> list[Tensor]:
    order, seen = [], {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        for p in parents:
            if id(p) not in seen and p.requires_grad:
                seen.add(id(p))
                stack.append((p, iter(p._parents)))
                break
        else:
            stack.pop()
            order.append(node)
    return order


def parameter(value) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True)


def constant(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _new(value, parents, op) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NumericHealthError(f"{op}: produced non-finite values")
    return Tensor(value, any(p.requires_grad for p in parents), parents, op)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _require_2d(op, *ts):
    for t in ts:
        if t.value.ndim != 2:
            raise DimensionError(f"{op}: expected a 2-D matrix, got shape {t.value.shape}")


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    out = _new(a.value + b.value, (a, b), "add")

    def _backward(g_out):
        if a.requires_grad:
            a.grad += _unbroadcast(g_out, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g_out, b.shape)

    out._backward = _backward
    return out


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    out = _new(a.value - b.value, (a, b), "sub")

    def _backward(g_out):
        if a.requires_grad:
            a.grad += _unbroadcast(g_out, a.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(g_out, b.shape)

    out._backward = _backward
    return out


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    out = _new(a.value * b.value, (a, b), "mul")

    def _backward(g_out):
        if a.requires_grad:
            a.grad += _unbroadcast(g_out * b.value, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g_out * a.value, b.shape)

    out._backward = _backward
    return out


def scale(a: Tensor, c: float) -> Tensor:
    a = constant(a)
    out = _new(a.value * c, (a,), "scale")

    def _backward(g_out):
        if a.requires_grad:
            a.grad += g_out * c

    out._backward = _backward
    return out


def relu(a: Tensor) -> Tensor:
    a = constant(a)
    mask = a.value > 0
    out = _new(np.where(mask, a.value, 0.0), (a,), "relu")

    def _backward(g_out):
        if a.requires_grad:
            a.grad += g_out * mask

    out._backward = _backward
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = constant(a)
    x = a.value
    # Split by sign so exp never overflows.
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = _new(s, (a,), "sigmoid")

    def _backward(g_out):
        if a.requires_grad:
            a.grad += g_out * s * (1.0 - s)

    out._backward = _backward
    return out


def exp(a: Tensor) -> Tensor:
    a = constant(a)
    e_val = np.exp(a.value)
    out = _new(e_val, (a,), "exp")

    def _backward(g_out):
        if a.requires_grad:
            a.grad += g_out * e_val

    out._backward = _backward
    return out


def log(a: Tensor) -> Tensor:
    a = constant(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        logged = np.log(a.value)
    out = _new(logged, (a,), "log")

    def _backward(g_out):
        if a.requires_grad:
            a.grad += g_out / a.value

    out._backward = _backward
    return out


# ---------------------------------------------------------------- linear algebra / shape


def matmul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _require_2d("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = _new(a.value @ b.value, (a, b), "matmul")

    def _backward(g_out):
        if a.requires_grad:
            a.grad += g_out @ b.value.T
        if b.requires_grad:
            b.grad += a.value.T @ g_out

    out._backward = _backward
    return out


def transpose(a: Tensor) -> Tensor:
    a = constant(a)
    _require_2d("transpose", a)
    out = _new(a.value.T.copy(), (a,), "transpose")

    def _backward(g_out):
        if a.requires_grad:
            a.grad += g_out.T

    out._backward = _backward
    return out


def reshape(a: Tensor, shape) -> Tensor:
    a = constant(a)
    out = _new(a.value.reshape(shape), (a,), "reshape")

    def _backward(g_out):
        if a.requires_grad:
            a.grad += g_out.reshape(a.shape)

    out._backward = _backward
    return out


def take_rows(a: Tensor, index) -> Tensor:
    """Rows ``a[index]``; ``index`` may be an integer array (repeats allowed) or a slice."""
    a = constant(a)
    out = _new(a.value[index], (a,), "take_rows")

    def _backward(g_out):
        if a.requires_grad:
            if isinstance(index, slice):
                a.grad[index] += g_out
            else:
                np.add.at(a.grad, index, g_out)

    out._backward = _backward
    return out


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = [constant(p) for p in parts]
    _require_2d("concat_rows", *parts)
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise DimensionError(f"concat_rows: column counts differ: {[p.shape for p in parts]}")
    out = _new(np.concatenate([p.value for p in parts], axis=0), tuple(parts), "concat_rows")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def _backward(g_out):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                p.grad += g_out[lo:hi]

    out._backward = _backward
    return out


# ---------------------------------------------------------------- reductions


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = constant(a)
    out = _new(np.sum(a.value, axis=axis, keepdims=keepdims), (a,), "sum")

    def _backward(g_out):
        if a.requires_grad:
            g = g_out
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a.grad += np.broadcast_to(g, a.shape)

    out._backward = _backward
    return out


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = constant(a)
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def row_mean(a: Tensor) -> Tensor:
    """Mean of each row, as a column vector."""
    a = constant(a)
    _require_2d("row_mean", a)
    return mean(a, axis=1, keepdims=True)


def masked_min(a: Tensor, mask, axis: int = 1) -> Tensor:
    """Minimum of ``a`` along ``axis`` over entries where ``mask`` is true.

    The gradient goes to the (first) arg-min entry only.
    """
    a = constant(a)
    mask = np.asarray(mask, dtype=bool)
    if not np.all(mask.any(axis=axis)):
        raise ContractError("masked_min: a slice has no admissible entries")
    filled = np.where(mask, a.value, np.inf)
    idx = np.expand_dims(np.argmin(filled, axis=axis), axis)
    out = _new(np.take_along_axis(a.value, idx, axis=axis).squeeze(axis), (a,), "masked_min")

    def _backward(g_out):
        if a.requires_grad:
            g = np.zeros_like(a.value)
            np.put_along_axis(g, idx, np.expand_dims(g_out, axis), axis=axis)
            a.grad += g

    out._backward = _backward
    return out


# ---------------------------------------------------------------- row-wise maps


def softmax_rows(a: Tensor) -> Tensor:
    a = constant(a)
    _require_2d("softmax_rows", a)
    if a.value.size == 0:
        raise DimensionError("softmax_rows: empty input")
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    out = _new(s, (a,), "softmax_rows")

    def _backward(g_out):
        if a.requires_grad:
            g = g_out
            a.grad += s * (g - (g * s).sum(axis=1, keepdims=True))

    out._backward = _backward
    return out


def log_softmax_rows(a: Tensor) -> Tensor:
    a = constant(a)
    _require_2d("log_softmax_rows", a)
    z = a.value - a.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    ls = z - lse
    out = _new(ls, (a,), "log_softmax_rows")

    def _backward(g_out):
        if a.requires_grad:
            g = g_out
            a.grad += g - np.exp(ls) * g.sum(axis=1, keepdims=True)

    out._backward = _backward
    return out


def l2_normalize_rows(a: Tensor, name: str = "input") -> Tensor:
    a = constant(a)
    _require_2d("l2_normalize_rows", a)
    norms = np.sqrt((a.value**2).sum(axis=1, keepdims=True))
    bad = np.flatnonzero(norms[:, 0] <= NORM_EPS)
    if bad.size:
        raise DegenerateInputError(f"{name} row {bad[0]} has norm <= {NORM_EPS:g}")
    u = a.value / norms
    out = _new(u, (a,), "l2_normalize_rows")

    def _backward(g_out):
        if a.requires_grad:
            g = g_out
            a.grad += (g - u * (g * u).sum(axis=1, keepdims=True)) / norms

    out._backward = _backward
    return out


def cosine_rows(a, b) -> Tensor:
    """``out[i, j] = cos(a_i, b_j)``.  Zero-norm rows raise :class:`DegenerateInputError`."""
    a, b = constant(a), constant(b)
    _require_2d("cosine_rows", a, b)
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"cosine_rows: column counts differ: {a.shape} vs {b.shape}")
    return matmul(l2_normalize_rows(a, "left"), transpose(l2_normalize_rows(b, "right")))


def pairwise_distances(a, b=None) -> Tensor:
    """Euclidean distances between rows of ``a`` and rows of ``b`` (default ``a``).

    Differences are formed explicitly rather than via the Gram expansion, so
    coincident points give exactly zero; their gradient is taken as zero.
    """
    a = constant(a)
    a = constant(a)
    b = a if b is None else constant(b)
    _require_2d("pairwise_distances", a, b)
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"pairwise_distances: {a.shape} vs {b.shape}")
    diff = a.value[:, None, :] - b.value[None, :, :]
    d = np.sqrt((diff**2).sum(axis=2))
    parents = (a,) if b is a else (a, b)
    out = _new(d, parents, "pairwise_distances")

    def _backward(g_out):
        w = np.divide(g_out, d, out=np.zeros_like(d), where=d > 0)
        contrib = w[:, :, None] * diff
        if a.requires_grad:
            a.grad += contrib.sum(axis=1)
        if b.requires_grad:
            b.grad -= contrib.sum(axis=0)

    out._backward = _backward
    return out


# ---------------------------------------------------------------- gradient checking


def grad_check(
    fn: Callable[[], Tensor],
    params: Iterable[Tensor],
    h: float = 1e-6,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Largest relative discrepancy between backprop and central differences.

    ``fn`` rebuilds a scalar-valued graph from the current values of
    ``params``.  Each coordinate is perturbed by ``+-h`` in place and restored.
    The error for a coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    If ``max_coords`` is given, only that many coordinates per parameter are
    probed, chosen with ``rng``.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ContractError(f"grad_check: step h={h} outside [1e-7, 1e-3]")
    params = list(params)
    out = fn()
    if not isinstance(out, Tensor) or out.value.size != 1:
        raise ContractError("grad_check: objective must be a scalar tensor")
    for p in params:
        p.zero_grad()
    out.backward()
    analytic = [p.grad.copy() for p in params]
    rng = rng if rng is not None else make_rng(0)

    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.value.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = fn().item()
            flat[i] = orig - h
            f_minus = fn().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2 * h)
            a = g.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
