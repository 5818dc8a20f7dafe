"""Reverse-mode automatic differentiation over numpy arrays.

Small tape-based engine: each op returns a Tensor that remembers how to push
gradients back to its inputs. Training paths run in float32, gradient
checking in float64 (central differences are below the f32 noise floor).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

REL_ERROR_FLOOR = 1e-8


class ShapeError(ValueError):
    """Raised when operand shapes are invalid for an op."""


class NumericsError(ArithmeticError):
    """Raised when a computation produces or encounters non-finite values."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (eval / embedding paths)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """N-dimensional array with an optional backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._parents: tuple = ()

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from a scalar tensor through the recorded graph."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
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

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _topo_order(root: Tensor) -> list:
    """Iterative post-order topological sort (graphs exceed recursion limits)."""
    order: list = []
    visited: set = set()
    stack: list = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
        out.requires_grad = True
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting introduced or stretched."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(data, (a, b), backward)


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    data = a.data ** exponent

    def backward(g):
        _accumulate(a, g * exponent * a.data ** (exponent - 1.0))

    return _make(data, (a,), backward)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def backward(g):
        _accumulate(a, g / a.data)

    return _make(data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * data)

    return _make(data, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)

    def backward(g):
        _accumulate(a, g * (0.5 / data))

    return _make(data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - data * data))

    return _make(data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def backward(g):
        _accumulate(a, g * (a.data > 0))

    return _make(data, (a,), backward)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(a: Tensor) -> Tensor:
    """tanh-approximation GELU (smooth, so finite differences behave)."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        da = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        _accumulate(a, g * da)

    return _make(data, (a,), backward)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(data, (a,), backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    data = a.data.transpose(axes)

    def backward(g):
        _accumulate(a, g.transpose(inverse))

    return _make(data, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, stop)
            _accumulate(t, g[tuple(index)])

    return _make(data, tuple(tensors), backward)


def gather_rows(table: Tensor, indices) -> Tensor:
    """table[indices] along axis 0; backward scatter-adds (embedding lookup)."""
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"gather index out of range for table with {table.shape[0]} rows")
    data = table.data[idx]

    def backward(g):
        buf = np.zeros_like(table.data)
        np.add.at(buf, idx, g)
        _accumulate(table, buf)

    return _make(data, (table,), backward)


def take_per_row(a: Tensor, col_indices) -> Tensor:
    """out[i] = a[i, col_indices[i]] for a 2-D tensor."""
    if a.ndim != 2:
        raise ShapeError(f"take_per_row expects 2-D input, got {a.shape}")
    cols = np.asarray(col_indices)
    rows = np.arange(a.shape[0])
    data = a.data[rows, cols]

    def backward(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, (rows, cols), g)
        _accumulate(a, buf)

    return _make(data, (a,), backward)


# ---------------------------------------------------------------------------
# reductions and linear algebra
# ---------------------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape).copy())

    return _make(data, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), _as_tensor(1.0 / count, a.dtype))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul requires at least 1-D operands")
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner dimensions do not match: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g):
        a_d, b_d = a.data, b.data
        if a.ndim == 1:
            a_d = a_d[None, :]
        if b.ndim == 1:
            b_d = b_d[:, None]
        g_m = g
        if a.ndim == 1 and b.ndim == 1:
            g_m = g.reshape(1, 1)
        elif a.ndim == 1:
            g_m = np.expand_dims(g, -2)
        elif b.ndim == 1:
            g_m = np.expand_dims(g, -1)
        ga = np.matmul(g_m, np.swapaxes(b_d, -1, -2))
        gb = np.matmul(np.swapaxes(a_d, -1, -2), g_m)
        if a.ndim == 1:
            ga = ga.reshape(a.shape[0]) if ga.ndim <= 2 else _unbroadcast(ga, (1, a.shape[0])).reshape(a.shape)
        else:
            ga = _unbroadcast(ga, a.shape)
        if b.ndim == 1:
            gb = gb.reshape(b.shape[0]) if gb.ndim <= 2 else _unbroadcast(gb, (b.shape[0], 1)).reshape(b.shape)
        else:
            gb = _unbroadcast(gb, b.shape)
        _accumulate(a, ga)
        _accumulate(b, gb)

    return _make(data, (a, b), backward)


# ---------------------------------------------------------------------------
# normalizations
# ---------------------------------------------------------------------------


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, numerically stabilized."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        _accumulate(a, data * (g - dot))

    return _make(data, (a,), backward)


def log_softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    data = shifted - lse
    probs = np.exp(data)

    def backward(g):
        _accumulate(a, g - probs * g.sum(axis=-1, keepdims=True))

    return _make(data, (a,), backward)


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine).

    Zero-variance rows come out as zeros: the eps keeps the division finite.
    """
    x = a.data
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    data = centered * inv_std

    def backward(g):
        n = x.shape[-1]
        g_mean = g.mean(axis=-1, keepdims=True)
        gx_dot = (g * data).mean(axis=-1, keepdims=True)
        _accumulate(a, inv_std * (g - g_mean - data * gx_dot))

    return _make(data, (a,), backward)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0."""
    if p <= 0.0:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.dtype) / (1.0 - p)

    def backward(g):
        _accumulate(a, g * keep)

    return _make(a.data * keep, (a,), backward)


def stop_gradient(a: Tensor) -> Tensor:
    return a.detach()


# catalogue of named differentiable ops, for dispatch and gradient-check sweeps
OPS: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "log": log,
    "exp": exp,
    "sqrt": sqrt,
    "tanh": tanh,
    "relu": relu,
    "gelu": gelu,
    "matmul": matmul,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "layer_norm": layer_norm,
}


def forward_op(op_name: str, *inputs: Tensor) -> Tensor:
    """Dispatch a named differentiable op over tensors."""
    if op_name not in OPS:
        raise KeyError(f"unknown op {op_name!r}; known: {sorted(OPS)}")
    return OPS[op_name](*inputs)


def grads_for(loss: Tensor, params: dict) -> dict:
    """Backward pass returning one gradient array per named parameter.

    Parameters the loss never touched get explicit zero gradients.
    """
    for p in params.values():
        p.zero_grad()
    loss.backward()
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    op_name: str
    max_rel_error: float
    tolerance: float
    passed: bool

    def __str__(self):
        status = "ok" if self.passed else "FAIL"
        return (
            f"[{status}] {self.op_name}: max_rel_error={self.max_rel_error:.3e}"
            f" (tolerance {self.tolerance:.1e})"
        )


def relative_error(analytic: float, numeric: float) -> float:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero grads stable."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_ERROR_FLOOR)


def finite_difference_check(
    f: Callable[[dict], Tensor],
    params: dict,
    epsilon=1e-4,
    tolerance: float = 1e-4,
    op_name: str = "f",
) -> GradCheckReport:
    """Compare analytic gradients of a scalar function against central differences.

    Run this on float64 parameters: at float32 the difference quotient is
    dominated by rounding noise. epsilon may be one positive step or a
    sequence of steps; with several, each component keeps its best-agreeing
    estimate. Sharp-curvature components need small steps while near-zero
    gradients need large ones, and no single step serves both; a genuinely
    wrong analytic gradient still disagrees at every step size.
    """
    epsilons = tuple(np.atleast_1d(np.asarray(epsilon, dtype=np.float64)))
    if len(epsilons) == 0 or any(e <= 0 for e in epsilons):
        raise ValueError("epsilon must be positive")
    loss = f(params)
    if not np.isfinite(loss.data).all():
        raise NumericsError("loss is non-finite at the unperturbed point")
    analytic = grads_for(loss, params)

    max_rel = 0.0
    for name, p in params.items():
        grad_flat = analytic[name].reshape(-1)
        for i in range(p.data.size):
            idx = np.unravel_index(i, p.data.shape)
            original = p.data[idx]
            best = np.inf
            for eps in epsilons:
                with no_grad():
                    p.data[idx] = original + eps
                    f_plus = f(params).item()
                    p.data[idx] = original - eps
                    f_minus = f(params).item()
                p.data[idx] = original
                if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                    raise NumericsError(
                        f"non-finite loss when perturbing parameter {name}[{i}]"
                    )
                numeric = (f_plus - f_minus) / (2.0 * eps)
                rel = relative_error(float(grad_flat[i]), numeric)
                if rel < best:
                    best = rel
                if best <= tolerance / 10.0:
                    break  # already comfortably inside; skip the other steps
            if best > max_rel:
                max_rel = best
    return GradCheckReport(
        op_name=op_name,
        max_rel_error=max_rel,
        tolerance=tolerance,
        passed=max_rel <= tolerance,
    )
