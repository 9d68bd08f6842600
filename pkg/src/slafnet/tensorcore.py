"""Dense 2-D float64 tensors with reverse-mode automatic differentiation.

Every tensor is a node of the tape: it holds its value, a gradient slot and
references to the tensors it was computed from. ``backward`` sweeps the
graph in reverse topological order and accumulates gradients.

Broadcasting is deliberately narrow: binary operands must have equal
shapes, or one of them must be a ``1 x cols`` row. Python scalars are
treated as constants.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "tensor",
    "parameter",
    "no_grad",
    "grad_enabled",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "pow_int",
    "relu",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "sqrt",
    "absolute",
    "total",
    "col_mean",
    "batch_stats",
    "softmax",
    "mse",
    "bce_with_logits",
    "softmax_cross_entropy",
    "basis_combine",
    "backward",
    "grad_check",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A 2-D batch-major array of 64-bit floats that records its history."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
        name: str | None = None,
    ):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got an array with shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    __array_priority__ = 100

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, i: int):
        return pow_int(self, i)


def tensor(data, name: str | None = None) -> Tensor:
    """A constant tensor."""
    return Tensor(data, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    """A leaf tensor that collects gradients."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], rule) -> Tensor:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=rule)
    return Tensor(data)


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    if sa[0] == 1 and sa[1] == sb[1]:
        return
    if sb[0] == 1 and sb[1] == sa[1]:
        return
    raise ShapeError(f"{op}: incompatible shapes {sa} and {sb} (equal shapes or 1 x cols rows only)")


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=0, keepdims=True)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    A, B = a.data, b.data

    def rule(g):
        return g @ B.T, A.T @ g

    return _make(A @ B, (a, b), rule)


def _binary(a, b, op: str):
    # scalars become constants of matching shape only in value, never in the graph
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise TypeError(f"{op}: at least one operand must be a Tensor")
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        _check_binary(a, b, op)
        return a, b
    if isinstance(a, Tensor):
        return a, float(b)
    return float(a), b


def add(a, b) -> Tensor:
    a, b = _binary(a, b, "add")
    if not isinstance(b, Tensor):
        return _make(a.data + b, (a,), lambda g: (g,))
    if not isinstance(a, Tensor):
        return _make(a + b.data, (b,), lambda g: (g,))
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _binary(a, b, "sub")
    if not isinstance(b, Tensor):
        return _make(a.data - b, (a,), lambda g: (g,))
    if not isinstance(a, Tensor):
        return _make(a - b.data, (b,), lambda g: (-g,))
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _binary(a, b, "mul")
    if not isinstance(b, Tensor):
        return _make(a.data * b, (a,), lambda g: (g * b,))
    if not isinstance(a, Tensor):
        return _make(a * b.data, (b,), lambda g: (g * a,))
    A, B = a.data, b.data
    sa, sb = a.shape, b.shape
    return _make(A * B, (a, b), lambda g: (_unbroadcast(g * B, sa), _unbroadcast(g * A, sb)))


def div(a, b) -> Tensor:
    a, b = _binary(a, b, "div")
    if not isinstance(b, Tensor):
        return mul(a, 1.0 / b)
    B = b.data
    if not isinstance(a, Tensor):
        out = a / B
        return _make(out, (b,), lambda g: (-g * out / B,))
    A = a.data
    out = A / B
    sa, sb = a.shape, b.shape
    return _make(out, (a, b), lambda g: (_unbroadcast(g / B, sa), _unbroadcast(-g * out / B, sb)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def pow_int(a: Tensor, i: int) -> Tensor:
    """``a ** i`` by repeated multiplication; exact at 0 and for negative bases."""
    if int(i) != i or i < 0:
        raise ValueError(f"pow_int: exponent must be a non-negative integer, got {i!r}")
    i = int(i)
    A = a.data
    powers = [np.ones_like(A)]
    for _ in range(i):
        powers.append(powers[-1] * A)
    out = powers[i]

    def rule(g):
        if i == 0:
            return (np.zeros_like(g),)
        return (g * i * powers[i - 1],)

    return _make(out, (a,), rule)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    A = a.data
    return _make(np.log(A), (a,), lambda g: (g / A,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def absolute(a: Tensor) -> Tensor:
    """|a| with subgradient sign(a), which is 0 at 0."""
    s = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * s,))


def total(a: Tensor) -> Tensor:
    """Sum of all entries as a 1x1 tensor."""
    shape = a.shape
    return _make(np.array([[a.data.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def col_mean(a: Tensor) -> Tensor:
    m = a.rows
    shape = a.shape
    return _make(a.data.mean(axis=0, keepdims=True), (a,), lambda g: (np.broadcast_to(g / m, shape).copy(),))


def batch_stats(a: Tensor) -> tuple[Tensor, Tensor]:
    """Per-column mean and population (divide-by-m) variance, both differentiable."""
    mean = col_mean(a)
    centered = sub(a, mean)
    var = col_mean(mul(centered, centered))
    return mean, var


def softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def rule(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _make(out, (a,), rule)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over all entries of the squared difference."""
    diff = sub(pred, target)
    return mul(total(mul(diff, diff)), 1.0 / diff.data.size)


def bce_with_logits(z: Tensor, y: Tensor) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(z)`` against labels ``y`` in [0, 1]."""
    if z.shape != y.shape:
        raise ShapeError(f"bce: logits {z.shape} vs labels {y.shape}")
    Z, Y = z.data, y.data
    m = Z.size
    # softplus(z) - y*z, written to stay finite for large |z|
    val = np.maximum(Z, 0.0) - Y * Z + np.log1p(np.exp(-np.abs(Z)))
    p = _sigmoid(Z)

    def rule(g):
        return (g[0, 0] * (p - Y) / m, None)

    return _make(np.array([[val.sum() / m]]), (z, y), rule)


def softmax_cross_entropy(z: Tensor, y: Tensor) -> Tensor:
    """Mean categorical cross-entropy; ``y`` is one-hot (rows sum to 1)."""
    if z.shape != y.shape:
        raise ShapeError(f"cross-entropy: logits {z.shape} vs targets {y.shape}")
    Z, Y = z.data, y.data
    m = Z.shape[0]
    shifted = Z - Z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    p = np.exp(logp)

    def rule(g):
        return (g[0, 0] * (p * Y.sum(axis=1, keepdims=True) - Y) / m, None)

    return _make(np.array([[-(Y * logp).sum() / m]]), (z, y), rule)


def basis_combine(basis: Sequence[Tensor], coeffs: Tensor) -> Tensor:
    """``c_0 + sum_i c_i * basis[i-1]`` for a list of equally shaped tensors.

    ``coeffs`` is ``1 x (k+1)`` (one coefficient set for every column) or
    ``u x (k+1)`` (a set per column, ``u`` = basis column count).
    """
    if not basis:
        raise ValueError("basis_combine needs at least one basis tensor")
    shape = basis[0].shape
    for b in basis:
        if b.shape != shape:
            raise ShapeError(f"basis_combine: basis shapes differ, {shape} vs {b.shape}")
    k = len(basis)
    if coeffs.cols != k + 1:
        raise ShapeError(f"basis_combine: need {k + 1} coefficient columns, got {coeffs.cols}")
    C = coeffs.data
    shared = coeffs.rows == 1
    if not shared and coeffs.rows != shape[1]:
        raise ShapeError(f"basis_combine: per-column coefficients need {shape[1]} rows, got {coeffs.rows}")
    B = [b.data for b in basis]
    if shared:
        out = np.full(shape, C[0, 0])
        for i in range(k):
            out += C[0, i + 1] * B[i]
    else:
        out = np.broadcast_to(C[:, 0], shape).copy()
        for i in range(k):
            out += C[:, i + 1] * B[i]

    def rule(g):
        gc = np.empty_like(C)
        if shared:
            gc[0, 0] = g.sum()
            for i in range(k):
                gc[0, i + 1] = (g * B[i]).sum()
            gb = [g * C[0, i + 1] for i in range(k)]
        else:
            gc[:, 0] = g.sum(axis=0)
            for i in range(k):
                gc[:, i + 1] = (g * B[i]).sum(axis=0)
            gb = [g * C[:, i + 1] for i in range(k)]
        return (*gb, gc)

    return _make(out, (*basis, coeffs), rule)


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Populate ``grad`` of every tensor reachable from the scalar ``root``.

    Gradients are recomputed from zero on each call; a tensor used by several
    consumers receives the sum of their contributions.
    """
    if root.shape != (1, 1):
        raise ShapeError(f"backward needs a 1x1 root, got {root.shape}")
    if not root.requires_grad:
        raise ValueError("backward: root does not depend on any parameter")
    order = _topo_order(root)
    for node in order:
        node.grad = np.zeros_like(node.data)
    root.grad = np.ones((1, 1))
    for node in reversed(order):
        if node._backward is None:
            continue
        contributions = node._backward(node.grad)
        for parent, g in zip(node._parents, contributions):
            if g is None or not parent.requires_grad:
                continue
            parent.grad += g


def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor], h: float = 1e-4) -> float:
    """Largest relative mismatch between autodiff and central differences.

    ``f`` rebuilds the scalar output from the current parameter values each
    time it is called. The error per entry is
    ``|ad - fd| / max(1, |ad|, |fd|)``.
    """
    if h <= 0:
        raise ValueError("grad_check: step must be positive")
    params = list(params)
    out = f()
    backward(out)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    worst = 0.0
    for p, ad in zip(params, analytic):
        flat = p.data.reshape(-1)
        ad_flat = ad.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            fp = f().item()
            flat[idx] = orig - h
            fm = f().item()
            flat[idx] = orig
            fd = (fp - fm) / (2.0 * h)
            a = ad_flat[idx]
            err = abs(a - fd) / max(1.0, abs(a), abs(fd))
            worst = max(worst, err)
    return worst
