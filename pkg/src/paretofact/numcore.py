"""Dense tensors with reverse-mode differentiation.

Only the operations needed to train small dense networks and evaluate the
GAN/target losses are provided. Data is float32 by default; reductions
accumulate in float64. ``precision(np.float64)`` switches the working dtype,
which the finite-difference checks use.
"""
from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

EPS = 1e-7

_dtype: contextvars.ContextVar[type] = contextvars.ContextVar("dtype", default=np.float32)
_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)
_kinks: contextvars.ContextVar["KinkMonitor | None"] = contextvars.ContextVar("kinks", default=None)


def default_dtype() -> type:
    return _dtype.get()


@contextlib.contextmanager
def precision(dtype):
    token = _dtype.set(np.dtype(dtype).type)
    try:
        yield
    finally:
        _dtype.reset(token)


@contextlib.contextmanager
def no_grad():
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class KinkMonitor:
    """Tracks how close any non-smooth op came to its kink.

    Finite differences straddling a kink are meaningless, so gradient checks
    reject inputs where ``min_distance`` is below the step size.
    """

    def __init__(self):
        self.min_distance = np.inf

    def record(self, distances: np.ndarray) -> None:
        if distances.size:
            self.min_distance = min(self.min_distance, float(np.min(distances)))


@contextlib.contextmanager
def kink_monitor():
    mon = KinkMonitor()
    token = _kinks.set(mon)
    try:
        yield mon
    finally:
        _kinks.reset(token)


def _record_kink(distances: np.ndarray) -> None:
    mon = _kinks.get()
    if mon is not None:
        mon.record(np.abs(distances))


class Tensor:
    """An n-dimensional array node in the compute graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=default_dtype())
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __radd__(self, other):
        return add(_as_tensor(other, self), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if np.isscalar(x):
        return Tensor(np.full(like.shape, x))
    return Tensor(x)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled.get() and any(p.requires_grad or p._backward is not None for p in parents):
        out._parents = parents
        out._backward = backward_fn
    return out


def _needs_graph(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _sum64(x: np.ndarray, axis=None) -> np.ndarray:
    return np.sum(x, axis=axis, dtype=np.float64).astype(x.dtype)


# ---------------------------------------------------------------- arithmetic

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.data, b.data
    return _node(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")
    av, bv = a.data, b.data
    return _node(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a row vector to every row of a 2-D tensor."""
    if x.data.ndim != 2 or bias.shape != (x.shape[1],):
        raise DimensionError(f"add_bias: cannot add {bias.shape} to rows of {x.shape}")
    return _node(x.data + bias.data, (x, bias), lambda g: (g, _sum64(g, axis=0)))


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two 2-D tensors along columns."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise DimensionError(f"concat: incompatible shapes {a.shape} and {b.shape}")
    k = a.shape[1]
    return _node(np.concatenate([a.data, b.data], axis=1), (a, b), lambda g: (g[:, :k], g[:, k:]))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def abs_(a: Tensor) -> Tensor:
    av = a.data
    _record_kink(av)
    return _node(np.abs(av), (a,), lambda g: (g * np.sign(av),))


def log(a: Tensor) -> Tensor:
    av = a.data
    return _node(np.log(av), (a,), lambda g: (g / av,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    av = a.data
    _record_kink(np.minimum(av - lo, hi - av))
    inside = (av >= lo) & (av <= hi)
    return _node(np.clip(av, lo, hi), (a,), lambda g: (g * inside,))


# ---------------------------------------------------------------- activations

def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    av = a.data
    _record_kink(av)
    slope = np.where(av >= 0, 1.0, alpha).astype(av.dtype)
    return _node(av * slope, (a,), lambda g: (g * slope,))


def sigmoid(a: Tensor) -> Tensor:
    av = a.data
    # split form avoids overflow in exp for large |x|
    e = np.exp(-np.abs(av))
    out = np.where(av >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(av.dtype)
    return _node(out, (a,), lambda g: (g * out * (1 - out),))


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis with max-subtraction."""
    if a.shape[-1] < 2:
        raise DimensionError(f"softmax needs at least 2 logits, got shape {a.shape}")
    av = a.data
    e = np.exp(av - np.max(av, axis=-1, keepdims=True))
    out = (e / np.sum(e, axis=-1, keepdims=True, dtype=np.float64)).astype(av.dtype)

    def back(g):
        inner = np.sum(g * out, axis=-1, keepdims=True, dtype=np.float64).astype(av.dtype)
        return (out * (g - inner),)

    return _node(out, (a,), back)


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
}


def elementwise(op: str, *inputs: Tensor, **kwargs) -> Tensor:
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------- reductions

def total(a: Tensor) -> Tensor:
    shape, dt = a.shape, a.data.dtype
    return _node(_sum64(a.data), (a,), lambda g: (np.full(shape, g, dtype=dt),))


def mean(a: Tensor) -> Tensor:
    n = a.size
    shape, dt = a.shape, a.data.dtype
    out = (np.sum(a.data, dtype=np.float64) / n).astype(dt)
    return _node(out, (a,), lambda g: (np.full(shape, g / n, dtype=dt),))


def norm(x: Tensor, which: str = "l2") -> Tensor:
    xv = x.data
    if which == "l1":
        _record_kink(xv)
        out = _sum64(np.abs(xv))
        return _node(out, (x,), lambda g: (g * np.sign(xv),))
    if which == "l2":
        n = np.sqrt(np.sum(xv.astype(np.float64) ** 2)).astype(xv.dtype)

        def back(g):
            if n == 0:
                return (np.zeros_like(xv),)
            return (g * xv / n,)

        return _node(n, (x,), back)
    raise ContractError(f"unknown norm {which!r}")


def sum_squares(x: Tensor) -> Tensor:
    xv = x.data
    return _node(_sum64(xv * xv), (x,), lambda g: (2 * g * xv,))


# ---------------------------------------------------------------- losses

def _target_array(target) -> np.ndarray:
    if isinstance(target, Tensor):
        return target.data
    return np.asarray(target, dtype=default_dtype())


def cross_entropy(target, pred: Tensor) -> Tensor:
    """-sum(target * ln pred) per row, averaged over rows.

    ``pred`` is a probability tensor; it is clamped to [EPS, 1-EPS] before
    the log. A 1-D pair yields the plain scalar cross-entropy.
    """
    t = _target_array(target)
    if t.shape != pred.shape:
        raise DimensionError(f"cross_entropy: target {t.shape} vs prediction {pred.shape}")
    rows = 1 if pred.data.ndim == 1 else int(np.prod(pred.shape[:-1]))
    p = clamp(pred, EPS, 1 - EPS)
    terms = mul(Tensor(t), log(p))
    return scale(total(terms), -1.0 / rows)


def binary_cross_entropy(target, pred: Tensor) -> Tensor:
    """Sum over the last axis of binary cross-entropies H(t_n, p_n), row-averaged."""
    t = _target_array(target)
    if t.shape != pred.shape:
        raise DimensionError(f"binary_cross_entropy: target {t.shape} vs prediction {pred.shape}")
    rows = 1 if pred.data.ndim == 1 else int(np.prod(pred.shape[:-1]))
    p = clamp(pred, EPS, 1 - EPS)
    one = Tensor(np.ones(pred.shape))
    pos = mul(Tensor(t), log(p))
    neg = mul(Tensor(1 - t), log(sub(one, p)))
    return scale(total(add(pos, neg)), -1.0 / rows)


# ---------------------------------------------------------------- backward

def _topological(root: Tensor) -> list[Tensor]:
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf with requires_grad."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.data.dtype)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not _needs_graph(parent):
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


def grad(loss: Tensor, params: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of ``loss`` for each of ``params``; zero where no path exists."""
    params = list(params)
    saved = [p.grad for p in params]
    for p in params:
        p.grad = None
    backward(loss)
    out = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    for p, s in zip(params, saved):
        p.grad = s
    return out


def finite_difference(fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-3) -> list[np.ndarray]:
    """Central finite differences of scalar ``fn()`` w.r.t. each parameter."""
    out = []
    with no_grad():
        for p in params:
            g = np.zeros(p.shape, dtype=np.float64)
            flat = p.data.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = fn().item()
                flat[i] = orig - h
                down = fn().item()
                flat[i] = orig
                gflat[i] = (up - down) / (2 * h)
            out.append(g)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
