"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Only what small fully connected Gaussian-head networks need is supported:
affine layers, tanh, softplus, elementwise arithmetic, log/exp, reductions
and column concatenation / slicing. Every primitive accepts either plain
numpy arrays (fast forward-only path, used by the planner) or :class:`Var`
nodes recorded on a :class:`Tape`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DivergenceError

STD_FLOOR = 1e-4


class Tape:
    """Records nodes in creation order, which is a valid topological order."""

    def __init__(self) -> None:
        self.nodes: list[Var] = []

    def leaf(self, value) -> "Var":
        return Var(np.asarray(value, dtype=np.float64), self)

    def __len__(self) -> int:
        return len(self.nodes)


class Var:
    """A node on a tape: value, parents and a local vector-Jacobian product."""

    __slots__ = ("value", "tape", "parents", "vjp", "index", "grad")
    # make numpy defer to our reflected operators instead of looping elementwise
    __array_ufunc__ = None

    def __init__(self, value: np.ndarray, tape: Tape, parents: tuple = (), vjp=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.vjp = vjp
        self.grad: np.ndarray | None = None
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape}, index={self.index})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None):
        return reduce_sum(self, axis)


def is_var(x) -> bool:
    return isinstance(x, Var)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _record(value, parents, vjp):
    tape = _tape_of(*parents)
    if tape is None:
        return value
    return Var(value, tape, tuple(parents), vjp)


# -- primitives ---------------------------------------------------------------


def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    return _record(out, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def neg(a):
    return _record(-value_of(a), (a,), lambda g: (-g,))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    return _record(
        av * bv, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
    )


def div(a, b):
    av, bv = value_of(a), value_of(b)
    out = av / bv
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)),
    )


def square(a):
    av = value_of(a)
    return _record(av * av, (a,), lambda g: (2.0 * av * g,))


def log(a):
    av = value_of(a)
    return _record(np.log(av), (a,), lambda g: (g / av,))


def exp(a):
    out = np.exp(value_of(a))
    return _record(out, (a,), lambda g: (g * out,))


def tanh(a):
    out = np.tanh(value_of(a))
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


def softplus(a):
    av = value_of(a)
    sig = 0.5 * (1.0 + np.tanh(0.5 * av))
    return _record(np.logaddexp(0.0, av), (a,), lambda g: (g * sig,))


def reduce_sum(a, axis=None):
    av = value_of(a)
    out = np.sum(av, axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, av.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), av.shape).copy(),)

    return _record(out, (a,), vjp)


def take(a, key):
    av = value_of(a)

    def vjp(g):
        full = np.zeros_like(av)
        full[key] += g
        return (full,)

    return _record(av[key], (a,), vjp)


def concat(parts: Sequence, axis: int = -1):
    values = [value_of(p) for p in parts]
    out = np.concatenate(values, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(out, tuple(parts), vjp)


def affine(x, weight, bias):
    """``x @ weight.T + bias`` for a vector or a batch of row vectors."""
    xv, wv, bv = value_of(x), value_of(weight), value_of(bias)
    if xv.shape[-1] != wv.shape[1]:
        raise DimensionError(f"affine input width {xv.shape[-1]} != layer input width {wv.shape[1]}")
    out = xv @ wv.T + bv

    def vjp(g):
        gx = g @ wv
        if xv.ndim == 1:
            gw = np.outer(g, xv)
            gb = g
        else:
            gw = g.T @ xv
            gb = g.sum(axis=0)
        return gx, gw, gb

    return _record(out, (x, weight, bias), vjp)


# -- reverse pass -------------------------------------------------------------


def backward(tape: Tape, loss: Var) -> None:
    """Populate ``.grad`` on every node that the scalar ``loss`` depends on."""
    if not isinstance(loss, Var) or loss.tape is not tape:
        raise ContractError("loss must be a node on the given tape")
    if loss.value.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
    for node in tape.nodes:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(tape.nodes[: loss.index + 1]):
        if node.grad is None or node.vjp is None:
            continue
        for parent, g in zip(node.parents, node.vjp(node.grad)):
            if not isinstance(parent, Var):
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


# -- networks -----------------------------------------------------------------


@dataclass
class NetParams:
    """Weights ``(out, in)`` and biases ``(out,)`` of a fully connected net."""

    weights: list
    biases: list

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases):
            raise ContractError("weights and biases must have one entry per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if value_of(w).shape[0] != value_of(b).shape[0]:
                raise DimensionError(f"layer {i}: bias width does not match weight rows")
            if i and value_of(w).shape[1] != value_of(self.weights[i - 1]).shape[0]:
                raise DimensionError(f"layer {i}: input width does not chain from layer {i - 1}")

    @property
    def widths(self) -> list[int]:
        ws = [value_of(w) for w in self.weights]
        return [ws[0].shape[1]] + [w.shape[0] for w in ws]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([value_of(w), value_of(b)])
        return out

    def bind(self, tape: Tape) -> "NetParams":
        """Leaf copies of the parameters on ``tape``."""
        return NetParams([tape.leaf(w) for w in self.weights], [tape.leaf(b) for b in self.biases])

    def grads(self) -> "NetParams":
        """Adjoints of a bound net after :func:`backward`; zero where unreached."""

        def g(v):
            return np.zeros_like(v.value) if v.grad is None else v.grad

        return NetParams([g(w) for w in self.weights], [g(b) for b in self.biases])

    def copy(self) -> "NetParams":
        return NetParams([value_of(w).copy() for w in self.weights], [value_of(b).copy() for b in self.biases])

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "NetParams":
        return NetParams([fn(value_of(w)) for w in self.weights], [fn(value_of(b)) for b in self.biases])


def init_params(widths: Sequence[int], rng: np.random.Generator) -> NetParams:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` init for every layer."""
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return NetParams(weights, biases)


def affine_forward(params: NetParams, x) -> list:
    """Activations of every layer: tanh on hidden layers, linear output last."""
    acts = []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = affine(h, w, b)
        if i < last:
            h = tanh(h)
        acts.append(h)
    return acts


def sgd_step(params: NetParams, grads: NetParams, lr: float) -> NetParams:
    if lr < 0:
        raise ContractError("learning rate must be non-negative")
    new_w, new_b = [], []
    for p, g in zip(params.arrays(), grads.arrays()):
        if p.shape != g.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient in SGD step")
    for w, gw in zip(params.weights, grads.weights):
        new_w.append(value_of(w) - lr * gw)
    for b, gb in zip(params.biases, grads.biases):
        new_b.append(value_of(b) - lr * gb)
    return NetParams(new_w, new_b)


@dataclass
class AdamState:
    first: NetParams
    second: NetParams
    step: int = 0

    @classmethod
    def zeros_like(cls, params: NetParams) -> "AdamState":
        return cls(params.map(np.zeros_like), params.map(np.zeros_like))


def adam_step(params: NetParams, grads: NetParams, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> tuple[NetParams, AdamState]:
    """Bias-corrected Adam update; returns new parameters and moments."""
    if lr < 0:
        raise ContractError("learning rate must be non-negative")
    for g in grads.arrays():
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient in Adam step")
    t = state.step + 1
    first = NetParams(
        [beta1 * m + (1 - beta1) * g for m, g in zip(state.first.weights, grads.weights)],
        [beta1 * m + (1 - beta1) * g for m, g in zip(state.first.biases, grads.biases)],
    )
    second = NetParams(
        [beta2 * v + (1 - beta2) * g * g for v, g in zip(state.second.weights, grads.weights)],
        [beta2 * v + (1 - beta2) * g * g for v, g in zip(state.second.biases, grads.biases)],
    )
    c1, c2 = 1 - beta1**t, 1 - beta2**t

    def update(p, m, v):
        return value_of(p) - lr * (m / c1) / (np.sqrt(v / c2) + eps)

    new = NetParams(
        [update(p, m, v) for p, m, v in zip(params.weights, first.weights, second.weights)],
        [update(p, m, v) for p, m, v in zip(params.biases, first.biases, second.biases)],
    )
    return new, AdamState(first, second, t)
