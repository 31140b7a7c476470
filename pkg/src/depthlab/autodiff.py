"""Small reverse-mode differentiation engine over dense numpy arrays.

Only the primitives needed by the depth/pose loss pipeline are provided.
Every op accepts plain arrays or :class:`Variable` inputs; when no input
requires a gradient the op returns a plain ``ndarray`` and nothing is
recorded.

Discrete decisions taken during a forward pass (abs signs, argmin
selection, bilinear cell indices, clamps, mask comparisons) go through
:func:`route`.  Inside :func:`recording` they can be captured once and then
replayed, which freezes the active smooth piece of the loss for
finite-difference checks.
"""
from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Variable",
    "Routing",
    "route",
    "recording",
    "value_of",
    "stop_gradient",
    "backward",
    "grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "log",
    "log1p_abs",
    "absolute",
    "sigmoid",
    "sqrt",
    "sum_",
    "mean",
    "getitem",
    "stack",
    "minimum",
    "box_filter3",
    "avg_pool2",
]


class Variable:
    """A node in the recorded computation.

    Leaves are created by the user; interior nodes are created by ops and
    carry their parents together with a vector-Jacobian product per parent.
    ``grad`` is only populated on leaves.
    """

    __slots__ = ("value", "grad", "stop_gradient", "name", "_parents")
    __array_priority__ = 1000
    __array_ufunc__ = None

    def __init__(self, value, stop_gradient: bool = False, name: str | None = None):
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.stop_gradient = bool(stop_gradient)
        self.name = name
        self._parents: tuple = ()

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    @property
    def requires_grad(self) -> bool:
        return not self.stop_gradient

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __float__(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Variable(shape={self.value.shape}{tag})"

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

    def __getitem__(self, idx):
        return getitem(self, idx)


# -- routing -----------------------------------------------------------------


class Routing:
    """Ordered log of discrete forward-pass decisions.

    In record mode each decision is computed and appended; in replay mode
    decisions are returned in the same order as they were recorded.
    """

    def __init__(self):
        self.decisions: list = []
        self.replay = False
        self._cursor = 0

    def decide(self, fn: Callable):
        if self.replay:
            if self._cursor >= len(self.decisions):
                raise RuntimeError("routing replay ran past the recorded decisions")
            out = self.decisions[self._cursor]
            self._cursor += 1
            return out
        out = fn()
        self.decisions.append(out)
        return out

    def start_replay(self) -> None:
        self.replay = True
        self._cursor = 0

    def signature(self) -> tuple:
        return tuple(hash(np.asarray(d).tobytes()) for d in self.decisions)


_ACTIVE: contextvars.ContextVar[Routing | None] = contextvars.ContextVar(
    "depthlab_routing", default=None
)


def route(fn: Callable):
    """Evaluate a discrete decision, honouring an active :class:`Routing`."""
    routing = _ACTIVE.get()
    if routing is None:
        return fn()
    return routing.decide(fn)


@contextlib.contextmanager
def recording(routing: Routing):
    token = _ACTIVE.set(routing)
    try:
        if routing.replay:
            routing._cursor = 0
        yield routing
    finally:
        _ACTIVE.reset(token)


# -- graph plumbing ----------------------------------------------------------


def value_of(x) -> np.ndarray:
    if isinstance(x, Variable):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _tracks(x) -> bool:
    return isinstance(x, Variable) and not x.stop_gradient


def _node(value, pairs: Iterable[tuple[object, Callable]]):
    parents = tuple((p, fn) for p, fn in pairs if _tracks(p))
    if not parents:
        return value
    out = Variable.__new__(Variable)
    out.value = value
    out.grad = None
    out.stop_gradient = False
    out.name = None
    out._parents = parents
    return out


def stop_gradient(x):
    """Return the value of ``x`` as a constant: no gradient flows back.

    The value is routed, so a replayed pass keeps the recorded constant.
    """
    return Variable(route(lambda: value_of(x).copy()), stop_gradient=True)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _toposort(root: Variable) -> list[Variable]:
    order: list[Variable] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Variable) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    ``loss`` must be a scalar produced by a recorded forward pass.
    """
    if not isinstance(loss, Variable):
        raise RuntimeError("backward() called without a recorded forward pass")
    if loss.value.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.value.shape}")
    if loss.is_leaf and loss.stop_gradient:
        return
    order = _toposort(loss)
    adjoints: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = adjoints.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.grad is None or node.grad.shape != node.value.shape:
                node.grad = np.zeros_like(node.value)
            node.grad = node.grad + g
            continue
        for parent, vjp in node._parents:
            gp = vjp(g)
            key = id(parent)
            if key in adjoints:
                adjoints[key] = adjoints[key] + gp
            else:
                adjoints[key] = gp


def grad(loss: Variable, wrt: Sequence[Variable]) -> list[np.ndarray]:
    """Functional form: gradients of ``loss`` w.r.t. ``wrt`` (zeros if unreachable)."""
    for v in wrt:
        v.zero_grad()
    if isinstance(loss, Variable):
        backward(loss)
    return [v.grad.copy() for v in wrt]


# -- elementwise -------------------------------------------------------------


def add(a, b):
    av, bv = value_of(a), value_of(b)
    return _node(
        av + bv,
        [(a, lambda g: _unbroadcast(g, av.shape)), (b, lambda g: _unbroadcast(g, bv.shape))],
    )


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    return _node(
        av - bv,
        [(a, lambda g: _unbroadcast(g, av.shape)), (b, lambda g: _unbroadcast(-g, bv.shape))],
    )


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    return _node(
        av * bv,
        [
            (a, lambda g: _unbroadcast(g * bv, av.shape)),
            (b, lambda g: _unbroadcast(g * av, bv.shape)),
        ],
    )


def div(a, b):
    av, bv = value_of(a), value_of(b)
    out = av / bv
    return _node(
        out,
        [
            (a, lambda g: _unbroadcast(g / bv, av.shape)),
            (b, lambda g: _unbroadcast(-g * out / bv, bv.shape)),
        ],
    )


def neg(a):
    return _node(-value_of(a), [(a, lambda g: -g)])


def exp(a):
    out = np.exp(value_of(a))
    return _node(out, [(a, lambda g: g * out)])


def log(a):
    av = value_of(a)
    return _node(np.log(av), [(a, lambda g: g / av)])


def sqrt(a):
    out = np.sqrt(value_of(a))
    return _node(out, [(a, lambda g: 0.5 * g / out)])


def absolute(a):
    """|a| with subgradient 0 at a == 0."""
    av = value_of(a)
    sign = route(lambda: np.sign(av))
    return _node(sign * av, [(a, lambda g: g * sign)])


def log1p_abs(a):
    """log(|a| + 1), the pseudo-supervision penalty."""
    av = value_of(a)
    sign = route(lambda: np.sign(av))
    mag = sign * av
    return _node(np.log1p(mag), [(a, lambda g: g * sign / (1.0 + mag))])


def _sigmoid_vjp(g: np.ndarray, s: np.ndarray) -> np.ndarray:
    return g * s * (1.0 - s)


def sigmoid(a):
    s = expit(value_of(a))
    return _node(s, [(a, lambda g: _sigmoid_vjp(g, s))])


# -- reductions and indexing -------------------------------------------------


def sum_(a, axis=None, keepdims: bool = False):
    av = value_of(a)
    out = np.sum(av, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy()

    return _node(np.asarray(out, dtype=np.float64), [(a, vjp)])


def mean(a, axis=None, keepdims: bool = False):
    av = value_of(a)
    n = av.size if axis is None else np.prod([av.shape[i] for i in np.atleast_1d(axis)])
    return div(sum_(a, axis=axis, keepdims=keepdims), float(n))


def getitem(a, idx):
    av = value_of(a)

    def vjp(g):
        out = np.zeros_like(av)
        out[idx] += g
        return out

    return _node(av[idx].copy(), [(a, vjp)])


def stack(items: Sequence, axis: int = 0):
    vals = [value_of(x) for x in items]
    out = np.stack(vals, axis=axis)
    pairs = []
    for i, x in enumerate(items):
        pairs.append((x, lambda g, i=i: np.take(g, i, axis=axis)))
    return _node(out, pairs)


def minimum(items: Sequence):
    """Per-element minimum over ``items``; returns ``(min, argmin)``.

    Ties go to the lowest index; the gradient is routed to the winner only.
    """
    if len(items) == 0:
        raise ValueError("minimum() needs at least one input")
    vals = np.stack([value_of(x) for x in items])
    idx = route(lambda: np.argmin(vals, axis=0))
    out = np.take_along_axis(vals, idx[None], axis=0)[0]
    pairs = []
    for i, x in enumerate(items):
        pairs.append((x, lambda g, i=i: g * (idx == i)))
    return _node(out, pairs), idx


# -- linear image filters ----------------------------------------------------


def _reflect_pad1(x: np.ndarray) -> np.ndarray:
    width = [(1, 1), (1, 1)] + [(0, 0)] * (x.ndim - 2)
    return np.pad(x, width, mode="reflect")


def _box3_forward(x: np.ndarray) -> np.ndarray:
    p = _reflect_pad1(x)
    r = p[:-2] + p[1:-1] + p[2:]
    r = r[:, :-2] + r[:, 1:-1] + r[:, 2:]
    return r / 9.0


def _box3_adjoint(g: np.ndarray) -> np.ndarray:
    h, w = g.shape[:2]
    rest = g.shape[2:]
    gh = np.zeros((h, w + 2) + rest)
    gh[:, :-2] += g
    gh[:, 1:-1] += g
    gh[:, 2:] += g
    gp = np.zeros((h + 2, w + 2) + rest)
    gp[:-2] += gh
    gp[1:-1] += gh
    gp[2:] += gh
    gp /= 9.0
    # fold the reflected border back onto its source rows/columns
    cols = gp[:, 1:-1].copy()
    cols[:, 1] += gp[:, 0]
    cols[:, -2] += gp[:, -1]
    out = cols[1:-1].copy()
    out[1] += cols[0]
    out[-2] += cols[-1]
    return out


def box_filter3(a):
    """3x3 box mean over the two leading axes with reflect padding."""
    av = value_of(a)
    if av.shape[0] < 2 or av.shape[1] < 2:
        raise ValueError("box_filter3 needs at least 2x2 input")
    return _node(_box3_forward(av), [(a, _box3_adjoint)])


def avg_pool2(a):
    """2x2 mean pooling over the two leading axes (dims must be even)."""
    av = value_of(a)
    h, w = av.shape[:2]
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2 needs even dims, got {h}x{w}")
    rest = av.shape[2:]
    out = av.reshape((h // 2, 2, w // 2, 2) + rest).mean(axis=(1, 3))

    def vjp(g):
        return np.repeat(np.repeat(g, 2, axis=0), 2, axis=1) / 4.0

    return _node(out, [(a, vjp)])
