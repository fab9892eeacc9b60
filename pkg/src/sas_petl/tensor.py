"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable op appends a node to the active :class:`Graph`.
:func:`backward` walks that graph's nodes in exact reverse construction
order, so topological order holds by construction. Storage is a numpy
array; numpy does the arithmetic, this module owns the derivative rules.

A fresh ambient graph (float32) exists per thread. Use :func:`graph` to
open an explicit one, e.g. ``graph("float64")`` for gradient checking,
and :func:`no_grad` for evaluation passes that should not record.
"""
from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, GraphError

__all__ = [
    "Tensor", "Graph", "Rng", "graph", "no_grad", "current_graph",
    "matmul", "add", "sub", "mul", "relu", "gelu", "layer_norm", "softmax",
    "softmax_cross_entropy", "concat", "broadcast_to", "backward",
    "finite_diff_check", "kaiming_normal", "zero_grad",
]

LN_EPS = 1e-5


class Graph:
    """Ordered record of the differentiable ops executed since creation."""

    def __init__(self, dtype="float32"):
        self.dtype = np.dtype(dtype)
        self.nodes: list[_Node] = []
        self.consumed = False

    def __len__(self):
        return len(self.nodes)

    def __repr__(self):
        state = "consumed" if self.consumed else "open"
        return f"Graph(dtype={self.dtype.name}, nodes={len(self.nodes)}, {state})"


class _Node:
    __slots__ = ("output", "inputs", "backward_fn")

    def __init__(self, output, inputs, backward_fn):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn


_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "graphs"):
        _local.graphs = [Graph()]
        _local.recording = True
    return _local.graphs


def current_graph() -> Graph:
    return _stack()[-1]


def _recording() -> bool:
    _stack()
    return _local.recording


@contextmanager
def graph(dtype="float32"):
    """Open a fresh graph; ops inside record onto it."""
    g = Graph(dtype)
    stack = _stack()
    depth = len(stack)
    stack.append(g)
    try:
        yield g
    finally:
        del stack[depth:]


@contextmanager
def no_grad():
    _stack()
    prev = _local.recording
    _local.recording = False
    try:
        yield
    finally:
        _local.recording = prev


class Tensor:
    """Row-major n-d array, optionally tracked by the active graph."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "_graph", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype.kind == "f":
                dtype = data.dtype
            else:
                dtype = current_graph().dtype
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None
        self._graph = None
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __float__(self):
        return self.item()

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    # -- operators -----------------------------------------------------
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
        if isinstance(other, Tensor):
            return div(self, other)
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def _scalar_error(t):
    raise GraphError(f"expected a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=current_graph().dtype))


def _make(data, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if not _recording():
        return out
    g = current_graph()
    live = False
    for t in inputs:
        if not t.requires_grad:
            continue
        if t._node is None:
            live = True
        elif t._graph is g:
            live = True
        elif not t._graph.consumed:
            raise GraphError("operands recorded on different open graphs")
    if live:
        out.requires_grad = True
        out._graph = g
        out._node = _Node(out, tuple(inputs), backward_fn)
        g.nodes.append(out._node)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shapes(a: Tensor, b: Tensor, opname: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{opname}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = as_tensor(a)
        return _make(a.data * b, (a,), lambda g: (g * b,))
    if not isinstance(a, Tensor) and np.isscalar(a):
        return mul(b, a)
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape),
                            _unbroadcast(-g * out / bd, bd.shape)))


def relu(a: Tensor) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is 0."""
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximated GELU. gelu(0) == 0 exactly and gelu'(0) == 0.5."""
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + t)

    def back(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(out, (a,), back)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


# -- linear algebra ----------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, with numpy batch broadcasting.

    dA = dC @ B^T and dB = A^T @ dC, summed over any broadcast batch axes.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch shapes of {a.shape} and {b.shape} differ") from None
    ad, bd = a.data, b.data
    if bd.ndim == 2 and ad.ndim > 2:
        # fold batch axes into rows: one GEMM instead of a loop of small ones
        a2 = ad.reshape(-1, ad.shape[-1])

        def back(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ bd.T).reshape(ad.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return _make((a2 @ bd).reshape(*ad.shape[:-1], bd.shape[-1]), (a, b), back)

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _make(ad @ bd, (a, b), back)


# -- shape ops ---------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a: Tensor, index) -> Tensor:
    src, dt = a.shape, a.dtype

    def back(g):
        full = np.zeros(src, dtype=g.dtype if g.dtype.kind == "f" else dt)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(a.data[index]), (a,), back)


def concat(tensors: Sequence[Tensor], axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat: incompatible shapes {shapes} on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def broadcast_to(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise DimensionError(f"broadcast_to: cannot broadcast {src} to {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (_unbroadcast(g, src),))


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    src = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), back)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / float(count))


# -- fused network ops -------------------------------------------------

def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalise over the last axis, then apply the affine map."""
    x = a.data
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise DimensionError(f"layer_norm: width {n} vs gamma {gamma.shape}, beta {beta.shape}")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    gd = gamma.data
    out = xhat * gd + beta.data

    def back(g):
        lead = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        dxhat = g * gd
        dx = inv_std * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dgamma, dbeta

    return _make(out, (a, gamma, beta), back)


def softmax(a: Tensor, axis=-1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _make(y, (a,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean over rows of -log softmax(logits)[target]."""
    if logits.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy: logits must be 2-D, got {logits.shape}")
    n, k = logits.shape
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if t.shape[0] != n:
        raise DimensionError(f"softmax_cross_entropy: {n} rows but {t.shape[0]} targets")
    if n and (t.min() < 0 or t.max() >= k):
        bad = int(t[(t < 0) | (t >= k)][0])
        raise IndexError(f"target {bad} out of range for {k} classes")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    rows = np.arange(n)
    loss = -logp[rows, t].mean()

    def back(g):
        d = np.exp(logp)
        d[rows, t] -= 1.0
        return (d * (g / n),)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), back)


# -- differentiation ---------------------------------------------------

def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every trainable leaf recorded under ``loss``'s graph.

    Leaves on the graph that the loss does not depend on receive zeros.
    Raises GraphError for a non-scalar loss, a graph that was already
    differentiated, or a leaf whose previous gradient was never reset.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    g = loss._graph
    if loss._node is None:
        if loss.requires_grad:
            if loss.grad is not None:
                raise GraphError("gradient already populated; reset it before backward")
            loss.grad = np.ones_like(loss.data)
        return
    if g.consumed:
        raise GraphError("backward already ran on this graph")

    leaves = {}
    for node in g.nodes:
        for t in node.inputs:
            if t.requires_grad and t._node is None:
                leaves[id(t)] = t
    for t in leaves.values():
        if t.grad is not None:
            raise GraphError(f"gradient of {t.name or t!r} was not reset before backward")

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(g.nodes):
        gout = grads.pop(id(node.output), None)
        if gout is None:
            continue
        for t, gi in zip(node.inputs, node.backward_fn(gout)):
            if gi is None or not t.requires_grad:
                continue
            if t._node is not None and t._graph is not g:
                continue
            key = id(t)
            prev = grads.get(key)
            grads[key] = gi if prev is None else prev + gi

    for key, t in leaves.items():
        gr = grads.get(key)
        t.grad = np.zeros_like(t.data) if gr is None else np.asarray(gr, dtype=t.dtype).reshape(t.shape)

    g.consumed = True
    g.nodes = []
    stack = _stack()
    if stack[-1] is g:
        stack[-1] = Graph(g.dtype)


def finite_diff_check(f: Callable[..., Tensor], x, h: float = 1e-5) -> float:
    """Max relative gap between analytic and central-difference gradients.

    ``x`` is a Tensor or a sequence of Tensors; ``f`` is called with them as
    positional arguments and must return a scalar. The tensors are promoted
    to float64 in place for the duration of the check and restored afterwards.
    Per-coordinate error is |a - n| / max(1e-8, |a| + |n|).
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    saved = [(t.data, t.requires_grad, t.grad) for t in xs]
    try:
        for t in xs:
            t.data = t.data.astype(np.float64)
            t.requires_grad = True
            t.grad = None
        with graph("float64"):
            out = f(*xs)
            if out.size != 1:
                raise GraphError(f"finite_diff_check needs a scalar function, got {out.shape}")
            if out._node is not None:
                backward(out)
        analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in xs]

        worst = 0.0
        with graph("float64"), no_grad():
            for t, a in zip(xs, analytic):
                flat = t.data.reshape(-1)
                af = a.reshape(-1)
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + h
                    fp = f(*xs).item()
                    flat[i] = orig - h
                    fm = f(*xs).item()
                    flat[i] = orig
                    num = (fp - fm) / (2.0 * h)
                    err = abs(af[i] - num) / max(1e-8, abs(af[i]) + abs(num))
                    worst = max(worst, err)
        return worst
    finally:
        for t, (d, rg, gr) in zip(xs, saved):
            t.data, t.requires_grad, t.grad = d, rg, gr


# -- randomness --------------------------------------------------------

class Rng:
    """Seeded stream backed by numpy's Philox4x64 counter-based generator.

    Philox output depends only on (key, counter), so a given seed yields
    the same stream on every platform. :meth:`spawn` derives independent
    child streams from ``(seed, tag)``.
    """

    def __init__(self, seed: int = 0, _key=None):
        self.seed = int(seed)
        key = _key if _key is not None else (self.seed,)
        self._ss = np.random.SeedSequence(key)
        self._key = tuple(key)
        self.gen = np.random.Generator(np.random.Philox(self._ss))

    def spawn(self, tag: int) -> "Rng":
        return Rng(self.seed, _key=self._key + (int(tag),))

    def normal(self, shape, std=1.0, mean=0.0) -> np.ndarray:
        return self.gen.normal(mean, std, size=shape)

    def uniform(self, shape, low=0.0, high=1.0) -> np.ndarray:
        return self.gen.uniform(low, high, size=shape)

    def permutation(self, n) -> np.ndarray:
        return self.gen.permutation(n)

    def choice(self, a, size, replace=False) -> np.ndarray:
        return self.gen.choice(a, size=size, replace=replace)

    def __repr__(self):
        return f"Rng(key={self._key})"


def kaiming_normal(rng: Rng, rows: int, cols: int, fan_in: int, dtype="float32") -> Tensor:
    """i.i.d. Normal(0, 2 / fan_in) entries."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    std = math.sqrt(2.0 / fan_in)
    return Tensor(rng.normal((rows, cols), std=std).astype(dtype))
