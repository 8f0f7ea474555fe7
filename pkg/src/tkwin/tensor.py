"""
Dense float64 tensors with reverse-mode differentiation.

A :class:`DiffTensor` wraps a numpy array. Every operation in this module
returns a new tensor that remembers its parents and a closure mapping the
output gradient to the parent gradients; :func:`backward` walks that graph in
reverse topological order and accumulates into the ``grad`` of every leaf that
was created with ``requires_grad=True``.

Only the operations the rest of the package needs are provided. Elementwise
binary operations follow numpy broadcasting and sum gradients back to the
operand shapes.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError, ParameterError, PartitionError

__all__ = [
    "DiffTensor",
    "tensor",
    "constant",
    "zero_grad",
    "backward",
    "matmul",
    "softmax",
    "softmax_rows",
    "logsumexp",
    "mean_axis",
    "sum_axis",
    "concat",
    "take",
    "reshape",
    "transpose",
    "exp",
    "log",
    "sqrt",
    "silu",
    "pad2d",
    "conv2d",
    "depthwise_conv2d",
    "max_pool2x2",
    "upsample_nearest",
    "detach",
    "topk_desc",
]

_BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class DiffTensor:
    """N-d float64 array with an optional gradient accumulator.

    ``grad`` exists iff ``requires_grad`` and always has the shape of ``data``.
    Interior nodes of a graph carry ``requires_grad=True`` when any parent does,
    but only leaves accumulate gradients across :func:`backward` calls.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self._parents: tuple[DiffTensor, ...] = tuple(_parents)
        self._backward: Optional[_BackwardFn] = _backward

    # -- views -----------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the data."""
        return self.data.reshape(-1)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"DiffTensor(shape={self.shape}{flag})"

    # -- operators -------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)


def tensor(data, requires_grad: bool = False) -> DiffTensor:
    return DiffTensor(data, requires_grad=requires_grad)


def constant(data) -> DiffTensor:
    return data if isinstance(data, DiffTensor) else DiffTensor(data)


def detach(t: DiffTensor) -> DiffTensor:
    """Same values, no graph: the stop-gradient operation."""
    return DiffTensor(t.data)


def zero_grad(tensors: Iterable[DiffTensor]) -> None:
    for t in tensors:
        t.zero_grad()


def _make(data: np.ndarray, parents: Sequence[DiffTensor], fn: _BackwardFn) -> DiffTensor:
    needs = any(p.requires_grad for p in parents)
    out = DiffTensor.__new__(DiffTensor)
    out.data = data
    out.requires_grad = needs
    out.grad = None
    out._parents = tuple(parents) if needs else ()
    out._backward = fn if needs else None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# graph traversal


def backward(loss: DiffTensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    order: list[DiffTensor] = []
    seen: set[int] = set()
    stack: list[tuple[DiffTensor, bool]] = [(loss, False)]
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

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.array(pg, dtype=np.float64, copy=True)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> DiffTensor:
    a, b = constant(a), constant(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> DiffTensor:
    a, b = constant(a), constant(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> DiffTensor:
    a, b = constant(a), constant(b)
    ad, bd = a.data, b.data

    def fn(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), fn)


def div(a, b) -> DiffTensor:
    a, b = constant(a), constant(b)
    ad, bd = a.data, b.data

    def fn(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape)

    return _make(ad / bd, (a, b), fn)


def power(a: DiffTensor, exponent: float) -> DiffTensor:
    ad = a.data
    out = ad**exponent
    return _make(out, (a,), lambda g: (g * exponent * ad ** (exponent - 1.0),))


def exp(a: DiffTensor) -> DiffTensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: DiffTensor) -> DiffTensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a: DiffTensor) -> DiffTensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def silu(a: DiffTensor) -> DiffTensor:
    x = a.data
    sig = expit(x)
    return _make(x * sig, (a,), lambda g: (g * sig * (1.0 + x * (1.0 - sig)),))


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    """Matrix product with numpy batching rules over leading axes."""
    a, b = constant(a), constant(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def fn(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), fn)


def sum_axis(a: DiffTensor, axis=None, keepdims: bool = False) -> DiffTensor:
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(np.asarray(out, dtype=np.float64), (a,), fn)


def mean_axis(a: DiffTensor, axis: int, keepdims: bool = False) -> DiffTensor:
    """Arithmetic mean along ``axis``; the axis is squeezed unless ``keepdims``."""
    if not -a.ndim <= axis < a.ndim:
        raise ParameterError(f"mean_axis: axis {axis} out of range for rank {a.ndim}")
    count = a.shape[axis]
    return sum_axis(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def logsumexp(a: DiffTensor, axis: int = -1, keepdims: bool = False) -> DiffTensor:
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    s = np.sum(np.exp(x - m), axis=axis, keepdims=True)
    out = m + np.log(s)
    weights = np.exp(x - out)

    def fn(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * weights,)

    return _make(out if keepdims else np.squeeze(out, axis=axis), (a,), fn)


def softmax(a: DiffTensor, axis: int = -1, temperature: float = 1.0) -> DiffTensor:
    """Normalized exponential along ``axis`` of ``a / temperature``."""
    if not temperature > 0:
        raise ParameterError(f"softmax temperature must be positive, got {temperature}")
    x = a.data / temperature
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    out = e / np.sum(e, axis=axis, keepdims=True)

    def fn(g):
        inner = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - inner) / temperature,)

    return _make(out, (a,), fn)


def softmax_rows(m: DiffTensor, temperature: float = 1.0) -> DiffTensor:
    return softmax(m, axis=-1, temperature=temperature)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: DiffTensor, shape) -> DiffTensor:
    src = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: DiffTensor, axes=None) -> DiffTensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def concat(parts: Sequence[DiffTensor], axis: int = 0) -> DiffTensor:
    """Join tensors along ``axis``; every other extent must agree."""
    parts = [constant(p) for p in parts]
    if not parts:
        raise DimensionError("concat: no parts given")
    ref = parts[0].shape
    ax = axis % len(ref)
    for p in parts[1:]:
        if len(p.shape) != len(ref) or any(
            x != y for i, (x, y) in enumerate(zip(p.shape, ref)) if i != ax
        ):
            raise DimensionError(
                f"concat: ragged shapes {[q.shape for q in parts]} along axis {axis}"
            )
    bounds = np.cumsum([p.shape[ax] for p in parts])[:-1]

    def fn(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(np.concatenate([p.data for p in parts], axis=ax), parts, fn)


def take(a: DiffTensor, indices, axis: int = 0) -> DiffTensor:
    """Gather slices along ``axis``; repeated indices accumulate in the gradient."""
    idx = np.asarray(indices, dtype=np.intp)
    shape = a.shape
    ax = axis % a.ndim

    def fn(g):
        grad = np.zeros(shape)
        moved = np.moveaxis(grad, ax, 0)
        gm = np.moveaxis(g, list(range(ax, ax + idx.ndim)), list(range(idx.ndim)))
        np.add.at(moved, idx, gm)
        return (grad,)

    return _make(np.take(a.data, idx, axis=ax), (a,), fn)


def getitem(a: DiffTensor, index) -> DiffTensor:
    shape = a.shape

    def fn(g):
        grad = np.zeros(shape)
        np.add.at(grad, index, g)
        return (grad,)

    return _make(np.array(a.data[index], dtype=np.float64), (a,), fn)


# ---------------------------------------------------------------------------
# image operations; layout is (H, W, C) for a single image


def pad2d(x: DiffTensor, amount: int, mode: str = "zero") -> DiffTensor:
    """Pad the two leading (spatial) axes by ``amount`` on every side."""
    if amount == 0:
        return x
    if mode == "zero":
        widths = [(amount, amount), (amount, amount)] + [(0, 0)] * (x.ndim - 2)
        h, w = x.shape[:2]
        return _make(
            np.pad(x.data, widths),
            (x,),
            lambda g: (g[amount : amount + h, amount : amount + w],),
        )
    if mode == "circular":
        h, w = x.shape[:2]
        rows = np.arange(-amount, h + amount) % h
        cols = np.arange(-amount, w + amount) % w
        return take(take(x, rows, axis=0), cols, axis=1)
    raise ParameterError(f"unknown padding mode {mode!r}")


def _check_stride(h: int, w: int, stride: int) -> None:
    if stride not in (1, 2):
        raise ParameterError(f"stride must be 1 or 2, got {stride}")
    if stride == 2 and (h % 2 or w % 2):
        raise PartitionError(f"stride-2 convolution needs even extents, got {h}x{w}")


def conv2d(x: DiffTensor, kernel: DiffTensor, stride: int = 1, padding: str = "zero") -> DiffTensor:
    """Dense k×k convolution (cross-correlation), 'same' padding.

    ``x`` is (H, W, Cin), ``kernel`` is (k, k, Cin, Cout) with odd k.
    """
    h, w, cin = x.shape
    k = kernel.shape[0]
    if kernel.shape[2] != cin:
        raise DimensionError(f"conv2d: input channels {cin} vs kernel {kernel.shape}")
    _check_stride(h, w, stride)
    xp = pad2d(x, k // 2, padding)
    pd, kd = xp.data, kernel.data
    oh, ow = h // stride, w // stride
    out = np.zeros((oh, ow, kernel.shape[3]))
    for dy in range(k):
        for dx in range(k):
            out += pd[dy : dy + h : stride, dx : dx + w : stride] @ kd[dy, dx]

    def fn(g):
        gp = np.zeros_like(pd)
        gk = np.zeros_like(kd)
        for dy in range(k):
            for dx in range(k):
                patch = pd[dy : dy + h : stride, dx : dx + w : stride]
                gk[dy, dx] = patch.reshape(-1, cin).T @ g.reshape(-1, g.shape[-1])
                gp[dy : dy + h : stride, dx : dx + w : stride] += g @ kd[dy, dx].T
        return gp, gk

    return _make(out, (xp, kernel), fn)


def depthwise_conv2d(
    x: DiffTensor, kernel: DiffTensor, stride: int = 1, padding: str = "zero"
) -> DiffTensor:
    """Per-channel k×k convolution; ``kernel`` is (k, k, C)."""
    h, w, c = x.shape
    k = kernel.shape[0]
    if kernel.shape[2] != c:
        raise DimensionError(f"depthwise_conv2d: input channels {c} vs kernel {kernel.shape}")
    _check_stride(h, w, stride)
    xp = pad2d(x, k // 2, padding)
    pd, kd = xp.data, kernel.data
    out = np.zeros((h // stride, w // stride, c))
    for dy in range(k):
        for dx in range(k):
            out += pd[dy : dy + h : stride, dx : dx + w : stride] * kd[dy, dx]

    def fn(g):
        gp = np.zeros_like(pd)
        gk = np.zeros_like(kd)
        for dy in range(k):
            for dx in range(k):
                patch = pd[dy : dy + h : stride, dx : dx + w : stride]
                gk[dy, dx] = np.sum(patch * g, axis=(0, 1))
                gp[dy : dy + h : stride, dx : dx + w : stride] += g * kd[dy, dx]
        return gp, gk

    return _make(out, (xp, kernel), fn)


def max_pool2x2(x: DiffTensor) -> DiffTensor:
    h, w, c = x.shape
    _check_stride(h, w, 2)
    blocks = x.data.reshape(h // 2, 2, w // 2, 2, c).transpose(0, 2, 4, 1, 3).reshape(
        h // 2, w // 2, c, 4
    )
    winner = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, winner[..., None], axis=-1)[..., 0]

    def fn(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, winner[..., None], g[..., None], axis=-1)
        grad = gb.reshape(h // 2, w // 2, c, 2, 2).transpose(0, 3, 1, 4, 2).reshape(h, w, c)
        return (grad,)

    return _make(out, (x,), fn)


def upsample_nearest(x: DiffTensor, factor: int = 2) -> DiffTensor:
    h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=0), factor, axis=1)

    def fn(g):
        return (g.reshape(h, factor, w, factor, c).sum(axis=(1, 3)),)

    return _make(out, (x,), fn)


# ---------------------------------------------------------------------------
# selection (not differentiable)


def topk_desc(v, k: int) -> list[int]:
    """Indices of the ``k`` largest entries, largest first; ties go to the lower index."""
    arr = np.asarray(v.data if isinstance(v, DiffTensor) else v, dtype=np.float64).reshape(-1)
    if not 1 <= k <= arr.size:
        raise ParameterError(f"topk_desc: k={k} outside [1, {arr.size}]")
    order = np.lexsort((np.arange(arr.size), -arr))
    return [int(i) for i in order[:k]]
