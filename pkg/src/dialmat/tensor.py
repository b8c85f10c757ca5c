"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every operation records its operands and a backward closure on the output
tensor. ``backward`` topologically sorts the recorded graph and walks it in
reverse, so gradients can be taken with respect to any leaf, including
non-parameter leaves such as adversarial perturbations.
"""

from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

_state = threading.local()


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, np.ndarray) and data.dtype == np.float64:
            self.data = data
        else:
            self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    # construction helpers -------------------------------------------------

    @classmethod
    def _make(cls, data: np.ndarray, parents: Sequence[Tensor],
              backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
        out = cls(data)
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self) -> None:
        backward(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


# elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data + b.data, (a, b),
                        lambda g: (_unbroadcast(g, sa) if a.requires_grad else None,
                                   _unbroadcast(g, sb) if b.requires_grad else None))


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data - b.data, (a, b),
                        lambda g: (_unbroadcast(g, sa) if a.requires_grad else None,
                                   _unbroadcast(-g, sb) if b.requires_grad else None))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    ad, bd = a.data, b.data
    return Tensor._make(ad * bd, (a, b),
                        lambda g: (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                                   _unbroadcast(g * ad, bd.shape) if b.requires_grad else None))


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return Tensor._make(out, (a, b),
                        lambda g: (_unbroadcast(g / bd, ad.shape),
                                   _unbroadcast(-g * out / bd, bd.shape)))


def power(a: Tensor, exponent: float) -> Tensor:
    ad = a.data
    return Tensor._make(ad ** exponent, (a,),
                        lambda g: (g * exponent * ad ** (exponent - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor._make(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return Tensor._make(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor._make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor._make(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._make(a.data * mask, (a,), lambda g: (g * mask,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x * x * x)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def _back(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return Tensor._make(out, (a,), _back)


# reductions and shape ops ------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def _back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), _back)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor._make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def _is_advanced(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def getitem(a: Tensor, index) -> Tensor:
    shape = a.shape
    advanced = _is_advanced(index)

    def _back(g):
        out = np.zeros(shape)
        if advanced:
            np.add.at(out, index, g)
        else:
            out[index] = g
        return (out,)

    return Tensor._make(a.data[index], (a,), _back)


def pad(a: Tensor, widths) -> Tensor:
    """Zero-pad; ``widths`` follows ``np.pad``."""
    slices = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return Tensor._make(np.pad(a.data, widths), (a,), lambda g: (g[slices],))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concat of an empty list")
    parts = [_wrap(p) for p in parts]
    nd = parts[0].ndim
    ax = axis % nd if nd else 0
    ref = parts[0].shape
    for p in parts[1:]:
        if p.ndim != nd or any(p.shape[i] != ref[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat along axis {axis}: shapes {ref} and {p.shape} disagree")
    if len(parts) == 1:
        return parts[0]
    bounds = np.cumsum([p.shape[ax] for p in parts])[:-1]

    def _back(g):
        return tuple(np.split(g, bounds, axis=ax))

    return Tensor._make(np.concatenate([p.data for p in parts], axis=ax), parts, _back)


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_wrap(p) for p in parts]
    return concat([reshape(p, p.shape[:axis] + (1,) + p.shape[axis:]) if axis >= 0
                   else reshape(p, p.shape + (1,)) for p in parts], axis=axis)


# linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product; leading dimensions broadcast as in ``np.matmul``."""
    a, b = _wrap(a), _wrap(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply shapes {ad.shape} and {bd.shape}")
    if bd.ndim == 2 and ad.ndim > 2:
        # stacked activations times one weight matrix: flatten so BLAS sees one GEMM
        lead = ad.shape[:-1]
        a2 = ad.reshape(-1, ad.shape[-1])

        def _back2(g):
            g2 = g.reshape(-1, g.shape[-1])
            return ((g2 @ bd.T).reshape(ad.shape) if a.requires_grad else None,
                    a2.T @ g2 if b.requires_grad else None)

        return Tensor._make((a2 @ bd).reshape(lead + (bd.shape[-1],)), (a, b), _back2)

    def _back(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(np.matmul(ad, bd), (a, b), _back)


# neural-net primitives ---------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def _back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (x,), _back)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def _back(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (x,), _back)


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply the optional affine map."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = xd.shape[-1]

    def _back(g):
        return (inv * (g - g.mean(axis=-1, keepdims=True)
                       - xhat * (g * xhat).sum(axis=-1, keepdims=True) / n),)

    out = Tensor._make(xhat, (x,), _back)
    if gain is not None:
        out = out * gain
    if bias is not None:
        out = out + bias
    return out


def embed(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table``; gradients scatter-add back for repeated ids."""
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = ids[(ids < 0) | (ids >= vocab)][0]
        raise IndexError(f"id {int(bad)} out of vocabulary range [0, {vocab})")

    def _back(g):
        out = np.zeros(table.shape)
        np.add.at(out, ids, g)
        return (out,)

    return Tensor._make(table.data[ids], (table,), _back)


def cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under softmax(``logits``).

    ``weights`` optionally scales each row's term; the sum is still divided by
    the batch size, so zero-weight rows simply drop out.
    """
    targets = np.asarray(targets, dtype=np.int64)
    b, c = logits.shape
    if targets.shape != (b,):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise IndexError(f"target out of range [0, {c})")
    w = np.ones(b) if weights is None else np.asarray(weights, dtype=np.float64)
    lp = log_softmax(logits, axis=-1)
    picked = getitem(lp, (np.arange(b), targets))
    return -(picked * w).sum() * (1.0 / b)


# backward pass ---------------------------------------------------------------

def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``, every node after its operands."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every grad-enabled leaf.

    Gradients add to whatever is already stored; call ``zero_grad`` between
    independent passes.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any grad-enabled tensor")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
