"""Dense float64 tensors with tape-based reverse-mode autodiff.

Define-by-run: every op records a backward closure on its output node;
``backward`` walks the tape in reverse topological order and consumes it.
All storage is contiguous row-major float64, which keeps checkpoints
bit-exact and gradient checks tight.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """A dense float64 array plus optional gradient and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return multiply(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> None:
        backward(self)


# grad mode ---------------------------------------------------------------

_grad_mode = threading.local()


def _grad_enabled() -> bool:
    return getattr(_grad_mode, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording (inference mode)."""
    prev = _grad_enabled()
    _grad_mode.enabled = False
    try:
        yield
    finally:
        _grad_mode.enabled = prev


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._parents = ()
    out._backward_fn = None
    out.requires_grad = _grad_enabled() and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    # always copy on first store: g may be a view or shared with a sibling
    if t.grad is None:
        t.grad = np.array(g)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar loss, consuming the tape.

    Gradients accumulate into every grad-enabled ancestor's ``.grad``.
    """
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")

    # iterative topological order (graphs can be deep)
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p._backward_fn is not None:
                stack.append((p, False))
            elif id(p) not in visited and p.requires_grad:
                visited.add(id(p))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        fn = node._backward_fn
        if fn is not None and node.grad is not None:
            fn(node.grad)
        if node is not loss and fn is not None:
            node.grad = None  # intermediate: free after use
        node._parents = ()
        node._backward_fn = None


# primitive ops ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), bwd)


def multiply(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), bwd)


def scale(a, s: float) -> Tensor:
    a = _wrap(a)
    s = float(s)
    out_data = a.data * s

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * s)

    return _make(out_data, (a,), bwd)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ValueError("matmul requires at least 1-d operands")
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            if b.ndim == 1:
                ga = np.multiply.outer(g, b.data) if a.ndim > 1 else g * b.data
            else:
                ga = g @ np.swapaxes(b.data, -1, -2)
            _accum(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            if a.ndim == 1:
                gb = np.multiply.outer(a.data, g) if b.ndim > 1 else a.data * g
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
            _accum(b, _unbroadcast(gb, b.shape))

    return _make(out_data, (a, b), bwd)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    out_data = np.ascontiguousarray(a.data.reshape(shape))

    def bwd(g):
        if a.requires_grad:
            _accum(a, g.reshape(a.shape))

    return _make(out_data, (a,), bwd)


def transpose(a, axes) -> Tensor:
    a = _wrap(a)
    axes = tuple(axes)
    out_data = np.ascontiguousarray(a.data.transpose(axes))
    inv = tuple(int(i) for i in np.argsort(axes))

    def bwd(g):
        if a.requires_grad:
            _accum(a, np.ascontiguousarray(g.transpose(inv)))

    return _make(out_data, (a,), bwd)


def concat(tensors: Sequence, axis: int) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(int(lo), int(hi))
                _accum(t, g[tuple(idx)])

    return _make(out_data, ts, bwd)


def slice_(a, key) -> Tensor:
    a = _wrap(a)
    out_data = np.ascontiguousarray(a.data[key])

    def bwd(g):
        if a.requires_grad:
            full = np.zeros(a.shape)
            full[key] = g
            _accum(a, full)

    return _make(out_data, (a,), bwd)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)
    if np.isscalar(out_data) or out_data.ndim == 0:
        out_data = np.asarray(out_data).reshape(())

    def bwd(g):
        if not a.requires_grad:
            return
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.shape))

    return _make(out_data, (a,), bwd)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    n = a.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            dot = (g * out_data).sum(axis=-1, keepdims=True)
            _accum(a, out_data * (g - dot))

    return _make(out_data, (a,), bwd)


def rms_norm(a, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to unit root-mean-square (no learned gain)."""
    a = _wrap(a)
    ms = np.mean(a.data * a.data, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(ms + eps)
    out_data = a.data * inv

    def bwd(g):
        if a.requires_grad:
            n = a.shape[-1]
            dot = (g * a.data).sum(axis=-1, keepdims=True)
            _accum(a, inv * g - (inv**3 / n) * dot * a.data)

    return _make(out_data, (a,), bwd)


def gelu(a) -> Tensor:
    """Gaussian-error linear unit, exact erf form."""
    a = _wrap(a)
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    out_data = a.data * cdf

    def bwd(g):
        if a.requires_grad:
            pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)
            _accum(a, g * (cdf + a.data * pdf))

    return _make(out_data, (a,), bwd)


def embedding(table, ids) -> Tensor:
    """Row lookup ``table[ids]`` with scatter-add backward."""
    table = _wrap(table)
    ids = np.asarray(ids, dtype=np.int64)
    out_data = np.ascontiguousarray(table.data[ids])

    def bwd(g):
        if table.requires_grad:
            full = np.zeros(table.shape)
            np.add.at(full, ids, g)
            _accum(table, full)

    return _make(out_data, (table,), bwd)


def rope_rotate(a, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate consecutive pairs of the last axis by per-position angles.

    ``cos``/``sin`` have shape broadcastable to ``a.shape[:-1] + (D/2,)``;
    pair ``(2i, 2i+1)`` of the last axis is rotated by the angle whose
    cosine/sine sits at index ``i``. The backward pass is the inverse
    rotation (the map is orthogonal per pair).
    """
    a = _wrap(a)
    if a.shape[-1] % 2 != 0:
        raise ValueError("rope_rotate needs an even last axis")
    x = a.data.reshape(a.shape[:-1] + (a.shape[-1] // 2, 2))
    x1, x2 = x[..., 0], x[..., 1]
    out = np.empty_like(x)
    out[..., 0] = x1 * cos - x2 * sin
    out[..., 1] = x1 * sin + x2 * cos
    out_data = np.ascontiguousarray(out.reshape(a.shape))

    def bwd(g):
        if a.requires_grad:
            gp = g.reshape(out.shape)
            g1, g2 = gp[..., 0], gp[..., 1]
            back = np.empty_like(gp)
            back[..., 0] = g1 * cos + g2 * sin
            back[..., 1] = -g1 * sin + g2 * cos
            _accum(a, back.reshape(a.shape))

    return _make(out_data, (a,), bwd)


# fused attention ----------------------------------------------------------
#
# The (…, T, T) probability matrix dominates both memory traffic and
# allocation cost at training shapes, so attention is one primitive with
# pooled scratch buffers instead of a softmax/matmul composite.


class _BufferPool:
    def __init__(self):
        self._free: dict[tuple[int, ...], list[np.ndarray]] = {}
        self._lock = threading.Lock()

    def take(self, shape: tuple[int, ...]) -> np.ndarray:
        with self._lock:
            stack = self._free.get(shape)
            if stack:
                return stack.pop()
        return np.empty(shape)

    def give(self, arr: np.ndarray) -> None:
        with self._lock:
            self._free.setdefault(arr.shape, []).append(arr)


_pool = _BufferPool()


def attention(q, k, v) -> Tensor:
    """Scaled dot-product attention over stacked batch dims.

    Inputs are ``(..., T, D)``; scores are scaled by ``1/sqrt(D)`` and
    softmaxed over the key axis.
    """
    q, k, v = _wrap(q), _wrap(k), _wrap(v)
    if q.shape != k.shape or q.shape != v.shape:
        raise ValueError(f"attention expects equal shapes, got {q.shape}, {k.shape}, {v.shape}")
    t, d = q.shape[-2], q.shape[-1]
    alpha = 1.0 / np.sqrt(d)
    pshape = q.shape[:-1] + (t,)

    probs = _pool.take(pshape)
    np.matmul(q.data * alpha, np.swapaxes(k.data, -1, -2), out=probs)
    mx = probs.max(axis=-1, keepdims=True)
    np.subtract(probs, mx, out=probs)
    np.exp(probs, out=probs)
    np.divide(probs, probs.sum(axis=-1, keepdims=True), out=probs)
    out_data = probs @ v.data

    track = _grad_enabled() and (q.requires_grad or k.requires_grad or v.requires_grad)
    if not track:
        _pool.give(probs)
        return _make(out_data, (), None)

    def bwd(g):
        if v.requires_grad:
            _accum(v, np.swapaxes(probs, -1, -2) @ g)
        dp = _pool.take(pshape)
        np.matmul(g, np.swapaxes(v.data, -1, -2), out=dp)
        np.multiply(dp, probs, out=dp)
        rowsum = dp.sum(axis=-1, keepdims=True)
        np.subtract(dp, rowsum * probs, out=dp)
        if q.requires_grad:
            _accum(q, (dp @ k.data) * alpha)
        if k.requires_grad:
            _accum(k, (np.swapaxes(dp, -1, -2) @ q.data) * alpha)
        _pool.give(dp)
        _pool.give(probs)

    return _make(out_data, (q, k, v), bwd)


# gradient checking ---------------------------------------------------------


def grad_check(f, x: Tensor, eps: float = 1e-5, coords=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must map ``x`` to a scalar Tensor. ``coords`` optionally limits
    the check to a subset of flat coordinate indices (for large inputs).
    Error per coordinate is ``|analytic - cd| / max(1e-12, |cd|)``.
    """
    x.requires_grad = True
    x.zero_grad()
    out = f(x)
    backward(out)
    analytic = x.grad.reshape(-1).copy()
    x.zero_grad()

    flat = x.data.reshape(-1)
    if coords is None:
        coords = range(flat.size)
    worst = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + eps
        with no_grad():
            fp = f(x).item()
        flat[i] = orig - eps
        with no_grad():
            fm = f(x).item()
        flat[i] = orig
        cd = (fp - fm) / (2.0 * eps)
        err = abs(analytic[i] - cd) / max(1e-12, abs(cd))
        worst = max(worst, err)
    return worst
