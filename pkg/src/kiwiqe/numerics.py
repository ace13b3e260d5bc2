"""Dense float64 tensors with a tape-based reverse-mode autodiff.

Operations are recorded on the active :class:`GradTape` whenever one of their
inputs requires a gradient.  ``tape.backward(loss)`` replays the recorded ops
in exact reverse order and leaves a ``.grad`` array on every tracked tensor.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with GradTape() as tape:
    ...     loss = (x * x).sum()
    >>> tape.backward(loss)[x]
    array([2., 4.])
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, check: bool = True):
        arr = np.asarray(data, dtype=DTYPE)
        if check and not np.all(np.isfinite(arr)):
            raise ValueError("tensor data contains NaN or Inf")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

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


class GradTape:
    """Records differentiable ops in forward order.

    Used as a context manager; nested tapes all see the same ops.  A tape
    belongs to the thread that opened it.
    """

    def __init__(self):
        self.ops: list[tuple[Tensor, tuple, Callable]] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().remove(self)
        return False

    def record(self, out: Tensor, parents: tuple, backward_fn: Callable) -> None:
        self.ops.append((out, parents, backward_fn))

    def backward(self, loss: Tensor) -> dict:
        """Propagate d(loss)/d(.) through the tape.

        Returns a dict mapping every tracked tensor (leaves and intermediates)
        to its gradient; leaves also get it stored in ``.grad``.
        """
        if not isinstance(loss, Tensor) or loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {getattr(loss, 'shape', None)}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        owners: dict[int, Tensor] = {id(loss): loss}
        for out, parents, fn in reversed(self.ops):
            g = grads.get(id(out))
            if g is None:
                continue
            parent_grads = fn(g)
            for p, pg in zip(parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
                    owners[key] = p
        result = {}
        for key, g in grads.items():
            t = owners[key]
            t.grad = g
            result[t] = g
        return result

    def gradient(self, loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
        grads = self.backward(loss)
        return [grads.get(t, np.zeros_like(t.data)) for t in wrt]


def backward(tape: GradTape, loss: Tensor) -> dict:
    return tape.backward(loss)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, check=False)


def _make(data: np.ndarray, parents: tuple, backward_fn: Callable) -> Tensor:
    out = Tensor(data, check=False)
    if any(p.requires_grad for p in parents):
        stack = _tape_stack()
        if stack:
            out.requires_grad = True
            stack[-1].record(out, parents, backward_fn)
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


# elementwise --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def square(x: Tensor) -> Tensor:
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


# shape ---------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    return _make(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def index(x: Tensor, idx) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate gradient."""
    def fn(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)
    return _make(x.data[idx], (x,), fn)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(_as_tensor(t) for t in tensors)
    out = np.stack([t.data for t in tensors], axis=axis)
    return _make(out, tensors, lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors))))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(_as_tensor(t) for t in tensors)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(out, tensors, lambda g: tuple(np.split(g, sizes, axis=axis)))


# reductions ----------------------------------------------------------------

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)
    return _make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), fn)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / n)


# linear algebra -------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def fn(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            extra = a.ndim - b.ndim
            if extra > 0 and a.shape[extra:-2] == b.shape[:-2]:
                # fold a's extra leading axes into the row axis: one GEMM per b-batch
                nb = b.ndim - 2
                order = tuple(range(extra, extra + nb)) + tuple(range(extra)) + (a.ndim - 2, a.ndim - 1)
                k, m = a.shape[-1], g.shape[-1]
                a2 = np.transpose(a.data, order).reshape(b.shape[:-2] + (-1, k))
                g2 = np.transpose(g, order).reshape(b.shape[:-2] + (-1, m))
                gb = np.swapaxes(a2, -1, -2) @ g2
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb
    return _make(a.data @ b.data, (a, b), fn)


def l2_norm_rows(x) -> Tensor:
    """Euclidean norm over the last axis; subgradient 0 at the origin."""
    x = _as_tensor(x)
    out = np.sqrt(np.sum(x.data * x.data, axis=-1))

    def fn(g):
        safe = np.where(out > 0, out, 1.0)
        return (g[..., None] * x.data / safe[..., None] * (out > 0)[..., None],)
    return _make(out, (x,), fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    def fn(g):
        gx = None
        if x.requires_grad:
            gh = g * gain.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return (gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape))
    return _make(xhat * gain.data + bias.data, (x, gain, bias), fn)


# simplex maps ---------------------------------------------------------------

def _softmax_np(z: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(z, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis.  ``mask`` (bool, broadcastable) drops entries."""
    z = _as_tensor(z)
    p = _softmax_np(z.data, mask)

    def fn(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)
    return _make(p, (z,), fn)


softmax_rows = softmax


def log_softmax(z) -> Tensor:
    z = _as_tensor(z)
    shifted = z.data - np.max(z.data, axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)
    return _make(out, (z,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def sparsemax_np(z: np.ndarray) -> np.ndarray:
    """Sort-and-threshold Euclidean projection onto the simplex (last axis)."""
    z = np.asarray(z, dtype=DTYPE)
    k = z.shape[-1]
    zs = -np.sort(-z, axis=-1)
    css = np.cumsum(zs, axis=-1)
    ks = np.arange(1, k + 1, dtype=DTYPE)
    support = 1.0 + ks * zs > css
    rho = support.sum(axis=-1, keepdims=True)
    tau = (np.take_along_axis(css, rho - 1, axis=-1) - 1.0) / rho
    return np.maximum(z - tau, 0.0)


def sparsemax(z) -> Tensor:
    """Sparsemax over the last axis.

    Backward uses the support-set Jacobian ``diag(s) - s s^T / |s|``.
    """
    z = _as_tensor(z)
    p = sparsemax_np(z.data)
    s = (p > 0).astype(DTYPE)

    def fn(g):
        gs = g * s
        return (s * (g - gs.sum(axis=-1, keepdims=True) / s.sum(axis=-1, keepdims=True)),)
    return _make(p, (z,), fn)


sparsemax_rows = sparsemax


def simplex_map(z, transform: str) -> Tensor:
    if transform == "softmax":
        return softmax(z)
    if transform == "sparsemax":
        return sparsemax(z)
    raise ValueError(f"unknown simplex transform {transform!r}")
