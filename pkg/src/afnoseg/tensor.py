"""Reverse-mode autodiff tensors over numpy arrays.

The tape is implicit: every operation returns a new ``Tensor`` that keeps
references to its parents and a closure mapping the output cotangent to
parent cotangents.  Calling :meth:`Tensor.backward` on a scalar walks the
graph once in reverse topological order.

Conventions
-----------
* Activation volumes are dense row-major arrays of shape ``(B, D, H, W, C)``
  (batch outermost, channels innermost).  Half spectra are complex arrays of
  shape ``(B, D, H, W//2 + 1, C)``.
* Real data is float32 or float64, selected per run; complex tensors pair up
  as complex64/complex128.
* The gradient of a real scalar with respect to a complex tensor is stored
  as ``dL/d(re) + 1j * dL/d(im)``, so a complex weight updates exactly like
  two independent real arrays.
* Tensors are treated as immutable once constructed; the single sanctioned
  mutation is the optimizer writing into leaf ``.data`` between steps.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape construction inside the block (inference, oracles)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def real_dtype(precision: int) -> np.dtype:
    if precision == 32:
        return np.dtype(np.float32)
    if precision == 64:
        return np.dtype(np.float64)
    raise ValueError(f"precision must be 32 or 64, got {precision!r}")


def complex_dtype(rdtype) -> np.dtype:
    return np.dtype(np.complex64 if np.dtype(rdtype) == np.float32 else np.complex128)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a cotangent down to ``shape`` (the adjoint of numpy broadcasting)."""
    shape = tuple(shape)
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def as_tensor(x, like: "Tensor | None" = None) -> "Tensor":
    """Wrap plain data as a constant tensor, matching ``like``'s dtype for scalars."""
    if isinstance(x, Tensor):
        return x
    if like is not None and np.isscalar(x):
        return Tensor(np.asarray(x, dtype=like.data.dtype))
    return Tensor(np.asarray(x))


class Tensor:
    """One node of the tape: an ndarray plus optional gradient machinery."""

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @classmethod
    def from_op(cls, data, parents, vjp) -> "Tensor":
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out = cls(data, requires_grad=track)
        if track:
            out._parents = tuple(parents)
            out._vjp = vjp
        return out

    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # ------------------------------------------------------------------
    def backward(self, grad=None):
        """Accumulate gradients of this (scalar) tensor into all leaves."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit cotangent needs a scalar")
            grad = np.ones_like(self.data)
        order = self._toposort()
        _accumulate(self, np.asarray(grad))
        for node in order:
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is not None and parent.requires_grad:
                    _accumulate(parent, g)
            node.grad = None  # intermediate cotangents are not kept

    def _toposort(self):
        out, seen, stack = [], set(), [(self, False)]
        while stack:
            node, emitted = stack.pop()
            if emitted:
                out.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p._vjp is not None:
                    stack.append((p, False))
        out.reverse()
        return out

    # -- arithmetic -----------------------------------------------------
    def __add__(self, other):
        a, b = self, as_tensor(other, like=self)
        data = a.data + b.data

        def vjp(g):
            return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

        return Tensor.from_op(data, (a, b), vjp)

    __radd__ = __add__

    def __neg__(self):
        x = self

        def vjp(g):
            return (-g,)

        return Tensor.from_op(-x.data, (x,), vjp)

    def __sub__(self, other):
        return self + (-as_tensor(other, like=self))

    def __rsub__(self, other):
        return as_tensor(other, like=self) + (-self)

    def __mul__(self, other):
        a, b = self, as_tensor(other, like=self)

        def vjp(g):
            ga = _unbroadcast(g * np.conjugate(b.data), a.data.shape)
            gb = _unbroadcast(g * np.conjugate(a.data), b.data.shape)
            return ga, gb

        return Tensor.from_op(a.data * b.data, (a, b), vjp)

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, as_tensor(other, like=self)
        data = a.data / b.data

        def vjp(g):
            ga = _unbroadcast(g * np.conjugate(1.0 / b.data), a.data.shape)
            gb = _unbroadcast(-g * np.conjugate(a.data / (b.data * b.data)), b.data.shape)
            return ga, gb

        return Tensor.from_op(data, (a, b), vjp)

    def __rtruediv__(self, other):
        return as_tensor(other, like=self).__truediv__(self)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape ops ------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        x = self
        orig = x.data.shape

        def vjp(g):
            return (g.reshape(orig),)

        return Tensor.from_op(x.data.reshape(shape), (x,), vjp)

    def transpose(self, axes):
        x = self
        inverse = tuple(np.argsort(axes))

        def vjp(g):
            return (g.transpose(inverse),)

        return Tensor.from_op(x.data.transpose(axes), (x,), vjp)

    def __getitem__(self, idx):
        x = self
        data = x.data[idx]

        def vjp(g):
            gx = np.zeros_like(x.data)
            gx[idx] = g  # basic slicing only: no repeated indices
            return (gx,)

        return Tensor.from_op(data, (x,), vjp)

    # -- reductions -----------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        x = self
        if axis is not None and not isinstance(axis, tuple):
            axis = (axis,)
        if axis is not None:
            axis = tuple(a % x.data.ndim for a in axis)
        data = x.data.sum(axis=axis, keepdims=keepdims)
        orig = x.data.shape

        def vjp(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            return (np.broadcast_to(gg, orig).copy(),)

        return Tensor.from_op(data, (x,), vjp)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        else:
            ax = axis if isinstance(axis, tuple) else (axis,)
            n = int(np.prod([self.data.shape[a] for a in ax]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


def _accumulate(t: Tensor, g: np.ndarray):
    if np.iscomplexobj(g) and not np.iscomplexobj(t.data):
        g = g.real  # projection onto the real directions of a real parent
    g = np.asarray(g, dtype=t.data.dtype)
    t.grad = g if t.grad is None else t.grad + g


def matmul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b)
    data = a.data @ b.data

    def vjp(g):
        bt = np.conjugate(np.swapaxes(b.data, -1, -2))
        at = np.conjugate(np.swapaxes(a.data, -1, -2))
        ga = _unbroadcast(g @ bt, a.data.shape)
        gb = _unbroadcast(at @ g, b.data.shape)
        return ga, gb

    return Tensor.from_op(data, (a, b), vjp)


def concat(tensors, axis: int) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    axis = axis % ts[0].data.ndim
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def vjp(g):
        sl = [slice(None)] * g.ndim
        outs = []
        for i in range(len(ts)):
            sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            outs.append(g[tuple(sl)])
        return tuple(outs)

    return Tensor.from_op(data, tuple(ts), vjp)
