"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array and records, while grad mode is enabled, the
closure needed to push gradients back to its parents.  Calling
``backward()`` on a scalar tensor replays the tape in reverse topological
order and accumulates gradients on every tensor that requires them.

Training runs in float32; gradient checking constructs float64 tensors.
Mixed-precision graphs promote to float64 via normal numpy rules.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


_grad_enabled = True


class no_grad:
    """Context manager that disables tape recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """N-dimensional real array, optionally participating in the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_backward_done")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("cannot wrap a Tensor in a Tensor")
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self._parents: tuple = ()
        self._backward = None
        self._backward_done = False

    # -- introspection -----------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    # -- tape machinery ----------------------------------------------------

    def _add_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            g = _unbroadcast(g, self.data.shape)
        self.grad = g if self.grad is None else self.grad + g

    @staticmethod
    def _make(data: np.ndarray, parents: tuple, backward) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._backward_done = False
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    def backward(self) -> None:
        """Populate ``grad`` on every reachable tensor that requires it.

        The root must be a scalar; a second call on the same root raises.
        """
        if self.data.ndim != 0:
            raise ShapeError(f"backward root must be scalar, got shape {self.data.shape}")
        if self._backward_done:
            raise RuntimeError("backward already ran for this tensor; rebuild the graph or reset grads")
        self._backward_done = True

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- construction helpers ----------------------------------------------

    @staticmethod
    def zeros(shape, dtype=DEFAULT_DTYPE, requires_grad=False) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @staticmethod
    def ones(shape, dtype=DEFAULT_DTYPE, requires_grad=False) -> "Tensor":
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)

    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = self._lift(other)
        a, b = self, other
        out = Tensor._make(a.data + b.data, (a, b), None)

        def _bw(g):
            if a.requires_grad:
                a._add_grad(g)
            if b.requires_grad:
                b._add_grad(g)

        out._backward = _bw if out.requires_grad else None
        return out

    __radd__ = __add__

    def __neg__(self):
        a = self
        out = Tensor._make(-a.data, (a,), None)

        def _bw(g):
            a._add_grad(-g)

        out._backward = _bw if out.requires_grad else None
        return out

    def __sub__(self, other):
        other = self._lift(other)
        a, b = self, other
        out = Tensor._make(a.data - b.data, (a, b), None)

        def _bw(g):
            if a.requires_grad:
                a._add_grad(g)
            if b.requires_grad:
                b._add_grad(-g)

        out._backward = _bw if out.requires_grad else None
        return out

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        other = self._lift(other)
        a, b = self, other
        out = Tensor._make(a.data * b.data, (a, b), None)

        def _bw(g):
            if a.requires_grad:
                a._add_grad(g * b.data)
            if b.requires_grad:
                b._add_grad(g * a.data)

        out._backward = _bw if out.requires_grad else None
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        a, b = self, other
        out = Tensor._make(a.data / b.data, (a, b), None)

        def _bw(g):
            if a.requires_grad:
                a._add_grad(g / b.data)
            if b.requires_grad:
                b._add_grad(-g * a.data / (b.data * b.data))

        out._backward = _bw if out.requires_grad else None
        return out

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        a = self
        out = Tensor._make(a.data ** exponent, (a,), None)

        def _bw(g):
            a._add_grad(g * exponent * a.data ** (exponent - 1))

        out._backward = _bw if out.requires_grad else None
        return out

    def guarded_div(self, other):
        """Elementwise division defining 0/0 := 0 (zero gradient there)."""
        other = self._lift(other)
        a, b = self, other
        nz = b.data != 0
        safe = np.where(nz, b.data, 1)
        quotient = np.where(nz, a.data / safe, 0.0)
        out = Tensor._make(quotient, (a, b), None)

        def _bw(g):
            gm = g * nz
            if a.requires_grad:
                a._add_grad(gm / safe)
            if b.requires_grad:
                b._add_grad(-gm * quotient / safe)

        out._backward = _bw if out.requires_grad else None
        return out

    def maximum(self, other):
        """Elementwise max; at ties the gradient routes to ``other``."""
        other = self._lift(other)
        a, b = self, other
        take_a = a.data > b.data
        out = Tensor._make(np.where(take_a, a.data, b.data), (a, b), None)

        def _bw(g):
            if a.requires_grad:
                a._add_grad(g * take_a)
            if b.requires_grad:
                b._add_grad(g * ~take_a)

        out._backward = _bw if out.requires_grad else None
        return out

    # -- elementwise nonlinearities -------------------------------------------

    def sigmoid(self):
        a = self
        s = _stable_sigmoid(a.data)
        out = Tensor._make(s, (a,), None)

        def _bw(g):
            a._add_grad(g * s * (1.0 - s))

        out._backward = _bw if out.requires_grad else None
        return out

    def tanh(self):
        a = self
        t = np.tanh(a.data)
        out = Tensor._make(t, (a,), None)

        def _bw(g):
            a._add_grad(g * (1.0 - t * t))

        out._backward = _bw if out.requires_grad else None
        return out

    def relu(self):
        a = self
        mask = a.data > 0
        out = Tensor._make(np.where(mask, a.data, 0), (a,), None)

        def _bw(g):
            a._add_grad(g * mask)

        out._backward = _bw if out.requires_grad else None
        return out

    def log(self):
        a = self
        out = Tensor._make(np.log(a.data), (a,), None)

        def _bw(g):
            a._add_grad(g / a.data)

        out._backward = _bw if out.requires_grad else None
        return out

    def exp(self):
        a = self
        e = np.exp(a.data)
        out = Tensor._make(e, (a,), None)

        def _bw(g):
            a._add_grad(g * e)

        out._backward = _bw if out.requires_grad else None
        return out

    def clip(self, lo: float, hi: float):
        """Clamp values to [lo, hi]; gradient passes where lo <= x <= hi."""
        a = self
        inside = (a.data >= lo) & (a.data <= hi)
        out = Tensor._make(np.clip(a.data, lo, hi), (a,), None)

        def _bw(g):
            a._add_grad(g * inside)

        out._backward = _bw if out.requires_grad else None
        return out

    # -- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        out_data = a.data.sum(axis=axis, keepdims=keepdims)
        out = Tensor._make(np.asarray(out_data), (a,), None)

        def _bw(g):
            if axis is None:
                a._add_grad(np.broadcast_to(g, a.data.shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                a._add_grad(np.broadcast_to(gg, a.data.shape).copy())

        out._backward = _bw if out.requires_grad else None
        return out

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        else:
            n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max_reduce(self, axis=None):
        """Max over all elements (axis=None) or along one axis.

        The backward pass routes the gradient to the first maximal element
        (lowest flat index) so that ties break deterministically.
        """
        a = self
        if a.data.size == 0:
            raise ShapeError("max_reduce of an empty tensor")
        if axis is None:
            idx = int(np.argmax(a.data))
            out = Tensor._make(np.asarray(a.data.ravel()[idx]), (a,), None)

            def _bw(g):
                full = np.zeros_like(a.data)
                full.ravel()[idx] = g
                a._add_grad(full)

        else:
            idx = np.argmax(a.data, axis=axis)
            out_data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)
            out = Tensor._make(out_data, (a,), None)

            def _bw(g):
                full = np.zeros_like(a.data)
                np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
                a._add_grad(full)

        out._backward = _bw if out.requires_grad else None
        return out

    def softmax(self, axis: int = -1):
        a = self
        z = a.data - a.data.max(axis=axis, keepdims=True)
        e = np.exp(z)
        s = e / e.sum(axis=axis, keepdims=True)
        out = Tensor._make(s, (a,), None)

        def _bw(g):
            dot = (g * s).sum(axis=axis, keepdims=True)
            a._add_grad(s * (g - dot))

        out._backward = _bw if out.requires_grad else None
        return out

    # -- shape manipulation ------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        out = Tensor._make(a.data.reshape(shape), (a,), None)

        def _bw(g):
            a._add_grad(g.reshape(a.data.shape))

        out._backward = _bw if out.requires_grad else None
        return out

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        perm = axes if axes else tuple(reversed(range(a.data.ndim)))
        inv = np.argsort(perm)
        out = Tensor._make(np.ascontiguousarray(a.data.transpose(perm)), (a,), None)

        def _bw(g):
            a._add_grad(g.transpose(inv))

        out._backward = _bw if out.requires_grad else None
        return out

    def take(self, indices, axis: int = 0):
        """Gather slices along ``axis``; backward scatter-adds."""
        a = self
        idx = np.asarray(indices)
        out = Tensor._make(np.take(a.data, idx, axis=axis), (a,), None)

        def _bw(g):
            full = np.zeros_like(a.data)
            if axis == 0:
                np.add.at(full, idx, g)
            else:
                np.add.at(np.moveaxis(full, axis, 0), idx, np.moveaxis(g, axis, 0))
            a._add_grad(full)

        out._backward = _bw if out.requires_grad else None
        return out

    # -- matrix multiply -----------------------------------------------------------

    def __matmul__(self, other):
        other = self._lift(other)
        a, b = self, other
        ad, bd = a.data, b.data
        if ad.ndim == 0 or bd.ndim == 0:
            raise ShapeError("matmul requires at least 1-d operands")
        if ad.shape[-1] != (bd.shape[-2] if bd.ndim > 1 else bd.shape[0]):
            raise ShapeError(
                f"matmul inner dimensions differ: {ad.shape} @ {bd.shape}")
        out_data = ad @ bd
        out = Tensor._make(np.asarray(out_data), (a, b), None)

        def _bw(g):
            if ad.ndim == 1 and bd.ndim == 1:
                if a.requires_grad:
                    a._add_grad(g * bd)
                if b.requires_grad:
                    b._add_grad(g * ad)
            elif bd.ndim == 1:
                if a.requires_grad:
                    a._add_grad(g[..., None] * bd)
                if b.requires_grad:
                    b._add_grad(np.tensordot(g, ad, axes=(tuple(range(g.ndim)), tuple(range(g.ndim)))))
            elif ad.ndim == 1:
                if a.requires_grad:
                    a._add_grad(g @ np.swapaxes(bd, -1, -2))
                if b.requires_grad:
                    b._add_grad(np.einsum("k,...n->...kn", ad, g) if bd.ndim > 2 else np.outer(ad, g))
            else:
                if a.requires_grad:
                    a._add_grad(_unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape))
                if b.requires_grad:
                    b._add_grad(_unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape))

        out._backward = _bw if out.requires_grad else None
        return out


def zero_grads(params) -> None:
    """Reset gradients on an iterable (or dict) of tensors."""
    tensors = params.values() if isinstance(params, dict) else params
    for t in tensors:
        t.grad = None
