"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the operations the reconstruction networks need are implemented.  Two
properties matter more than generality here and drive the implementation:

* determinism -- every forward and backward pass uses fixed evaluation and
  reduction orders, so identical seeds give bit-identical results;
* batch independence -- dense products run through a fixed-order kernel in
  which each output row depends only on the corresponding input row, making
  batched evaluation bit-identical to pointwise evaluation (BLAS kernels do
  not guarantee this across batch sizes).
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def _mm_kernel(a, b, out):
    # fixed ikj order: row i of `out` never depends on other rows of `a`,
    # and the k-accumulation order per element is always the same
    n, kdim = a.shape
    m = b.shape[1]
    for i in prange(n):
        for k in range(kdim):
            aik = a[i, k]
            for j in range(m):
                out[i, j] += aik * b[k, j]


def _matmul_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0], b.shape[1]), dtype=a.dtype)
    _mm_kernel(np.ascontiguousarray(a), np.ascontiguousarray(b), out)
    return out


@njit(cache=True, parallel=True)
def _gather_cols(x, idx, out):
    for b in prange(x.shape[0]):
        for p in range(idx.shape[0]):
            j = idx[p]
            out[b, p] = x[b, j] if j >= 0 else 0.0


@njit(cache=True, parallel=True)
def _scatter_add_cols(g, idx, out):
    for b in prange(g.shape[0]):
        for p in range(idx.shape[0]):
            j = idx[p]
            if j >= 0:
                out[b, j] += g[b, p]


_grad_enabled = True


@contextmanager
def no_grad():
    """Skip graph construction inside the block (inference fast path)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Array node in the computation tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = _parents
        self._backward = _backward

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward) -> "Tensor":
        if _grad_enabled and any(p.requires_grad for p in parents):
            return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
        return Tensor(data)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other, self.dtype)
        out_data = self.data + other.data

        def backward(g):
            return _unbroadcast(g, self.shape), _unbroadcast(g, other.shape)

        return Tensor._make(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        other = as_tensor(other, self.dtype)
        out_data = self.data - other.data

        def backward(g):
            return _unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)

        return Tensor._make(out_data, (self, other), backward)

    def __rsub__(self, other):
        return as_tensor(other, self.dtype) - self

    def __mul__(self, other):
        other = as_tensor(other, self.dtype)
        out_data = self.data * other.data

        def backward(g):
            return (
                _unbroadcast(g * other.data, self.shape),
                _unbroadcast(g * self.data, other.shape),
            )

        return Tensor._make(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul is restricted to 2D operands")
        out_data = _matmul_arrays(self.data, other.data)

        def backward(g, a=self, b=other):
            ga = _matmul_arrays(g, np.ascontiguousarray(b.data.T))
            gb = _matmul_arrays(np.ascontiguousarray(a.data.T), g)
            return ga, gb

        return Tensor._make(out_data, (self, other), backward)

    # -- elementwise nonlinearities --------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def backward(g):
            return (g * out_data,)

        return Tensor._make(out_data, (self,), backward)

    def log(self):
        out_data = np.log(self.data)

        def backward(g):
            return (g / self.data,)

        return Tensor._make(out_data, (self,), backward)

    def sigmoid(self):
        # exponent is always <= 0, so neither branch can overflow
        x = self.data
        pos = x >= 0
        z = np.exp(np.where(pos, -x, x))
        out_data = np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z))

        def backward(g):
            return (g * out_data * (1.0 - out_data),)

        return Tensor._make(out_data, (self,), backward)

    def relu(self):
        mask = self.data > 0

        def backward(g):
            return (g * mask,)

        return Tensor._make(self.data * mask, (self,), backward)

    def abs(self):
        sign = np.sign(self.data)

        def backward(g):
            return (g * sign,)

        return Tensor._make(np.abs(self.data), (self,), backward)

    def square(self):
        def backward(g):
            return (2.0 * g * self.data,)

        return Tensor._make(self.data * self.data, (self,), backward)

    def clip(self, lo: float, hi: float):
        """Clamp values; gradient is passed through only inside the range."""
        mask = (self.data > lo) & (self.data < hi)

        def backward(g):
            return (g * mask,)

        return Tensor._make(np.clip(self.data, lo, hi), (self,), backward)

    # -- shape manipulation ----------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        old = self.shape

        def backward(g):
            return (g.reshape(old),)

        return Tensor._make(self.data.reshape(shape), (self,), backward)

    def tile_rows(self, k: int):
        """Repeat each row ``k`` times: (N, C) -> (N*k, C)."""
        n, c = self.shape

        def backward(g):
            return (g.reshape(n, k, c).sum(axis=1),)

        return Tensor._make(np.repeat(self.data, k, axis=0), (self,), backward)

    # -- reductions -------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.shape

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            g = np.asarray(g)
            if not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(out_data, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max(self, axis: int):
        """Max reduction; gradient flows to the first maximal entry (ties)."""
        idx = np.argmax(self.data, axis=axis)
        out_data = np.take_along_axis(self.data, np.expand_dims(idx, axis), axis).squeeze(axis)
        shape = self.shape

        def backward(g):
            full = np.zeros(shape, dtype=g.dtype)
            np.put_along_axis(
                full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis
            )
            return (full,)

        return Tensor._make(out_data, (self,), backward)

    # -- backward pass -----------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g.astype(parent.dtype, copy=True)
                else:
                    parent.grad += g
            node._parents = ()
            node._backward = None


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    arr = np.asarray(value)
    if dtype is not None and arr.dtype != dtype:
        arr = arr.astype(dtype)
    return Tensor(arr)


def take_cols(x: Tensor, idx: np.ndarray) -> Tensor:
    """Column gather per row: out[b, p] = x[b, idx[p]]; idx -1 reads zero.

    The scatter-add in the backward pass runs per row with a fixed column
    order, so gradients are deterministic.
    """
    idx = np.ascontiguousarray(idx, dtype=np.int64).reshape(-1)
    out_data = np.empty((x.shape[0], len(idx)), dtype=x.dtype)
    _gather_cols(np.ascontiguousarray(x.data), idx, out_data)
    in_shape = x.shape

    def backward(g):
        gx = np.zeros(in_shape, dtype=g.dtype)
        _scatter_add_cols(np.ascontiguousarray(g), idx, gx)
        return (gx,)

    return Tensor._make(out_data, (x,), backward)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    out_data = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes[:-1])

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return Tensor._make(out_data, tuple(tensors), backward)


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True)
