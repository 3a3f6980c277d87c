"""Dense real tensors with reverse-mode automatic differentiation.

Small numpy-backed engine in the classic tape style: every operation returns
a new Tensor whose ``_backward`` closure scatters the output gradient into its
inputs. ``backward()`` on a scalar topologically sorts the graph and runs the
closures in reverse; gradients accumulate additively into ``.grad`` until
explicitly cleared, so a sum of several losses backpropagates as one scalar.

Precision is a process-wide switch (`set_default_dtype`): double for the
verification suite, single for training throughput.
"""

from __future__ import annotations

import numpy as np

_DEFAULT_DTYPE = np.float64


def set_default_dtype(name: str):
    """Select the dtype newly created tensors use: "f64" or "f32"."""
    global _DEFAULT_DTYPE
    table = {"f64": np.float64, "f32": np.float32}
    if name not in table:
        raise ValueError(f"unknown precision {name!r}, expected one of {sorted(table)}")
    _DEFAULT_DTYPE = table[name]


def default_dtype():
    return _DEFAULT_DTYPE


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _is_advanced(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(it, (list, np.ndarray)) for it in items)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._prev: tuple[Tensor, ...] = ()

    # -- bookkeeping ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.data.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
        # interior nodes are finished with their grads; keep only leaves
        for node in topo:
            if node._backward is not None:
                node.grad = None

    # -- construction of op results -------------------------------------

    @staticmethod
    def _result(data, parents: tuple["Tensor", ...], backward):
        out = Tensor(data)
        needing = tuple(p for p in parents if p.requires_grad or p._prev)
        if needing:
            out.requires_grad = True
            out._prev = needing
            out._backward = backward
        return out

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        other = ensure(other)

        def back(g):
            self._add_grad(_unbroadcast(g, self.data.shape))
            other._add_grad(_unbroadcast(g, other.data.shape))

        return Tensor._result(self.data + other.data, (self, other), back)

    def __mul__(self, other):
        other = ensure(other)

        def back(g):
            self._add_grad(_unbroadcast(g * other.data, self.data.shape))
            other._add_grad(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._result(self.data * other.data, (self, other), back)

    def __truediv__(self, other):
        other = ensure(other)

        def back(g):
            self._add_grad(_unbroadcast(g / other.data, self.data.shape))
            other._add_grad(
                _unbroadcast(-g * self.data / (other.data * other.data),
                             other.data.shape))

        return Tensor._result(self.data / other.data, (self, other), back)

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("exponent must be a python number")

        def back(g):
            self._add_grad(g * p * self.data ** (p - 1))

        return Tensor._result(self.data ** p, (self,), back)

    def __neg__(self):
        def back(g):
            self._add_grad(-g)

        return Tensor._result(-self.data, (self,), back)

    def __sub__(self, other):
        return self + (-ensure(other))

    def __radd__(self, other):
        return self + other

    def __rmul__(self, other):
        return self * other

    def __rsub__(self, other):
        return (-self) + other

    def __rtruediv__(self, other):
        return ensure(other) / self

    def __matmul__(self, other):
        other = ensure(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError(
                f"matmul expects 2-d operands, got {self.data.shape} @ {other.data.shape}")
        if self.data.shape[1] != other.data.shape[0]:
            raise ValueError(
                f"matmul shape mismatch: {self.data.shape} @ {other.data.shape}")

        def back(g):
            self._add_grad(g @ other.data.T)
            other._add_grad(self.data.T @ g)

        return Tensor._result(self.data @ other.data, (self, other), back)

    def _add_grad(self, g):
        if self.requires_grad or self._prev:
            self.accumulate_grad(g)

    # -- shape ops ---------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape

        def back(g):
            self._add_grad(g.reshape(old))

        return Tensor._result(self.data.reshape(shape), (self,), back)

    def transpose(self, axes=None):
        if axes is None:
            axes = tuple(reversed(range(self.data.ndim)))
        inv = np.argsort(axes)

        def back(g):
            self._add_grad(g.transpose(inv))

        return Tensor._result(self.data.transpose(axes), (self,), back)

    @property
    def T(self):
        return self.transpose()

    def broadcast_to(self, shape):
        old = self.data.shape

        def back(g):
            self._add_grad(_unbroadcast(g, old))

        return Tensor._result(np.broadcast_to(self.data, shape).copy(), (self,), back)

    def __getitem__(self, idx):
        shape = self.data.shape
        advanced = _is_advanced(idx)

        def back(g):
            buf = np.zeros(shape, dtype=g.dtype)
            if advanced:
                np.add.at(buf, idx, g)
            else:
                buf[idx] += g
            self._add_grad(buf)

        return Tensor._result(self.data[idx].copy(), (self,), back)

    def take(self, indices: np.ndarray):
        """Gather rows along axis 0 (embedding/neighbor lookup)."""
        indices = np.asarray(indices)
        shape = self.data.shape

        def back(g):
            buf = np.zeros(shape, dtype=g.dtype)
            np.add.at(buf, indices, g)
            self._add_grad(buf)

        return Tensor._result(self.data[indices], (self,), back)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        shape = self.data.shape

        def back(g):
            if axis is None:
                self._add_grad(np.broadcast_to(g, shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                self._add_grad(np.broadcast_to(gg, shape).copy())

        return Tensor._result(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None, keepdims=False):
        shape = self.data.shape
        count = self.data.size if axis is None else np.prod(
            [shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])

        def back(g):
            if axis is None:
                self._add_grad(np.broadcast_to(g / count, shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                self._add_grad(np.broadcast_to(gg / count, shape).copy())

        return Tensor._result(self.data.mean(axis=axis, keepdims=keepdims), (self,), back)

    # -- elementwise nonlinearities -------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def back(g):
            self._add_grad(g * out_data)

        return Tensor._result(out_data, (self,), back)

    def log(self):
        def back(g):
            self._add_grad(g / self.data)

        return Tensor._result(np.log(self.data), (self,), back)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def back(g):
            self._add_grad(g * 0.5 / out_data)

        return Tensor._result(out_data, (self,), back)

    def cos(self):
        def back(g):
            self._add_grad(-g * np.sin(self.data))

        return Tensor._result(np.cos(self.data), (self,), back)

    def softplus(self):
        def back(g):
            self._add_grad(g * _stable_sigmoid(self.data))

        return Tensor._result(np.logaddexp(0.0, self.data), (self,), back)

    def sigmoid(self):
        out_data = _stable_sigmoid(self.data)

        def back(g):
            self._add_grad(g * out_data * (1.0 - out_data))

        return Tensor._result(out_data, (self,), back)


def ensure(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    parts = [ensure(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            p._add_grad(piece)

    return Tensor._result(
        np.concatenate([p.data for p in parts], axis=axis), tuple(parts), back)


def segment_sum(values: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of `values` into `num_segments` buckets given by `segment_ids`."""
    values = ensure(values)
    segment_ids = np.asarray(segment_ids)
    if len(segment_ids) != values.data.shape[0]:
        raise ValueError(
            f"segment_ids length {len(segment_ids)} != leading dim {values.data.shape[0]}")
    out_data = np.zeros((num_segments,) + values.data.shape[1:], dtype=values.data.dtype)
    np.add.at(out_data, segment_ids, values.data)

    def back(g):
        values._add_grad(g[segment_ids])

    return Tensor._result(out_data, (values,), back)


def l2_norm(x: Tensor, axis: int = -1, eps: float = 0.0) -> Tensor:
    """Euclidean norm along an axis, built from primitive ops."""
    sq = (x * x).sum(axis=axis, keepdims=True)
    if eps:
        sq = sq + eps
    return sq ** 0.5
