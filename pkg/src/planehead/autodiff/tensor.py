"""Dense tensors with reverse-mode automatic differentiation.

Values are float32 by default (float64 is available for gradient checking).
Every operation records a vector-Jacobian closure; ``Tensor.backward`` walks
the graph in reverse topological order single-threaded, so gradient
accumulation order is fixed and runs are reproducible.
"""

from __future__ import annotations

import contextlib

import numpy as np

from planehead.errors import ContractViolation

# Reductions over more than this many elements accumulate in float64.
_WIDE_REDUCTION = 10_000

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward-only evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _reduced_sum(x: np.ndarray, axis=None, keepdims=False) -> np.ndarray:
    if x.dtype == np.float32 and x.size > _WIDE_REDUCTION:
        out = x.sum(axis=axis, keepdims=keepdims, dtype=np.float64)
        return np.asarray(out, dtype=np.float32)
    return np.asarray(x.sum(axis=axis, keepdims=keepdims))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._vjp = None
        self.name = name

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents, vjp) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
        else:
            out.requires_grad = False
            out._parents = ()
            out._vjp = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        head = f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}"
        if self.requires_grad:
            head += ", requires_grad=True"
        return head + ")"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    # -- backward -------------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        ``self`` must hold exactly one element.
        """
        if self.data.size != 1:
            raise ContractViolation(
                f"backward() needs a scalar loss, got shape {self.data.shape}"
            )
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

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg

    # -- arithmetic -----------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def vjp(g):
            return (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape))

        return Tensor._from_op(a.data + b.data, (a, b), vjp)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def vjp(g):
            return (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape))

        return Tensor._from_op(a.data - b.data, (a, b), vjp)

    def __rsub__(self, other):
        return self._coerce(other).__sub__(self)

    def __mul__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def vjp(g):
            return (
                _unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape),
            )

        return Tensor._from_op(a.data * b.data, (a, b), vjp)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def vjp(g):
            return (
                _unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
            )

        return Tensor._from_op(a.data / b.data, (a, b), vjp)

    def __rtruediv__(self, other):
        return self._coerce(other).__truediv__(self)

    def __neg__(self):
        a = self
        return Tensor._from_op(-a.data, (a,), lambda g: (-g,))

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise ContractViolation("only scalar exponents are supported")
        a = self

        def vjp(g):
            return (g * p * np.power(a.data, p - 1),)

        return Tensor._from_op(np.power(a.data, p), (a,), vjp)

    def __matmul__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def vjp(g):
            ga = g @ b.data.T if a.requires_grad else None
            gb = a.data.T @ g if b.requires_grad else None
            return (ga, gb)

        return Tensor._from_op(a.data @ b.data, (a, b), vjp)

    # -- elementwise nonlinearities --------------------------------------------

    def exp(self):
        a = self
        out_data = np.exp(a.data)
        return Tensor._from_op(out_data, (a,), lambda g: (g * out_data,))

    def log(self):
        a = self
        return Tensor._from_op(np.log(a.data), (a,), lambda g: (g / a.data,))

    def sqrt(self):
        a = self
        out_data = np.sqrt(a.data)
        return Tensor._from_op(out_data, (a,), lambda g: (g / (2.0 * out_data),))

    def abs(self):
        a = self
        return Tensor._from_op(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))

    def sigmoid(self):
        a = self
        out_data = 1.0 / (1.0 + np.exp(-a.data))
        return Tensor._from_op(out_data, (a,), lambda g: (g * out_data * (1.0 - out_data),))

    def tanh(self):
        a = self
        out_data = np.tanh(a.data)
        return Tensor._from_op(out_data, (a,), lambda g: (g * (1.0 - out_data * out_data),))

    def softplus(self):
        # log(1 + e^x), computed stably; derivative is sigmoid(x).
        a = self
        out_data = np.logaddexp(np.asarray(0.0, dtype=a.data.dtype), a.data)

        def vjp(g):
            return (g / (1.0 + np.exp(-a.data)),)

        return Tensor._from_op(out_data, (a,), vjp)

    def relu(self):
        a = self
        mask = a.data > 0
        return Tensor._from_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))

    def leaky_relu(self, slope: float = 0.2):
        a = self
        mask = a.data > 0
        out_data = np.where(mask, a.data, slope * a.data)
        return Tensor._from_op(out_data, (a,), lambda g: (g * np.where(mask, 1.0, slope),))

    def clamp(self, lo: float, hi: float):
        a = self
        out_data = np.clip(a.data, lo, hi)
        inside = (a.data >= lo) & (a.data <= hi)
        return Tensor._from_op(out_data, (a,), lambda g: (g * inside,))

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        out_data = _reduced_sum(a.data, axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=False),)
            gg = g
            if not keepdims:
                gg = np.expand_dims(g, axis)
            return (np.broadcast_to(gg, a.data.shape).astype(a.data.dtype, copy=False),)

        return Tensor._from_op(out_data, (a,), vjp)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[ax] for ax in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def cumsum(self, axis: int):
        a = self

        def vjp(g):
            flipped = np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis)
            return (flipped,)

        return Tensor._from_op(np.cumsum(a.data, axis=axis), (a,), vjp)

    # -- shape ops ------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor._from_op(
            a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),)
        )

    def transpose(self, *axes):
        a = self
        if not axes:
            axes = tuple(reversed(range(a.data.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        return Tensor._from_op(
            a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),)
        )

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        a = self

        def vjp(g):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor._from_op(a.data[idx], (a,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate tensors along ``axis``."""
    parents = tuple(tensors)
    sizes = [t.data.shape[axis] for t in parents]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(
        np.concatenate([t.data for t in parents], axis=axis), parents, vjp
    )


def stack(tensors, axis: int = 0) -> Tensor:
    parents = tuple(tensors)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(parents)))

    return Tensor._from_op(np.stack([t.data for t in parents], axis=axis), parents, vjp)


def as_tensor(x, dtype=np.float32) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))
