"""Dense tensors with reverse-mode automatic differentiation.

Every model quantity lives in a ``Tensor``: a float64 numpy array plus, when
gradients are tracked, a link back into the computation graph. Forward ops
record a closure that routes the output gradient to the inputs; ``backward``
walks the graph in reverse topological order and accumulates ``grad`` on every
tracked leaf. All arithmetic is float64 with fixed (sequential numpy) reduction
order, so repeated runs are bit-identical.

Notes on broadcasting: elementwise ops follow numpy broadcasting; gradients are
summed back over the broadcast axes so leaf gradients always match leaf shapes.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ContractError, ShapeError

__all__ = [
    "Tensor",
    "Parameter",
    "as_tensor",
    "concat",
    "layer_norm",
    "check_gradients",
]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (the pre-broadcast operand shape)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """N-dimensional float64 array node in a reverse-mode autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    # Keep numpy from consuming `ndarray <op> Tensor`; defer to our reflected ops.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data, parents, backward_fn):
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    # -- elementwise arithmetic ----------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out_data = self.data + other.data

        def backward(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.shape))

        return Tensor._from_op(out_data, (self, other), backward)

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        out_data = self.data - other.data

        def backward(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g, b.shape))

        return Tensor._from_op(out_data, (self, other), backward)

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        out_data = self.data * other.data

        def backward(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape))

        return Tensor._from_op(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out_data = self.data / other.data

        def backward(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return Tensor._from_op(out_data, (self, other), backward)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __neg__(self):
        def backward(g, a=self):
            if a.requires_grad:
                a._accumulate(-g)

        return Tensor._from_op(-self.data, (self,), backward)

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.ndim < 1 or other.ndim < 2:
            raise ShapeError(f"matmul needs matrices, got {self.shape} @ {other.shape}")
        if self.shape[-1] != other.shape[-2]:
            raise ShapeError(
                f"matmul inner extents differ: {self.shape} @ {other.shape}"
            )
        out_data = self.data @ other.data

        def backward(g, a=self, b=other):
            if a.requires_grad:
                ga = g @ np.swapaxes(b.data, -1, -2)
                a._accumulate(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                gb = np.swapaxes(a.data, -1, -2) @ g
                b._accumulate(_unbroadcast(gb, b.shape))

        return Tensor._from_op(out_data, (self, other), backward)

    # -- nonlinearities -------------------------------------------------------

    def relu(self) -> "Tensor":
        mask = self.data > 0

        def backward(g, a=self, m=mask):
            if a.requires_grad:
                a._accumulate(g * m)

        return Tensor._from_op(np.where(mask, self.data, 0.0), (self,), backward)

    def abs(self) -> "Tensor":
        sign = np.sign(self.data)

        def backward(g, a=self, s=sign):
            if a.requires_grad:
                a._accumulate(g * s)

        return Tensor._from_op(np.abs(self.data), (self,), backward)

    def sqrt(self) -> "Tensor":
        out_data = np.sqrt(self.data)

        def backward(g, a=self, o=out_data):
            if a.requires_grad:
                a._accumulate(g * (0.5 / o))

        return Tensor._from_op(out_data, (self,), backward)

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)

        def backward(g, a=self, o=out_data):
            if a.requires_grad:
                a._accumulate(g * o)

        return Tensor._from_op(out_data, (self,), backward)

    def softmax(self, axis: int = -1) -> "Tensor":
        """Stable softmax along ``axis``: rows sum to one, max subtracted first."""
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=axis, keepdims=True)

        def backward(g, a=self, y=out_data, ax=axis):
            if a.requires_grad:
                inner = (y * g).sum(axis=ax, keepdims=True)
                a._accumulate(y * (g - inner))

        return Tensor._from_op(out_data, (self,), backward)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g, a=self, ax=axis, kd=keepdims):
            if a.requires_grad:
                if ax is not None and not kd:
                    g = np.expand_dims(g, ax)
                a._accumulate(np.broadcast_to(g, a.shape).copy())

        return Tensor._from_op(out_data, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        out_data = self.data.mean(axis=axis, keepdims=keepdims)
        count = self.size // max(out_data.size, 1) if self.size else 1

        def backward(g, a=self, ax=axis, kd=keepdims, n=count):
            if a.requires_grad:
                if ax is not None and not kd:
                    g = np.expand_dims(g, ax)
                a._accumulate(np.broadcast_to(g, a.shape) / n)

        return Tensor._from_op(out_data, (self,), backward)

    # -- shape movement -------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old_shape = self.shape

        def backward(g, a=self, s=old_shape):
            if a.requires_grad:
                a._accumulate(g.reshape(s))

        return Tensor._from_op(self.data.reshape(shape), (self,), backward)

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        axes = tuple(axes)
        inverse = tuple(np.argsort(axes))

        def backward(g, a=self, inv=inverse):
            if a.requires_grad:
                a._accumulate(g.transpose(inv))

        return Tensor._from_op(self.data.transpose(axes), (self,), backward)

    def roll(self, shift, axis) -> "Tensor":
        def backward(g, a=self, s=shift, ax=axis):
            if a.requires_grad:
                neg = tuple(-v for v in s) if isinstance(s, tuple) else -s
                a._accumulate(np.roll(g, neg, axis=ax))

        return Tensor._from_op(np.roll(self.data, shift, axis=axis), (self,), backward)

    # -- autodiff driver ------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``grad`` for every tracked leaf.

        ``self`` must be scalar. Repeated calls without ``zero_grad`` keep
        accumulating, which the batch loop relies on.
        """
        if self.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)
        # Interior nodes are not reused; drop their grads to bound memory.
        for node in topo:
            if node._backward_fn is not None:
                node.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Parameter:
    """A named, gradient-tracked tensor. Names are unique within a model."""

    __slots__ = ("name", "tensor")

    def __init__(self, name: str, data):
        self.name = name
        self.tensor = Tensor(data, requires_grad=True)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    def zero_grad(self):
        self.tensor.zero_grad()

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Differentiable concatenation along ``axis``."""
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)

    def backward(g, ts=tensors, sp=splits, ax=axis):
        pieces = np.split(g, sp, axis=ax)
        for t, piece in zip(ts, pieces):
            if t.requires_grad:
                t._accumulate(piece)

    return Tensor._from_op(out_data, tuple(tensors), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale + shift.

    ``eps`` keeps the variance denominator positive, so constant feature
    vectors normalize to zero instead of dividing by zero.
    """
    gamma = as_tensor(gamma)
    beta = as_tensor(beta)
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(
            f"layer_norm affine shape {gamma.shape}/{beta.shape} "
            f"does not match feature extent {x.shape[-1]}"
        )
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    normed = centered / (var + eps).sqrt()
    return normed * gamma + beta


def check_gradients(f, inputs: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Compare analytic gradients of ``f(*inputs)`` against central differences.

    Returns the max over all input coordinates of
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.zero_grad()
    out = f(*inputs)
    if out.size != 1:
        raise ContractError("check_gradients requires a scalar-valued function")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    worst = 0.0
    for t, ana in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = f(*inputs).item()
            flat[i] = orig - eps
            f_minus = f(*inputs).item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(ana_flat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(ana_flat[i] - numeric) / denom)
    return worst
