"""
A dense, 64-bit, reverse-mode automatic differentiation engine.

Every differentiable operation is a `Function` subclass: `forward` computes the value from
numpy arrays and `backward` maps the gradient of the output to gradients of the inputs.
`Function.apply` wires the result into the computation record, and `Tensor.backward` replays
the record in reverse topological order.

Examples:
    >>> from wyr.autodiff.tensor import Tensor
    >>> x = Tensor(3.0, requires_grad=True)
    >>> y = x * x
    >>> y.backward()
    >>> float(x.grad)
    6.0

    >>> x = Tensor(0.0, requires_grad=True)
    >>> x.sigmoid().backward()
    >>> float(x.grad)
    0.25

    Leaves that do not require gradients never receive one:
    >>> w = Tensor([1.0, 2.0])
    >>> v = Tensor([3.0, 4.0], requires_grad=True)
    >>> (w * v).sum().backward()
    >>> w.grad is None, v.grad.tolist()
    (True, [1.0, 2.0])
"""

from __future__ import annotations

import contextlib
import logging
import threading
from typing import Any, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

DTYPE = np.float64
LOG_CLAMP = 1e-12

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[Any]]

_grad_mode = threading.local()


def is_grad_enabled() -> bool:
    """Whether operations on this thread are currently recorded."""
    return getattr(_grad_mode, "enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording on the current thread (evaluation, inference)."""
    previous = is_grad_enabled()
    _grad_mode.enabled = False
    try:
        yield
    finally:
        _grad_mode.enabled = previous


class IndexedGradient:
    """A gradient that is non-zero only at `index` of an input of known shape."""

    __slots__ = ("index", "values")

    def __init__(self, index: Any, values: np.ndarray):
        self.index = index
        self.values = values


class Function:
    """
    Base class for differentiable operations.

    Subclasses implement `forward` on numpy arrays and `backward`, which receives the gradient
    with respect to the output and returns one gradient (or None) per input tensor.
    """

    def __init__(self, *tensors: "Tensor"):
        self.tensors = tensors

    def forward(self, *args: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError("Forward pass not implemented for this function")

    def backward(self, grad: np.ndarray) -> Any:
        raise NotImplementedError("Backward pass not implemented for this function")

    @classmethod
    def apply(cls, *tensors: "Tensor", **kwargs: Any) -> "Tensor":
        func = cls(*tensors)
        out_data = func.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in tensors)
        return Tensor(
            out_data,
            requires_grad=requires_grad,
            creator=func if requires_grad else None,
        )

    @staticmethod
    def unbroadcast(grad: np.ndarray, to_shape: Tuple[int, ...]) -> np.ndarray:
        """Sum out broadcast dimensions so that `grad` matches `to_shape`."""
        if grad.shape == to_shape:
            return grad
        while grad.ndim > len(to_shape):
            grad = grad.sum(axis=0)
        for dim, size in enumerate(to_shape):
            if size == 1 and grad.shape[dim] != 1:
                grad = grad.sum(axis=dim, keepdims=True)
        return grad


def _as_tensor(value: ArrayLike) -> "Tensor":
    return value if isinstance(value, Tensor) else Tensor(value)


class Tensor:
    """
    A real-valued array that optionally records the operations applied to it.

    Attributes:
        data: the values, a float64 numpy array
        requires_grad: whether gradients flow to (and, for leaves, are stored on) this tensor
        grad: the gradient of the last `backward` root with respect to this leaf, or None
        creator: the `Function` that produced this tensor, None for leaves
    """

    __array_priority__ = 1000

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        creator: Optional[Function] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.creator = creator
        self.grad: Optional[np.ndarray] = None

    # ------------------------------------------------------------------ introspection
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4)}{flag})"

    # ------------------------------------------------------------------ backward
    def backward(self) -> None:
        """
        Populate `grad` on every leaf of the record that requires gradients.

        Raises:
            ValueError: if this tensor is not a scalar
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            return

        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node.creator is None:
                node.grad = grad if node.grad is None else node.grad + grad
                continue
            input_grads = node.creator.backward(grad)
            if not isinstance(input_grads, tuple):
                input_grads = (input_grads,)
            for parent, g in zip(node.creator.tensors, input_grads):
                if g is None or not parent.requires_grad:
                    continue
                _accumulate(grads, parent, g)

    def zero_grad(self) -> None:
        self.grad = None

    # ------------------------------------------------------------------ arithmetic
    def __add__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(self, _as_tensor(other))

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(_as_tensor(other), self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(self, _as_tensor(other))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(_as_tensor(other), self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return Mul.apply(self, _as_tensor(other))

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return Mul.apply(_as_tensor(other), self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return Div.apply(self, _as_tensor(other))

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return Div.apply(_as_tensor(other), self)

    def __neg__(self) -> "Tensor":
        return Neg.apply(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return Pow.apply(self, exponent=float(exponent))

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return Matmul.apply(self, _as_tensor(other))

    def __getitem__(self, index: Any) -> "Tensor":
        return GetItem.apply(self, index=index)

    # ------------------------------------------------------------------ reductions
    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False):
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False):
        count = self.data.size if axis is None else np.prod(
            [self.shape[a] for a in ((axis,) if isinstance(axis, int) else axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max(self, axis: int = -1, keepdims: bool = False) -> "Tensor":
        return Max.apply(self, axis=axis, keepdims=keepdims)

    # ------------------------------------------------------------------ elementwise
    def exp(self) -> "Tensor":
        return Exp.apply(self)

    def log(self) -> "Tensor":
        return Log.apply(self)

    def sigmoid(self) -> "Tensor":
        return Sigmoid.apply(self)

    def tanh(self) -> "Tensor":
        return Tanh.apply(self)

    def relu(self) -> "Tensor":
        return Relu.apply(self)

    def abs(self) -> "Tensor":
        return Abs.apply(self)

    def sqrt(self) -> "Tensor":
        return self**0.5

    # ------------------------------------------------------------------ movement
    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def swapaxes(self, axis1: int, axis2: int) -> "Tensor":
        return SwapAxes.apply(self, axis1=axis1, axis2=axis2)

    def take_along_axis(self, indices: np.ndarray, axis: int) -> "Tensor":
        return TakeAlongAxis.apply(self, indices=np.asarray(indices), axis=axis)


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    done = set()
    active = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            active.discard(key)
            done.add(key)
            order.append(node)
            continue
        if key in done:
            continue
        assert key not in active, "cycle in computation record"
        active.add(key)
        stack.append((node, True))
        if node.creator is not None:
            for parent in node.creator.tensors:
                if parent.requires_grad and id(parent) not in done:
                    stack.append((parent, False))
    return order


def _accumulate(grads: dict, tensor: Tensor, grad: Any) -> None:
    key = id(tensor)
    if isinstance(grad, IndexedGradient):
        buffer = grads.get(key)
        if buffer is None:
            buffer = np.zeros_like(tensor.data)
            grads[key] = buffer
        buffer[grad.index] += grad.values
        return
    grad = np.asarray(grad, dtype=DTYPE)
    if grad.shape != tensor.shape:
        grad = np.broadcast_to(grad, tensor.shape)
    if key in grads:
        grads[key] = grads[key] + grad
    else:
        grads[key] = np.array(grad, dtype=DTYPE)


# ---------------------------------------------------------------------------- functions


class Add(Function):
    def forward(self, x, y):
        return x + y

    def backward(self, grad):
        x, y = self.tensors
        return self.unbroadcast(grad, x.shape), self.unbroadcast(grad, y.shape)


class Sub(Function):
    def forward(self, x, y):
        return x - y

    def backward(self, grad):
        x, y = self.tensors
        return self.unbroadcast(grad, x.shape), self.unbroadcast(-grad, y.shape)


class Mul(Function):
    """Hadamard product with numpy broadcasting (row and column broadcast included)."""

    def forward(self, x, y):
        return x * y

    def backward(self, grad):
        x, y = self.tensors
        gx = self.unbroadcast(grad * y.data, x.shape) if x.requires_grad else None
        gy = self.unbroadcast(grad * x.data, y.shape) if y.requires_grad else None
        return gx, gy


class Div(Function):
    def forward(self, x, y):
        return x / y

    def backward(self, grad):
        x, y = self.tensors
        gx = self.unbroadcast(grad / y.data, x.shape) if x.requires_grad else None
        gy = (
            self.unbroadcast(-grad * x.data / (y.data * y.data), y.shape)
            if y.requires_grad
            else None
        )
        return gx, gy


class Neg(Function):
    def forward(self, x):
        return -x

    def backward(self, grad):
        return -grad


class Pow(Function):
    def forward(self, x, exponent: float):
        self.exponent = exponent
        return np.power(x, exponent)

    def backward(self, grad):
        (x,) = self.tensors
        return grad * self.exponent * np.power(x.data, self.exponent - 1.0)


class Matmul(Function):
    """Matrix product of tensors with at least two dimensions; leading dimensions broadcast."""

    def forward(self, x, y):
        if x.ndim < 2 or y.ndim < 2:
            raise ValueError(f"matmul needs 2-D or batched operands, got {x.shape} @ {y.shape}")
        return np.matmul(x, y)

    def backward(self, grad):
        x, y = self.tensors
        gx = gy = None
        if x.requires_grad:
            gx = self.unbroadcast(np.matmul(grad, np.swapaxes(y.data, -1, -2)), x.shape)
        if y.requires_grad:
            gy = self.unbroadcast(np.matmul(np.swapaxes(x.data, -1, -2), grad), y.shape)
        return gx, gy


class Sum(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.axis = axis
        self.keepdims = keepdims
        return np.sum(x, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        (x,) = self.tensors
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return np.broadcast_to(grad, x.shape)


class Max(Function):
    """Maximum along one axis; the gradient goes to the lowest-index argmax on ties."""

    def forward(self, x, axis=-1, keepdims=False):
        if not isinstance(axis, int):
            raise ValueError(f"max reduces a single axis, got axis={axis!r}")
        self.axis = axis
        self.keepdims = keepdims
        self.argmax = np.expand_dims(np.argmax(x, axis=axis), axis)
        out = np.take_along_axis(x, self.argmax, axis=axis)
        return out if keepdims else np.squeeze(out, axis=axis)

    def backward(self, grad):
        (x,) = self.tensors
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        out = np.zeros_like(x.data)
        np.put_along_axis(out, self.argmax, grad, axis=self.axis)
        return out


class Exp(Function):
    def forward(self, x):
        self.out = np.exp(x)
        return self.out

    def backward(self, grad):
        return grad * self.out


class Log(Function):
    """Natural logarithm with the input clamped below at 1e-12."""

    def forward(self, x):
        self.clamped = x < LOG_CLAMP
        return np.log(np.maximum(x, LOG_CLAMP))

    def backward(self, grad):
        (x,) = self.tensors
        return np.where(self.clamped, 0.0, grad / np.maximum(x.data, LOG_CLAMP))


class Sigmoid(Function):
    def forward(self, x):
        self.out = 0.5 * (1.0 + np.tanh(0.5 * x))
        return self.out

    def backward(self, grad):
        return grad * self.out * (1.0 - self.out)


class Tanh(Function):
    def forward(self, x):
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad):
        return grad * (1.0 - self.out * self.out)


class Relu(Function):
    def forward(self, x):
        return np.maximum(x, 0.0)

    def backward(self, grad):
        (x,) = self.tensors
        return grad * (x.data > 0.0)


class Abs(Function):
    def forward(self, x):
        return np.abs(x)

    def backward(self, grad):
        (x,) = self.tensors
        return grad * np.sign(x.data)


class Reshape(Function):
    def forward(self, x, shape):
        return np.reshape(x, shape)

    def backward(self, grad):
        (x,) = self.tensors
        return np.reshape(grad, x.shape)


class SwapAxes(Function):
    def forward(self, x, axis1, axis2):
        self.axes = (axis1, axis2)
        return np.swapaxes(x, axis1, axis2)

    def backward(self, grad):
        return np.swapaxes(grad, *self.axes)


class GetItem(Function):
    """Numpy basic indexing; the gradient is returned sparsely."""

    def forward(self, x, index):
        self.index = index
        return np.array(x[index], dtype=DTYPE)

    def backward(self, grad):
        return IndexedGradient(self.index, grad)


class TakeAlongAxis(Function):
    """`np.take_along_axis`; repeated indices accumulate their gradients."""

    def forward(self, x, indices, axis):
        self.indices = indices
        self.axis = axis
        return np.take_along_axis(x, indices, axis=axis)

    def backward(self, grad):
        (x,) = self.tensors
        out = np.zeros_like(x.data)
        index = list(np.indices(self.indices.shape, sparse=True))
        index[self.axis] = self.indices
        np.add.at(out, tuple(index), grad)
        return out


class Concat(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        splits = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, splits, axis=self.axis))


class Stack(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        return np.stack(arrays, axis=axis)

    def backward(self, grad):
        count = grad.shape[self.axis]
        return tuple(np.take(grad, i, axis=self.axis) for i in range(count))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Join tensors along an existing axis."""
    return Concat.apply(*tensors, axis=axis)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Join tensors along a new axis."""
    return Stack.apply(*tensors, axis=axis)
