"""
Minimal reverse-mode automatic differentiation over numpy arrays.

Every operation returns a new Tensor that remembers its parents and a
closure that pushes the output gradient back to them. Tensor.backward()
walks the graph in reverse topological order. Graphs are only recorded when
some input requires a gradient, so inference builds no closures at all.
"""
import numpy as np
from scipy.special import expit

from errors import ShapeError


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, parents=(), backward=None, op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = parents
        self._backward = backward
        self.op = op

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def accumulate(self, grad):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad += grad

    def accumulate_at(self, index, grad):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad[index] += grad

    def backward(self, grad=None):
        if not self.requires_grad:
            raise ShapeError("backward() called on a tensor that does not require a gradient")
        if grad is None:
            if self.size != 1:
                raise ShapeError(f"backward() without a gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        self.accumulate(np.broadcast_to(grad, self.shape))
        for node in reversed(_topological_order(self)):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def sum(self, axis=None):
        return tensor_sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def _topological_order(root):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def result(data, parents, backward, op):
    """Wrap an op's output; the closure is kept only if a parent needs a gradient."""
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward, op)
    return Tensor(data, op=op)


def unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(grad):
        a.accumulate(unbroadcast(grad, a.shape))
        b.accumulate(unbroadcast(grad, b.shape))
    return result(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(grad):
        a.accumulate(unbroadcast(grad, a.shape))
        b.accumulate(unbroadcast(-grad, b.shape))
    return result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(grad):
        if a.requires_grad:
            a.accumulate(unbroadcast(grad * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(unbroadcast(grad * a.data, b.shape))
    return result(a.data * b.data, (a, b), backward, "mul")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(grad):
        if a.requires_grad:
            a.accumulate(grad @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ grad)
    return result(a.data @ b.data, (a, b), backward, "matmul")


def sigmoid(x):
    x = as_tensor(x)
    out = expit(x.data)

    def backward(grad):
        x.accumulate(grad * out * (1.0 - out))
    return result(out, (x,), backward, "sigmoid")


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)

    def backward(grad):
        x.accumulate(grad * (1.0 - out * out))
    return result(out, (x,), backward, "tanh")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0

    def backward(grad):
        x.accumulate(grad * mask)
    return result(np.where(mask, x.data, 0.0), (x,), backward, "relu")


def softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    out = shifted / shifted.sum(axis=axis, keepdims=True)

    def backward(grad):
        x.accumulate(out * (grad - np.sum(grad * out, axis=axis, keepdims=True)))
    return result(out, (x,), backward, "softmax")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} along axis {axis}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(grad):
        for t, piece in zip(tensors, np.split(grad, bounds, axis=axis)):
            t.accumulate(piece)
    return result(data, tuple(tensors), backward, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if len({t.shape for t in tensors}) != 1:
        raise ShapeError(f"stack: unequal shapes {[t.shape for t in tensors]}")

    def backward(grad):
        for i, t in enumerate(tensors):
            t.accumulate(np.take(grad, i, axis=axis))
    return result(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward, "stack")


def getitem(x, index):
    x = as_tensor(x)

    # basic indexing only: slices and integers never repeat an element
    def backward(grad):
        x.accumulate_at(index, grad)
    return result(x.data[index], (x,), backward, "getitem")


def reshape(x, shape):
    x = as_tensor(x)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")

    def backward(grad):
        x.accumulate(grad.reshape(x.shape))
    return result(data, (x,), backward, "reshape")


def tensor_sum(x, axis=None):
    x = as_tensor(x)

    def backward(grad):
        expanded = grad if axis is None else np.expand_dims(grad, axis)
        x.accumulate(np.broadcast_to(expanded, x.shape))
    return result(x.data.sum(axis=axis), (x,), backward, "sum")


def mean(x, axis=None):
    x = as_tensor(x)
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tensor_sum(x, axis), 1.0 / count)


def numerical_gradient(fn, array, eps=1e-4, indices=None):
    """Central finite differences of scalar fn() with respect to array (perturbed in place).

    With indices, only those flat positions are evaluated and the rest stay zero.
    """
    grad = np.zeros_like(array)
    flat, flat_grad = array.reshape(-1), grad.reshape(-1)
    for i in (range(flat.size) if indices is None else indices):
        original = flat[i]
        flat[i] = original + eps
        upper = fn()
        flat[i] = original - eps
        lower = fn()
        flat[i] = original
        flat_grad[i] = (upper - lower) / (2.0 * eps)
    return grad
