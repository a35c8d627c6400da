"""
Dense tensors with reverse-mode automatic differentiation

Every differentiable operation is a registered primitive. A primitive computes
its forward value with numpy and, when any input requires a gradient, records
a closure that maps the output gradient to one gradient per input. backward()
walks the recorded graph in reverse topological order and accumulates
gradients into leaf tensors.
"""
import contextlib
import math
import threading
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.errors import DimensionError, RankError, UnsupportedOpError

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_local = threading.local()


def get_default_dtype() -> type:
    """Float type used for new tensors in the current thread"""
    return getattr(_local, 'dtype', np.float32)


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily switch the float type of new tensors (float64 for gradient checks)"""
    previous = get_default_dtype()
    _local.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _local.dtype = previous


def is_grad_enabled() -> bool:
    return getattr(_local, 'grad_enabled', True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording, e.g. for decoding and evaluation"""
    previous = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


class Tensor:
    """Dense float array with an optional gradient buffer"""

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or get_default_dtype())
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.op: Optional[str] = None
        self._parents: Tuple['Tensor', ...] = ()
        self._backward: Optional[BackwardFn] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise RankError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    # Operator sugar over the primitive registry
    def __matmul__(self, other: 'Tensor') -> 'Tensor':
        return apply_primitive('matmul', [self, other])

    def __add__(self, other: Any) -> 'Tensor':
        return apply_primitive('add', [self, other])

    __radd__ = __add__

    def __mul__(self, other: Any) -> 'Tensor':
        if isinstance(other, (int, float)):
            return apply_primitive('scale', [self], {'factor': other})
        return apply_primitive('mul', [self, other])

    __rmul__ = __mul__

    def __neg__(self) -> 'Tensor':
        return apply_primitive('scale', [self], {'factor': -1.0})

    def __sub__(self, other: Any) -> 'Tensor':
        return self + (-as_tensor(other))

    def __getitem__(self, index) -> 'Tensor':
        return apply_primitive('slice', [self], {'index': index})

    def reshape(self, *shape) -> 'Tensor':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply_primitive('reshape', [self], {'shape': shape})

    def transpose(self, *axes) -> 'Tensor':
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return apply_primitive('transpose', [self], {'axes': axes or None})

    def sum(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return apply_primitive('sum', [self], {'axis': axis, 'keepdims': keepdims})


class Parameter(Tensor):
    """Trainable tensor with a stable hierarchical name"""

    def __init__(self, name: str, data: ArrayLike, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape})"


def as_tensor(value: Any) -> Tensor:
    """Wrap arrays and scalars as constant tensors"""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op_id: str) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if is_grad_enabled() and any(parent.requires_grad for parent in parents):
        out.requires_grad = True
        out.op = op_id
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to an operand's shape"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op_id: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op_id}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# Primitive registry
_PRIMITIVES: Dict[str, Callable[..., Tensor]] = {}


def primitive(op_id: str) -> Callable:
    """Register a function as the implementation of op_id"""
    def register(fn: Callable[..., Tensor]) -> Callable[..., Tensor]:
        _PRIMITIVES[op_id] = fn
        return fn
    return register


def registered_primitives() -> List[str]:
    return sorted(_PRIMITIVES)


def apply_primitive(op_id: str, inputs: Sequence[Any], attrs: Optional[Dict[str, Any]] = None) -> Tensor:
    """
    Run a registered primitive and record it for differentiation

    Args:
        op_id: Primitive name, e.g. "matmul" or "softmax"
        inputs: Input tensors (arrays and scalars are wrapped as constants)
        attrs: Non-differentiable keyword attributes of the primitive

    Returns:
        Output tensor
    """
    fn = _PRIMITIVES.get(op_id)
    if fn is None:
        raise UnsupportedOpError(f"unsupported op '{op_id}' (known: {', '.join(registered_primitives())})")
    return fn(*[as_tensor(x) for x in inputs], **(attrs or {}))


@primitive('matmul')
def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: incompatible batch dims {a.shape} and {b.shape}") from None

    def grads(g: np.ndarray):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _node(np.matmul(a.data, b.data), (a, b), grads, 'matmul')


@primitive('add')
def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape('add', a, b)

    def grads(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), grads, 'add')


@primitive('mul')
def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape('mul', a, b)

    def grads(g: np.ndarray):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), grads, 'mul')


@primitive('scale')
def scale(a: Tensor, factor: float) -> Tensor:
    factor = a.dtype.type(factor)

    def grads(g: np.ndarray):
        return (g * factor,)

    return _node(a.data * factor, (a,), grads, 'scale')


@primitive('embedding_lookup')
def embedding_lookup(table: Tensor, ids: ArrayLike) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(
            f"embedding_lookup: ids must lie in [0, {table.shape[0]}), got range [{ids.min()}, {ids.max()}]"
        )

    def grads(g: np.ndarray):
        grad_table = np.zeros_like(table.data)
        np.add.at(grad_table, ids, g)
        return (grad_table,)

    return _node(table.data[ids], (table,), grads, 'embedding_lookup')


@primitive('layer_norm')
def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    width = x.shape[-1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise DimensionError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match input {x.shape}")
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    x_hat = centered * inv_std

    def grads(g: np.ndarray):
        reduce_axes = tuple(range(g.ndim - 1))
        grad_gamma = (g * x_hat).sum(axis=reduce_axes)
        grad_beta = g.sum(axis=reduce_axes)
        d_hat = g * gamma.data
        grad_x = inv_std * (
            d_hat
            - d_hat.mean(axis=-1, keepdims=True)
            - x_hat * (d_hat * x_hat).mean(axis=-1, keepdims=True)
        )
        return grad_x, grad_gamma, grad_beta

    return _node(x_hat * gamma.data + beta.data, (x, gamma, beta), grads, 'layer_norm')


@primitive('softmax')
def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    probs = exps / exps.sum(axis=axis, keepdims=True)

    def grads(g: np.ndarray):
        return (probs * (g - (g * probs).sum(axis=axis, keepdims=True)),)

    return _node(probs, (x,), grads, 'softmax')


_GELU_C = math.sqrt(2.0 / math.pi)


@primitive('gelu')
def gelu(x: Tensor) -> Tensor:
    # tanh approximation
    inner = _GELU_C * (x.data + 0.044715 * x.data ** 3)
    t = np.tanh(inner)

    def grads(g: np.ndarray):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x.data ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t ** 2) * d_inner),)

    return _node(0.5 * x.data * (1.0 + t), (x,), grads, 'gelu')


@primitive('reshape')
def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None

    def grads(g: np.ndarray):
        return (g.reshape(x.shape),)

    return _node(out, (x,), grads, 'reshape')


@primitive('transpose')
def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)) or len(axes) != x.ndim:
        raise DimensionError(f"transpose: axes {axes} do not permute shape {x.shape}")
    inverse = tuple(np.argsort([a % x.ndim for a in axes]))

    def grads(g: np.ndarray):
        return (np.transpose(g, inverse),)

    return _node(np.transpose(x.data, axes), (x,), grads, 'transpose')


@primitive('concat')
def concat(*xs: Tensor, axis: int = 0) -> Tensor:
    if not xs:
        raise DimensionError("concat: needs at least one input")
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except (ValueError, IndexError):
        raise DimensionError(f"concat: incompatible shapes {[x.shape for x in xs]} on axis {axis}") from None
    splits = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def grads(g: np.ndarray):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, xs, grads, 'concat')


@primitive('slice')
def slice_(x: Tensor, index: Any) -> Tensor:
    # basic indexing only: ints, slices, None and Ellipsis
    try:
        out = np.array(x.data[index], dtype=x.dtype)
    except (IndexError, TypeError):
        raise DimensionError(f"slice: index {index!r} is invalid for shape {x.shape}") from None

    def grads(g: np.ndarray):
        grad_x = np.zeros_like(x.data)
        grad_x[index] += g
        return (grad_x,)

    return _node(out, (x,), grads, 'slice')


@primitive('sum')
def sum_(x: Tensor, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def grads(g: np.ndarray):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(np.asarray(out, dtype=x.dtype), (x,), grads, 'sum')


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
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


def backward(loss: Tensor) -> None:
    """
    Populate .grad on every leaf tensor reachable from a scalar loss

    Gradients accumulate across calls until the leaves are zeroed.

    Args:
        loss: Scalar tensor produced by recorded primitives
    """
    if loss.ndim != 0:
        raise RankError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, parent_grad in zip(node._parents, node._backward(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = parent_grad if key not in grads else grads[key] + parent_grad


def gradient_check(
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    h: float = 1e-4,
    samples: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    floor: float = 1e-3,
) -> float:
    """
    Compare analytic gradients with central finite differences

    Args:
        fn: Closure recomputing a scalar loss from the current tensor values
        tensors: Leaf tensors to check
        h: Finite-difference step
        samples: Number of random coordinates to probe (all coordinates if None)
        rng: Generator used to pick coordinates
        floor: Lower bound of the relative-error denominator, so that
            near-zero gradients are compared absolutely

    Returns:
        Maximum relative error over the probed coordinates
    """
    for tensor in tensors:
        tensor.grad = None
    backward(fn())
    coordinates = [(i, j) for i, tensor in enumerate(tensors) for j in range(tensor.size)]
    if samples is not None and samples < len(coordinates):
        rng = rng or np.random.default_rng(0)
        picked = rng.choice(len(coordinates), size=samples, replace=False)
        coordinates = [coordinates[k] for k in picked]

    worst = 0.0
    for i, j in coordinates:
        tensor = tensors[i]
        original = tensor.data.flat[j]
        with no_grad():
            tensor.data.flat[j] = original + h
            upper = fn().item()
            tensor.data.flat[j] = original - h
            lower = fn().item()
        tensor.data.flat[j] = original
        numeric = (upper - lower) / (2 * h)
        analytic = float(tensor.grad.flat[j]) if tensor.grad is not None else 0.0
        error = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, error)
    return worst
