#!/usr/bin/env python3
"""
Dense tensor engine with a reverse-mode computation record.

A Tensor wraps a numpy array. While a ComputationRecord is active (see
``ComputationRecord.active``) every primitive applied to tensors is appended to
the record together with the activations its backward rule needs. The record
is later walked in reverse by ``inavit.gradients.reverse_gradients``.

Basic Usage:
    from inavit.tensor import ComputationRecord, Tensor, ops

    x = Tensor([1.0, 2.0], requires_grad=True, name="x")
    record = ComputationRecord()
    with record.active():
        loss = ops.sum(ops.mul(x, x))

Arrays held by tensors are never modified in place by the package; updates
(e.g. optimizer steps) always assign fresh arrays, which keeps records
replayable.
"""

import contextlib
import contextvars
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erf, logsumexp

from .errors import NonFiniteError, ShapeError

# Logit substituted for masked keys before the softmax.
MASK_SENTINEL = -1e30

_DTYPE: contextvars.ContextVar = contextvars.ContextVar(
    "inavit_dtype", default=np.float32
)
_ACTIVE_RECORD: contextvars.ContextVar = contextvars.ContextVar(
    "inavit_record", default=None
)


def default_dtype() -> type:
    """Return the floating dtype used for newly created tensors."""
    return _DTYPE.get()


@contextlib.contextmanager
def wide_precision() -> Iterator[None]:
    """Create new tensors in float64 for the duration of the block."""
    token = _DTYPE.set(np.float64)
    try:
        yield
    finally:
        _DTYPE.reset(token)


class Tensor:
    """
    A dense real tensor, optionally tracked for differentiation.

    Attributes:
        data (np.ndarray): Row-major values.
        requires_grad (bool): Whether gradients flow back to this tensor.
        name (str, optional): Canonical parameter name for leaves.
        node_id (int, optional): Node handle inside the record that produced it.
    """

    __slots__ = ("data", "requires_grad", "name", "node_id", "_record")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype: Optional[type] = None,
    ):
        if dtype is None:
            if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
                dtype = data.dtype
            else:
                dtype = default_dtype()
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.name = name
        self.node_id: Optional[int] = None
        self._record: Optional["ComputationRecord"] = None

    def __repr__(self) -> str:
        label = f" '{self.name}'" if self.name else ""
        return (
            f"<Tensor{label} shape={self.shape} dtype={self.dtype} "
            f"requires_grad={self.requires_grad}>"
        )

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, name=self.name)

    def __add__(self, other: Any) -> "Tensor":
        return ops.add(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        return ops.add(other, self)

    def __sub__(self, other: Any) -> "Tensor":
        return ops.sub(self, other)

    def __mul__(self, other: Any) -> "Tensor":
        return ops.mul(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        return ops.mul(other, self)

    def __matmul__(self, other: Any) -> "Tensor":
        return ops.matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def swapaxes(self, axis1: int, axis2: int) -> "Tensor":
        return ops.swapaxes(self, axis1, axis2)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return ops.sum(self, axis=axis, keepdims=keepdims)


@dataclass(frozen=True)
class RecordEntry:
    """One recorded primitive application."""

    op: str
    inputs: Tuple[int, ...]
    output: int
    attrs: Dict[str, Any] = field(default_factory=dict)
    saved: Tuple[Any, ...] = ()


class ComputationRecord:
    """
    Ordered log of primitive applications (a tape).

    Entries are appended in execution order, so every input node precedes the
    entry that consumes it. A record is single-writer: activate it in one
    thread only.
    """

    def __init__(self):
        self.entries: List[RecordEntry] = []
        self._values: Dict[int, np.ndarray] = {}
        self._requires: Dict[int, bool] = {}
        self._leaf_nodes: Dict[int, int] = {}
        self._leaf_tensors: Dict[int, Tensor] = {}
        self._next_node = 0

    @contextlib.contextmanager
    def active(self) -> Iterator["ComputationRecord"]:
        """Record every primitive applied inside the block into this record."""
        token = _ACTIVE_RECORD.set(self)
        try:
            yield self
        finally:
            _ACTIVE_RECORD.reset(token)

    def _new_node(self, value: np.ndarray, requires_grad: bool) -> int:
        node = self._next_node
        self._next_node += 1
        self._values[node] = value
        self._requires[node] = requires_grad
        return node

    def node_of(self, tensor: Tensor) -> int:
        """Return the node handle of a tensor, registering it as a leaf if new."""
        if tensor._record is self and tensor.node_id is not None:
            return tensor.node_id
        key = id(tensor)
        node = self._leaf_nodes.get(key)
        if node is None:
            node = self._new_node(tensor.data, tensor.requires_grad)
            self._leaf_nodes[key] = node
            self._leaf_tensors[node] = tensor
        return node

    def append(
        self,
        op: str,
        inputs: Sequence[Tensor],
        output: Tensor,
        attrs: Dict[str, Any],
        saved: Tuple[Any, ...],
    ) -> None:
        input_nodes = tuple(self.node_of(t) for t in inputs)
        node = self._new_node(output.data, output.requires_grad)
        output.node_id = node
        output._record = self
        self.entries.append(RecordEntry(op, input_nodes, node, attrs, saved))

    def value(self, node: int) -> np.ndarray:
        return self._values[node]

    def requires_grad(self, node: int) -> bool:
        return self._requires.get(node, False)

    def leaves(self) -> List[Tuple[int, Tensor]]:
        return sorted(self._leaf_tensors.items())

    def __len__(self) -> int:
        return len(self.entries)

    def replay(self) -> Dict[int, np.ndarray]:
        """
        Recompute every recorded node from the leaf values.

        Returns:
            dict: Node handle to recomputed value.
        """
        values = {node: self._values[node] for node in self._leaf_tensors}
        for entry in self.entries:
            primitive = PRIMITIVES[entry.op]
            out, _ = primitive.forward(
                *[values[i] for i in entry.inputs], **entry.attrs
            )
            values[entry.output] = out
        return values


@dataclass(frozen=True)
class Primitive:
    """Forward and backward rule of one differentiable operation."""

    name: str
    forward: Callable[..., Tuple[np.ndarray, Tuple[Any, ...]]]
    backward: Callable[..., Tuple[Optional[np.ndarray], ...]]


PRIMITIVES: Dict[str, Primitive] = {}


def register(cls):
    """Class decorator registering a primitive with static forward/backward."""
    PRIMITIVES[cls.name] = Primitive(cls.name, cls.forward, cls.backward)
    return cls


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    # Sum a broadcast gradient back down to the operand shape.
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _as_tensor(value: Any, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def apply(name: str, *inputs: Any, **attrs: Any) -> Tensor:
    """
    Apply a registered primitive, recording it when a record is active.

    Raises:
        NonFiniteError: If the output holds NaN or Inf.
    """
    primitive = PRIMITIVES[name]
    dtype = next(
        (x.dtype for x in inputs if isinstance(x, Tensor)), default_dtype()
    )
    tensors = [_as_tensor(x, dtype) for x in inputs]
    out, saved = primitive.forward(*[t.data for t in tensors], **attrs)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(name)
    result = Tensor(out, requires_grad=any(t.requires_grad for t in tensors))
    record = _ACTIVE_RECORD.get()
    if record is not None:
        record.append(name, tensors, result, attrs, saved)
    return result


@register
class Add:
    name = "add"

    @staticmethod
    def forward(a, b):
        return a + b, ()

    @staticmethod
    def backward(grad, saved, a, b):
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)


@register
class Sub:
    name = "sub"

    @staticmethod
    def forward(a, b):
        return a - b, ()

    @staticmethod
    def backward(grad, saved, a, b):
        return _unbroadcast(grad, a.shape), _unbroadcast(-grad, b.shape)


@register
class Mul:
    name = "mul"

    @staticmethod
    def forward(a, b):
        return a * b, ()

    @staticmethod
    def backward(grad, saved, a, b):
        return _unbroadcast(grad * b, a.shape), _unbroadcast(grad * a, b.shape)


@register
class Scale:
    name = "scale"

    @staticmethod
    def forward(a, factor):
        return a * factor, ()

    @staticmethod
    def backward(grad, saved, a, factor):
        return (grad * factor,)


@register
class MatMul:
    name = "matmul"

    @staticmethod
    def forward(a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError("matmul operands must have at least two dimensions")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        return a @ b, ()

    @staticmethod
    def backward(grad, saved, a, b):
        grad_a = grad @ np.swapaxes(b, -1, -2)
        grad_b = np.swapaxes(a, -1, -2) @ grad
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)


@register
class SwapAxes:
    name = "swapaxes"

    @staticmethod
    def forward(a, axis1, axis2):
        return np.swapaxes(a, axis1, axis2), ()

    @staticmethod
    def backward(grad, saved, a, axis1, axis2):
        return (np.swapaxes(grad, axis1, axis2),)


@register
class Reshape:
    name = "reshape"

    @staticmethod
    def forward(a, shape):
        return a.reshape(shape), ()

    @staticmethod
    def backward(grad, saved, a, shape):
        return (grad.reshape(a.shape),)


@register
class Concat:
    name = "concat"

    @staticmethod
    def forward(*arrays, axis):
        return np.concatenate(arrays, axis=axis), ()

    @staticmethod
    def backward(grad, saved, *arrays, axis):
        bounds = np.cumsum([x.shape[axis] for x in arrays])[:-1]
        return tuple(np.split(grad, bounds, axis=axis))


@register
class Take:
    name = "take"

    @staticmethod
    def forward(a, indices, axis):
        return np.take(a, indices, axis=axis), ()

    @staticmethod
    def backward(grad, saved, a, indices, axis):
        moved = np.moveaxis(np.zeros_like(a), axis, 0)
        np.add.at(moved, indices, np.moveaxis(grad, axis, 0))
        return (np.moveaxis(moved, 0, axis),)


@register
class Where:
    name = "where"

    @staticmethod
    def forward(a, b, condition):
        return np.where(condition, a, b), ()

    @staticmethod
    def backward(grad, saved, a, b, condition):
        zeros = np.zeros_like(grad)
        return (
            _unbroadcast(np.where(condition, grad, zeros), a.shape),
            _unbroadcast(np.where(condition, zeros, grad), b.shape),
        )


@register
class Sum:
    name = "sum"

    @staticmethod
    def forward(a, axis, keepdims):
        return np.asarray(a.sum(axis=axis, keepdims=keepdims)), ()

    @staticmethod
    def backward(grad, saved, a, axis, keepdims):
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, a.shape).copy(),)


@register
class AMax:
    name = "amax"

    @staticmethod
    def forward(a, axis):
        winners = np.expand_dims(np.argmax(a, axis=axis), axis)
        return np.max(a, axis=axis), (winners,)

    @staticmethod
    def backward(grad, saved, a, axis):
        (winners,) = saved
        out = np.zeros_like(a)
        np.put_along_axis(out, winners, np.expand_dims(grad, axis), axis=axis)
        return (out,)


@register
class Softmax:
    name = "softmax"

    @staticmethod
    def forward(a, mask):
        logits = a if mask is None else np.where(mask, a, MASK_SENTINEL)
        shifted = logits - logits.max(axis=-1, keepdims=True)
        exps = np.exp(shifted)
        out = exps / exps.sum(axis=-1, keepdims=True)
        return out, (out,)

    @staticmethod
    def backward(grad, saved, a, mask):
        (out,) = saved
        inner = (grad * out).sum(axis=-1, keepdims=True)
        return (out * (grad - inner),)


_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@register
class Gelu:
    name = "gelu"

    @staticmethod
    def forward(a):
        return 0.5 * a * (1.0 + erf(a * _SQRT_HALF)), ()

    @staticmethod
    def backward(grad, saved, a):
        cdf = 0.5 * (1.0 + erf(a * _SQRT_HALF))
        pdf = np.exp(-0.5 * a * a) * _INV_SQRT_2PI
        return (grad * (cdf + a * pdf),)


@register
class LayerNorm:
    name = "layer_norm"

    @staticmethod
    def forward(x, scale, shift, eps):
        mean = x.mean(axis=-1, keepdims=True)
        centered = x - mean
        inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
        normed = centered * inv_std
        return normed * scale + shift, (normed, inv_std)

    @staticmethod
    def backward(grad, saved, x, scale, shift, eps):
        normed, inv_std = saved
        grad_normed = grad * scale
        grad_x = inv_std * (
            grad_normed
            - grad_normed.mean(axis=-1, keepdims=True)
            - normed * (grad_normed * normed).mean(axis=-1, keepdims=True)
        )
        return (
            grad_x,
            _unbroadcast(grad * normed, scale.shape),
            _unbroadcast(grad, shift.shape),
        )


@register
class CrossEntropy:
    name = "cross_entropy"

    @staticmethod
    def forward(logits, label):
        if logits.ndim != 1:
            raise ShapeError(f"cross_entropy expects a logit vector, got {logits.shape}")
        lse = logits.dtype.type(logsumexp(logits))
        return np.asarray(lse - logits[label], dtype=logits.dtype), (lse,)

    @staticmethod
    def backward(grad, saved, logits, label):
        (lse,) = saved
        probs = np.exp(logits - lse)
        probs[label] -= 1.0
        return (probs * grad,)


class ops:
    """Namespace of differentiable tensor operations."""

    @staticmethod
    def add(a, b) -> Tensor:
        return apply("add", a, b)

    @staticmethod
    def sub(a, b) -> Tensor:
        return apply("sub", a, b)

    @staticmethod
    def mul(a, b) -> Tensor:
        return apply("mul", a, b)

    @staticmethod
    def scale(a, factor: float) -> Tensor:
        return apply("scale", a, factor=float(factor))

    @staticmethod
    def matmul(a, b) -> Tensor:
        return apply("matmul", a, b)

    @staticmethod
    def swapaxes(a, axis1: int, axis2: int) -> Tensor:
        return apply("swapaxes", a, axis1=axis1, axis2=axis2)

    @staticmethod
    def reshape(a, shape) -> Tensor:
        return apply("reshape", a, shape=tuple(shape))

    @staticmethod
    def concat(tensors: Sequence, axis: int = 0) -> Tensor:
        return apply("concat", *tensors, axis=axis)

    @staticmethod
    def take(a, indices, axis: int = 0) -> Tensor:
        return apply("take", a, indices=np.asarray(indices, dtype=np.intp), axis=axis)

    @staticmethod
    def where(condition, a, b) -> Tensor:
        return apply("where", a, b, condition=np.asarray(condition, dtype=bool))

    @staticmethod
    def sum(a, axis=None, keepdims: bool = False) -> Tensor:
        return apply("sum", a, axis=axis, keepdims=keepdims)

    @staticmethod
    def amax(a, axis: int) -> Tensor:
        return apply("amax", a, axis=axis)

    @staticmethod
    def softmax(a, mask=None) -> Tensor:
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
        return apply("softmax", a, mask=mask)

    @staticmethod
    def gelu(a) -> Tensor:
        return apply("gelu", a)

    @staticmethod
    def layer_norm(x, scale, shift, eps: float = 1e-5) -> Tensor:
        return apply("layer_norm", x, scale, shift, eps=eps)

    @staticmethod
    def cross_entropy(logits, label: int) -> Tensor:
        return apply("cross_entropy", logits, label=int(label))

    @staticmethod
    def linear(x, weight, bias=None) -> Tensor:
        out = apply("matmul", x, weight)
        return out if bias is None else apply("add", out, bias)
