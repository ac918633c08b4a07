#!/usr/bin/env python3
"""
Reverse-mode gradients over a ComputationRecord, and the central-difference
oracle used to verify them.
"""

from typing import Callable, Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import NonFiniteError, ShapeError
from .tensor import PRIMITIVES, ComputationRecord, Tensor


def reverse_gradients(
    record: ComputationRecord,
    loss: Tensor,
    wrt: Optional[Mapping[str, Tensor]] = None,
) -> Dict[str, np.ndarray]:
    """
    Back-propagate a scalar loss through the record.

    Args:
        record (ComputationRecord): Record the loss was computed under.
        loss (Tensor): Scalar output node.
        wrt (mapping, optional): Named leaves that must appear in the result even
            when the loss does not depend on them (they get zeros).

    Returns:
        dict: Leaf name to gradient array, for every named leaf with requires_grad.

    Raises:
        ShapeError: If the loss is not a scalar or was not recorded.
    """
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    if loss._record is not record or loss.node_id is None:
        raise ShapeError("loss was not produced under this computation record")

    grads: Dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for entry in reversed(record.entries):
        grad = grads.pop(entry.output, None)
        if grad is None:
            continue
        primitive = PRIMITIVES[entry.op]
        inputs = [record.value(i) for i in entry.inputs]
        input_grads = primitive.backward(grad, entry.saved, *inputs, **entry.attrs)
        for node, g in zip(entry.inputs, input_grads):
            if g is None or not record.requires_grad(node):
                continue
            grads[node] = grads[node] + g if node in grads else g

    result: Dict[str, np.ndarray] = {}
    for node, tensor in record.leaves():
        if tensor.requires_grad and tensor.name is not None:
            grad = grads.get(node)
            result[tensor.name] = (
                np.zeros_like(tensor.data) if grad is None else grad.reshape(tensor.shape)
            )
    for name, tensor in (wrt or {}).items():
        result.setdefault(name, np.zeros_like(tensor.data))
    return result


def finite_difference_gradient(
    f: Callable[[Mapping[str, np.ndarray]], float],
    theta: Mapping[str, np.ndarray],
    eps: float = 1e-4,
    coordinates: Optional[Mapping[str, Sequence[int]]] = None,
) -> Dict[str, np.ndarray]:
    """
    Central-difference gradient (f(θ+εe) − f(θ−εe)) / 2ε per coordinate.

    Args:
        f (callable): Deterministic scalar function of named arrays. Evaluate in
            float64 for meaningful results.
        theta (mapping): Point of evaluation, name to array.
        eps (float): Step size.
        coordinates (mapping, optional): Flat indices to probe per name; other
            coordinates are reported as NaN. All coordinates when omitted.

    Returns:
        dict: Name to gradient estimate, same shapes as theta.

    Raises:
        NonFiniteError: If f returns a non-finite value.
    """
    point = {name: np.array(value, dtype=np.float64) for name, value in theta.items()}

    def evaluate() -> float:
        value = float(f(point))
        if not np.isfinite(value):
            raise NonFiniteError("finite_difference_gradient", "objective is not finite")
        return value

    result: Dict[str, np.ndarray] = {}
    for name, array in point.items():
        flat = array.reshape(-1)
        probes: Iterable[int] = (
            range(flat.size) if coordinates is None or name not in coordinates
            else coordinates[name]
        )
        estimate = np.full(flat.size, np.nan if coordinates is not None else 0.0)
        for index in probes:
            original = flat[index]
            flat[index] = original + eps
            upper = evaluate()
            flat[index] = original - eps
            lower = evaluate()
            flat[index] = original
            estimate[index] = (upper - lower) / (2.0 * eps)
        result[name] = estimate.reshape(array.shape)
    return result


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-2) -> float:
    """
    Largest elementwise |a − b| / max(|a|, |b|, floor) over probed coordinates.

    NaN entries of ``numeric`` (unprobed coordinates) are ignored.
    """
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    probed = ~np.isnan(numeric)
    if not probed.any():
        return 0.0
    a, b = analytic[probed], numeric[probed]
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale))


def sample_coordinates(
    shapes: Mapping[str, Tuple[int, ...]], per_tensor: int, seed: int = 0
) -> Dict[str, np.ndarray]:
    """Pick up to ``per_tensor`` distinct flat indices per tensor, seeded."""
    rng = np.random.default_rng(seed)
    chosen = {}
    for name in sorted(shapes):
        size = int(np.prod(shapes[name]))
        count = min(per_tensor, size)
        chosen[name] = np.sort(rng.choice(size, size=count, replace=False))
    return chosen
