#!/usr/bin/env python3
"""
Attention primitives shared by every module.

Logits use two-sided scaling: queries and keys are each multiplied by
d_h^(-1/4) before the dot product, which equals the usual 1/sqrt(d_h).
Masked keys receive the MASK_SENTINEL logit and so exactly zero weight.
"""

from dataclasses import dataclass
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np

from .errors import NoValidKeysError, ShapeError
from .parameters import ParamSpec, linear_spec, norm_specs
from .tensor import Tensor, ops


@dataclass
class AttentionParams:
    """
    Projections of one multi-head attention.

    Attributes:
        w_q, w_k, w_v (Tensor): d x d input projections.
        w_o (Tensor): d x d output projection mixing the concatenated heads.
        heads (int): Number of heads; must divide d.
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    heads: int

    def __post_init__(self):
        d = self.w_q.shape[0]
        if self.heads < 1 or d % self.heads != 0:
            raise ShapeError(f"heads={self.heads} must divide width d={d}")

    @property
    def width(self) -> int:
        return self.w_q.shape[0]

    @staticmethod
    def specs(prefix: str, d: int) -> Dict[str, ParamSpec]:
        return {f"{prefix}.{w}": linear_spec(d, d) for w in ("w_q", "w_k", "w_v", "w_o")}

    @classmethod
    def from_params(cls, params: Mapping[str, Tensor], prefix: str, heads: int) -> "AttentionParams":
        return cls(
            params[f"{prefix}.w_q"],
            params[f"{prefix}.w_k"],
            params[f"{prefix}.w_v"],
            params[f"{prefix}.w_o"],
            heads,
        )


@dataclass
class BlockParams:
    """
    Pre-norm residual block: norm -> attention -> residual -> norm -> MLP -> residual.

    The attention field holds whichever parameter type the block's attention
    uses (plain AttentionParams or trajectory TcaParams).
    """

    norm1_scale: Tensor
    norm1_shift: Tensor
    attention: Any
    norm2_scale: Tensor
    norm2_shift: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor

    def __post_init__(self):
        d = self.mlp_w1.shape[0]
        if self.mlp_w1.shape[1] != 4 * d:
            raise ShapeError(
                f"MLP hidden width {self.mlp_w1.shape[1]} must be 4*d = {4 * d}"
            )

    @staticmethod
    def specs(prefix: str, d: int) -> Dict[str, ParamSpec]:
        """Specs of the norm and MLP parameters (attention specs are added by the owner)."""
        specs = {}
        specs.update(norm_specs(f"{prefix}.norm1", d))
        specs.update(norm_specs(f"{prefix}.norm2", d))
        specs[f"{prefix}.mlp.w1"] = linear_spec(d, 4 * d)
        specs[f"{prefix}.mlp.b1"] = ParamSpec((4 * d,), "zeros")
        specs[f"{prefix}.mlp.w2"] = linear_spec(4 * d, d)
        specs[f"{prefix}.mlp.b2"] = ParamSpec((d,), "zeros")
        return specs

    @classmethod
    def from_params(cls, params: Mapping[str, Tensor], prefix: str, attention: Any) -> "BlockParams":
        return cls(
            params[f"{prefix}.norm1.scale"],
            params[f"{prefix}.norm1.shift"],
            attention,
            params[f"{prefix}.norm2.scale"],
            params[f"{prefix}.norm2.shift"],
            params[f"{prefix}.mlp.w1"],
            params[f"{prefix}.mlp.b1"],
            params[f"{prefix}.mlp.w2"],
            params[f"{prefix}.mlp.b2"],
        )


AttendOutput = Union[Tensor, Tuple[Tensor, np.ndarray]]


class Attention:
    """
    Softmax attention building blocks.
    """

    @staticmethod
    def softmax(x: Any) -> Tensor:
        """
        Normalized exponential of a vector, computed with max-subtraction.

        Args:
            x (Tensor or array-like): A finite 1-D vector.

        Returns:
            Tensor: Nonnegative weights summing to one.

        Raises:
            ShapeError: If the input is empty or not a vector.
        """
        tensor = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=float))
        if tensor.ndim != 1 or tensor.shape[0] == 0:
            raise ShapeError("softmax needs a non-empty vector")
        return ops.softmax(tensor)

    @staticmethod
    def _full_mask(mask: Optional[np.ndarray], key_ndim: int, logits_shape) -> Optional[np.ndarray]:
        if mask is None:
            return None
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[-1] != logits_shape[-1]:
            raise ShapeError(
                f"key mask length {mask.shape[-1]} does not match {logits_shape[-1]} keys"
            )
        if mask.ndim == key_ndim - 1:
            # one flag per key: broadcast over queries
            mask = mask[..., None, :]
        try:
            return np.broadcast_to(mask, logits_shape)
        except ValueError as e:
            raise ShapeError(f"key mask {mask.shape} not broadcastable to {logits_shape}") from e

    @staticmethod
    def attend(
        q: Tensor,
        k: Tensor,
        v: Tensor,
        key_mask: Optional[np.ndarray] = None,
        return_weights: bool = False,
    ) -> AttendOutput:
        """
        Scaled dot-product attention over already projected tensors.

        Args:
            q (Tensor): Queries, shape (..., m, d_h).
            k (Tensor): Keys, shape (..., n, d_h).
            v (Tensor): Values, shape (..., n, d_h).
            key_mask (np.ndarray, optional): Valid-key flags, (..., n) per key or
                (..., m, n) per query.
            return_weights (bool): Also return the attention weights as an array.

        Returns:
            Tensor: Shape (..., m, d_h); optionally the (..., m, n) weights.

        Raises:
            ShapeError: On mismatched widths or key counts.
            NoValidKeysError: If any query has every key masked.
        """
        if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
            raise ShapeError(
                f"attend shape mismatch: q{q.shape} k{k.shape} v{v.shape}"
            )
        factor = q.shape[-1] ** -0.25
        logits = ops.matmul(ops.scale(q, factor), ops.swapaxes(ops.scale(k, factor), -1, -2))
        mask = Attention._full_mask(key_mask, k.ndim, logits.shape)
        if mask is not None and not mask.any(axis=-1).all():
            raise NoValidKeysError(f"{int((~mask.any(axis=-1)).sum())} queries affected")
        weights = ops.softmax(logits, mask)
        out = ops.matmul(weights, v)
        if return_weights:
            return out, weights.data
        return out

    @staticmethod
    def split_heads(x: Tensor, heads: int) -> Tensor:
        """(..., m, d) -> (..., heads, m, d/heads)."""
        d = x.shape[-1]
        x = ops.reshape(x, x.shape[:-1] + (heads, d // heads))
        return ops.swapaxes(x, -2, -3)

    @staticmethod
    def merge_heads(x: Tensor) -> Tensor:
        """(..., heads, m, d_h) -> (..., m, heads*d_h)."""
        x = ops.swapaxes(x, -2, -3)
        return ops.reshape(x, x.shape[:-2] + (x.shape[-2] * x.shape[-1],))

    @staticmethod
    def multi_head_attend(
        params: AttentionParams,
        targets: Tensor,
        sources: Tensor,
        key_mask: Optional[np.ndarray] = None,
        return_weights: bool = False,
    ) -> AttendOutput:
        """
        Multi-head attention of targets over sources.

        Self-attention is the case targets == sources. Queries come from the
        targets; keys and values from the sources.

        Args:
            params (AttentionParams): Projections and head count.
            targets (Tensor): Shape (..., m, d).
            sources (Tensor): Shape (..., n, d).
            key_mask (np.ndarray, optional): (..., n) or (..., m, n) valid-key flags.
            return_weights (bool): Also return head-averaged weights (..., m, n).

        Returns:
            Tensor: Shape (..., m, d).
        """
        d = params.width
        if targets.shape[-1] != d or sources.shape[-1] != d:
            raise ShapeError(
                f"multi_head_attend width mismatch: targets {targets.shape}, "
                f"sources {sources.shape}, d={d}"
            )
        q = Attention.split_heads(ops.matmul(targets, params.w_q), params.heads)
        k = Attention.split_heads(ops.matmul(sources, params.w_k), params.heads)
        v = Attention.split_heads(ops.matmul(sources, params.w_v), params.heads)
        if key_mask is not None:
            key_mask = np.asarray(key_mask, dtype=bool)
            if key_mask.ndim == sources.ndim - 1:
                key_mask = key_mask[..., None, :]
            # insert the head axis
            key_mask = np.expand_dims(key_mask, axis=-3)
        heads_out, weights = Attention.attend(q, k, v, key_mask, return_weights=True)
        out = ops.matmul(Attention.merge_heads(heads_out), params.w_o)
        if return_weights:
            return out, weights.mean(axis=-3)
        return out

    @staticmethod
    def mlp(x: Tensor, block: BlockParams) -> Tensor:
        hidden = ops.gelu(ops.linear(x, block.mlp_w1, block.mlp_b1))
        return ops.linear(hidden, block.mlp_w2, block.mlp_b2)


softmax = Attention.softmax
attend = Attention.attend
multi_head_attend = Attention.multi_head_attend
