#!/usr/bin/env python3
"""
Interaction tokens: hand and object tokens refined by one another.

Three mechanisms are available:

    SCA  per-frame cross-attention; the hand queries the objects of its frame,
         every object queries the hand and the other objects of its frame.
    SOT  per-track self-attention over time; the hand attends to the hand of
         every frame, an object only to its own track.
    UB   the union box of the hand and its nearest object is pooled into one
         token per frame and self-attended over time.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .attention import Attention, AttentionParams
from .errors import ConfigError, NoValidKeysError, ShapeError
from .parameters import ParamSpec
from .roi import BoundingBox, FrameRegions, RegionExtractor, RegionTokens, RoiHeadParams
from .tensor import Tensor, ops
from .tokenizer import TokenGrid, TokenizerConfig

logger = logging.getLogger(__name__)


class InteractionVariant(str, Enum):
    SCA = "sca"
    SOT = "sot"
    UB = "ub"


class TokenSelection(str, Enum):
    """Which refined rows are kept as interaction tokens."""

    BOTH = "both"
    HAND = "hand"
    OBJECT = "object"


@dataclass
class InteractionTokens:
    """
    Interaction tokens of one clip.

    Attributes:
        tokens (Tensor): T x K x d; K = N + 1 (hand first) for SCA/SOT, 1 for UB.
        mask (np.ndarray): T x K validity flags. Masked rows are all-zero.
    """

    tokens: Tensor
    mask: np.ndarray

    @property
    def temporal(self) -> int:
        return self.tokens.shape[0]

    @property
    def slots(self) -> int:
        return self.tokens.shape[1]

    def valid_index(self) -> np.ndarray:
        """Flat (t * K + k) indices of valid tokens, time-major."""
        return np.flatnonzero(self.mask.reshape(-1))

    def valid_tokens(self) -> Tensor:
        """The valid tokens as an M x d matrix, time-major."""
        T, K, d = self.tokens.shape
        flat = ops.reshape(self.tokens, (T * K, d))
        return ops.take(flat, self.valid_index(), axis=0)


@dataclass
class InteractionParams:
    """
    Attention parameters of one interaction mechanism.

    SCA and SOT carry separate hand and object refinements; UB carries one
    attention over the union tokens.
    """

    variant: InteractionVariant
    hand: Optional[AttentionParams] = None
    object: Optional[AttentionParams] = None
    union: Optional[AttentionParams] = None

    @staticmethod
    def specs(variant, d: int) -> Dict[str, ParamSpec]:
        variant = InteractionVariant(variant)
        prefix = variant.value
        if variant == InteractionVariant.UB:
            return AttentionParams.specs(f"{prefix}.union", d)
        specs = AttentionParams.specs(f"{prefix}.hand", d)
        specs.update(AttentionParams.specs(f"{prefix}.object", d))
        return specs

    @classmethod
    def from_params(cls, params: Mapping[str, Tensor], variant, heads: int) -> "InteractionParams":
        variant = InteractionVariant(variant)
        prefix = variant.value
        if variant == InteractionVariant.UB:
            return cls(variant, union=AttentionParams.from_params(params, f"{prefix}.union", heads))
        return cls(
            variant,
            hand=AttentionParams.from_params(params, f"{prefix}.hand", heads),
            object=AttentionParams.from_params(params, f"{prefix}.object", heads),
        )


def _mask_tensor(mask: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(mask, dtype=dtype)[..., None])


class InteractionModeler:
    """
    Builds interaction tokens from region tokens.
    """

    @staticmethod
    def sca(
        regions: RegionTokens,
        hand_params: AttentionParams,
        object_params: AttentionParams,
        strict: bool = False,
    ) -> InteractionTokens:
        """
        Spatial cross-attention, every frame independently.

        Args:
            regions (RegionTokens): Hand (T x d) and object (T x N x d) tokens.
            hand_params (AttentionParams): Hand-refinement attention.
            object_params (AttentionParams): Object-refinement attention.
            strict (bool): Raise when a frame has no valid object instead of
                passing its hand token through unrefined.

        Returns:
            InteractionTokens: T x (N+1) x d, hand row first.

        Raises:
            NoValidKeysError: In strict mode, if some frame has no valid object.
        """
        T, N, d = regions.objects.shape
        dtype = regions.hand.dtype
        obj_mask = np.asarray(regions.object_mask, dtype=bool).reshape(T, N)
        has_object = obj_mask.any(axis=1)
        if strict and not has_object.all():
            raise NoValidKeysError(
                f"frames {np.flatnonzero(~has_object).tolist()} have no valid object"
            )
        hand = ops.reshape(regions.hand, (T, 1, d))

        if has_object.any():
            # frames without objects get a dummy all-valid mask and are discarded below
            hand_mask = np.where(has_object[:, None], obj_mask, True)
            refined = Attention.multi_head_attend(hand_params, hand, regions.objects, hand_mask)
            hand_out = ops.where(has_object[:, None, None], refined, hand)
        else:
            logger.debug("no valid objects in clip; hand tokens pass through")
            hand_out = hand

        if N > 0:
            sources = ops.concat([hand, regions.objects], axis=1)
            key_mask = np.ones((T, N, N + 1), dtype=bool)
            key_mask[:, :, 1:] = obj_mask[:, None, :]
            key_mask[:, np.arange(N), np.arange(N) + 1] = False
            refined_objects = Attention.multi_head_attend(
                object_params, regions.objects, sources, key_mask
            )
            objects_out = ops.mul(refined_objects, _mask_tensor(obj_mask, dtype))
            tokens = ops.concat([hand_out, objects_out], axis=1)
        else:
            tokens = hand_out
        mask = np.concatenate([np.ones((T, 1), dtype=bool), obj_mask], axis=1)
        return InteractionTokens(tokens, mask)

    @staticmethod
    def sot(
        regions: RegionTokens,
        hand_params: AttentionParams,
        object_params: AttentionParams,
    ) -> InteractionTokens:
        """
        Self-attention along tracks.

        The hand token of frame t attends to the hand tokens of all frames. An
        object token attends only to tokens of the same track identity in
        frames where that track is valid; null slots stay null.

        Returns:
            InteractionTokens: T x (N+1) x d, hand row first.
        """
        T, N, d = regions.objects.shape
        dtype = regions.hand.dtype
        obj_mask = np.asarray(regions.object_mask, dtype=bool).reshape(T, N)
        hand = Attention.multi_head_attend(hand_params, regions.hand, regions.hand)
        hand_out = ops.reshape(hand, (T, 1, d))

        if N > 0:
            flat = ops.reshape(regions.objects, (T * N, d))
            tracks = np.asarray(regions.object_tracks).reshape(-1)
            valid = obj_mask.reshape(-1)
            key_mask = (tracks[:, None] == tracks[None, :]) & valid[None, :]
            # a null query keeps only itself so its row stays well defined
            key_mask[~valid] = False
            key_mask[~valid, np.flatnonzero(~valid)] = True
            refined = Attention.multi_head_attend(object_params, flat, flat, key_mask)
            refined = ops.mul(refined, _mask_tensor(valid, dtype))
            tokens = ops.concat([hand_out, ops.reshape(refined, (T, N, d))], axis=1)
        else:
            tokens = hand_out
        mask = np.concatenate([np.ones((T, 1), dtype=bool), obj_mask], axis=1)
        return InteractionTokens(tokens, mask)

    @staticmethod
    def union_box(hand: BoundingBox, objects: Sequence[Optional[BoundingBox]]) -> BoundingBox:
        """
        Union of the hand box and the object whose center is nearest to it.

        Ties go to the earlier object. Without objects the hand box is returned.
        """
        candidates = [b for b in objects if b is not None]
        if not candidates:
            return hand
        nearest = min(
            enumerate(candidates), key=lambda item: (hand.distance_to(item[1]), item[0])
        )[1]
        return replace(
            hand,
            x1=min(hand.x1, nearest.x1),
            y1=min(hand.y1, nearest.y1),
            x2=max(hand.x2, nearest.x2),
            y2=max(hand.y2, nearest.y2),
            track_id=None,
        )

    @staticmethod
    def union_boxes(regions: Sequence[FrameRegions], cfg: TokenizerConfig) -> List[BoundingBox]:
        """Per-temporal-position union boxes, averaged over each block of frames."""
        t_p = cfg.tubelet[0]
        unions = [InteractionModeler.union_box(r.hand, r.objects) for r in regions]
        return [
            RegionExtractor.average_boxes(unions[t * t_p:(t + 1) * t_p], t)
            for t in range(cfg.temporal_positions)
        ]

    @staticmethod
    def ub(
        grid: TokenGrid,
        union_boxes: Sequence[BoundingBox],
        head: RoiHeadParams,
        params: AttentionParams,
        cfg: TokenizerConfig,
    ) -> InteractionTokens:
        """
        Union-box tokens self-attended over time.

        Returns:
            InteractionTokens: T x 1 x d.
        """
        if len(union_boxes) != grid.temporal:
            raise ShapeError(
                f"expected {grid.temporal} union boxes, got {len(union_boxes)}"
            )
        union = RegionExtractor.pool_boxes(grid, union_boxes, head, cfg)
        refined = Attention.multi_head_attend(params, union, union)
        tokens = ops.reshape(refined, (grid.temporal, 1, grid.width))
        return InteractionTokens(tokens, np.ones((grid.temporal, 1), dtype=bool))

    @staticmethod
    def model_interactions(
        variant,
        regions: RegionTokens,
        grid: TokenGrid,
        params: InteractionParams,
        union_boxes: Optional[Sequence[BoundingBox]] = None,
        head: Optional[RoiHeadParams] = None,
        cfg: Optional[TokenizerConfig] = None,
        strict: bool = False,
    ) -> InteractionTokens:
        """
        Dispatch to SCA, SOT or UB.

        UB needs the union boxes, the RoI head and the tokenizer config.

        Raises:
            ConfigError: If UB is requested without its inputs.
        """
        variant = InteractionVariant(variant)
        if variant == InteractionVariant.SCA:
            return InteractionModeler.sca(regions, params.hand, params.object, strict)
        if variant == InteractionVariant.SOT:
            return InteractionModeler.sot(regions, params.hand, params.object)
        if union_boxes is None or head is None or cfg is None:
            raise ConfigError("UB interactions need union boxes, the RoI head and the tokenizer config")
        return InteractionModeler.ub(grid, union_boxes, head, params.union, cfg)

    @staticmethod
    def select_tokens(tokens: InteractionTokens, selection) -> InteractionTokens:
        """
        Keep only the refined hand row or only the object rows.

        Dropped rows are masked and zeroed. Only meaningful for SCA and SOT.
        """
        selection = TokenSelection(selection)
        if selection == TokenSelection.BOTH:
            return tokens
        keep = np.zeros_like(tokens.mask)
        if selection == TokenSelection.HAND:
            keep[:, 0] = True
        else:
            keep[:, 1:] = True
        mask = tokens.mask & keep
        kept = ops.mul(tokens.tokens, _mask_tensor(mask, tokens.tokens.dtype))
        return InteractionTokens(kept, mask)


sca = InteractionModeler.sca
sot = InteractionModeler.sot
union_box = InteractionModeler.union_box
ub = InteractionModeler.ub
model_interactions = InteractionModeler.model_interactions
