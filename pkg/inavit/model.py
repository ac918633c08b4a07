#!/usr/bin/env python3
"""
The interaction-centric video transformer for next-action anticipation.

Pipeline of one clip:

    patchify -> positional embeddings -> region tokens -> interaction tokens
    -> context infusion -> interaction-centric video representation
    -> cls -> trajectory-attention backbone -> final norm -> linear classifier

Basic Usage:
    from inavit.model import InAViTConfig, InAViTParams, forward

    cfg = InAViTConfig.preset("desk")
    params = InAViTParams.initialize_for(cfg, seed=0)
    logits = forward(clip, boxes, params, cfg)
"""

import contextlib
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.ndimage import gaussian_filter

from .attention import Attention, AttentionParams, BlockParams
from .errors import ConfigError, LabelError, NonFiniteError, ShapeError
from .interaction import (
    InteractionModeler,
    InteractionParams,
    InteractionTokens,
    InteractionVariant,
    TokenSelection,
)
from .parameters import ParameterSet, ParamSpec, linear_spec, norm_specs
from .roi import BoundingBox, FrameRegions, RegionExtractor, RoiHeadParams
from .tensor import Tensor, ops
from .tokenizer import PositionalEmbeddings, TokenGrid, TokenizerConfig, VideoTokenizer
from .trajectory import AttentionTrace, TcaParams, TrajectoryAttention

logger = logging.getLogger(__name__)

CONTEXT_MODES = ("trajectory", "mask_fg", "concat")


@dataclass(frozen=True)
class InAViTConfig:
    """
    Architecture configuration.

    Attributes:
        tokenizer (TokenizerConfig): Clip geometry, tubelet and width d.
        objects (int): Object slots N per frame.
        variant (str): Interaction mechanism, 'sca', 'sot' or 'ub'.
        heads (int): Attention heads; must divide d.
        depth (int): Backbone blocks L.
        classes (int): Action classes C.
        causal (bool): Restrict context trajectories to t' >= t.
        gap (int): Anticipation gap in frames.
        roi_grid (int): RoIAlign bins per side.
        use_interactions (bool): False gives the backbone-only baseline.
        use_context (bool): Infuse video context into interaction tokens.
        use_icv (bool): Fuse interaction tokens into the video tokens; when
            off, valid interaction tokens are appended after cls instead.
        context_mode (str): 'trajectory', 'mask_fg' or 'concat'.
        interaction_tokens (str): 'both', 'hand' or 'object'.
        mask_sigma (float): Blur of the foreground-masked context, in pixels.
        strict (bool): Fail on frames without any valid object.
    """

    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    objects: int = 2
    variant: str = "sca"
    heads: int = 4
    depth: int = 2
    classes: int = 8
    causal: bool = False
    gap: int = 4
    roi_grid: int = 2
    use_interactions: bool = True
    use_context: bool = True
    use_icv: bool = True
    context_mode: str = "trajectory"
    interaction_tokens: str = "both"
    mask_sigma: float = 2.0
    strict: bool = False

    def __post_init__(self):
        if isinstance(self.tokenizer, Mapping):
            object.__setattr__(self, "tokenizer", TokenizerConfig.from_dict(self.tokenizer))
        try:
            variant = InteractionVariant(self.variant)
            selection = TokenSelection(self.interaction_tokens)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        object.__setattr__(self, "variant", variant.value)
        object.__setattr__(self, "interaction_tokens", selection.value)
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.objects < 1:
            raise ConfigError(f"need at least 1 object slot, got {self.objects}")
        if self.depth < 1:
            raise ConfigError("backbone depth must be at least 1")
        if self.heads < 1 or self.tokenizer.embed_dim % self.heads != 0:
            raise ConfigError(
                f"heads={self.heads} must divide embed_dim={self.tokenizer.embed_dim}"
            )
        if self.context_mode not in CONTEXT_MODES:
            raise ConfigError(f"context_mode must be one of {CONTEXT_MODES}")
        if variant == InteractionVariant.UB and selection != TokenSelection.BOTH:
            raise ConfigError("hand/object token selection needs SCA or SOT")
        if self.roi_grid < 1:
            raise ConfigError("roi_grid must be at least 1")
        if self.gap < 0:
            raise ConfigError("gap must be nonnegative")

    @property
    def d(self) -> int:
        return self.tokenizer.embed_dim

    def to_dict(self) -> dict:
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        data["tokenizer"] = self.tokenizer.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> "InAViTConfig":
        data = dict(data)
        if "tokenizer" in data:
            data["tokenizer"] = TokenizerConfig.from_dict(data["tokenizer"])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @classmethod
    def preset(cls, name: str, **overrides) -> "InAViTConfig":
        """
        Named configurations.

        'desk' is the small default trained on synthetic clips; 'full' is the
        full-scale geometry (16 frames of 224x224, d=768, 12 heads, 12 blocks,
        4 objects).
        """
        if name == "desk":
            base = cls()
        elif name == "full":
            base = cls(
                tokenizer=TokenizerConfig(
                    frames=16, height=224, width=224, channels=3,
                    tubelet=(2, 16, 16), embed_dim=768,
                ),
                objects=4,
                heads=12,
                depth=12,
                classes=3806,
            )
        else:
            raise ConfigError(f"unknown preset '{name}'")
        return replace(base, **overrides)


class InAViTParams(ParameterSet):
    """
    Every learnable tensor of the model, by canonical name.

    The name set is a function of the config: see ``specs``.
    """

    @staticmethod
    def specs(cfg: InAViTConfig) -> Dict[str, ParamSpec]:
        d = cfg.d
        specs = VideoTokenizer.specs(cfg.tokenizer)
        if cfg.use_interactions:
            specs.update(RoiHeadParams.specs("roi", d))
            specs.update(InteractionParams.specs(cfg.variant, d))
            if cfg.use_context:
                if cfg.context_mode == "concat":
                    specs.update(AttentionParams.specs("ci_concat", d))
                else:
                    specs.update(TcaParams.specs("tca", d))
            if cfg.use_icv:
                specs.update(BlockParams.specs("icv", d))
                specs.update(AttentionParams.specs("icv.attn", d))
        for i in range(cfg.depth):
            specs.update(TrajectoryAttention.block_specs(f"backbone.{i}", d))
        specs.update(norm_specs("final_norm", d))
        specs["head.w"] = linear_spec(d, cfg.classes)
        specs["head.b"] = ParamSpec((cfg.classes,), "zeros")
        return specs

    @classmethod
    def initialize_for(cls, cfg: InAViTConfig, seed: int, dtype=None) -> "InAViTParams":
        return cls.initialize(cls.specs(cfg), seed, dtype)

    @staticmethod
    def expected_shapes(cfg: InAViTConfig) -> Dict[str, Tuple[int, ...]]:
        return {name: spec.shape for name, spec in InAViTParams.specs(cfg).items()}

    def groups(self) -> List[str]:
        """Top-level parameter groups ('patch', 'sca', 'backbone.0', ...)."""
        found = set()
        for name in self:
            parts = name.split(".")
            found.add(".".join(parts[:2]) if parts[0] == "backbone" else parts[0])
        return sorted(found)


@contextlib.contextmanager
def _stage(name: str) -> Iterator[None]:
    try:
        yield
    except NonFiniteError as e:
        raise NonFiniteError(f"{name}/{e.where}") from e


class InAViTModel:
    """
    Forward computation of the full model.
    """

    @staticmethod
    def prepare_regions(
        boxes: Sequence[Union[BoundingBox, FrameRegions]], cfg: InAViTConfig
    ) -> List[FrameRegions]:
        """
        Turn raw detections into per-frame regions.

        Boxes without track ids are associated first. Already selected
        FrameRegions pass through.
        """
        boxes = list(boxes)
        if boxes and all(isinstance(b, FrameRegions) for b in boxes):
            return boxes
        if any(b.track_id is None for b in boxes):
            boxes = RegionExtractor.associate_tracks(boxes)
        tok = cfg.tokenizer
        return RegionExtractor.select_regions(
            boxes, None, cfg.objects, tok.frames, (tok.width, tok.height)
        )

    @staticmethod
    def mask_foreground(clip: np.ndarray, regions: Sequence[FrameRegions], sigma: float) -> np.ndarray:
        """
        Replace hand and object box interiors with a blurred copy of the frame.

        Returns:
            np.ndarray: A new clip; the input is not modified.
        """
        clip = np.asarray(clip)
        masked = np.array(clip, dtype=np.float64)
        height, width = clip.shape[1:3]
        for f, frame_regions in enumerate(regions):
            blurred = gaussian_filter(masked[f], sigma=(sigma, sigma, 0))
            boxes = [frame_regions.hand] + [b for b in frame_regions.objects if b is not None]
            for box in boxes:
                box = box.clamp(width, height)
                r0, r1 = int(math.floor(box.y1)), int(math.ceil(box.y2))
                c0, c1 = int(math.floor(box.x1)), int(math.ceil(box.x2))
                masked[f, r0:r1, c0:c1] = blurred[r0:r1, c0:c1]
        return masked.astype(clip.dtype, copy=False)

    @staticmethod
    def embed(clip: np.ndarray, params: Mapping[str, Tensor], cfg: InAViTConfig) -> TokenGrid:
        """Patchify and add positional embeddings."""
        grid = VideoTokenizer.patchify(clip, cfg.tokenizer, params["patch.w"], params["patch.b"])
        return VideoTokenizer.add_positional(
            grid, PositionalEmbeddings(params["pos.spatial"], params["pos.temporal"])
        )

    @staticmethod
    def concat_context(
        interactions: InteractionTokens, context: TokenGrid, params: AttentionParams
    ) -> InteractionTokens:
        """
        Context infusion without trajectories.

        Each interaction token of frame t cross-attends over the valid
        interaction tokens and the video tokens of frame t.
        """
        sources = ops.concat([interactions.tokens, context.tokens], axis=1)
        key_mask = np.concatenate(
            [interactions.mask, np.ones((context.temporal, context.spatial), dtype=bool)], axis=1
        )
        refined = Attention.multi_head_attend(params, interactions.tokens, sources, key_mask)
        tokens = ops.where(interactions.mask[..., None], refined, interactions.tokens)
        return InteractionTokens(tokens, interactions.mask)

    @staticmethod
    def icv(
        interactions: InteractionTokens,
        grid: TokenGrid,
        block: BlockParams,
        trace: Optional[AttentionTrace] = None,
    ) -> TokenGrid:
        """
        Interaction-centric video representation.

        One pre-norm self-attention layer over [valid interaction tokens; video
        tokens]; only the rows at the original video positions are returned.
        Masked interaction tokens are excluded from the keys.

        The attention is followed by the residual pointwise MLP sublayer of a
        transformer block (``block.mlp_*``).

        Returns:
            TokenGrid: Same shape as ``grid``.
        """
        if grid.cls is not None:
            raise ShapeError("icv operates on the grid before the cls token is appended")
        T, S, d = grid.tokens.shape
        video = grid.flat()
        extra = interactions.valid_tokens()
        M = extra.shape[0]
        sequence = ops.concat([extra, video], axis=0) if M else video
        normed = ops.layer_norm(sequence, block.norm1_scale, block.norm1_shift)
        targets = ops.take(normed, np.arange(M, M + T * S), axis=0) if M else normed
        attended, weights = Attention.multi_head_attend(
            block.attention, targets, normed, return_weights=True
        )
        if trace is not None:
            trace.add("icv", "icv", weights, interaction_tokens=int(M))
        hidden = ops.add(video, attended)
        out = ops.add(
            hidden,
            Attention.mlp(ops.layer_norm(hidden, block.norm2_scale, block.norm2_shift), block),
        )
        return replace(grid, tokens=ops.reshape(out, (T, S, d)))

    @staticmethod
    def interaction_tokens(
        clip: np.ndarray,
        regions: Sequence[FrameRegions],
        grid: TokenGrid,
        params: Mapping[str, Tensor],
        cfg: InAViTConfig,
        trace: Optional[AttentionTrace] = None,
    ) -> InteractionTokens:
        """Region tokens, interaction modelling and context infusion."""
        tok = cfg.tokenizer
        head = RoiHeadParams.from_params(params, "roi", cfg.roi_grid)
        with _stage("regions"):
            region_tokens = RegionExtractor.build_region_tokens(grid, regions, head, tok)
        with _stage(f"interaction.{cfg.variant}"):
            unions = None
            if cfg.variant == InteractionVariant.UB.value:
                unions = InteractionModeler.union_boxes(regions, tok)
            interactions = InteractionModeler.model_interactions(
                cfg.variant,
                region_tokens,
                grid,
                InteractionParams.from_params(params, cfg.variant, cfg.heads),
                union_boxes=unions,
                head=head,
                cfg=tok,
                strict=cfg.strict,
            )
            interactions = InteractionModeler.select_tokens(interactions, cfg.interaction_tokens)
        if not cfg.use_context:
            return interactions
        with _stage(f"context.{cfg.context_mode}"):
            if cfg.context_mode == "concat":
                return InAViTModel.concat_context(
                    interactions, grid, AttentionParams.from_params(params, "ci_concat", cfg.heads)
                )
            context = grid
            if cfg.context_mode == "mask_fg":
                masked = InAViTModel.mask_foreground(clip, regions, cfg.mask_sigma)
                context = InAViTModel.embed(masked.astype(grid.tokens.dtype), params, cfg)
            tca_params = TcaParams.from_params(params, "tca", cfg.heads, cfg.causal)
            return TrajectoryAttention.tca(interactions, context, tca_params, trace)

    @staticmethod
    def forward(
        clip: np.ndarray,
        boxes: Sequence[Union[BoundingBox, FrameRegions]],
        params: Mapping[str, Tensor],
        cfg: InAViTConfig,
        trace: Optional[AttentionTrace] = None,
    ) -> Tensor:
        """
        Logits of the next action for one clip.

        Args:
            clip (np.ndarray): T_in x H x W x C pixel values.
            boxes (list): Detections (BoundingBox) or per-frame FrameRegions.
            params (mapping): Parameters named as in ``InAViTParams.specs(cfg)``.
            cfg (InAViTConfig): Architecture.
            trace (AttentionTrace, optional): Collects attention maps.

        Returns:
            Tensor: C logits.

        Raises:
            NonFiniteError: With the pipeline stage prefixed to the failing op.
            ShapeError: If the clip or boxes do not match the config.
        """
        clip = np.asarray(clip)
        dtype = params["patch.w"].dtype
        with _stage("embed"):
            grid = InAViTModel.embed(clip.astype(dtype, copy=False), params, cfg)

        appended = None
        if cfg.use_interactions:
            regions = InAViTModel.prepare_regions(boxes, cfg)
            interactions = InAViTModel.interaction_tokens(clip, regions, grid, params, cfg, trace)
            if cfg.use_icv:
                icv_block = BlockParams.from_params(
                    params, "icv", AttentionParams.from_params(params, "icv.attn", cfg.heads)
                )
                with _stage("icv"):
                    grid = InAViTModel.icv(interactions, grid, icv_block, trace)
            elif interactions.mask.any():
                appended = interactions.valid_tokens()

        grid = VideoTokenizer.append_cls(grid, params["cls"])
        grid = replace(grid, appended=appended)
        for i in range(cfg.depth):
            block = TrajectoryAttention.block_from_params(params, f"backbone.{i}", cfg.heads)
            with _stage(f"backbone.{i}"):
                grid = TrajectoryAttention.backbone_block(grid, block, trace, layer=f"backbone.{i}")

        with _stage("head"):
            return InAViTModel.classify(grid.cls, params)

    @staticmethod
    def classify(cls: Tensor, params: Mapping[str, Tensor]) -> Tensor:
        """Final norm and linear head on the 1 x d cls token; returns C logits."""
        normed = ops.layer_norm(cls, params["final_norm.scale"], params["final_norm.shift"])
        logits = ops.linear(normed, params["head.w"], params["head.b"])
        return ops.reshape(logits, (logits.shape[-1],))

    @staticmethod
    def cross_entropy(logits: Tensor, label: int) -> Tensor:
        """
        Negative log-probability of the label, in log-sum-exp form.

        Raises:
            LabelError: If the label is outside [0, C).
        """
        classes = logits.shape[-1]
        if not 0 <= int(label) < classes:
            raise LabelError(f"label {label} outside [0, {classes})")
        return ops.cross_entropy(logits, int(label))

    @staticmethod
    def predict_topk(logits, k: int) -> List[int]:
        """
        Indices of the k largest logits, largest first; ties go to the lower index.

        Raises:
            LabelError: If k is outside [1, C].
        """
        values = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if not 1 <= k <= values.size:
            raise LabelError(f"k={k} outside [1, {values.size}]")
        order = np.argsort(-values, kind="stable")
        return [int(i) for i in order[:k]]


icv = InAViTModel.icv
forward = InAViTModel.forward
cross_entropy = InAViTModel.cross_entropy
predict_topk = InAViTModel.predict_topk
