#!/usr/bin/env python3
"""
Gradient verification of every parameterized block.

Each block is evaluated at tiny dimensions in wide precision. Reverse-mode
gradients are compared with central differences on a seeded sample of
coordinates of every parameter tensor.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .attention import Attention, AttentionParams, BlockParams
from .errors import ConfigError, GradcheckFailure
from .gradients import finite_difference_gradient, relative_error, reverse_gradients, sample_coordinates
from .interaction import InteractionModeler, InteractionParams, InteractionTokens
from .model import InAViTConfig, InAViTModel, InAViTParams
from .parameters import ParamSpec, ParameterSet, norm_specs, linear_spec
from .roi import BoundingBox, FrameRegions, RegionExtractor, RegionKind, RoiHeadParams
from .tensor import ComputationRecord, Tensor, ops, wide_precision
from .tokenizer import TokenGrid, TokenizerConfig
from .trajectory import TcaParams, TrajectoryAttention

logger = logging.getLogger(__name__)

TOLERANCE = 1e-5
ERROR_FLOOR = 1e-2
REPORT_COLUMNS = [
    "block", "parameters", "probes_per_tensor", "max_rel_error", "worst_parameter",
    "tolerance", "error_floor", "passed",
]
BLOCKS = ("numerics", "roi", "sca", "sot", "ub", "tca", "icv", "backbone", "classifier", "model")


@dataclass
class Fixture:
    """Tiny, fixed inputs shared by the block objectives (float64)."""

    cfg: InAViTConfig
    clip: np.ndarray
    regions: List[FrameRegions]
    grid: np.ndarray
    tokens: np.ndarray
    interactions: np.ndarray
    interaction_mask: np.ndarray
    cls: np.ndarray
    label: int
    rng_seed: int
    readout: Dict[tuple, np.ndarray] = field(default_factory=dict)

    def readout_weights(self, shape) -> np.ndarray:
        """Fixed random weights used to reduce an output to a scalar."""
        shape = tuple(shape)
        if shape not in self.readout:
            rng = np.random.default_rng([self.rng_seed, len(shape), *shape])
            self.readout[shape] = rng.normal(size=shape)
        return self.readout[shape]

    def reduce(self, out: Tensor) -> Tensor:
        return ops.sum(ops.mul(out, Tensor(self.readout_weights(out.shape))))

    def token_grid(self) -> TokenGrid:
        tok = self.cfg.tokenizer
        return TokenGrid(Tensor(self.grid), (tok.temporal_positions, tok.grid_height, tok.grid_width))


def tiny_config(**overrides) -> InAViTConfig:
    """d=8, T=3 temporal positions, S=4, N=2, one backbone block, 3 classes."""
    base = InAViTConfig(
        tokenizer=TokenizerConfig(frames=6, height=16, width=16, channels=3, tubelet=(2, 8, 8), embed_dim=8),
        objects=2,
        heads=2,
        depth=1,
        classes=3,
    )
    return InAViTConfig.from_dict({**base.to_dict(), **overrides})


def _random_box(frame: int, kind: RegionKind, track: int, tok: TokenizerConfig, rng: np.random.Generator) -> BoundingBox:
    x1, y1 = rng.uniform(0, tok.width - 5), rng.uniform(0, tok.height - 5)
    w, h = rng.uniform(2, 5, size=2)
    return BoundingBox(frame, x1, y1, x1 + w, y1 + h, kind, 1.0, track)


def tiny_regions(cfg: InAViTConfig, rng: np.random.Generator) -> List[FrameRegions]:
    """Hand plus N objects per frame; the last frame drops its last object."""
    tok = cfg.tokenizer
    regions = []
    for f in range(tok.frames):
        hand = _random_box(f, RegionKind.HAND, 0, tok, rng)
        objects = [_random_box(f, RegionKind.OBJECT, j + 1, tok, rng) for j in range(cfg.objects)]
        mask = [True] * cfg.objects
        if f == tok.frames - 1 and cfg.objects > 1:
            objects[-1] = None
            mask[-1] = False
        regions.append(FrameRegions(hand, tuple(objects), tuple(mask)))
    return regions


def build_fixture(seed: int = 0, cfg: Optional[InAViTConfig] = None) -> Fixture:
    cfg = cfg or tiny_config()
    tok = cfg.tokenizer
    rng = np.random.default_rng(seed)
    T, S, d = tok.temporal_positions, tok.spatial_positions, cfg.d
    K = cfg.objects + 1
    mask = np.ones((T, K), dtype=bool)
    mask[-1, -1] = False
    interactions = rng.normal(size=(T, K, d)) * mask[..., None]
    return Fixture(
        cfg=cfg,
        clip=rng.uniform(size=(tok.frames, tok.height, tok.width, tok.channels)),
        regions=tiny_regions(cfg, rng),
        grid=rng.normal(size=(T, S, d)),
        tokens=rng.normal(size=(5, d)),
        interactions=interactions,
        interaction_mask=mask,
        cls=rng.normal(size=(1, d)),
        label=1,
        rng_seed=seed,
    )


def _region_tokens(fx: Fixture, params: Mapping[str, Tensor]):
    head = RoiHeadParams.from_params(params, "roi", fx.cfg.roi_grid)
    return RegionExtractor.build_region_tokens(fx.token_grid(), fx.regions, head, fx.cfg.tokenizer)


def _fixed_roi(fx: Fixture) -> Dict[str, Tensor]:
    # detached RoI head so interaction blocks are checked on their own parameters
    return dict(ParameterSet.initialize(RoiHeadParams.specs("roi", fx.cfg.d), fx.rng_seed + 7, np.float64))


@dataclass(frozen=True)
class GradcheckBlock:
    """A named objective over a set of parameter specs."""

    name: str
    specs: Callable[[Fixture], Dict[str, ParamSpec]]
    objective: Callable[[Fixture, Mapping[str, Tensor]], Tensor]


def _numerics(fx: Fixture, p: Mapping[str, Tensor]) -> Tensor:
    heads = fx.cfg.heads
    block = BlockParams.from_params(p, "block", AttentionParams.from_params(p, "attn", heads))
    x = Tensor(fx.tokens)
    normed = ops.layer_norm(x, block.norm1_scale, block.norm1_shift)
    attended = Attention.multi_head_attend(block.attention, normed, normed)
    out = ops.add(attended, Attention.mlp(ops.layer_norm(attended, block.norm2_scale, block.norm2_shift), block))
    return fx.reduce(out)


def _roi(fx: Fixture, p: Mapping[str, Tensor]) -> Tensor:
    regions = _region_tokens(fx, p)
    return ops.add(fx.reduce(regions.hand), fx.reduce(regions.objects))


def _interaction(variant: str):
    def objective(fx: Fixture, p: Mapping[str, Tensor]) -> Tensor:
        fixed = dict(_fixed_roi(fx))
        fixed.update(p)
        regions = _region_tokens(fx, fixed)
        head = RoiHeadParams.from_params(fixed, "roi", fx.cfg.roi_grid)
        unions = InteractionModeler.union_boxes(fx.regions, fx.cfg.tokenizer) if variant == "ub" else None
        out = InteractionModeler.model_interactions(
            variant, regions, fx.token_grid(), InteractionParams.from_params(p, variant, fx.cfg.heads),
            union_boxes=unions, head=head, cfg=fx.cfg.tokenizer,
        )
        return fx.reduce(out.tokens)

    return objective


def _interaction_tokens(fx: Fixture) -> InteractionTokens:
    return InteractionTokens(Tensor(fx.interactions), fx.interaction_mask)


def _tca(fx: Fixture, p: Mapping[str, Tensor]) -> Tensor:
    params = TcaParams.from_params(p, "tca", fx.cfg.heads, causal=True)
    out = TrajectoryAttention.tca(_interaction_tokens(fx), fx.token_grid(), params)
    return fx.reduce(out.tokens)


def _icv(fx: Fixture, p: Mapping[str, Tensor]) -> Tensor:
    block = BlockParams.from_params(p, "icv", AttentionParams.from_params(p, "icv.attn", fx.cfg.heads))
    return fx.reduce(InAViTModel.icv(_interaction_tokens(fx), fx.token_grid(), block).tokens)


def _backbone(fx: Fixture, p: Mapping[str, Tensor]) -> Tensor:
    block = TrajectoryAttention.block_from_params(p, "backbone.0", fx.cfg.heads)
    grid = TokenGrid(Tensor(fx.grid), fx.token_grid().grid, cls=Tensor(fx.cls))
    out = TrajectoryAttention.backbone_block(grid, block)
    return ops.add(fx.reduce(out.tokens), fx.reduce(out.cls))


def _classifier(fx: Fixture, p: Mapping[str, Tensor]) -> Tensor:
    return InAViTModel.cross_entropy(InAViTModel.classify(Tensor(fx.cls), p), fx.label)


def _model(fx: Fixture, p: Mapping[str, Tensor]) -> Tensor:
    logits = InAViTModel.forward(fx.clip, fx.regions, p, fx.cfg)
    return InAViTModel.cross_entropy(logits, fx.label)


def _classifier_specs(fx: Fixture) -> Dict[str, ParamSpec]:
    specs = norm_specs("final_norm", fx.cfg.d)
    specs["head.w"] = linear_spec(fx.cfg.d, fx.cfg.classes)
    # nonzero bias so its gradient is probed away from the symmetric point
    specs["head.b"] = ParamSpec((fx.cfg.classes,), "uniform", 1)
    return specs


def _numerics_specs(fx: Fixture) -> Dict[str, ParamSpec]:
    specs = AttentionParams.specs("attn", fx.cfg.d)
    specs.update(BlockParams.specs("block", fx.cfg.d))
    return specs


def _icv_specs(fx: Fixture) -> Dict[str, ParamSpec]:
    specs = BlockParams.specs("icv", fx.cfg.d)
    specs.update(AttentionParams.specs("icv.attn", fx.cfg.d))
    return specs


REGISTRY: Dict[str, GradcheckBlock] = {
    block.name: block
    for block in (
        GradcheckBlock("numerics", _numerics_specs, _numerics),
        GradcheckBlock("roi", lambda fx: RoiHeadParams.specs("roi", fx.cfg.d), _roi),
        GradcheckBlock("sca", lambda fx: InteractionParams.specs("sca", fx.cfg.d), _interaction("sca")),
        GradcheckBlock("sot", lambda fx: InteractionParams.specs("sot", fx.cfg.d), _interaction("sot")),
        GradcheckBlock(
            "ub",
            lambda fx: {**RoiHeadParams.specs("roi", fx.cfg.d), **InteractionParams.specs("ub", fx.cfg.d)},
            _interaction("ub"),
        ),
        GradcheckBlock("tca", lambda fx: TcaParams.specs("tca", fx.cfg.d), _tca),
        GradcheckBlock("icv", _icv_specs, _icv),
        GradcheckBlock("backbone", lambda fx: TrajectoryAttention.block_specs("backbone.0", fx.cfg.d), _backbone),
        GradcheckBlock("classifier", _classifier_specs, _classifier),
        GradcheckBlock("model", lambda fx: InAViTParams.specs(fx.cfg), _model),
    )
}


class GradientChecker:
    """
    Runs the block objectives through both differentiation paths.
    """

    @staticmethod
    def check_block(
        block: GradcheckBlock,
        fixture: Fixture,
        probes_per_tensor: int = 6,
        seed: int = 0,
        eps: float = 1e-5,
    ) -> Dict[str, float]:
        """
        Maximum relative error per parameter tensor of one block.

        Returns:
            dict: Parameter name to max relative error over probed coordinates.
        """
        with wide_precision():
            params = ParameterSet.initialize(block.specs(fixture), seed, np.float64)
            record = ComputationRecord()
            with record.active():
                loss = block.objective(fixture, params)
            analytic = reverse_gradients(record, loss, wrt=params)

            def evaluate(arrays: Mapping[str, np.ndarray]) -> float:
                tensors = {name: Tensor(value, name=name) for name, value in arrays.items()}
                return block.objective(fixture, tensors).item()

            coordinates = sample_coordinates(
                {n: t.shape for n, t in params.items()}, probes_per_tensor, seed
            )
            numeric = finite_difference_gradient(evaluate, params.arrays(), eps, coordinates)
        return {name: relative_error(analytic[name], numeric[name], ERROR_FLOOR) for name in params}

    @staticmethod
    def resolve_scope(scope: Union[str, Sequence[str]]) -> List[str]:
        """'full', 'classifier', or a comma-separated list of block names."""
        if isinstance(scope, str):
            names = list(BLOCKS) if scope == "full" else [s.strip() for s in scope.split(",") if s.strip()]
        else:
            names = list(scope)
        unknown = [n for n in names if n not in REGISTRY]
        if unknown or not names:
            raise ConfigError(f"unknown gradcheck blocks {unknown}; choose from {list(BLOCKS)}")
        return names

    @staticmethod
    def gradcheck_suite(
        scope: Union[str, Sequence[str]] = "full",
        seed: int = 0,
        probes_per_tensor: int = 6,
        tolerance: float = TOLERANCE,
    ) -> pd.DataFrame:
        """
        Check every block in scope.

        Returns:
            pd.DataFrame: One row per block (see REPORT_COLUMNS). Errors are
            |a - b| / max(|a|, |b|, error_floor) over at most probes_per_tensor
            coordinates of every tensor; a block passes when its worst error
            is at most the tolerance.
        """
        fixture = build_fixture(seed)
        rows = []
        for name in GradientChecker.resolve_scope(scope):
            errors = GradientChecker.check_block(REGISTRY[name], fixture, probes_per_tensor, seed)
            worst = max(errors, key=errors.get)
            rows.append(
                {
                    "block": name,
                    "parameters": len(errors),
                    "probes_per_tensor": probes_per_tensor,
                    "max_rel_error": errors[worst],
                    "worst_parameter": worst,
                    "tolerance": tolerance,
                    "error_floor": ERROR_FLOOR,
                    "passed": errors[worst] <= tolerance,
                }
            )
            logger.info("gradcheck %s: max rel. error %.2e (%s)", name, errors[worst], worst)
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)


gradcheck_suite = GradientChecker.gradcheck_suite


def require_passed(report: pd.DataFrame) -> None:
    """
    Raise if any block of a gradcheck report failed.

    Raises:
        GradcheckFailure: Naming the failing blocks and their errors.
    """
    failed = report[~report["passed"]]
    if not failed.empty:
        details = ", ".join(
            f"{row.block} ({row.max_rel_error:.2e} at {row.worst_parameter})" for row in failed.itertuples()
        )
        raise GradcheckFailure(f"gradient mismatch in {details}")
