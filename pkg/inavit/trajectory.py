#!/usr/bin/env python3
"""
Trajectory attention.

Stage one pools the spatial tokens of every reference frame t' for a query,
giving one trajectory token per t'. Stage two pools the trajectory tokens over
time with 1-D attention whose query is the trajectory token of the query's own
frame. Used to infuse context into interaction tokens (TCA) and as the
self-attention of the backbone blocks.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np

from .attention import Attention, AttentionParams, BlockParams
from .errors import ShapeError
from .interaction import InteractionTokens
from .parameters import ParamSpec, linear_spec
from .tensor import Tensor, ops
from .tokenizer import TokenGrid

logger = logging.getLogger(__name__)


@dataclass
class TcaParams:
    """
    Projections of one trajectory attention.

    Attributes:
        w_q, w_k, w_v (Tensor): Stage-one projections (query token, context keys/values).
        t_q, t_k, t_v (Tensor): Stage-two projections of the trajectory tokens.
        w_o (Tensor): Output projection.
        heads (int): Head count; must divide d.
        causal (bool): Restrict reference frames to t' >= t.
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    t_q: Tensor
    t_k: Tensor
    t_v: Tensor
    w_o: Tensor
    heads: int
    causal: bool = False

    NAMES = ("w_q", "w_k", "w_v", "t_q", "t_k", "t_v", "w_o")

    def __post_init__(self):
        d = self.w_q.shape[0]
        if self.heads < 1 or d % self.heads != 0:
            raise ShapeError(f"heads={self.heads} must divide width d={d}")

    @property
    def width(self) -> int:
        return self.w_q.shape[0]

    def plain(self) -> AttentionParams:
        """The stage-one projections viewed as ordinary multi-head attention."""
        return AttentionParams(self.w_q, self.w_k, self.w_v, self.w_o, self.heads)

    @staticmethod
    def specs(prefix: str, d: int) -> Dict[str, ParamSpec]:
        return {f"{prefix}.{name}": linear_spec(d, d) for name in TcaParams.NAMES}

    @classmethod
    def from_params(
        cls, params: Mapping[str, Tensor], prefix: str, heads: int, causal: bool = False
    ) -> "TcaParams":
        return cls(*(params[f"{prefix}.{name}"] for name in cls.NAMES), heads=heads, causal=causal)


@dataclass
class TrajectoryTokens:
    """
    Stage-one output.

    Attributes:
        tokens (Tensor): M x T' x d, token (m, t') pools frame t' for query m.
        weights (np.ndarray): M x T' x S head-averaged spatial weights.
    """

    tokens: Tensor
    weights: np.ndarray


@dataclass
class AttentionTrace:
    """
    Collects attention maps emitted during a forward pass.

    Each entry is a dict with ``kind`` ('trajectory' or 'icv'), ``layer`` and
    ``weights``; trajectory entries also carry ``frames``, the home frame of
    every query.
    """

    entries: List[Dict[str, Any]] = field(default_factory=list)

    def add(self, kind: str, layer: str, weights: np.ndarray, **extra) -> None:
        entry = {"kind": kind, "layer": layer, "weights": np.array(weights)}
        entry.update(extra)
        self.entries.append(entry)

    def of_kind(self, kind: str) -> List[Dict[str, Any]]:
        return [e for e in self.entries if e["kind"] == kind]


class TrajectoryAttention:
    """
    Two-stage trajectory attention and the blocks built on it.
    """

    @staticmethod
    def trajectory_tokens(queries: Tensor, context: TokenGrid, params: TcaParams) -> TrajectoryTokens:
        """
        Stage one: for each query and each frame t', attend over the S tokens of t'.

        Args:
            queries (Tensor): M x d query tokens.
            context (TokenGrid): T x S x d context (cls ignored).
            params (TcaParams): Projections.

        Returns:
            TrajectoryTokens: M x T x d tokens and M x T x S weights.
        """
        T, S = context.temporal, context.spatial
        if T == 0 or S == 0:
            raise ShapeError("trajectory attention needs a non-empty context")
        M, d = queries.shape
        h = params.heads
        q = Attention.split_heads(ops.matmul(queries, params.w_q), h)
        q = ops.reshape(q, (1,) + q.shape)
        k = Attention.split_heads(ops.matmul(context.tokens, params.w_k), h)
        v = Attention.split_heads(ops.matmul(context.tokens, params.w_v), h)
        pooled, weights = Attention.attend(q, k, v, return_weights=True)
        # (T, h, M, d_h) -> (M, T, d)
        merged = Attention.merge_heads(pooled)
        tokens = ops.swapaxes(merged, 0, 1)
        return TrajectoryTokens(tokens, weights.mean(axis=1).transpose(1, 0, 2))

    @staticmethod
    def trajectory_attend(
        queries: Tensor,
        frames: Sequence[int],
        context: TokenGrid,
        params: TcaParams,
        trace: Optional[AttentionTrace] = None,
        layer: str = "tca",
    ) -> Tensor:
        """
        Refine query tokens by attending along motion trajectories in the context.

        Args:
            queries (Tensor): M x d query tokens.
            frames (sequence): Home temporal position t of each query.
            context (TokenGrid): T x S x d context grid.
            params (TcaParams): Projections, heads and causality.
            trace (AttentionTrace, optional): Receives the stage-one weight maps.
            layer (str): Label recorded with the trace entry.

        Returns:
            Tensor: M x d refined tokens.

        Raises:
            ShapeError: On an empty context or a home frame outside the grid.
        """
        frames = np.asarray(frames, dtype=np.intp)
        M, d = queries.shape
        T = context.temporal
        if frames.shape != (M,):
            raise ShapeError(f"need one home frame per query, got {frames.shape} for {M} queries")
        if M and (frames.min() < 0 or frames.max() >= T):
            raise ShapeError(f"home frames must lie in [0, {T})")
        stage_one = TrajectoryAttention.trajectory_tokens(queries, context, params)
        if trace is not None:
            trace.add("trajectory", layer, stage_one.weights, frames=frames.tolist())

        h = params.heads
        d_h = d // h
        traj = stage_one.tokens
        diagonal = ops.take(ops.reshape(traj, (M * T, d)), np.arange(M) * T + frames, axis=0)
        q = ops.reshape(ops.matmul(diagonal, params.t_q), (M, h, 1, d_h))
        k = ops.swapaxes(ops.reshape(ops.matmul(traj, params.t_k), (M, T, h, d_h)), 1, 2)
        v = ops.swapaxes(ops.reshape(ops.matmul(traj, params.t_v), (M, T, h, d_h)), 1, 2)
        mask = None
        if params.causal:
            mask = (np.arange(T)[None, :] >= frames[:, None])[:, None, None, :]
        pooled = Attention.attend(q, k, v, mask)
        return ops.matmul(ops.reshape(pooled, (M, d)), params.w_o)

    @staticmethod
    def tca(
        interactions: InteractionTokens,
        context: TokenGrid,
        params: TcaParams,
        trace: Optional[AttentionTrace] = None,
    ) -> InteractionTokens:
        """
        Trajectory cross-attention of interaction tokens into the video context.

        Every valid token (t, k) is replaced by its trajectory-attention output
        with home frame t; masked tokens are left untouched.

        Returns:
            InteractionTokens: Context-infused tokens, same shape and mask.
        """
        T, K, d = interactions.tokens.shape
        if T != context.temporal:
            raise ShapeError(
                f"interaction tokens span {T} frames but context has {context.temporal}"
            )
        index = interactions.valid_index()
        if index.size == 0:
            return interactions
        refined = TrajectoryAttention.trajectory_attend(
            interactions.valid_tokens(), index // K, context, params, trace, layer="tca"
        )
        # rows of the stacked [original; refined] matrix to read back per slot
        source = np.arange(T * K)
        source[index] = T * K + np.arange(index.size)
        stacked = ops.concat([ops.reshape(interactions.tokens, (T * K, d)), refined], axis=0)
        tokens = ops.reshape(ops.take(stacked, source, axis=0), (T, K, d))
        return InteractionTokens(tokens, interactions.mask)

    @staticmethod
    def backbone_block(
        grid: TokenGrid,
        block: BlockParams,
        trace: Optional[AttentionTrace] = None,
        layer: str = "backbone",
    ) -> TokenGrid:
        """
        One pre-norm trajectory-attention block.

        Grid tokens use self trajectory attention over the grid. The cls token
        and any appended tokens use plain attention over every token, including
        themselves. Both paths share the block's stage-one projections.

        Args:
            grid (TokenGrid): Grid with cls appended.
            block (BlockParams): Norms, MLP and TcaParams attention.

        Returns:
            TokenGrid: Same shapes as the input.
        """
        if grid.cls is None:
            raise ShapeError("backbone blocks expect the classification token")
        params: TcaParams = block.attention
        T, S, d = grid.tokens.shape
        prefix = grid.cls if grid.appended is None else ops.concat([grid.cls, grid.appended], axis=0)
        n_prefix = prefix.shape[0]

        flat = ops.reshape(grid.tokens, (T * S, d))
        sequence = ops.concat([prefix, flat], axis=0)
        normed = ops.layer_norm(sequence, block.norm1_scale, block.norm1_shift)
        normed_prefix = ops.take(normed, np.arange(n_prefix), axis=0)
        normed_grid = ops.take(normed, np.arange(n_prefix, n_prefix + T * S), axis=0)

        grid_out = TrajectoryAttention.trajectory_attend(
            normed_grid,
            np.repeat(np.arange(T), S),
            TokenGrid(ops.reshape(normed_grid, (T, S, d)), grid.grid),
            replace(params, causal=False),
            trace,
            layer,
        )
        prefix_out = Attention.multi_head_attend(params.plain(), normed_prefix, normed)
        hidden = ops.add(sequence, ops.concat([prefix_out, grid_out], axis=0))
        mlp_in = ops.layer_norm(hidden, block.norm2_scale, block.norm2_shift)
        out = ops.add(hidden, Attention.mlp(mlp_in, block))

        new_prefix = ops.take(out, np.arange(n_prefix), axis=0)
        tokens = ops.reshape(ops.take(out, np.arange(n_prefix, n_prefix + T * S), axis=0), (T, S, d))
        cls = ops.take(new_prefix, [0], axis=0)
        appended = None
        if grid.appended is not None:
            appended = ops.take(new_prefix, np.arange(1, n_prefix), axis=0)
        return replace(grid, tokens=tokens, cls=cls, appended=appended)

    @staticmethod
    def block_specs(prefix: str, d: int) -> Dict[str, ParamSpec]:
        specs = BlockParams.specs(prefix, d)
        specs.update(TcaParams.specs(f"{prefix}.attn", d))
        return specs

    @staticmethod
    def block_from_params(params: Mapping[str, Tensor], prefix: str, heads: int) -> BlockParams:
        return BlockParams.from_params(
            params, prefix, TcaParams.from_params(params, f"{prefix}.attn", heads)
        )


trajectory_attend = TrajectoryAttention.trajectory_attend
tca = TrajectoryAttention.tca
backbone_block = TrajectoryAttention.backbone_block
