#!/usr/bin/env python3
"""
Video tokenizer: tubelet cuboids, positional embeddings, classification token.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .errors import ConfigError, ShapeError
from .parameters import ParamSpec
from .tensor import Tensor, ops

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TokenizerConfig:
    """
    Clip geometry and tubelet size.

    Attributes:
        frames (int): Input frames T_in.
        height (int): Frame height in pixels.
        width (int): Frame width in pixels.
        channels (int): Colour channels.
        tubelet (tuple): (t_p, h_p, w_p) cuboid extents.
        embed_dim (int): Token width d.
    """

    frames: int = 8
    height: int = 32
    width: int = 32
    channels: int = 3
    tubelet: Tuple[int, int, int] = (2, 8, 8)
    embed_dim: int = 32

    def __post_init__(self):
        object.__setattr__(self, "tubelet", tuple(int(x) for x in self.tubelet))
        t_p, h_p, w_p = self.tubelet
        for axis, extent, patch in (
            ("frames", self.frames, t_p),
            ("height", self.height, h_p),
            ("width", self.width, w_p),
        ):
            if patch < 1 or extent < 1 or extent % patch != 0:
                raise ConfigError(
                    f"{axis}={extent} is not divisible by its tubelet extent {patch}"
                )
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be positive")

    @property
    def temporal_positions(self) -> int:
        return self.frames // self.tubelet[0]

    @property
    def grid_height(self) -> int:
        return self.height // self.tubelet[1]

    @property
    def grid_width(self) -> int:
        return self.width // self.tubelet[2]

    @property
    def spatial_positions(self) -> int:
        return self.grid_height * self.grid_width

    @property
    def cuboid_size(self) -> int:
        t_p, h_p, w_p = self.tubelet
        return t_p * h_p * w_p * self.channels

    def to_dict(self) -> dict:
        return {
            "frames": self.frames,
            "height": self.height,
            "width": self.width,
            "channels": self.channels,
            "tubelet": list(self.tubelet),
            "embed_dim": self.embed_dim,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "TokenizerConfig":
        return cls(**dict(data))


@dataclass
class PositionalEmbeddings:
    """Learnable spatial (S x d) and temporal (T x d) tables."""

    spatial: Tensor
    temporal: Tensor


@dataclass
class TokenGrid:
    """
    The video token field.

    Attributes:
        tokens (Tensor): T x S x d, spatial index row-major over (row, col).
        grid (tuple): (T, S_h, S_w).
        cls (Tensor, optional): 1 x d classification token, once appended.
        appended (Tensor, optional): Extra tokens riding after cls (n x d).
    """

    tokens: Tensor
    grid: Tuple[int, int, int]
    cls: Optional[Tensor] = None
    appended: Optional[Tensor] = None

    @property
    def temporal(self) -> int:
        return self.grid[0]

    @property
    def spatial(self) -> int:
        return self.grid[1] * self.grid[2]

    @property
    def width(self) -> int:
        return self.tokens.shape[-1]

    @property
    def token_count(self) -> int:
        count = self.temporal * self.spatial
        if self.cls is not None:
            count += 1
        if self.appended is not None:
            count += self.appended.shape[0]
        return count

    def flat(self) -> Tensor:
        """Grid tokens as (T*S) x d, time-major."""
        return ops.reshape(self.tokens, (self.temporal * self.spatial, self.width))


class VideoTokenizer:
    """
    Turns clips into token grids.
    """

    @staticmethod
    def specs(cfg: TokenizerConfig) -> Dict[str, ParamSpec]:
        d = cfg.embed_dim
        return {
            "patch.w": ParamSpec((cfg.cuboid_size, d), "uniform", cfg.cuboid_size),
            "patch.b": ParamSpec((d,), "zeros"),
            "pos.spatial": ParamSpec((cfg.spatial_positions, d), "normal"),
            "pos.temporal": ParamSpec((cfg.temporal_positions, d), "normal"),
            "cls": ParamSpec((1, d), "normal"),
        }

    @staticmethod
    def cuboids(clip: np.ndarray, cfg: TokenizerConfig) -> np.ndarray:
        """
        Cut a clip into flattened tubelets.

        Args:
            clip (np.ndarray): T_in x H x W x C pixel values.
            cfg (TokenizerConfig): Geometry.

        Returns:
            np.ndarray: T x S x (t_p*h_p*w_p*C), each cuboid flattened in
            (time, row, col, channel) order.

        Raises:
            ShapeError: If the clip does not match the configured geometry.
        """
        clip = np.asarray(clip)
        expected = (cfg.frames, cfg.height, cfg.width, cfg.channels)
        if clip.ndim != 4:
            raise ShapeError(f"clip must be T x H x W x C, got shape {clip.shape}")
        for axis, (actual, want) in zip(("frames", "height", "width", "channels"), zip(clip.shape, expected)):
            if actual != want:
                raise ShapeError(f"clip {axis}={actual} does not match configured {want}")
        t_p, h_p, w_p = cfg.tubelet
        T, S_h, S_w = cfg.temporal_positions, cfg.grid_height, cfg.grid_width
        blocks = clip.reshape(T, t_p, S_h, h_p, S_w, w_p, cfg.channels)
        blocks = blocks.transpose(0, 2, 4, 1, 3, 5, 6)
        return blocks.reshape(T, S_h * S_w, cfg.cuboid_size)

    @staticmethod
    def uncuboids(cuboids: np.ndarray, cfg: TokenizerConfig) -> np.ndarray:
        """Inverse of ``cuboids``: reassemble the clip from its flattened tubelets."""
        t_p, h_p, w_p = cfg.tubelet
        T, S_h, S_w = cfg.temporal_positions, cfg.grid_height, cfg.grid_width
        blocks = np.asarray(cuboids).reshape(T, S_h, S_w, t_p, h_p, w_p, cfg.channels)
        blocks = blocks.transpose(0, 3, 1, 4, 2, 5, 6)
        return blocks.reshape(cfg.frames, cfg.height, cfg.width, cfg.channels)

    @staticmethod
    def patchify(
        clip: np.ndarray,
        cfg: TokenizerConfig,
        projection: Tensor,
        bias: Optional[Tensor] = None,
    ) -> TokenGrid:
        """
        Linearly project every tubelet to a d-dimensional token.

        Args:
            clip (np.ndarray): T_in x H x W x C clip.
            cfg (TokenizerConfig): Geometry.
            projection (Tensor): (t_p*h_p*w_p*C) x d projection.
            bias (Tensor, optional): d-vector added to every token.

        Returns:
            TokenGrid: Grid of shape T x S x d without cls.
        """
        if projection.shape != (cfg.cuboid_size, cfg.embed_dim):
            raise ShapeError(
                f"projection shape {projection.shape} does not match "
                f"({cfg.cuboid_size}, {cfg.embed_dim})"
            )
        pieces = VideoTokenizer.cuboids(clip, cfg).astype(projection.dtype)
        tokens = ops.linear(Tensor(pieces), projection, bias)
        return TokenGrid(tokens, (cfg.temporal_positions, cfg.grid_height, cfg.grid_width))

    @staticmethod
    def add_positional(grid: TokenGrid, emb: PositionalEmbeddings) -> TokenGrid:
        """
        x_st <- x_st + e^s_s + e^t_t.

        Raises:
            ShapeError: If the tables do not match the grid dims.
        """
        d = grid.width
        if emb.spatial.shape != (grid.spatial, d) or emb.temporal.shape != (grid.temporal, d):
            raise ShapeError(
                f"positional tables {emb.spatial.shape}/{emb.temporal.shape} do not "
                f"match grid {grid.grid} with width {d}"
            )
        spatial = ops.reshape(emb.spatial, (1, grid.spatial, d))
        temporal = ops.reshape(emb.temporal, (grid.temporal, 1, d))
        tokens = ops.add(ops.add(grid.tokens, spatial), temporal)
        return replace(grid, tokens=tokens)

    @staticmethod
    def append_cls(grid: TokenGrid, cls_param: Tensor) -> TokenGrid:
        """
        Attach the classification token. It receives no positional embedding.

        Raises:
            ShapeError: If the grid already carries a cls token or widths differ.
        """
        if grid.cls is not None:
            raise ShapeError("classification token already appended")
        if cls_param.shape != (1, grid.width):
            raise ShapeError(f"cls token must be 1 x {grid.width}, got {cls_param.shape}")
        return replace(grid, cls=cls_param)


patchify = VideoTokenizer.patchify
add_positional = VideoTokenizer.add_positional
append_cls = VideoTokenizer.append_cls
