#!/usr/bin/env python3
"""
Hand and object region tokens.

Boxes are associated into tracks with greedy IoU matching, the N objects
closest to the hand are kept per frame, and each region is pooled from the
token grid with bilinear RoIAlign followed by a per-cell MLP and max-pooling.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ShapeError
from .parameters import ParamSpec, linear_spec
from .tensor import Tensor, ops
from .tokenizer import TokenGrid, TokenizerConfig

logger = logging.getLogger(__name__)

# Minimum box extent in token-grid units.
MIN_EXTENT = 1e-3


class RegionKind(str, Enum):
    HAND = "hand"
    OBJECT = "object"


@dataclass(frozen=True)
class BoundingBox:
    """
    A detection in pixel coordinates.

    Attributes:
        frame (int): Pixel frame index.
        x1, y1, x2, y2 (float): Corners with x1 <= x2 and y1 <= y2.
        kind (RegionKind): Hand or object.
        score (float): Detection confidence in [0, 1].
        track_id (int, optional): Identity assigned by association.
        type_id (int, optional): Object category (synthetic data only).
    """

    frame: int
    x1: float
    y1: float
    x2: float
    y2: float
    kind: RegionKind = RegionKind.OBJECT
    score: float = 1.0
    track_id: Optional[int] = None
    type_id: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", RegionKind(self.kind))
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ShapeError(f"box corners out of order: {self}")
        if not 0.0 <= self.score <= 1.0:
            raise ShapeError(f"box score {self.score} outside [0, 1]")

    @property
    def center(self) -> Tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def clamp(self, width: float, height: float) -> "BoundingBox":
        """Clamp the corners into a width x height frame."""
        x1 = min(max(self.x1, 0.0), width)
        y1 = min(max(self.y1, 0.0), height)
        x2 = min(max(self.x2, x1), width)
        y2 = min(max(self.y2, y1), height)
        return replace(self, x1=x1, y1=y1, x2=x2, y2=y2)

    def distance_to(self, other: "BoundingBox") -> float:
        (ax, ay), (bx, by) = self.center, other.center
        return math.hypot(ax - bx, ay - by)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["kind"] = self.kind.value
        return {k: v for k, v in data.items() if v is not None}

    @classmethod
    def from_dict(cls, data: Mapping) -> "BoundingBox":
        return cls(**dict(data))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes (0 when the union is empty)."""
    inter_w = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    inter_h = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = inter_w * inter_h
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


@dataclass(frozen=True)
class FrameRegions:
    """
    The regions kept for one pixel frame.

    Attributes:
        hand (BoundingBox): The hand box.
        objects (tuple): N slots, ordered by ascending hand distance; None pads.
        mask (tuple): N validity flags.
    """

    hand: BoundingBox
    objects: Tuple[Optional[BoundingBox], ...]
    mask: Tuple[bool, ...]


@dataclass
class RegionTokens:
    """
    Hand tokens and object tokens of one clip.

    Attributes:
        hand (Tensor): T x d hand tokens, one per temporal position.
        objects (Tensor): T x N x d object tokens; null slots are all-zero.
        object_mask (np.ndarray): T x N validity flags.
        object_tracks (np.ndarray): T x N track identities, -1 for null slots.
    """

    hand: Tensor
    objects: Tensor
    object_mask: np.ndarray
    object_tracks: np.ndarray

    @property
    def temporal(self) -> int:
        return self.hand.shape[0]

    @property
    def slots(self) -> int:
        return self.objects.shape[1]


@dataclass
class RoiHeadParams:
    """
    Per-cell MLP (Linear d->d, GELU) applied before max-pooling.

    Attributes:
        weight (Tensor): d x d.
        bias (Tensor): d.
        grid (int): RoIAlign output resolution g (g x g bins).
    """

    weight: Tensor
    bias: Tensor
    grid: int = 2

    def __post_init__(self):
        if self.grid < 1:
            raise ShapeError("RoIAlign grid must be at least 1")

    @staticmethod
    def specs(prefix: str, d: int) -> Dict[str, ParamSpec]:
        return {f"{prefix}.w": linear_spec(d, d), f"{prefix}.b": ParamSpec((d,), "zeros")}

    @classmethod
    def from_params(cls, params: Mapping[str, Tensor], prefix: str, grid: int) -> "RoiHeadParams":
        return cls(params[f"{prefix}.w"], params[f"{prefix}.b"], grid)


class RegionExtractor:
    """
    Tracking, region selection and RoI pooling.
    """

    @staticmethod
    def associate_tracks(
        detections: Sequence[BoundingBox], iou_threshold: float = 0.1
    ) -> List[BoundingBox]:
        """
        Link detections of consecutive frames into tracks.

        Each frame is matched against the previous frame only: candidate pairs
        of the same kind with IoU above the threshold are taken greedily by
        descending IoU; unmatched detections open new tracks.

        Args:
            detections (list): Boxes of any frames (grouped by their frame index).
            iou_threshold (float): Minimum IoU (exclusive) for a match.

        Returns:
            list: The same boxes, sorted by frame, with track_id assigned.
        """
        by_frame: Dict[int, List[BoundingBox]] = {}
        for box in detections:
            by_frame.setdefault(box.frame, []).append(box)
        if not by_frame:
            return []

        tracked: List[BoundingBox] = []
        previous: List[BoundingBox] = []
        next_id = 0
        for frame in range(min(by_frame), max(by_frame) + 1):
            current = by_frame.get(frame, [])
            pairs = []
            for i, det in enumerate(current):
                for j, prev in enumerate(previous):
                    if det.kind != prev.kind:
                        continue
                    score = iou(det, prev)
                    if score > iou_threshold:
                        pairs.append((-score, i, j))
            pairs.sort()
            assigned: Dict[int, int] = {}
            used = set()
            for _, i, j in pairs:
                if i in assigned or j in used:
                    continue
                assigned[i] = previous[j].track_id
                used.add(j)
            linked = []
            for i, det in enumerate(current):
                track = assigned.get(i)
                if track is None:
                    track = next_id
                    next_id += 1
                linked.append(replace(det, track_id=track))
            tracked.extend(linked)
            previous = linked
        logger.debug("associated %d detections into %d tracks", len(tracked), next_id)
        return tracked

    @staticmethod
    def select_regions(
        tracks: Sequence[BoundingBox],
        hand_track: Optional[int],
        N: int,
        frame_count: int,
        frame_size: Tuple[float, float],
    ) -> List[FrameRegions]:
        """
        Keep one hand box and the N objects closest to it in every frame.

        A frame without a hand reuses the most recent hand box, or the full
        frame if none was seen yet. Missing objects pad with null slots.

        Args:
            tracks (list): Tracked boxes.
            hand_track (int, optional): Track id of the hand; any hand when None.
            N (int): Object slots per frame.
            frame_count (int): Number of pixel frames.
            frame_size (tuple): (width, height) in pixels.

        Returns:
            list: One FrameRegions per frame.
        """
        width, height = frame_size
        by_frame: Dict[int, List[BoundingBox]] = {}
        for box in tracks:
            by_frame.setdefault(box.frame, []).append(box)

        regions: List[FrameRegions] = []
        last_hand: Optional[BoundingBox] = None
        for frame in range(frame_count):
            boxes = by_frame.get(frame, [])
            hands = [
                b for b in boxes
                if b.kind == RegionKind.HAND and (hand_track is None or b.track_id == hand_track)
            ]
            if hands:
                hand = min(hands, key=lambda b: (-b.score, b.x1, b.y1, b.x2, b.y2))
            elif last_hand is not None:
                hand = replace(last_hand, frame=frame)
            else:
                hand = BoundingBox(frame, 0.0, 0.0, float(width), float(height), RegionKind.HAND)
            last_hand = hand

            objects = sorted(
                (b for b in boxes if b.kind == RegionKind.OBJECT),
                key=lambda b: (
                    hand.distance_to(b), b.x1, b.y1, b.x2, b.y2,
                    -1 if b.track_id is None else b.track_id,
                ),
            )[:N]
            padding = N - len(objects)
            regions.append(
                FrameRegions(
                    hand,
                    tuple(objects) + (None,) * padding,
                    (True,) * len(objects) + (False,) * padding,
                )
            )
        return regions

    @staticmethod
    def sampling_matrix(
        box: BoundingBox,
        grid_shape: Tuple[int, int],
        patch: Tuple[int, int],
        g: int,
    ) -> np.ndarray:
        """
        Bilinear weights of the g x g bin centers of a box over the token grid.

        Token (r, c) sits at the center of its cell, i.e. at (c + 0.5, r + 0.5)
        in token units. Pixel boxes are divided by the patch size.

        Args:
            box (BoundingBox): Pixel box.
            grid_shape (tuple): (S_h, S_w).
            patch (tuple): (h_p, w_p) pixel size of a token cell.
            g (int): Bins per side.

        Returns:
            np.ndarray: (g*g) x (S_h*S_w) rows of bilinear weights, each row summing to 1.
        """
        S_h, S_w = grid_shape
        h_p, w_p = patch
        x1 = min(max(box.x1 / w_p, 0.0), S_w)
        x2 = min(max(box.x2 / w_p, 0.0), S_w)
        y1 = min(max(box.y1 / h_p, 0.0), S_h)
        y2 = min(max(box.y2 / h_p, 0.0), S_h)
        if x2 - x1 < MIN_EXTENT:
            mid = (x1 + x2) / 2.0
            x1, x2 = mid - MIN_EXTENT / 2.0, mid + MIN_EXTENT / 2.0
        if y2 - y1 < MIN_EXTENT:
            mid = (y1 + y2) / 2.0
            y1, y2 = mid - MIN_EXTENT / 2.0, mid + MIN_EXTENT / 2.0

        weights = np.zeros((g * g, S_h * S_w))
        bin_w, bin_h = (x2 - x1) / g, (y2 - y1) / g
        for i in range(g):
            ly = min(max(y1 + (i + 0.5) * bin_h - 0.5, 0.0), S_h - 1.0)
            r0 = int(math.floor(ly))
            r1 = min(r0 + 1, S_h - 1)
            fy = ly - r0
            for j in range(g):
                lx = min(max(x1 + (j + 0.5) * bin_w - 0.5, 0.0), S_w - 1.0)
                c0 = int(math.floor(lx))
                c1 = min(c0 + 1, S_w - 1)
                fx = lx - c0
                row = i * g + j
                weights[row, r0 * S_w + c0] += (1 - fy) * (1 - fx)
                weights[row, r0 * S_w + c1] += (1 - fy) * fx
                weights[row, r1 * S_w + c0] += fy * (1 - fx)
                weights[row, r1 * S_w + c1] += fy * fx
        return weights

    @staticmethod
    def roi_align(
        frame_tokens: Tensor,
        box: BoundingBox,
        g: int,
        patch: Tuple[int, int],
    ) -> Tensor:
        """
        Sample one frame's tokens at the g x g bin centers of a box.

        Args:
            frame_tokens (Tensor): S_h x S_w x d tokens of one temporal position.
            box (BoundingBox): Pixel box.
            g (int): Bins per side.
            patch (tuple): (h_p, w_p) pixel extent of a token cell.

        Returns:
            Tensor: g x g x d crop.
        """
        if frame_tokens.ndim != 3:
            raise ShapeError(f"frame tokens must be S_h x S_w x d, got {frame_tokens.shape}")
        S_h, S_w, d = frame_tokens.shape
        weights = RegionExtractor.sampling_matrix(box, (S_h, S_w), patch, g)
        flat = ops.reshape(frame_tokens, (S_h * S_w, d))
        crop = ops.matmul(Tensor(weights.astype(frame_tokens.dtype)), flat)
        return ops.reshape(crop, (g, g, d))

    @staticmethod
    def max_pool_cells(cells: Tensor) -> Tensor:
        """Elementwise max over the cell axis: (..., cells, d) -> (..., d)."""
        return ops.amax(cells, axis=-2)

    @staticmethod
    def region_token(crop: Tensor, head: RoiHeadParams) -> Tensor:
        """
        MLP on each of the g*g cells, then elementwise max over cells.

        Args:
            crop (Tensor): (..., g, g, d) or (..., g*g, d).
            head (RoiHeadParams): Cell MLP.

        Returns:
            Tensor: (..., d) region token.
        """
        d = crop.shape[-1]
        if head.weight.shape != (d, d):
            raise ShapeError(f"RoI head expects width {head.weight.shape[0]}, crop has {d}")
        if crop.ndim >= 3 and crop.shape[-2] == crop.shape[-3] == head.grid:
            crop = ops.reshape(crop, crop.shape[:-3] + (head.grid * head.grid, d))
        cells = ops.gelu(ops.linear(crop, head.weight, head.bias))
        return RegionExtractor.max_pool_cells(cells)

    @staticmethod
    def average_boxes(boxes: Sequence[BoundingBox], frame: int) -> BoundingBox:
        """Coordinate-wise mean of boxes, stamped with the given frame index."""
        n = float(len(boxes))
        first = boxes[0]
        return replace(
            first,
            frame=frame,
            x1=sum(b.x1 for b in boxes) / n,
            y1=sum(b.y1 for b in boxes) / n,
            x2=sum(b.x2 for b in boxes) / n,
            y2=sum(b.y2 for b in boxes) / n,
            score=sum(b.score for b in boxes) / n,
        )

    @staticmethod
    def block_objects(
        regions: Sequence[FrameRegions], N: int, block: int
    ) -> Tuple[List[Optional[BoundingBox]], List[int]]:
        """
        Merge the object slots of the pixel frames of one temporal block.

        Boxes of the same track are averaged; tracks are ordered by their mean
        distance to the hand. Boxes without a track id are grouped by slot.

        Returns:
            tuple: (N boxes or None, N track identities or -1).
        """
        groups: Dict[int, List[Tuple[BoundingBox, float]]] = {}
        for frame_regions in regions:
            for slot, box in enumerate(frame_regions.objects):
                if box is None:
                    continue
                key = box.track_id if box.track_id is not None else -(slot + 2)
                groups.setdefault(key, []).append((box, frame_regions.hand.distance_to(box)))
        ranked = sorted(
            groups.items(),
            key=lambda item: (sum(dist for _, dist in item[1]) / len(item[1]), item[0]),
        )[:N]
        boxes: List[Optional[BoundingBox]] = []
        tracks: List[int] = []
        for key, members in ranked:
            boxes.append(RegionExtractor.average_boxes([b for b, _ in members], block))
            tracks.append(key if key >= 0 else -key + 10_000)
        boxes.extend([None] * (N - len(boxes)))
        tracks.extend([-1] * (N - len(tracks)))
        return boxes, tracks

    @staticmethod
    def pool_boxes(
        grid: TokenGrid,
        boxes: Sequence[Optional[BoundingBox]],
        head: RoiHeadParams,
        cfg: TokenizerConfig,
    ) -> Tensor:
        """
        RoI-pool one box per temporal position (null boxes give zero tokens).

        Args:
            grid (TokenGrid): T x S x d tokens.
            boxes (list): T boxes (or None) in pixel units.
            head (RoiHeadParams): Cell MLP.
            cfg (TokenizerConfig): Geometry (patch size).

        Returns:
            Tensor: T x d region tokens.
        """
        tokens = RegionExtractor.pool_box_table(grid, [[b] for b in boxes], head, cfg)
        return ops.reshape(tokens, (grid.temporal, grid.width))

    @staticmethod
    def pool_box_table(
        grid: TokenGrid,
        table: Sequence[Sequence[Optional[BoundingBox]]],
        head: RoiHeadParams,
        cfg: TokenizerConfig,
    ) -> Tensor:
        """RoI-pool a T x K table of boxes into T x K x d tokens; None slots are zero."""
        T, S_h, S_w = grid.grid
        K = len(table[0])
        g = head.grid
        patch = (cfg.tubelet[1], cfg.tubelet[2])
        weights = np.zeros((T, K, g * g, S_h * S_w))
        valid = np.zeros((T, K, 1), dtype=bool)
        for t, row in enumerate(table):
            for k, box in enumerate(row):
                if box is not None:
                    weights[t, k] = RegionExtractor.sampling_matrix(box, (S_h, S_w), patch, g)
                    valid[t, k, 0] = True
        frames = ops.reshape(grid.tokens, (T, 1, S_h * S_w, grid.width))
        crops = ops.matmul(Tensor(weights.astype(grid.tokens.dtype)), frames)
        pooled = RegionExtractor.region_token(crops, head)
        return ops.mul(pooled, Tensor(valid.astype(grid.tokens.dtype)))

    @staticmethod
    def build_region_tokens(
        grid: TokenGrid,
        regions: Sequence[FrameRegions],
        head: RoiHeadParams,
        cfg: TokenizerConfig,
    ) -> RegionTokens:
        """
        Assemble hand tokens (T x d) and object tokens (T x N x d).

        Pixel frame f belongs to temporal position floor(f / t_p); the boxes of
        one block are averaged per track before pooling.

        Raises:
            ShapeError: If the number of frames does not match the config.
        """
        t_p = cfg.tubelet[0]
        if len(regions) != cfg.frames:
            raise ShapeError(f"expected regions for {cfg.frames} frames, got {len(regions)}")
        N = len(regions[0].objects)
        hand_boxes: List[BoundingBox] = []
        object_table: List[List[Optional[BoundingBox]]] = []
        track_table: List[List[int]] = []
        for t in range(grid.temporal):
            block = regions[t * t_p:(t + 1) * t_p]
            hand_boxes.append(RegionExtractor.average_boxes([r.hand for r in block], t))
            boxes, tracks = RegionExtractor.block_objects(block, N, t)
            object_table.append(boxes)
            track_table.append(tracks)

        hand = RegionExtractor.pool_boxes(grid, hand_boxes, head, cfg)
        mask = np.array([[b is not None for b in row] for row in object_table], dtype=bool)
        if N > 0:
            objects = RegionExtractor.pool_box_table(grid, object_table, head, cfg)
        else:
            objects = Tensor(np.zeros((grid.temporal, 0, grid.width), dtype=grid.tokens.dtype))
        return RegionTokens(hand, objects, mask.reshape(grid.temporal, N), np.array(track_table, dtype=np.int64).reshape(grid.temporal, N))


class BoxFile:
    """
    JSON-lines box files: one detection object per line.
    """

    @staticmethod
    def write(path: Union[str, Path], boxes: Iterable[BoundingBox]) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for box in boxes:
                fh.write(json.dumps(box.to_dict(), sort_keys=True) + "\n")

    @staticmethod
    def read(path: Union[str, Path]) -> List[BoundingBox]:
        boxes = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    boxes.append(BoundingBox.from_dict(json.loads(line)))
        return boxes


associate_tracks = RegionExtractor.associate_tracks
select_regions = RegionExtractor.select_regions
roi_align = RegionExtractor.roi_align
region_token = RegionExtractor.region_token
build_region_tokens = RegionExtractor.build_region_tokens
