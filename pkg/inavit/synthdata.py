#!/usr/bin/env python3
"""
Procedural hand-object anticipation episodes.

A white hand glyph moves in a straight line toward one target object while
distractor objects drift. The clip shows the approach only; the label is the
type of the object the hand touches ``gap`` frames after the last observed
frame. Object types are encoded by colour.

Basic Usage:
    from inavit.synthdata import SynthConfig, generate_episode

    episode = generate_episode(SynthConfig(), seed=0)
    episode.frames.shape     # (8, 32, 32, 3)
    episode.label
"""

import colorsys
import logging
from dataclasses import dataclass, replace
from typing import List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from .errors import ConfigError, DegenerateEpisodeError, InfeasibleConfigError
from .roi import BoundingBox, RegionKind

logger = logging.getLogger(__name__)

HAND_TRACK = 0
HAND_COLOUR = (1.0, 1.0, 1.0)
# Hand starts at least this many glyph sizes (Chebyshev) from its target.
MIN_START_DISTANCE = 2.0
PLACEMENT_ATTEMPTS = 100


@dataclass(frozen=True)
class SynthConfig:
    """
    Synthetic task parameters.

    Attributes:
        height, width (int): Frame size in pixels.
        frames (int): Observed frames T_in.
        gap (int): Anticipation gap, in source frames after the last observed one.
        object_types (int): Number of object types (= action classes).
        distractors (int): Objects besides the target.
        glyph (int): Side of every square glyph, in pixels.
        speed (float): Maximum distractor drift per source frame, in pixels.
        jitter (float): Std-dev of the box-corner noise, in pixels.
        noise (float): Std-dev of the Gaussian background.
        frame_stride (int): Source frames between consecutive observed frames.
        seed (int): Default seed of ``generate_dataset``.
    """

    height: int = 32
    width: int = 32
    frames: int = 8
    gap: int = 4
    object_types: int = 8
    distractors: int = 3
    glyph: int = 6
    speed: float = 0.5
    jitter: float = 0.5
    noise: float = 0.05
    frame_stride: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.object_types < 2:
            raise ConfigError(f"need at least 2 object types, got {self.object_types}")
        if self.frames < 1 or self.gap < 1 or self.frame_stride < 1:
            raise ConfigError("frames, gap and frame_stride must be positive")
        if self.distractors < 0 or self.speed < 0 or self.jitter < 0 or self.noise < 0:
            raise ConfigError("distractors, speed, jitter and noise must be nonnegative")
        if self.glyph < 1 or self.glyph * (MIN_START_DISTANCE + 1) > min(self.height, self.width):
            raise InfeasibleConfigError(
                f"glyph {self.glyph}px leaves no room for an approach in a "
                f"{self.width}x{self.height} frame"
            )

    @property
    def observed_end(self) -> int:
        """Source time of the last observed frame."""
        return (self.frames - 1) * self.frame_stride

    @property
    def contact_time(self) -> int:
        return self.observed_end + self.gap

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data: Mapping) -> "SynthConfig":
        return cls(**dict(data))


@dataclass
class MotionState:
    """
    Glyph positions (top-left corners) and constant velocities at one source time.

    Every glyph moves by its velocity each frame and is clipped to the frame.
    """

    time: int
    hand: np.ndarray
    hand_velocity: np.ndarray
    objects: np.ndarray
    object_velocities: np.ndarray
    object_types: np.ndarray
    glyph: int
    bounds: Tuple[float, float]

    def advance(self) -> "MotionState":
        limit = np.asarray(self.bounds, dtype=np.float64)
        return replace(
            self,
            time=self.time + 1,
            hand=np.clip(self.hand + self.hand_velocity, 0.0, limit),
            objects=np.clip(self.objects + self.object_velocities, 0.0, limit),
        )

    def contacts(self) -> List[int]:
        """Indices of objects whose glyph overlaps the hand glyph."""
        delta = np.abs(self.objects - self.hand[None, :])
        return [int(i) for i in np.flatnonzero((delta < self.glyph).all(axis=1))]

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "hand": self.hand.tolist(),
            "hand_velocity": self.hand_velocity.tolist(),
            "objects": self.objects.tolist(),
            "object_velocities": self.object_velocities.tolist(),
            "object_types": self.object_types.tolist(),
            "glyph": self.glyph,
            "bounds": list(self.bounds),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "MotionState":
        return cls(
            time=int(data["time"]),
            hand=np.asarray(data["hand"], dtype=np.float64),
            hand_velocity=np.asarray(data["hand_velocity"], dtype=np.float64),
            objects=np.asarray(data["objects"], dtype=np.float64).reshape(-1, 2),
            object_velocities=np.asarray(data["object_velocities"], dtype=np.float64).reshape(-1, 2),
            object_types=np.asarray(data["object_types"], dtype=np.int64),
            glyph=int(data["glyph"]),
            bounds=tuple(data["bounds"]),
        )


@dataclass
class Episode:
    """
    One synthetic clip.

    Attributes:
        seed (int): Generation seed.
        frames (np.ndarray): T_in x H x W x 3 float32 pixels.
        boxes (list): Hand and object boxes of every observed frame, with
            track ids (hand is track 0) and object type ids.
        label (int): Type of the object contacted after the gap.
        gap (int): Anticipation gap in source frames.
        state (MotionState): Motion state at the last observed frame.
    """

    seed: int
    frames: np.ndarray
    boxes: List[BoundingBox]
    label: int
    gap: int
    state: MotionState

    @property
    def split(self) -> str:
        return "train" if self.seed % 2 == 0 else "eval"


class SyntheticTask:
    """
    Generation, rendering and labelling of synthetic episodes.
    """

    @staticmethod
    def palette(count: int) -> np.ndarray:
        """Fixed, fully saturated colours with evenly spaced hues."""
        return np.array(
            [colorsys.hsv_to_rgb(i / count, 1.0, 0.9) for i in range(count)], dtype=np.float32
        )

    @staticmethod
    def label_of(state: MotionState, gap: int, horizon: Optional[int] = None) -> int:
        """
        Simulate forward and return the type of the first object the hand touches.

        The given state is checked first; simultaneous contacts resolve to the
        lowest object index.

        Args:
            state (MotionState): Motion state at the end of observation.
            gap (int): Anticipation gap; the horizon defaults to 4 * gap.
            horizon (int, optional): Frames to simulate.

        Raises:
            DegenerateEpisodeError: If no contact happens within the horizon.
        """
        horizon = 4 * gap if horizon is None else horizon
        current = state
        for _ in range(horizon + 1):
            touched = current.contacts()
            if touched:
                return int(current.object_types[touched[0]])
            current = current.advance()
        raise DegenerateEpisodeError(
            f"degenerate episode: no contact within {horizon} frames"
        )

    @staticmethod
    def _initial_state(cfg: SynthConfig, rng: np.random.Generator) -> MotionState:
        g = cfg.glyph
        bounds = (float(cfg.width - g), float(cfg.height - g))
        count = 1 + cfg.distractors
        types = rng.choice(cfg.object_types, size=count, replace=count > cfg.object_types)
        objects = np.column_stack(
            [rng.uniform(0, bounds[0], size=count), rng.uniform(0, bounds[1], size=count)]
        )
        velocities = rng.uniform(-cfg.speed, cfg.speed, size=(count, 2))
        # the target (row 0) stays put
        velocities[0] = 0.0
        target = objects[0]
        for _ in range(PLACEMENT_ATTEMPTS):
            start = np.array([rng.uniform(0, bounds[0]), rng.uniform(0, bounds[1])])
            distance = np.abs(target - start).max()
            if distance >= MIN_START_DISTANCE * g:
                break
        else:
            raise DegenerateEpisodeError("degenerate episode: could not place the hand")
        # first overlap (Chebyshev distance < g) half a frame before contact_time
        travel = (cfg.contact_time - 0.5) / (1.0 - g / distance)
        hand_velocity = (target - start) / travel
        return MotionState(0, start, hand_velocity, objects, velocities, types.astype(np.int64), g, bounds)

    @staticmethod
    def _boxes(state: MotionState, frame: int, cfg: SynthConfig, rng: np.random.Generator) -> List[BoundingBox]:
        g = cfg.glyph
        boxes = []
        corners = [(RegionKind.HAND, HAND_TRACK, None, state.hand)] + [
            (RegionKind.OBJECT, i + 1, int(state.object_types[i]), pos)
            for i, pos in enumerate(state.objects)
        ]
        for kind, track, type_id, pos in corners:
            x, y = np.round(pos)
            coords = np.array([x, y, x + g, y + g], dtype=np.float64)
            if cfg.jitter > 0:
                coords = coords + rng.normal(0.0, cfg.jitter, size=4)
            x1, x2 = sorted((coords[0], coords[2]))
            y1, y2 = sorted((coords[1], coords[3]))
            box = BoundingBox(frame, x1, y1, x2, y2, kind, 1.0, track, type_id)
            boxes.append(box.clamp(cfg.width, cfg.height))
        return boxes

    @staticmethod
    def _render(state: MotionState, cfg: SynthConfig, colours: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        image = rng.normal(0.0, cfg.noise, size=(cfg.height, cfg.width, 3)) if cfg.noise > 0 else np.zeros((cfg.height, cfg.width, 3))
        g = cfg.glyph
        for pos, type_id in zip(state.objects, state.object_types):
            x, y = (int(v) for v in np.round(pos))
            image[y:y + g, x:x + g] = colours[type_id]
        x, y = (int(v) for v in np.round(state.hand))
        image[y:y + g, x:x + g] = HAND_COLOUR
        return image.astype(np.float32)

    @staticmethod
    def generate_episode(cfg: SynthConfig, seed: int) -> Episode:
        """
        Generate one episode deterministically from (cfg, seed).

        Raises:
            DegenerateEpisodeError: If the hand touches an object while still
                observed, or touches nothing within the horizon.
        """
        rng = np.random.default_rng(seed)
        colours = SyntheticTask.palette(cfg.object_types)
        state = SyntheticTask._initial_state(cfg, rng)
        frames, boxes = [], []
        for time in range(cfg.observed_end + 1):
            if state.contacts():
                raise DegenerateEpisodeError(
                    f"degenerate episode: contact at observed time {time} (seed {seed})"
                )
            if time % cfg.frame_stride == 0:
                index = time // cfg.frame_stride
                frames.append(SyntheticTask._render(state, cfg, colours, rng))
                boxes.extend(SyntheticTask._boxes(state, index, cfg, rng))
            if time < cfg.observed_end:
                state = state.advance()
        label = SyntheticTask.label_of(state, cfg.gap)
        return Episode(seed, np.stack(frames), boxes, label, cfg.gap, state)

    @staticmethod
    def generate_dataset(cfg: SynthConfig, n: int, seed: Optional[int] = None) -> Tuple[List[Episode], dict]:
        """
        Generate n episodes from consecutive seeds, skipping degenerate ones.

        Args:
            cfg (SynthConfig): Task parameters.
            n (int): Episodes to produce.
            seed (int, optional): First seed; defaults to ``cfg.seed``.

        Returns:
            tuple: (episodes, manifest dict with config, seeds, labels, splits
            and per-split class counts).
        """
        if n < 1:
            raise ConfigError("n must be at least 1")
        seed = cfg.seed if seed is None else seed
        episodes: List[Episode] = []
        current = seed
        skipped = 0
        while len(episodes) < n:
            if skipped > 20 * n:
                raise DegenerateEpisodeError(f"too many degenerate seeds ({skipped}) from seed {seed}")
            try:
                episodes.append(SyntheticTask.generate_episode(cfg, current))
            except DegenerateEpisodeError as e:
                logger.debug("skipping seed %d: %s", current, e)
                skipped += 1
            current += 1
        logger.info("generated %d episodes (%d degenerate seeds skipped)", n, skipped)
        return episodes, SyntheticTask.manifest(cfg, episodes)

    @staticmethod
    def class_counts(episodes: List[Episode], classes: int) -> pd.DataFrame:
        """Episodes per (class, split) as a table indexed by class."""
        frame = pd.DataFrame({"label": [e.label for e in episodes], "split": [e.split for e in episodes]})
        counts = frame.groupby(["label", "split"]).size().unstack(fill_value=0)
        counts = counts.reindex(index=range(classes), columns=["train", "eval"], fill_value=0)
        counts.index.name = "label"
        return counts

    @staticmethod
    def manifest(cfg: SynthConfig, episodes: List[Episode]) -> dict:
        counts = SyntheticTask.class_counts(episodes, cfg.object_types)
        return {
            "config": cfg.to_dict(),
            "episodes": [
                {
                    "seed": e.seed,
                    "label": e.label,
                    "split": e.split,
                    "state": e.state.to_dict(),
                }
                for e in episodes
            ],
            "class_counts": {
                split: [int(v) for v in counts[split].tolist()] for split in ("train", "eval")
            },
        }


label_of = SyntheticTask.label_of
generate_episode = SyntheticTask.generate_episode
generate_dataset = SyntheticTask.generate_dataset
