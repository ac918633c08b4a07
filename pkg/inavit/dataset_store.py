#!/usr/bin/env python3
"""
Dataset Store module: synthetic episodes on disk.

Layout of a dataset directory:

    manifest.json               config, episode seeds/labels/splits, class counts
    episodes/<seed>.npy         T_in x H x W x 3 float32 frames
    episodes/<seed>.boxes.jsonl boxes, one JSON object per line
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, ConfigMismatchError, InavitError
from .roi import BoxFile
from .synthdata import Episode, MotionState, SynthConfig

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
EPISODES = "episodes"


class DatasetStore:
    """
    A class for reading and writing episode datasets.
    """

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self._manifest: Optional[dict] = None

    def save(self, episodes: Sequence[Episode], manifest: dict) -> Path:
        """
        Writes the manifest and every episode under the dataset root.

        Args:
            episodes (list): Episodes to store.
            manifest (dict): Manifest from ``generate_dataset``.

        Returns:
            Path: The dataset root.
        """
        folder = self.root / EPISODES
        folder.mkdir(parents=True, exist_ok=True)
        for episode in episodes:
            np.save(folder / f"{episode.seed}.npy", episode.frames.astype(np.float32))
            BoxFile.write(folder / f"{episode.seed}.boxes.jsonl", episode.boxes)
        with open(self.root / MANIFEST, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=2)
            fh.write("\n")
        self._manifest = manifest
        logger.info("wrote %d episodes to %s", len(episodes), self.root)
        return self.root

    def load_manifest(self) -> dict:
        """
        Loads the dataset manifest.

        Returns:
            dict: The manifest.

        Raises:
            ConfigError: If the directory holds no readable manifest.
        """
        if self._manifest is None:
            try:
                with open(self.root / MANIFEST, "r", encoding="utf-8") as fh:
                    self._manifest = json.load(fh)
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"no dataset manifest at {self.root}: {e}") from e
        return self._manifest

    @property
    def config(self) -> SynthConfig:
        return SynthConfig.from_dict(self.load_manifest()["config"])

    def dataset_hash(self) -> str:
        """SHA-256 of the canonical manifest JSON."""
        canonical = json.dumps(self.load_manifest(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def seeds(self, split: Optional[str] = None) -> List[int]:
        entries = self.load_manifest()["episodes"]
        return [e["seed"] for e in entries if split is None or e["split"] == split]

    def load_episode(self, seed: int) -> Episode:
        """
        Loads one episode by seed.

        Raises:
            InavitError: If the seed is not part of the dataset or its files are missing.
        """
        entry = next((e for e in self.load_manifest()["episodes"] if e["seed"] == seed), None)
        if entry is None:
            raise InavitError(f"seed {seed} is not in the dataset at {self.root}")
        folder = self.root / EPISODES
        try:
            frames = np.load(folder / f"{seed}.npy")
            boxes = BoxFile.read(folder / f"{seed}.boxes.jsonl")
        except OSError as e:
            raise InavitError(f"episode {seed} is incomplete: {e}") from e
        return Episode(
            seed=seed,
            frames=frames,
            boxes=boxes,
            label=int(entry["label"]),
            gap=int(self.config.gap),
            state=MotionState.from_dict(entry["state"]),
        )

    def episodes(self, split: Optional[str] = None) -> Iterator[Episode]:
        for seed in self.seeds(split):
            yield self.load_episode(seed)

    def check_compatible(self, frames: int, height: int, width: int, classes: int) -> None:
        """
        Checks that a model geometry fits this dataset.

        Raises:
            ConfigMismatchError: On any disagreement.
        """
        cfg = self.config
        expected = {"frames": cfg.frames, "height": cfg.height, "width": cfg.width, "classes": cfg.object_types}
        actual = {"frames": frames, "height": height, "width": width, "classes": classes}
        diffs = [f"{k}: model {actual[k]} vs data {expected[k]}" for k in expected if expected[k] != actual[k]]
        if diffs:
            raise ConfigMismatchError("dataset does not match model config (" + "; ".join(diffs) + ")")
