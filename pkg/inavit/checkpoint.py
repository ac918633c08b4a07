#!/usr/bin/env python3
"""
Checkpoint directories.

A checkpoint is a directory holding

    manifest.json  format version, model config, config hash, step and, per
                   parameter, its name, shape, byte offset and element count
    params.bin     every parameter as contiguous little-endian float32, in
                   sorted name order
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

import numpy as np

from .errors import (
    CheckpointError,
    ConfigMismatchError,
    ShapeMismatchError,
    TruncatedPayloadError,
    UnknownParameterError,
    UnsupportedVersionError,
)
from .model import InAViTConfig, InAViTParams

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
PAYLOAD = "params.bin"
_WIRE = np.dtype("<f4")


@dataclass
class Checkpoint:
    """
    Parameters plus the config they belong to.

    Attributes:
        params (InAViTParams): Parameter tensors.
        config (InAViTConfig): Model config.
        step (int): Training steps taken.
        extra (dict): Free-form metadata (e.g. dataset hash).
    """

    params: InAViTParams
    config: InAViTConfig
    step: int = 0
    extra: Dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return self.config.config_hash()


class CheckpointStore:
    """
    Reads and writes checkpoint directories.
    """

    @staticmethod
    def manifest(checkpoint: Checkpoint) -> dict:
        entries = []
        offset = 0
        for name, tensor in checkpoint.params.items():
            count = int(tensor.data.size)
            entries.append(
                {"name": name, "shape": list(tensor.shape), "offset": offset, "count": count}
            )
            offset += count * _WIRE.itemsize
        return {
            "format_version": FORMAT_VERSION,
            "config": checkpoint.config.to_dict(),
            "config_hash": checkpoint.config_hash,
            "step": int(checkpoint.step),
            "extra": checkpoint.extra,
            "parameters": entries,
            "payload_bytes": offset,
        }

    @staticmethod
    def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> Path:
        """
        Write a checkpoint directory (created if missing).

        Returns:
            Path: The directory.
        """
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        manifest = CheckpointStore.manifest(checkpoint)
        with open(path / MANIFEST, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=2)
            fh.write("\n")
        with open(path / PAYLOAD, "wb") as fh:
            for tensor in checkpoint.params.values():
                fh.write(np.ascontiguousarray(tensor.data, dtype=_WIRE).tobytes())
        logger.info("saved checkpoint with %d parameters to %s", len(checkpoint.params), path)
        return path

    @staticmethod
    def _validate(manifest: Mapping, config: InAViTConfig, payload_size: int) -> None:
        expected = InAViTParams.expected_shapes(config)
        names = set()
        for entry in manifest["parameters"]:
            name = entry["name"]
            if name not in expected:
                raise UnknownParameterError(name)
            if tuple(entry["shape"]) != tuple(expected[name]):
                raise ShapeMismatchError(name, expected[name], entry["shape"])
            names.add(name)
        missing = sorted(set(expected) - names)
        if missing:
            raise CheckpointError(f"checkpoint lacks parameters: {missing}")

        offset = 0
        for entry in manifest["parameters"]:
            count = int(np.prod(entry["shape"], dtype=np.int64))
            if entry["offset"] != offset or entry["count"] != count:
                raise CheckpointError(
                    f"offset/count of parameter '{entry['name']}' disagree with its shape"
                )
            offset += count * _WIRE.itemsize
        if payload_size < offset:
            raise TruncatedPayloadError(offset, payload_size)
        if payload_size > offset:
            raise CheckpointError(f"payload has {payload_size - offset} trailing bytes")

    @staticmethod
    def load_checkpoint(
        path: Union[str, Path], config: Optional[InAViTConfig] = None
    ) -> Checkpoint:
        """
        Load and validate a checkpoint directory.

        Args:
            path: Checkpoint directory.
            config (InAViTConfig, optional): Expected config; its hash must match.

        Raises:
            UnsupportedVersionError: Unknown format version.
            ConfigMismatchError: Hash differs from ``config``.
            UnknownParameterError: A name the config does not define.
            ShapeMismatchError: A stored shape differs from the config.
            TruncatedPayloadError: The payload is shorter than the manifest says.
        """
        path = Path(path)
        try:
            with open(path / MANIFEST, "r", encoding="utf-8") as fh:
                manifest = json.load(fh)
            payload = (path / PAYLOAD).read_bytes()
        except (OSError, json.JSONDecodeError) as e:
            raise CheckpointError(f"cannot read checkpoint at {path}: {e}") from e

        if manifest.get("format_version") != FORMAT_VERSION:
            raise UnsupportedVersionError(
                f"unsupported checkpoint format version {manifest.get('format_version')!r}"
            )
        stored = InAViTConfig.from_dict(manifest["config"])
        if config is not None and config.config_hash() != stored.config_hash():
            raise ConfigMismatchError(
                f"checkpoint config hash {stored.config_hash()[:12]} does not match "
                f"{config.config_hash()[:12]}"
            )
        CheckpointStore._validate(manifest, stored, len(payload))

        arrays = {}
        for entry in manifest["parameters"]:
            raw = np.frombuffer(payload, dtype=_WIRE, count=entry["count"], offset=entry["offset"])
            arrays[entry["name"]] = raw.astype(np.float32).reshape(entry["shape"])
        params = InAViTParams.from_arrays(arrays)
        return Checkpoint(params, stored, int(manifest.get("step", 0)), dict(manifest.get("extra", {})))

    @staticmethod
    def digest(path: Union[str, Path]) -> str:
        """SHA-256 over the manifest and payload bytes."""
        path = Path(path)
        sha = hashlib.sha256()
        for name in (MANIFEST, PAYLOAD):
            sha.update((path / name).read_bytes())
        return sha.hexdigest()


save_checkpoint = CheckpointStore.save_checkpoint
load_checkpoint = CheckpointStore.load_checkpoint
