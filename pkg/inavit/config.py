#!/usr/bin/env python3
"""
Run configuration.

One JSON file with the sections ``model``, ``data``, ``optimizer`` and ``run``.
Any value can be overridden with ``section.key=value`` strings (the
``--set`` option of the command line); values are parsed as JSON and fall back
to plain strings. Nested keys such as ``model.tokenizer.embed_dim`` work.
"""

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Union

from .errors import ConfigError
from .model import InAViTConfig
from .optimizer import OptimizerConfig
from .synthdata import SynthConfig

logger = logging.getLogger(__name__)

SECTIONS = ("model", "data", "optimizer", "run")


@dataclass(frozen=True)
class RunConfig:
    """
    Everything a training or evaluation run needs.

    Attributes:
        model (InAViTConfig): Architecture.
        data (SynthConfig): Synthetic task.
        optimizer (OptimizerConfig): AdamW hyperparameters.
        steps (int): Optimizer steps.
        batch_size (int): Clips per step.
        dataset (str): Dataset directory.
        dataset_size (int): Episodes generated by ``gen-data``.
        seed (int): Seed of parameter init and batch sampling.
        output (str): Output directory (checkpoint, logs).
        eval_every (int): Steps between periodic evaluations; 0 disables them.
        eval_samples (int): Eval clips used by periodic evaluations (0 = all).
    """

    model: InAViTConfig = field(default_factory=InAViTConfig)
    data: SynthConfig = field(default_factory=SynthConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    steps: int = 2000
    batch_size: int = 8
    dataset: str = "data/synth"
    dataset_size: int = 512
    seed: int = 0
    output: str = "runs/default"
    eval_every: int = 200
    eval_samples: int = 64

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be nonnegative and batch_size positive")
        if self.eval_every < 0 or self.eval_samples < 0:
            raise ConfigError("eval_every and eval_samples must be nonnegative")
        tok = self.model.tokenizer
        pairs = {
            "frames": (tok.frames, self.data.frames),
            "height": (tok.height, self.data.height),
            "width": (tok.width, self.data.width),
            "classes": (self.model.classes, self.data.object_types),
        }
        diffs = [f"{k} (model {m}, data {d})" for k, (m, d) in pairs.items() if m != d]
        if diffs:
            raise ConfigError("model and data configs disagree on " + ", ".join(diffs))
        if tok.channels != 3:
            raise ConfigError("synthetic clips have 3 channels")

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "data": self.data.to_dict(),
            "optimizer": self.optimizer.to_dict(),
            "run": {
                "steps": self.steps,
                "batch_size": self.batch_size,
                "dataset": self.dataset,
                "dataset_size": self.dataset_size,
                "seed": self.seed,
                "output": self.output,
                "eval_every": self.eval_every,
                "eval_samples": self.eval_samples,
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "RunConfig":
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        try:
            return cls(
                model=InAViTConfig.from_dict(data.get("model", {})),
                data=SynthConfig.from_dict(data.get("data", {})),
                optimizer=OptimizerConfig.from_dict(data.get("optimizer", {})),
                **dict(data.get("run", {})),
            )
        except TypeError as e:
            raise ConfigError(f"invalid config: {e}") from e


class ConfigLoader:
    """
    JSON config files and key=value overrides.
    """

    @staticmethod
    def parse_value(text: str) -> Any:
        try:
            return json.loads(text)
        except json.JSONDecodeError:
            return text

    @staticmethod
    def apply_overrides(data: Mapping, overrides: Sequence[str]) -> Dict:
        """
        Apply ``section.key[.sub]=value`` overrides to a raw config dict.

        Raises:
            ConfigError: On malformed overrides or unknown sections.
        """
        result = copy.deepcopy(dict(data))
        for item in overrides or ():
            if "=" not in item:
                raise ConfigError(f"override '{item}' is not of the form key=value")
            key, raw = item.split("=", 1)
            path = key.strip().split(".")
            if len(path) < 2 or path[0] not in SECTIONS:
                raise ConfigError(f"override key '{key}' must start with one of {SECTIONS}")
            node = result
            for part in path[:-1]:
                child = node.setdefault(part, {})
                if not isinstance(child, dict):
                    raise ConfigError(f"override key '{key}' descends into a scalar")
                node = child
            node[path[-1]] = ConfigLoader.parse_value(raw)
        return result

    @staticmethod
    def load_config(
        path: Optional[Union[str, Path]] = None,
        overrides: Sequence[str] = (),
        seed: Optional[int] = None,
    ) -> RunConfig:
        """
        Build a RunConfig from an optional JSON file, overrides and a seed.

        Args:
            path: JSON config file; defaults are used when omitted.
            overrides (list): ``section.key=value`` strings.
            seed (int, optional): Takes precedence over ``run.seed``.
        """
        data: Dict = {}
        if path is not None:
            try:
                with open(path, "r", encoding="utf-8") as fh:
                    data = json.load(fh)
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"cannot read config {path}: {e}") from e
        data = ConfigLoader.apply_overrides(data, overrides)
        if seed is not None:
            data.setdefault("run", {})["seed"] = int(seed)
        config = RunConfig.from_dict(data)
        logger.debug("loaded run config (model hash %s)", config.model.config_hash()[:12])
        return config


load_config = ConfigLoader.load_config
apply_overrides = ConfigLoader.apply_overrides
