#!/usr/bin/env python3
"""
Attention export.

Runs one forward pass with an AttentionTrace and writes the raw maps as JSON:

    {
      "config_hash": ..., "episode": seed, "label": ..., "top5": [...],
      "grid": [T, S_h, S_w],
      "trajectory": [{"layer", "frames", "shape", "weights"}, ...],
      "icv": [{"layer", "interaction_tokens", "shape", "weights"}, ...]
    }

Trajectory weights are indexed [query][t'][s]; ``frames[query]`` is the home
temporal position t of the query. ICV rows are indexed [video token][key],
keys being the valid interaction tokens followed by the video tokens.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from .checkpoint import Checkpoint
from .model import InAViTModel
from .synthdata import Episode
from .trajectory import AttentionTrace

logger = logging.getLogger(__name__)


def _entry(record: Dict) -> Dict:
    weights = np.asarray(record["weights"], dtype=np.float64)
    data = {k: v for k, v in record.items() if k not in ("kind", "weights")}
    data["shape"] = list(weights.shape)
    data["weights"] = weights.tolist()
    return data


class AttentionExporter:
    """
    Collects and serializes the attention maps of one clip.
    """

    @staticmethod
    def export_attention(
        checkpoint: Checkpoint,
        episode: Episode,
        path: Optional[Union[str, Path]] = None,
    ) -> Dict:
        """
        Attention maps of one episode as a JSON-ready dict.

        Args:
            checkpoint (Checkpoint): Trained or initial parameters.
            episode (Episode): The clip to explain.
            path (optional): When given, the dict is also written there.

        Returns:
            dict: See the module docstring for the layout.
        """
        cfg = checkpoint.config
        trace = AttentionTrace()
        logits = InAViTModel.forward(episode.frames, episode.boxes, checkpoint.params, cfg, trace)
        tok = cfg.tokenizer
        export = {
            "config_hash": checkpoint.config_hash,
            "episode": int(episode.seed),
            "label": int(episode.label),
            "top5": InAViTModel.predict_topk(logits, min(5, cfg.classes)),
            "grid": [tok.temporal_positions, tok.grid_height, tok.grid_width],
            "trajectory": [_entry(e) for e in trace.of_kind("trajectory")],
            "icv": [_entry(e) for e in trace.of_kind("icv")],
        }
        if path is not None:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(export, fh)
            logger.info(
                "wrote %d trajectory and %d icv maps to %s",
                len(export["trajectory"]), len(export["icv"]), path,
            )
        return export

    @staticmethod
    def row_sums(export: Dict) -> List[np.ndarray]:
        """Sum over the last axis of every exported map; all ones for a valid export."""
        return [
            np.asarray(entry["weights"]).sum(axis=-1)
            for kind in ("trajectory", "icv")
            for entry in export[kind]
        ]


export_attention = AttentionExporter.export_attention
