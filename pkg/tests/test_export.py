import json

import numpy as np

from inavit.checkpoint import Checkpoint
from inavit.export import AttentionExporter, export_attention
from inavit.model import InAViTParams


def test_export_layout_and_normalization(small_run, small_store, tmp_path):
    cfg = small_run.model
    checkpoint = Checkpoint(InAViTParams.initialize_for(cfg, seed=0), cfg)
    episode = next(small_store.episodes())
    path = tmp_path / "attn" / "episode.json"
    export = export_attention(checkpoint, episode, path)

    assert export["grid"] == [2, 2, 2]
    assert export["episode"] == episode.seed
    assert export["label"] == episode.label
    assert export["config_hash"] == cfg.config_hash()
    assert len(export["top5"]) == min(5, cfg.classes)
    assert [e["layer"] for e in export["trajectory"]] == ["tca", "backbone.0"]
    backbone = export["trajectory"][1]
    assert backbone["shape"] == [8, 2, 4]
    assert backbone["frames"] == [0, 0, 0, 0, 1, 1, 1, 1]
    (icv,) = export["icv"]
    assert icv["shape"] == [8, icv["interaction_tokens"] + 8]
    for sums in AttentionExporter.row_sums(export):
        np.testing.assert_allclose(sums, 1.0, rtol=1e-5)

    with open(path, encoding="utf-8") as fh:
        assert json.load(fh) == export


def test_export_of_the_baseline_has_no_interaction_maps(small_run, small_store, model_cfg):
    cfg = model_cfg(use_interactions=False)
    checkpoint = Checkpoint(InAViTParams.initialize_for(cfg, seed=0), cfg)
    export = export_attention(checkpoint, next(small_store.episodes()))
    assert export["icv"] == []
    assert [e["layer"] for e in export["trajectory"]] == ["backbone.0"]
