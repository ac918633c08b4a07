from dataclasses import replace

import numpy as np
import pytest

from inavit.checkpoint import Checkpoint, load_checkpoint
from inavit.errors import ConfigMismatchError, TrainingError
from inavit.model import InAViTParams
from inavit.optimizer import OptimizerConfig
from inavit.trainer import JsonlLog, Trainer


def test_batch_loss_is_a_recorded_positive_scalar(small_run, small_store):
    episodes = list(small_store.episodes("train"))[:2]
    params = InAViTParams.initialize_for(small_run.model, seed=0)
    loss, record = Trainer.batch_loss(params, episodes, small_run.model)
    assert loss.data.size == 1
    assert loss.item() > 0.0
    assert len(record) > 0


def test_fit_is_deterministic(small_run, small_store):
    episodes = list(small_store.episodes("train"))
    runs = []
    for _ in range(2):
        params = InAViTParams.initialize_for(small_run.model, seed=4)
        final, losses = Trainer.fit(params, episodes, small_run.model, small_run.optimizer, 2, 2, seed=4)
        runs.append((final, losses))
    assert runs[0][1] == runs[1][1]
    for name in runs[0][0]:
        np.testing.assert_array_equal(runs[0][0][name].data, runs[1][0][name].data)


def test_fit_reduces_the_loss_on_one_clip(small_run, small_store):
    episode = next(small_store.episodes("train"))
    params = InAViTParams.initialize_for(small_run.model, seed=0)
    _, losses = Trainer.fit(params, [episode], small_run.model, OptimizerConfig(lr=1e-2), 12, 1, seed=0)
    assert losses[-1] < losses[0]


def test_fit_reports_non_finite_activations_as_training_errors(small_run, small_store):
    episodes = list(small_store.episodes("train"))
    params = InAViTParams.initialize_for(small_run.model, seed=0)
    huge = params.replace({"patch.w": np.full(params["patch.w"].shape, 1e38, dtype=np.float32)})
    with pytest.raises(TrainingError, match="step 1"):
        Trainer.fit(huge, [replace(e, frames=e.frames + 1.0) for e in episodes], small_run.model, small_run.optimizer, 1, 1, 0)


def test_fit_needs_episodes(small_run):
    params = InAViTParams.initialize_for(small_run.model, seed=0)
    with pytest.raises(TrainingError):
        Trainer.fit(params, [], small_run.model, small_run.optimizer, 1, 1, 0)


def test_train_writes_checkpoint_and_log(small_run, small_store, tmp_path):
    checkpoint = Trainer.train(small_run, small_store)
    loaded = load_checkpoint(tmp_path / "run" / "checkpoint")
    assert loaded.step == small_run.steps
    assert loaded.extra["dataset_hash"] == small_store.dataset_hash()
    for name, tensor in checkpoint.params.items():
        np.testing.assert_array_equal(loaded.params[name].data, tensor.data)
    events = [r["event"] for r in JsonlLog.read(tmp_path / "run" / "train.jsonl")]
    assert events == ["start"] + ["step"] * small_run.steps + ["end"]


def test_periodic_evaluation_is_logged(small_run, small_store, tmp_path):
    run = replace(small_run, eval_every=1, eval_samples=2)
    Trainer.train(run, small_store, save=False)
    records = JsonlLog.read(tmp_path / "run" / "train.jsonl")
    evals = [r for r in records if r["event"] == "eval"]
    assert [r["step"] for r in evals] == [1, 2]
    assert all(r["samples"] <= 2 for r in evals)


def test_train_rejects_an_incompatible_dataset(small_run, small_store, model_cfg):
    run = replace(small_run, model=model_cfg(classes=5), data=replace(small_run.data, object_types=5))
    with pytest.raises(ConfigMismatchError):
        Trainer.train(run, small_store)


def test_evaluate_reports_on_every_episode(small_run, small_store):
    episodes = list(small_store.episodes("eval"))
    params = InAViTParams.initialize_for(small_run.model, seed=0)
    before = params.arrays()
    report = Trainer.evaluate(Checkpoint(params, small_run.model), episodes)
    assert report.samples == len(episodes)
    assert 0.0 <= report.mean_top5_recall <= 1.0
    assert report.loss > 0.0
    for name, array in before.items():
        np.testing.assert_array_equal(params[name].data, array)


def test_evaluate_checks_the_expected_hash(small_run, small_store):
    checkpoint = Checkpoint(InAViTParams.initialize_for(small_run.model, seed=0), small_run.model)
    with pytest.raises(ConfigMismatchError):
        Trainer.evaluate(checkpoint, list(small_store.episodes("eval")), expected_hash="0" * 64)
