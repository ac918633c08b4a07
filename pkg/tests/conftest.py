import numpy as np
import pytest

from inavit.config import RunConfig
from inavit.dataset_store import DatasetStore
from inavit.model import InAViTConfig
from inavit.optimizer import OptimizerConfig
from inavit.synthdata import SynthConfig, generate_dataset
from inavit.tensor import wide_precision
from inavit.tokenizer import TokenizerConfig


def _small_model(**overrides) -> InAViTConfig:
    cfg = InAViTConfig(
        tokenizer=TokenizerConfig(frames=4, height=16, width=16, channels=3, tubelet=(2, 8, 8), embed_dim=8),
        objects=2,
        heads=2,
        depth=1,
        classes=4,
    )
    return InAViTConfig.from_dict({**cfg.to_dict(), **overrides})


def _small_data() -> SynthConfig:
    return SynthConfig(height=16, width=16, frames=4, gap=3, object_types=4, distractors=2, glyph=4, speed=0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def wide():
    with wide_precision():
        yield


@pytest.fixture
def small_run(tmp_path) -> RunConfig:
    return RunConfig(
        model=_small_model(),
        data=_small_data(),
        optimizer=OptimizerConfig(lr=1e-3),
        steps=2,
        batch_size=2,
        dataset=str(tmp_path / "data"),
        dataset_size=8,
        seed=0,
        output=str(tmp_path / "run"),
        eval_every=0,
        eval_samples=4,
    )


@pytest.fixture
def small_store(small_run) -> DatasetStore:
    episodes, manifest = generate_dataset(small_run.data, small_run.dataset_size, 0)
    store = DatasetStore(small_run.dataset)
    store.save(episodes, manifest)
    return store


@pytest.fixture
def model_cfg():
    """Factory for a small model config: T=2, S=4, d=8, N=2, 4 classes."""
    return _small_model


@pytest.fixture
def synth_cfg() -> SynthConfig:
    return _small_data()
