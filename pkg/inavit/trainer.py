#!/usr/bin/env python3
"""
Training and evaluation loops.

Training is single-writer and deterministic: parameters are drawn from
``run.seed`` and batches from a generator seeded with the same value, so two
runs of one RunConfig produce identical loss sequences.
"""

import json
import logging
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .checkpoint import Checkpoint, CheckpointStore
from .config import RunConfig
from .dataset_store import DatasetStore
from .errors import ConfigMismatchError, NonFiniteError, TrainingError
from .gradients import reverse_gradients
from .metrics import MetricsReport
from .model import InAViTConfig, InAViTModel, InAViTParams
from .optimizer import AdamW, OptimizerConfig, OptimizerState
from .synthdata import Episode
from .tensor import ComputationRecord, Tensor, ops

logger = logging.getLogger(__name__)


class JsonlLog:
    """
    Append-only JSON-lines log. Each record has an ``event`` key.
    """

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path is not None else None
        self.records: List[Dict] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def write(self, event: str, **fields) -> None:
        record = {"event": event}
        record.update(fields)
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    @staticmethod
    def read(path: Union[str, Path]) -> List[Dict]:
        with open(path, "r", encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]


class Trainer:
    """
    Cross-entropy training with AdamW, plus evaluation.
    """

    @staticmethod
    def batch_loss(
        params: InAViTParams, episodes: Sequence[Episode], cfg: InAViTConfig
    ) -> Tuple[Tensor, ComputationRecord]:
        """Mean cross-entropy of a batch, recorded for differentiation."""
        record = ComputationRecord()
        with record.active():
            total = None
            for episode in episodes:
                logits = InAViTModel.forward(episode.frames, episode.boxes, params, cfg)
                loss = InAViTModel.cross_entropy(logits, episode.label)
                total = loss if total is None else ops.add(total, loss)
            mean = ops.scale(total, 1.0 / len(episodes))
        return mean, record

    @staticmethod
    def fit(
        params: InAViTParams,
        episodes: Sequence[Episode],
        cfg: InAViTConfig,
        optimizer: OptimizerConfig,
        steps: int,
        batch_size: int,
        seed: int,
        log: Optional[JsonlLog] = None,
        on_step: Optional[Callable[[int, InAViTParams], None]] = None,
    ) -> Tuple[InAViTParams, List[float]]:
        """
        Run ``steps`` AdamW updates on batches sampled from ``episodes``.

        Returns:
            tuple: (final parameters, per-step losses).

        Raises:
            TrainingError: On a non-finite loss, naming the step.
        """
        if not episodes:
            raise TrainingError("no training episodes")
        rng = np.random.default_rng([seed, 1])
        state = OptimizerState.zeros_like(params.arrays(), optimizer)
        losses: List[float] = []
        for step in range(1, steps + 1):
            picks = rng.choice(len(episodes), size=batch_size, replace=batch_size > len(episodes))
            batch = [episodes[i] for i in picks]
            try:
                loss, record = Trainer.batch_loss(params, batch, cfg)
            except NonFiniteError as e:
                raise TrainingError(f"non-finite activation at step {step}: {e}") from e
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"loss is NaN at step {step}")
            grads = reverse_gradients(record, loss, wrt=params)
            arrays, state = AdamW.step(params.arrays(), grads, state)
            params = params.replace(arrays)
            losses.append(value)
            if log is not None:
                log.write("step", step=step, loss=value, lr=optimizer.lr)
            if on_step is not None:
                on_step(step, params)
        return params, losses

    @staticmethod
    def evaluate(
        checkpoint: Checkpoint,
        episodes: Sequence[Episode],
        expected_hash: Optional[str] = None,
    ) -> MetricsReport:
        """
        Metrics of a checkpoint on a set of episodes. Parameters are not modified.

        Raises:
            ConfigMismatchError: If ``expected_hash`` differs from the checkpoint's.
        """
        if expected_hash is not None and expected_hash != checkpoint.config_hash:
            raise ConfigMismatchError(
                f"checkpoint config hash {checkpoint.config_hash[:12]} != expected {expected_hash[:12]}"
            )
        cfg = checkpoint.config
        k = min(5, cfg.classes)
        start = time.perf_counter()
        predictions, labels, losses = [], [], []
        for episode in episodes:
            logits = InAViTModel.forward(episode.frames, episode.boxes, checkpoint.params, cfg)
            predictions.append(InAViTModel.predict_topk(logits, k))
            labels.append(episode.label)
            losses.append(InAViTModel.cross_entropy(logits, episode.label).item())
        elapsed = time.perf_counter() - start
        return MetricsReport.build(
            predictions, labels, float(np.mean(losses)), elapsed, checkpoint.config_hash, cfg.classes
        )

    @staticmethod
    def train(
        run: RunConfig,
        store: Optional[DatasetStore] = None,
        save: bool = True,
        log_path: Optional[Union[str, Path]] = None,
    ) -> Checkpoint:
        """
        Train on the dataset's train split and write the checkpoint and JSONL log.

        Args:
            run (RunConfig): Run configuration.
            store (DatasetStore, optional): Defaults to ``run.dataset``.
            save (bool): Write the checkpoint to ``<output>/checkpoint``.
            log_path: JSONL log path; defaults to ``<output>/train.jsonl``.

        Returns:
            Checkpoint: Final parameters.
        """
        store = store or DatasetStore(run.dataset)
        tok = run.model.tokenizer
        store.check_compatible(tok.frames, tok.height, tok.width, run.model.classes)
        output = Path(run.output)
        log = JsonlLog(log_path if log_path is not None else output / "train.jsonl")
        train_set = list(store.episodes("train"))
        eval_set = list(store.episodes("eval"))
        if run.eval_samples:
            eval_set = eval_set[:run.eval_samples]
        log.write(
            "start",
            config_hash=run.model.config_hash(),
            dataset_hash=store.dataset_hash(),
            train_episodes=len(train_set),
            steps=run.steps,
        )
        logger.info("training %d steps on %d episodes", run.steps, len(train_set))

        def periodic_eval(step: int, params: InAViTParams) -> None:
            if run.eval_every and eval_set and step % run.eval_every == 0:
                report = Trainer.evaluate(Checkpoint(params, run.model, step), eval_set)
                log.write("eval", step=step, **report.summary())
                logger.info("step %d: top1 %.3f, mean top-5 recall %.3f", step, report.top1, report.mean_top5_recall)

        params = InAViTParams.initialize_for(run.model, run.seed)
        params, losses = Trainer.fit(
            params, train_set, run.model, run.optimizer, run.steps, run.batch_size, run.seed, log, periodic_eval
        )
        checkpoint = Checkpoint(params, run.model, run.steps, {"dataset_hash": store.dataset_hash()})
        if save:
            CheckpointStore.save_checkpoint(output / "checkpoint", checkpoint)
        log.write("end", steps=run.steps, final_loss=losses[-1] if losses else None)
        return checkpoint


batch_loss = Trainer.batch_loss
train = Trainer.train
evaluate = Trainer.evaluate
