#!/usr/bin/env python3
"""
Ablation tables.

Every row trains one model configuration on the shared dataset for each seed,
evaluates it on the eval split, and reports the median over seeds. The table
is written as CSV with a fixed column order (ABLATION_COLUMNS).

Basic Usage:
    from inavit.ablation import ablate

    table = ablate(run, seeds=(0, 1, 2), path="runs/ablation.csv")
"""

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import pandas as pd

from .checkpoint import Checkpoint
from .config import RunConfig
from .dataset_store import DatasetStore
from .errors import ConfigError
from .model import InAViTConfig, InAViTParams
from .synthdata import Episode
from .trainer import Trainer

logger = logging.getLogger(__name__)

ABLATION_COLUMNS = [
    "row",
    "variant",
    "context",
    "icv",
    "interaction_tokens",
    "objects_per_frame",
    "seeds",
    "top1",
    "mean_top5_recall",
    "mean_class_accuracy",
    "loss",
    "steps",
    "wall_clock",
    "config_hash",
    "dataset_hash",
]


@dataclass(frozen=True)
class AblationRow:
    """
    One model configuration of an ablation table.

    Attributes:
        name (str): Row label, e.g. 'SCA+CI+ICV'.
        overrides (dict): InAViTConfig fields changed from the run's model config.
    """

    name: str
    overrides: Dict = field(default_factory=dict)

    def model_config(self, base: InAViTConfig) -> InAViTConfig:
        try:
            return replace(base, **self.overrides)
        except TypeError as e:
            raise ConfigError(f"row {self.name}: {e}") from e


def _component_row(variant: str, context: bool, icv: bool) -> AblationRow:
    name = variant.upper() + ("+CI" if context else "") + ("+ICV" if icv else "")
    return AblationRow(name, {"variant": variant, "use_context": context, "use_icv": icv})


FULL_MODEL = _component_row("sca", True, True)
BASELINE = AblationRow("backbone-only", {"use_interactions": False})
HAND_ONLY = AblationRow("SCA(hand)+CI+ICV", {"variant": "sca", "interaction_tokens": "hand"})
OBJECT_ONLY = AblationRow("SCA(object)+CI+ICV", {"variant": "sca", "interaction_tokens": "object"})

DEFAULT_ROWS = (
    _component_row("sca", False, False),
    _component_row("sca", True, False),
    _component_row("sca", False, True),
    FULL_MODEL,
    _component_row("sot", True, True),
    _component_row("ub", True, True),
    HAND_ONLY,
    OBJECT_ONLY,
    AblationRow("SCA+CI(mask_fg)+ICV", {"variant": "sca", "context_mode": "mask_fg"}),
    AblationRow("SCA+Concat+ICV", {"variant": "sca", "context_mode": "concat"}),
    BASELINE,
)

FULL_GRID = tuple(
    _component_row(variant, context, icv)
    for variant in ("sca", "sot", "ub")
    for context in (False, True)
    for icv in (False, True)
) + (HAND_ONLY, OBJECT_ONLY, BASELINE)


class AblationRunner:
    """
    Trains and evaluates ablation rows against one dataset.
    """

    @staticmethod
    def rows_for(grid: str = "default", names: Optional[Sequence[str]] = None) -> List[AblationRow]:
        """
        Rows of the 'default' (11 rows) or 'full' (15 rows) grid, optionally filtered by name.

        Raises:
            ConfigError: On an unknown grid or row name.
        """
        grids = {"default": DEFAULT_ROWS, "full": FULL_GRID}
        if grid not in grids:
            raise ConfigError(f"unknown ablation grid '{grid}'; choose from {sorted(grids)}")
        rows = list(grids[grid])
        if names:
            by_name = {row.name: row for row in rows}
            unknown = [n for n in names if n not in by_name]
            if unknown:
                raise ConfigError(f"unknown ablation rows {unknown}; available: {list(by_name)}")
            rows = [by_name[n] for n in names]
        return rows

    @staticmethod
    def objects_sweep(counts: Sequence[int]) -> List[AblationRow]:
        """The full model at each object count N."""
        return [
            AblationRow(FULL_MODEL.name, {**FULL_MODEL.overrides, "objects": int(n)}) for n in counts
        ]

    @staticmethod
    def run_row(
        row: AblationRow, run: RunConfig, train_set: Sequence[Episode], eval_set: Sequence[Episode], seed: int
    ) -> Dict:
        """Train and evaluate one row for one seed."""
        cfg = row.model_config(run.model)
        start = time.perf_counter()
        params = InAViTParams.initialize_for(cfg, seed)
        params, _ = Trainer.fit(
            params, train_set, cfg, run.optimizer, run.steps, run.batch_size, seed
        )
        report = Trainer.evaluate(Checkpoint(params, cfg, run.steps), eval_set)
        elapsed = time.perf_counter() - start
        logger.info("%s seed %d: top1 %.3f, mean top-5 recall %.3f", row.name, seed, report.top1, report.mean_top5_recall)
        return {
            "row": row.name,
            "variant": cfg.variant if cfg.use_interactions else "none",
            "context": cfg.context_mode if cfg.use_interactions and cfg.use_context else "none",
            "icv": bool(cfg.use_interactions and cfg.use_icv),
            "interaction_tokens": cfg.interaction_tokens,
            "objects_per_frame": cfg.objects,
            "seed": seed,
            "top1": report.top1,
            "mean_top5_recall": report.mean_top5_recall,
            "mean_class_accuracy": report.mean_class_accuracy,
            "loss": report.loss,
            "steps": run.steps,
            "wall_clock": elapsed,
            "config_hash": cfg.config_hash(),
        }

    @staticmethod
    def summarize(results: pd.DataFrame, dataset_hash: str) -> pd.DataFrame:
        """Median of the metric columns over seeds, one line per row, in input order."""
        keys = ["row", "variant", "context", "icv", "interaction_tokens", "objects_per_frame", "steps", "config_hash"]
        metrics = ["top1", "mean_top5_recall", "mean_class_accuracy", "loss", "wall_clock"]
        grouped = results.groupby(keys, sort=False)
        table = grouped[metrics].median().reset_index()
        table["seeds"] = grouped["seed"].apply(lambda s: ";".join(str(v) for v in s)).to_numpy()
        table["dataset_hash"] = dataset_hash
        return table[ABLATION_COLUMNS]

    @staticmethod
    def ablate(
        run: RunConfig,
        rows: Optional[Sequence[AblationRow]] = None,
        seeds: Sequence[int] = (0, 1, 2),
        store: Optional[DatasetStore] = None,
        path: Optional[Union[str, Path]] = None,
    ) -> pd.DataFrame:
        """
        Build an ablation table.

        Args:
            run (RunConfig): Base configuration; rows override its model config.
            rows (list, optional): Rows to run; the default grid when omitted.
            seeds (sequence): Seeds shared by every row.
            store (DatasetStore, optional): Defaults to ``run.dataset``.
            path: CSV output path.

        Returns:
            pd.DataFrame: One line per row with ABLATION_COLUMNS.
        """
        rows = list(rows) if rows is not None else list(DEFAULT_ROWS)
        if not rows or not seeds:
            raise ConfigError("an ablation needs at least one row and one seed")
        store = store or DatasetStore(run.dataset)
        tok = run.model.tokenizer
        store.check_compatible(tok.frames, tok.height, tok.width, run.model.classes)
        train_set = list(store.episodes("train"))
        eval_set = list(store.episodes("eval"))
        results = pd.DataFrame(
            [AblationRunner.run_row(row, run, train_set, eval_set, seed) for row in rows for seed in seeds]
        )
        table = AblationRunner.summarize(results, store.dataset_hash())
        if path is not None:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            table.to_csv(path, index=False)
            logger.info("wrote %d ablation rows to %s", len(table), path)
        return table


ablate = AblationRunner.ablate
