#!/usr/bin/env python3
"""
Anticipation Runner - Main entry point for generating data, training, evaluating and
verifying the interaction-centric video transformer.

This module provides the AnticipationRunner class, the primary interface tying the
synthetic dataset, the trainer, the gradient suite, the ablation tables and the
attention export to one RunConfig.

Key Features:
- Generates a seeded synthetic hand-object anticipation dataset on disk
- Trains with AdamW and writes a checkpoint plus a JSONL log
- Evaluates checkpoints (top-1, mean top-5 recall, mean class accuracy)
- Checks every block's gradients against finite differences
- Runs ablation tables and exports attention maps

Basic Usage:
    from inavit import AnticipationRunner, load_config

    runner = AnticipationRunner(load_config("config.json", seed=0))
    runner.generate_data()
    checkpoint = runner.train()
    report = runner.evaluate()

Command Line Usage:
    inavit gen-data --seed 0
    inavit train --seed 0 --config config.json --set run.steps=500
    inavit eval --seed 0
    inavit gradcheck --seed 0 --scope full
    inavit ablate --seed 0 --seeds 0,1,2
    inavit export-attn --seed 0 --episode 1
"""

import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import pandas as pd

from .ablation import AblationRunner
from .checkpoint import Checkpoint, CheckpointStore
from .config import ConfigLoader, RunConfig
from .dataset_store import DatasetStore
from .errors import GradcheckFailure, InavitError
from .export import AttentionExporter
from .gradcheck import GradientChecker, require_passed
from .metrics import MetricsReport
from .synthdata import SyntheticTask
from .trainer import Trainer

logger = logging.getLogger(__name__)

EXIT_ERROR = 1
EXIT_GRADCHECK = 3


def _int_list(text: Optional[str]) -> List[int]:
    if not text:
        return []
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise InavitError(f"expected a comma-separated list of integers, got '{text}'") from e


class AnticipationRunner:
    """
    A class tying every command to one run configuration.
    """

    def __init__(self, run: RunConfig):
        """
        Initialize the runner.

        Args:
            run (RunConfig): Model, data, optimizer and run settings.
        """
        self.run_config = run
        self.store = DatasetStore(run.dataset)

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.run_config.output) / "checkpoint"

    def generate_data(self, size: Optional[int] = None, seed: Optional[int] = None) -> pd.DataFrame:
        """
        Generate the synthetic dataset and write it to ``run.dataset``.

        Returns:
            pd.DataFrame: Episodes per class and split.
        """
        run = self.run_config
        episodes, manifest = SyntheticTask.generate_dataset(
            run.data, size or run.dataset_size, run.seed if seed is None else seed
        )
        self.store.save(episodes, manifest)
        return SyntheticTask.class_counts(episodes, run.data.object_types)

    def train(self) -> Checkpoint:
        return Trainer.train(self.run_config, self.store)

    def load_checkpoint(self, path: Optional[Union[str, Path]] = None) -> Checkpoint:
        return CheckpointStore.load_checkpoint(path or self.checkpoint_path)

    def evaluate(
        self, checkpoint: Optional[Union[str, Path]] = None, split: str = "eval"
    ) -> MetricsReport:
        """
        Evaluate a checkpoint on one split of the dataset.

        Args:
            checkpoint: Checkpoint directory; defaults to ``<output>/checkpoint``.
            split (str): 'train' or 'eval'.

        Raises:
            ConfigMismatchError: If the checkpoint was trained with another model config.
        """
        loaded = self.load_checkpoint(checkpoint)
        tok = loaded.config.tokenizer
        self.store.check_compatible(tok.frames, tok.height, tok.width, loaded.config.classes)
        return Trainer.evaluate(
            loaded, list(self.store.episodes(split)), expected_hash=self.run_config.model.config_hash()
        )

    def gradcheck(self, scope: str = "full", probes: int = 6) -> pd.DataFrame:
        return GradientChecker.gradcheck_suite(scope, self.run_config.seed, probes)

    def ablate(
        self,
        grid: str = "default",
        rows: Sequence[str] = (),
        seeds: Sequence[int] = (0, 1, 2),
        objects: Sequence[int] = (),
        path: Optional[Union[str, Path]] = None,
    ) -> pd.DataFrame:
        """
        Ablation table over named rows, or an object-count sweep when ``objects`` is given.
        """
        if objects:
            selected = AblationRunner.objects_sweep(objects)
        else:
            selected = AblationRunner.rows_for(grid, rows)
        path = path or Path(self.run_config.output) / "ablation.csv"
        return AblationRunner.ablate(self.run_config, selected, seeds, self.store, path)

    def export_attention(
        self,
        episode: int,
        checkpoint: Optional[Union[str, Path]] = None,
        path: Optional[Union[str, Path]] = None,
    ) -> Dict:
        path = path or Path(self.run_config.output) / f"attention_{episode}.json"
        return AttentionExporter.export_attention(
            self.load_checkpoint(checkpoint), self.store.load_episode(episode), path
        )

    @staticmethod
    def show(title: str, table: pd.DataFrame, verbose: bool = True) -> None:
        if verbose and not table.empty:
            print(f"\n{title}:")
            print(table.to_string())


def build_parser():
    import argparse

    parser = argparse.ArgumentParser(
        prog="inavit",
        description="Interaction-centric video transformer for next-action anticipation",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, required=True, help="Seed of every random draw")
    common.add_argument("--config", help="JSON config file (sections model, data, optimizer, run)")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="Override a config value, e.g. run.steps=500 (repeatable)",
    )
    common.add_argument("--log-level", default="INFO", help="Logging level (default: INFO)")
    common.add_argument("--quiet", action="store_true", help="Suppress verbose output")

    commands = parser.add_subparsers(dest="command", required=True)
    gen = commands.add_parser("gen-data", parents=[common], help="Generate the synthetic dataset")
    gen.add_argument("--size", type=int, help="Episodes to generate (default: run.dataset_size)")

    commands.add_parser("train", parents=[common], help="Train and write a checkpoint")

    ev = commands.add_parser("eval", parents=[common], help="Evaluate a checkpoint")
    ev.add_argument("--checkpoint", help="Checkpoint directory (default: <output>/checkpoint)")
    ev.add_argument("--split", default="eval", choices=["train", "eval"])
    ev.add_argument("--report", help="Write the metrics report as JSON")

    gc = commands.add_parser("gradcheck", parents=[common], help="Verify gradients")
    gc.add_argument("--scope", default="full", help="'full', 'classifier' or comma-separated blocks")
    gc.add_argument("--probes", type=int, default=6, help="Coordinates probed per tensor")

    ab = commands.add_parser("ablate", parents=[common], help="Run an ablation table")
    ab.add_argument("--grid", default="default", choices=["default", "full"])
    ab.add_argument("--rows", help="Comma-separated row names to run")
    ab.add_argument("--seeds", default="0,1,2", help="Comma-separated training seeds")
    ab.add_argument("--objects", help="Object-count sweep, e.g. 1,2,3")
    ab.add_argument("--out", help="CSV path (default: <output>/ablation.csv)")

    ex = commands.add_parser("export-attn", parents=[common], help="Export attention maps")
    ex.add_argument("--episode", type=int, required=True, help="Episode seed")
    ex.add_argument("--checkpoint", help="Checkpoint directory (default: <output>/checkpoint)")
    ex.add_argument("--out", help="JSON path (default: <output>/attention_<episode>.json)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Command-line entry point of the anticipation runner.
    """
    import json

    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    verbose = not args.quiet

    try:
        runner = AnticipationRunner(ConfigLoader.load_config(args.config, args.overrides, args.seed))
        if args.command == "gen-data":
            counts = runner.generate_data(args.size)
            runner.show("Episodes per class", counts, verbose)
        elif args.command == "train":
            checkpoint = runner.train()
            if verbose:
                print(f"\nTrained {checkpoint.step} steps; checkpoint at {runner.checkpoint_path}")
        elif args.command == "eval":
            report = runner.evaluate(args.checkpoint, args.split)
            runner.show("Per-class recall", report.per_class, verbose)
            runner.show("Summary", pd.DataFrame([report.summary()]), verbose)
            if args.report:
                with open(args.report, "w", encoding="utf-8") as fh:
                    json.dump(report.to_dict(), fh, indent=2)
        elif args.command == "gradcheck":
            report = runner.gradcheck(args.scope, args.probes)
            runner.show("Gradient check", report, verbose)
            require_passed(report)
        elif args.command == "ablate":
            table = runner.ablate(
                args.grid,
                [r.strip() for r in (args.rows or "").split(",") if r.strip()],
                _int_list(args.seeds),
                _int_list(args.objects),
                args.out,
            )
            runner.show("Ablation", table.drop(columns=["config_hash", "dataset_hash"]), verbose)
        elif args.command == "export-attn":
            export = runner.export_attention(args.episode, args.checkpoint, args.out)
            if verbose:
                print(
                    f"\nExported {len(export['trajectory'])} trajectory and "
                    f"{len(export['icv'])} icv attention maps for episode {args.episode}"
                )
    except GradcheckFailure as e:
        logger.error("%s", e)
        return EXIT_GRADCHECK
    except InavitError as e:
        logger.error("%s", e)
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
