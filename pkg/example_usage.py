#!/usr/bin/env python3
"""
Example usage of the AnticipationRunner class.
"""

import tempfile
from dataclasses import replace
from pathlib import Path

from inavit import AnticipationRunner, load_config


def main():
    workdir = Path(tempfile.mkdtemp(prefix="inavit-"))
    run = load_config(
        overrides=[
            f"run.dataset={workdir / 'data'}",
            f"run.output={workdir / 'run'}",
            "run.steps=20",
            "run.dataset_size=48",
        ],
        seed=0,
    )
    runner = AnticipationRunner(run)

    # Example 1: Synthetic data and training
    print("=== Example 1: Generate and Train ===")
    counts = runner.generate_data()
    print(counts)
    checkpoint = runner.train()
    print(f"Trained {checkpoint.step} steps, config hash {checkpoint.config_hash[:12]}")

    # Example 2: Evaluation
    print("\n=== Example 2: Evaluation ===")
    report = runner.evaluate()
    print(f"Samples: {report.samples}")
    print(f"Top-1 accuracy: {report.top1:.3f}")
    print(f"Mean top-5 recall: {report.mean_top5_recall:.3f}")
    print(f"Mean class accuracy: {report.mean_class_accuracy:.3f}")
    print(report.per_class)

    # Example 3: Gradient checks on a few blocks
    print("\n=== Example 3: Gradient Checks ===")
    print(runner.gradcheck(scope="numerics,sca,classifier", probes=4))

    # Example 4: Attention maps of one episode
    print("\n=== Example 4: Attention Export ===")
    seed = runner.store.seeds("eval")[0]
    export = runner.export_attention(seed)
    for entry in export["trajectory"]:
        print(f"{entry['layer']}: {entry['shape']}")

    # Example 5: Object-token variant on the same data
    print("\n=== Example 5: Object Tokens Only ===")
    variant = AnticipationRunner(
        replace(run, model=replace(run.model, interaction_tokens="object"), output=str(workdir / "object"))
    )
    variant.train()
    print(f"Mean top-5 recall: {variant.evaluate().mean_top5_recall:.3f}")


if __name__ == "__main__":
    main()
