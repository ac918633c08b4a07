#!/usr/bin/env python3
"""
Anticipation metrics.

Predictions are ranked label lists (best first), as returned by
``model.predict_topk``. Class-averaged metrics average over the classes that
occur in the labels only.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import pandas as pd

from .errors import ShapeError

TOP_K = 5


def _frame(predictions: Sequence[Sequence[int]], labels: Sequence[int], k: int) -> pd.DataFrame:
    if len(predictions) == 0 or len(labels) == 0:
        raise ShapeError("metrics need at least one prediction")
    if len(predictions) != len(labels):
        raise ShapeError(
            f"{len(predictions)} predictions for {len(labels)} labels"
        )
    rows = []
    for ranked, label in zip(predictions, labels):
        ranked = [int(p) for p in ranked]
        if not ranked:
            raise ShapeError("empty prediction list")
        rows.append(
            {
                "label": int(label),
                "top1_hit": ranked[0] == int(label),
                "topk_hit": int(label) in ranked[:k],
            }
        )
    return pd.DataFrame(rows)


class AnticipationMetrics:
    """
    Recall and accuracy metrics over ranked predictions.
    """

    @staticmethod
    def mean_top5_recall(predictions: Sequence[Sequence[int]], labels: Sequence[int], k: int = TOP_K) -> float:
        """
        Unweighted mean over present classes of the fraction of samples whose
        label is among the top-k predictions.

        Raises:
            ShapeError: On empty or mismatched inputs.
        """
        frame = _frame(predictions, labels, k)
        return float(frame.groupby("label")["topk_hit"].mean().mean())

    @staticmethod
    def top1_accuracy(predictions: Sequence[Sequence[int]], labels: Sequence[int]) -> float:
        frame = _frame(predictions, labels, 1)
        return float(frame["top1_hit"].mean())

    @staticmethod
    def mean_class_accuracy(predictions: Sequence[Sequence[int]], labels: Sequence[int]) -> float:
        """Unweighted mean over present classes of per-class top-1 recall."""
        frame = _frame(predictions, labels, 1)
        return float(frame.groupby("label")["top1_hit"].mean().mean())

    @staticmethod
    def per_class_table(
        predictions: Sequence[Sequence[int]],
        labels: Sequence[int],
        classes: Optional[int] = None,
        k: int = TOP_K,
    ) -> pd.DataFrame:
        """
        Per-class sample counts and recalls.

        Args:
            classes (int, optional): Include every class in [0, classes); absent
                classes get zero samples and NaN recalls.

        Returns:
            pd.DataFrame: Indexed by label with columns samples, top1_recall,
            top5_recall.
        """
        frame = _frame(predictions, labels, k)
        grouped = frame.groupby("label")
        table = pd.DataFrame(
            {
                "samples": grouped.size(),
                "top1_recall": grouped["top1_hit"].mean(),
                "top5_recall": grouped["topk_hit"].mean(),
            }
        )
        if classes is not None:
            table = table.reindex(range(classes))
            table["samples"] = table["samples"].fillna(0).astype(int)
        table.index.name = "label"
        return table


@dataclass
class MetricsReport:
    """
    Evaluation summary.

    Attributes:
        top1 (float): Top-1 accuracy.
        mean_top5_recall (float): Class-averaged top-5 recall.
        mean_class_accuracy (float): Class-averaged top-1 recall.
        per_class (pd.DataFrame): Per-class table.
        loss (float): Mean cross-entropy.
        wall_clock (float): Seconds spent evaluating.
        config_hash (str): Hash of the model config.
        samples (int): Number of evaluated clips.
    """

    top1: float
    mean_top5_recall: float
    mean_class_accuracy: float
    per_class: pd.DataFrame = field(repr=False)
    loss: float
    wall_clock: float
    config_hash: str
    samples: int

    def __post_init__(self):
        for name in ("top1", "mean_top5_recall", "mean_class_accuracy"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ShapeError(f"{name}={value} outside [0, 1]")

    @classmethod
    def build(
        cls,
        predictions: Sequence[Sequence[int]],
        labels: Sequence[int],
        loss: float,
        wall_clock: float,
        config_hash: str,
        classes: Optional[int] = None,
    ) -> "MetricsReport":
        return cls(
            top1=AnticipationMetrics.top1_accuracy(predictions, labels),
            mean_top5_recall=AnticipationMetrics.mean_top5_recall(predictions, labels),
            mean_class_accuracy=AnticipationMetrics.mean_class_accuracy(predictions, labels),
            per_class=AnticipationMetrics.per_class_table(predictions, labels, classes),
            loss=float(loss),
            wall_clock=float(wall_clock),
            config_hash=config_hash,
            samples=len(labels),
        )

    def summary(self) -> Dict[str, float]:
        """Scalar fields, for logs and CSV rows."""
        return {
            "top1": self.top1,
            "mean_top5_recall": self.mean_top5_recall,
            "mean_class_accuracy": self.mean_class_accuracy,
            "loss": self.loss,
            "wall_clock": self.wall_clock,
            "samples": self.samples,
            "config_hash": self.config_hash,
        }

    def to_dict(self) -> dict:
        data = self.summary()
        table = self.per_class.reset_index()
        data["per_class"] = [
            {k: (None if pd.isna(v) else v) for k, v in row.items()}
            for row in table.astype(object).to_dict(orient="records")
        ]
        return data


mean_top5_recall = AnticipationMetrics.mean_top5_recall
top1_accuracy = AnticipationMetrics.top1_accuracy
mean_class_accuracy = AnticipationMetrics.mean_class_accuracy
