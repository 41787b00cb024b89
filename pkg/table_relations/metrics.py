# Copyright (C) DATADVANCE, 2010-2023
#
# Permission is hereby granted, free of charge, to any person obtaining
# a copy of this software and associated documentation files (the
# "Software"), to deal in the Software without restriction, including
# without limitation the rights to use, copy, modify, merge, publish,
# distribute, sublicense, and/or sell copies of the Software, and to
# permit persons to whom the Software is furnished to do so, subject to
# the following conditions:
#
# The above copyright notice and this permission notice shall be
# included in all copies or substantial portions of the Software.
#
# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND,
# EXPRESS OR IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF
# MERCHANTABILITY, FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT.
# IN NO EVENT SHALL THE AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY
# CLAIM, DAMAGES OR OTHER LIABILITY, WHETHER IN AN ACTION OF CONTRACT,
# TORT OR OTHERWISE, ARISING FROM, OUT OF OR IN CONNECTION WITH THE
# SOFTWARE OR THE USE OR OTHER DEALINGS IN THE SOFTWARE.

"""Confusion matrix and micro/macro averaged precision, recall and F1.

Per-class scores treat one class as positive and the other two as
negative. A score with a zero denominator is 0. Macro scores are the
unweighted means of the per-class scores (macro F1 is the mean of the
per-class F1 values, not the F1 of macro precision and recall). Micro
scores pool true positives, false positives and false negatives over
all classes first; with exactly one predicted label per pair micro
precision, micro recall and micro F1 all equal accuracy.
"""

import dataclasses
import json
import logging
from typing import Any, Dict, Mapping, Sequence, Tuple

import numpy as np

from .error import TableRelationsError
from .table import RelationLabel

# Module logger.
LOG = logging.getLogger(__name__)

# (precision, recall, f1)
Scores = Tuple[float, float, float]


class MetricsError(TableRelationsError):
    """Metrics of an empty confusion matrix."""


class ConfusionMatrix:
    """3x3 counts, rows are true classes, columns predicted classes."""

    SIZE = len(RelationLabel)

    def __init__(self, counts=None):
        """Start from `counts` or from zeros."""
        if counts is None:
            counts = np.zeros((self.SIZE, self.SIZE), dtype=np.int64)
        self.counts = np.array(counts, dtype=np.int64)
        assert self.counts.shape == (self.SIZE, self.SIZE), (
            f"Confusion matrix must be {self.SIZE}x{self.SIZE}, "
            f"got {self.counts.shape}!"
        )
        assert (self.counts >= 0).all(), "Confusion counts must be non-negative!"

    @classmethod
    def from_predictions(
        cls, labels: Sequence[int], predictions: Sequence[int]
    ) -> "ConfusionMatrix":
        """Count `(label, prediction)` pairs."""
        matrix = cls()
        matrix.update(labels, predictions)
        return matrix

    def update(self, labels: Sequence[int], predictions: Sequence[int]) -> None:
        """Add `(label, prediction)` pairs."""
        labels = np.asarray(labels, dtype=np.int64)
        predictions = np.asarray(predictions, dtype=np.int64)
        assert labels.shape == predictions.shape, "Labels and predictions differ!"
        np.add.at(self.counts, (labels, predictions), 1)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        """Merge two matrices."""
        return ConfusionMatrix(self.counts + other.counts)

    def __eq__(self, other):
        """Same counts."""
        return isinstance(other, ConfusionMatrix) and bool(
            (self.counts == other.counts).all()
        )

    @property
    def total(self) -> int:
        """Number of counted pairs."""
        return int(self.counts.sum())

    def class_counts(self, label: int) -> Tuple[int, int, int]:
        """True positives, false positives and false negatives of a class."""
        true_positives = int(self.counts[label, label])
        false_positives = int(self.counts[:, label].sum()) - true_positives
        false_negatives = int(self.counts[label, :].sum()) - true_positives
        return true_positives, false_positives, false_negatives


def _ratio(numerator: float, denominator: float) -> float:
    """Division with the zero-denominator convention."""
    return numerator / denominator if denominator else 0.0


def _scores(true_positives: int, false_positives: int, false_negatives: int) -> Scores:
    """Precision, recall and F1 from counts."""
    precision = _ratio(true_positives, true_positives + false_positives)
    recall = _ratio(true_positives, true_positives + false_negatives)
    return precision, recall, _ratio(2 * precision * recall, precision + recall)


def _check(cm: ConfusionMatrix) -> None:
    """Reject the empty matrix."""
    if cm.total == 0:
        raise MetricsError("Cannot compute metrics of an empty confusion matrix")


def class_metrics(cm: ConfusionMatrix) -> Dict[RelationLabel, Scores]:
    """Per-class precision, recall and F1."""
    _check(cm)
    return {label: _scores(*cm.class_counts(label)) for label in RelationLabel}


def macro_metrics(cm: ConfusionMatrix) -> Scores:
    """Unweighted means of the per-class scores.

    Raises:
        MetricsError: All counts are zero.
    """
    per_class = list(class_metrics(cm).values())
    count = len(per_class)
    precision = sum(scores[0] for scores in per_class) / count
    recall = sum(scores[1] for scores in per_class) / count
    f1 = sum(scores[2] for scores in per_class) / count
    return precision, recall, f1


def micro_metrics(cm: ConfusionMatrix) -> Scores:
    """Scores of the counts pooled over all classes.

    Raises:
        MetricsError: All counts are zero.
    """
    _check(cm)
    counts = [cm.class_counts(label) for label in RelationLabel]
    true_positives, false_positives, false_negatives = (sum(c) for c in zip(*counts))
    return _scores(true_positives, false_positives, false_negatives)


@dataclasses.dataclass(frozen=True)
class MetricsReport:
    """All evaluation scores of a confusion matrix."""

    confusion: Tuple[Tuple[int, ...], ...]
    # Class name -> (precision, recall, f1).
    per_class: Mapping[str, Scores]
    macro: Scores
    micro: Scores
    # Class name -> number of pairs with that true class.
    support: Mapping[str, int]

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix) -> "MetricsReport":
        """Compute every score of `cm`.

        Raises:
            MetricsError: All counts are zero.
        """
        per_class = class_metrics(cm)
        report = cls(
            confusion=tuple(tuple(int(v) for v in row) for row in cm.counts),
            per_class={label.name.lower(): per_class[label] for label in RelationLabel},
            macro=macro_metrics(cm),
            micro=micro_metrics(cm),
            support={
                label.name.lower(): int(cm.counts[label].sum())
                for label in RelationLabel
            },
        )
        if min(report.support.values()) == 0:
            LOG.warning(
                "Some classes have no pairs, their scores are zero: %s.", report.support
            )
        return report

    @property
    def confusion_matrix(self) -> ConfusionMatrix:
        """The counts as a `ConfusionMatrix`."""
        return ConfusionMatrix(self.confusion)

    def to_dict(self) -> Dict[str, Any]:
        """JSON-compatible dict."""
        return {
            "confusion": [list(row) for row in self.confusion],
            "per_class": {
                name: dict(zip(("precision", "recall", "f1"), scores))
                for name, scores in self.per_class.items()
            },
            "macro": dict(zip(("precision", "recall", "f1"), self.macro)),
            "micro": dict(zip(("precision", "recall", "f1"), self.micro)),
            "support": dict(self.support),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MetricsReport":
        """Inverse of `to_dict`.

        Raises:
            MetricsError: The dict is not a metrics report.
        """

        def scores(item) -> Scores:
            return (float(item["precision"]), float(item["recall"]), float(item["f1"]))

        try:
            return cls(
                confusion=tuple(
                    tuple(int(v) for v in row) for row in data["confusion"]
                ),
                per_class={
                    name: scores(item) for name, item in data["per_class"].items()
                },
                macro=scores(data["macro"]),
                micro=scores(data["micro"]),
                support={name: int(v) for name, v in data["support"].items()},
            )
        except (KeyError, TypeError, ValueError, AttributeError) as ex:
            raise MetricsError(f"Malformed metrics report: {ex}") from ex

    def to_json(self) -> str:
        """Pretty JSON text."""
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        """Parse `to_json` output."""
        try:
            data = json.loads(text)
        except json.JSONDecodeError as ex:
            raise MetricsError(f"Malformed metrics JSON: {ex}") from ex
        return cls.from_dict(data)

    def format_table(self) -> str:
        """Human-readable table of all scores."""
        lines = [f"{'':<12}{'precision':>10}{'recall':>10}{'f1':>10}{'pairs':>8}"]
        for name, (precision, recall, f1) in self.per_class.items():
            lines.append(
                f"{name:<12}{precision:>10.4f}{recall:>10.4f}{f1:>10.4f}"
                f"{self.support[name]:>8}"
            )
        total = sum(self.support.values())
        averages = (("macro", self.macro), ("micro", self.micro))
        for name, (precision, recall, f1) in averages:
            lines.append(
                f"{name:<12}{precision:>10.4f}{recall:>10.4f}{f1:>10.4f}{total:>8}"
            )
        return "\n".join(lines)
