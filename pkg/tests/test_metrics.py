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

"""Test the confusion matrix and the averaged scores."""

import numpy as np
import pytest

from table_relations.metrics import (
    ConfusionMatrix,
    MetricsError,
    MetricsReport,
    class_metrics,
    macro_metrics,
    micro_metrics,
)
from table_relations.table import RelationLabel

# Rows are true classes: none, vertical, horizontal.
COUNTS = [[4, 1, 1], [0, 2, 0], [1, 0, 1]]


def test_from_predictions_counts_pairs():
    """Each `(label, prediction)` lands in its cell."""
    labels = [0, 0, 0, 0, 0, 0, 1, 1, 2, 2]
    predictions = [0, 0, 0, 0, 1, 2, 1, 1, 0, 2]
    cm = ConfusionMatrix.from_predictions(labels, predictions)
    assert cm == ConfusionMatrix(COUNTS)
    assert cm.total == 10
    assert cm.class_counts(RelationLabel.NONE) == (4, 1, 2)
    assert (cm + cm).counts.tolist() == [[8, 2, 2], [0, 4, 0], [2, 0, 2]]


def test_worked_example():
    """Hand-computed per-class, macro and micro scores."""
    cm = ConfusionMatrix(COUNTS)
    per_class = class_metrics(cm)
    assert per_class[RelationLabel.NONE] == pytest.approx((0.8, 2 / 3, 8 / 11))
    assert per_class[RelationLabel.VERTICAL] == pytest.approx((2 / 3, 1.0, 0.8))
    assert per_class[RelationLabel.HORIZONTAL] == pytest.approx((0.5, 0.5, 0.5))

    print("Macro F1 averages the class F1 values.")
    precision, recall, f1 = macro_metrics(cm)
    assert precision == pytest.approx((0.8 + 2 / 3 + 0.5) / 3)
    assert recall == pytest.approx((2 / 3 + 1 + 0.5) / 3)
    assert f1 == pytest.approx((8 / 11 + 0.8 + 0.5) / 3)

    print("Micro scores equal accuracy.")
    assert micro_metrics(cm) == pytest.approx((0.7, 0.7, 0.7))


def test_small_prediction_vector():
    """Four pairs with one horizontal edge taken for a vertical one."""
    cm = ConfusionMatrix.from_predictions([0, 1, 2, 2], [0, 1, 1, 2])
    assert cm.counts.tolist() == [[1, 0, 0], [0, 1, 0], [0, 1, 1]]
    assert micro_metrics(cm) == pytest.approx((0.75, 0.75, 0.75))
    per_class = class_metrics(cm)
    assert per_class[RelationLabel.VERTICAL] == pytest.approx((0.5, 1.0, 2 / 3))
    assert per_class[RelationLabel.HORIZONTAL] == pytest.approx((1.0, 0.5, 2 / 3))
    assert macro_metrics(cm)[2] == pytest.approx((1 + 2 / 3 + 2 / 3) / 3)


def direct_scores(labels, predictions):
    """Per-class and pooled scores counted pair by pair."""

    def ratio(numerator, denominator):
        return numerator / denominator if denominator else 0.0

    def f1(precision, recall):
        return ratio(2 * precision * recall, precision + recall)

    per_class = []
    pooled = [0, 0, 0]
    for label in range(3):
        hits = sum(1 for t, p in zip(labels, predictions) if t == p == label)
        predicted = sum(1 for p in predictions if p == label)
        actual = sum(1 for t in labels if t == label)
        pooled = [pooled[0] + hits, pooled[1] + predicted, pooled[2] + actual]
        precision, recall = ratio(hits, predicted), ratio(hits, actual)
        per_class.append((precision, recall, f1(precision, recall)))
    macro = tuple(sum(scores[i] for scores in per_class) / 3 for i in range(3))
    precision, recall = ratio(pooled[0], pooled[1]), ratio(pooled[0], pooled[2])
    return per_class, macro, (precision, recall, f1(precision, recall))


@pytest.mark.parametrize("seed", range(100))
def test_scores_match_direct_counts(seed):
    """Random prediction vectors score like a pair-by-pair count."""
    rng = np.random.default_rng(seed)
    size = int(rng.integers(1, 60))
    labels = rng.integers(0, 3, size).tolist()
    predictions = rng.integers(0, 3, size).tolist()
    cm = ConfusionMatrix.from_predictions(labels, predictions)
    per_class, macro, micro = direct_scores(labels, predictions)

    for label, scores in class_metrics(cm).items():
        assert scores == pytest.approx(per_class[label], abs=1e-12)
    assert macro_metrics(cm) == pytest.approx(macro, abs=1e-12)
    assert micro_metrics(cm) == pytest.approx(micro, abs=1e-12)
    accuracy = sum(t == p for t, p in zip(labels, predictions)) / size
    assert micro_metrics(cm)[0] == pytest.approx(accuracy, abs=1e-12)
    assert micro_metrics(cm)[1] == pytest.approx(accuracy, abs=1e-12)


def test_zero_denominators_and_missing_classes(caplog):
    """Classes without pairs or predictions score zero."""
    cm = ConfusionMatrix([[3, 0, 0], [2, 0, 0], [0, 0, 0]])
    per_class = class_metrics(cm)
    assert per_class[RelationLabel.VERTICAL] == (0.0, 0.0, 0.0)
    assert per_class[RelationLabel.HORIZONTAL] == (0.0, 0.0, 0.0)
    assert macro_metrics(cm)[2] == pytest.approx((2 * 0.6 / 1.6) / 3)

    report = MetricsReport.from_confusion(cm)
    assert report.support == {"none": 3, "vertical": 2, "horizontal": 0}
    assert "no pairs" in caplog.text


def test_empty_matrix_fails():
    """No pairs, no scores."""
    for score in (class_metrics, macro_metrics, micro_metrics):
        with pytest.raises(MetricsError):
            score(ConfusionMatrix())


def test_report_json_and_table():
    """Reports survive JSON and print one row per class and average."""
    report = MetricsReport.from_confusion(ConfusionMatrix(COUNTS))
    assert MetricsReport.from_json(report.to_json()) == report
    assert report.confusion_matrix == ConfusionMatrix(COUNTS)

    lines = report.format_table().splitlines()
    assert len(lines) == 6
    assert lines[-1].split() == ["micro", "0.7000", "0.7000", "0.7000", "10"]

    with pytest.raises(MetricsError):
        MetricsReport.from_json("[1, 2")
    with pytest.raises(MetricsError):
        MetricsReport.from_json('{"confusion": []}')
