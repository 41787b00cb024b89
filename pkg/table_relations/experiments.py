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

"""Comparison protocols run end to end on a dataset.

Every protocol trains fresh models on the train split, selects the
epoch by the val split and scores the test split. Scores of repeated
runs with different seeds are summarized by their median.
"""

import dataclasses
import logging
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .dataset import SPLITS, load_split
from .error import ConfigError
from .imaging import GrayImage
from .metrics import MetricsReport
from .model import Variant
from .table import BBoxMode, Table
from .training import ModelPredictor, TrainConfig, evaluate_tables, train

# Module logger.
LOG = logging.getLogger(__name__)

Samples = Sequence[Tuple[Table, GrayImage]]


@dataclasses.dataclass(frozen=True)
class ExperimentData:
    """Tables of the three splits with their images."""

    train: Samples
    val: Samples
    test: Samples

    @classmethod
    def load(cls, root, jobs: int = 1) -> "ExperimentData":
        """Read all splits of a dataset directory."""
        return cls(*(load_split(root, split, jobs) for split in SPLITS))


def train_and_score(
    data: ExperimentData, config: TrainConfig, jobs: int = 1, cache_dir=None
) -> MetricsReport:
    """Train on the train split and score the test split."""
    result = train(data.train, data.val, config, jobs, cache_dir)
    predictor = ModelPredictor(result.model)
    report = evaluate_tables(predictor, data.test, config, jobs, cache_dir)
    LOG.info(
        "Variant %s, %s boxes, seed %s: test micro F1 %.4f.",
        config.variant.value,
        config.bbox_mode.value,
        config.seed,
        report.micro[2],
    )
    return report


def run_ablation(
    data: ExperimentData,
    config: TrainConfig,
    seeds: Sequence[int],
    jobs: int = 1,
    cache_dir=None,
) -> Dict[str, float]:
    """Median test micro F1 of every model variant."""
    result = {
        variant.value: _median_f1(
            data, dataclasses.replace(config, variant=variant), seeds, jobs, cache_dir
        )
        for variant in Variant
    }
    LOG.info("Ablation over seeds %s:\n%s", list(seeds), format_scores(result))
    return result


def run_bbox_regimes(
    data: ExperimentData,
    config: TrainConfig,
    seeds: Sequence[int],
    jobs: int = 1,
    cache_dir=None,
) -> Dict[str, float]:
    """Median test micro F1 with aligned and with text-focused boxes.

    Each regime is trained and scored on its own pairs: text-focused
    tables lose their empty cells.
    """
    result = {
        mode.value: _median_f1(
            data, dataclasses.replace(config, bbox_mode=mode), seeds, jobs, cache_dir
        )
        for mode in BBoxMode
    }
    LOG.info("Box regimes over seeds %s:\n%s", list(seeds), format_scores(result))
    return result


def run_training_size_sweep(
    data: ExperimentData,
    config: TrainConfig,
    sizes: Sequence[int],
    jobs: int = 1,
    cache_dir=None,
) -> Dict[int, MetricsReport]:
    """Test scores of models trained on the first `size` train tables.

    Raises:
        ConfigError: A size is not positive or exceeds the train split.
    """
    for size in sizes:
        if not 0 < size <= len(data.train):
            raise ConfigError(
                f"Training size {size} outside 1..{len(data.train)} train tables"
            )
    result = {
        size: train_and_score(
            dataclasses.replace(data, train=list(data.train)[:size]),
            config,
            jobs,
            cache_dir,
        )
        for size in sizes
    }
    LOG.info(
        "Training size sweep:\n%s",
        format_scores({str(size): report.micro[2] for size, report in result.items()}),
    )
    return result


def run_domain_shift(
    source: ExperimentData,
    target: ExperimentData,
    config: TrainConfig,
    jobs: int = 1,
    cache_dir=None,
    target_cache_dir=None,
) -> Dict[str, MetricsReport]:
    """Train on one table style, score the test splits of both styles.

    Each dataset keeps its pair sets in its own cache: `cache_dir` is
    used for the source tables, `target_cache_dir` for the target ones.

    Returns:
        Reports under `in_domain` (source test split) and `cross_domain`
        (target test split).
    """
    model = train(source.train, source.val, config, jobs, cache_dir).model
    predictor = ModelPredictor(model)
    result = {
        "in_domain": evaluate_tables(predictor, source.test, config, jobs, cache_dir),
        "cross_domain": evaluate_tables(
            predictor, target.test, config, jobs, target_cache_dir
        ),
    }
    LOG.info(
        "Domain shift:\n%s",
        format_scores({name: report.micro[2] for name, report in result.items()}),
    )
    return result


def format_scores(scores: Dict[str, float]) -> str:
    """Two-column text table of named micro F1 scores."""
    lines = [f"{'':<16}{'micro f1':>10}"]
    lines += [f"{name:<16}{value:>10.4f}" for name, value in scores.items()]
    return "\n".join(lines)


def _median_f1(data, config, seeds, jobs, cache_dir) -> float:
    """Median test micro F1 over training seeds."""
    if not seeds:
        raise ConfigError("Need at least one seed")
    scores: List[float] = [
        train_and_score(
            data, dataclasses.replace(config, seed=seed), jobs, cache_dir
        ).micro[2]
        for seed in seeds
    ]
    return float(np.median(scores))
