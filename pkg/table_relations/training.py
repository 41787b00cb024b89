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

"""Training loop, evaluation and relation prediction.

Training minimizes the cross-entropy of the candidate pairs with AdamW.
Pairs are reshuffled every epoch by a generator seeded from the
configuration, so the same configuration and data give the same loss
curve. After each epoch the model is evaluated on the validation pairs
and the epoch with the best validation micro F1 wins. Training stops
early when the best epoch is `patience` epochs old.
"""

import copy
import csv
import dataclasses
import logging
import pathlib
import time
from typing import Any, Dict, List, Mapping, Optional, Protocol, Sequence, Tuple

import numpy as np

from . import tensor as T
from .dataset import PairSet, build_pair_sets, iterate_batches, prepare_pair_set
from .error import ConfigError, TableRelationsError
from .imaging import GrayImage
from .metrics import ConfusionMatrix, MetricsReport
from .model import ModelConfig, RelationModel, Variant, build_model
from .optim import AdamW
from .pairing import DEFAULT_K
from .table import BBoxMode, RelationKey, RelationLabel, Table
from .workers import parallel_map

# Module logger.
LOG = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "val_micro_f1", "val_macro_f1")


class TrainingError(TableRelationsError):
    """Training cannot start or diverged."""

    def __init__(self, message, epoch: Optional[int] = None):
        """Remember the epoch the failure happened in."""
        super().__init__(message)
        self.epoch = epoch

    def __str__(self):
        """Message with the epoch."""
        if self.epoch is None:
            return super().__str__()
        return f"{self.message} in epoch {self.epoch}!"


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters."""

    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.001
    weight_decay: float = 0.01
    seed: int = 0
    # Nearest neighbors paired with each cell.
    k: int = DEFAULT_K
    # Epochs without validation improvement before stopping.
    patience: int = 5
    variant: Variant = Variant.FULL
    bbox_mode: BBoxMode = BBoxMode.ALIGNED
    # Loss weights of (none, vertical, horizontal), `None` is unweighted.
    class_weights: Optional[Tuple[float, float, float]] = None
    # Log a warning when one optimization step takes longer (seconds),
    # `None` disables the check.
    warn_batch_timeout: Optional[float] = 30
    # Architecture; its variant and seed are taken from this config.
    model: ModelConfig = ModelConfig()

    def __post_init__(self):
        """Normalize enums and check the values.

        Raises:
            ConfigError: Invalid value.
        """
        try:
            object.__setattr__(self, "variant", Variant(self.variant))
            object.__setattr__(self, "bbox_mode", BBoxMode(self.bbox_mode))
        except ValueError as ex:
            raise ConfigError(f"Invalid training config: {ex}") from ex
        for name in ("epochs", "batch_size", "k", "patience"):
            if getattr(self, name) < 1:
                value = getattr(self, name)
                raise ConfigError(f"Training {name} must be positive: {value}")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ConfigError(
                f"Need lr > 0 and weight_decay >= 0: {self.lr}, {self.weight_decay}"
            )
        if self.class_weights is not None:
            weights = tuple(float(w) for w in self.class_weights)
            if len(weights) != len(RelationLabel) or min(weights) <= 0:
                raise ConfigError(f"Need three positive class weights: {weights}")
            object.__setattr__(self, "class_weights", weights)

    def model_config(self) -> ModelConfig:
        """Architecture with the variant and seed of this config."""
        return dataclasses.replace(self.model, variant=self.variant, seed=self.seed)

    def to_dict(self) -> Dict[str, Any]:
        """Plain JSON-compatible dict."""
        result = dataclasses.asdict(self)
        result["variant"] = self.variant.value
        result["bbox_mode"] = self.bbox_mode.value
        result["model"] = self.model.to_dict()
        if self.class_weights is not None:
            result["class_weights"] = list(self.class_weights)
        return result

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrainConfig":
        """Inverse of `to_dict`.

        Raises:
            ConfigError: Unknown keys or invalid values.
        """
        data = dict(data)
        if "model" in data:
            data["model"] = ModelConfig.from_dict(data["model"])
        names = {field.name for field in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"Unknown TrainConfig keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as ex:
            raise ConfigError(f"Invalid TrainConfig: {ex}") from ex


@dataclasses.dataclass(frozen=True)
class EpochRecord:
    """One row of the training history."""

    epoch: int
    train_loss: float
    val_micro_f1: float
    val_macro_f1: float


@dataclasses.dataclass
class TrainResult:
    """Best model and the history of the run."""

    model: RelationModel
    optimizer: AdamW
    history: List[EpochRecord]
    best_epoch: int


# ---------------------------------------------------------------------- PREDICTION


class Predictor(Protocol):
    """Anything producing class probabilities for the pairs of a set."""

    def predict_proba(self, pair_set: PairSet) -> np.ndarray:
        """Probabilities `[P, 3]`."""


class ModelPredictor:
    """Predictor running a model in evaluation mode."""

    def __init__(self, model: RelationModel, batch_size: int = 256):
        """Freeze the model for inference."""
        self.model = model
        self.batch_size = batch_size
        model.eval()

    def predict_proba(self, pair_set: PairSet) -> np.ndarray:
        """Probabilities `[P, 3]` of all pairs in the set."""
        if len(pair_set) == 0:
            return np.zeros((0, len(RelationLabel)))
        with_images = self.model.config.variant != Variant.POSITION_ONLY
        batches = iterate_batches(
            [pair_set], self.batch_size, self.model.dtype, with_images=with_images
        )
        return np.concatenate([self.model.predict_proba(batch) for batch in batches])


class OraclePredictor:
    """Predictor which knows the ground truth."""

    def predict_proba(self, pair_set: PairSet) -> np.ndarray:
        """One-hot encoding of the true labels."""
        return np.eye(len(RelationLabel))[pair_set.labels]


@dataclasses.dataclass(frozen=True)
class RelationPrediction:
    """Predicted relations of the candidate pairs of one table."""

    table_id: str
    # `[P, 2]` cell ids, smaller first.
    pair_ids: np.ndarray
    # `[P, 3]` class probabilities.
    probabilities: np.ndarray

    @property
    def labels(self) -> np.ndarray:
        """Most probable class of each pair."""
        return self.probabilities.argmax(axis=1)

    @property
    def relations(self) -> Dict[RelationKey, RelationLabel]:
        """Predicted edges; `NONE` pairs are left out."""
        return {
            (int(a), int(b)): RelationLabel(int(label))
            for (a, b), label in zip(self.pair_ids, self.labels)
            if label != RelationLabel.NONE
        }

    def to_dict(self) -> Dict[str, Any]:
        """JSON-compatible dict."""
        return {
            "table": self.table_id,
            "pairs": [
                {
                    "cells": [int(a), int(b)],
                    "label": int(label),
                    "probabilities": [float(p) for p in probs],
                }
                for (a, b), label, probs in zip(
                    self.pair_ids, self.labels, self.probabilities
                )
            ],
        }


def predict_relations(
    predictor: Predictor,
    table: Table,
    image: GrayImage,
    config: TrainConfig,
) -> RelationPrediction:
    """Classify the candidate pairs of one table."""
    input_size = config.model.input_size
    pair_set = prepare_pair_set(table, image, config.k, config.bbox_mode, input_size)
    return RelationPrediction(
        table_id=table.id,
        pair_ids=pair_set.pair_ids,
        probabilities=predictor.predict_proba(pair_set),
    )


def evaluate(
    predictor: Predictor, pair_sets: Sequence[PairSet], jobs: int = 1
) -> MetricsReport:
    """Scores of the predictor over all candidate pairs.

    Tables are predicted concurrently on `jobs` threads, so the
    predictor must not change while evaluating.

    Raises:
        MetricsError: No pairs at all.
    """
    predictions = parallel_map(predictor.predict_proba, list(pair_sets), jobs)
    confusion = ConfusionMatrix()
    for pair_set, probabilities in zip(pair_sets, predictions):
        confusion.update(pair_set.labels, probabilities.argmax(axis=1))
    return MetricsReport.from_confusion(confusion)


def evaluate_tables(
    predictor: Predictor,
    samples: Sequence[Tuple[Table, GrayImage]],
    config: TrainConfig,
    jobs: int = 1,
    cache_dir=None,
) -> MetricsReport:
    """Prepare the pairs of the tables and evaluate the predictor."""
    pair_sets = build_pair_sets(
        samples, config.k, config.bbox_mode, config.model.input_size, jobs, cache_dir
    )
    return evaluate(predictor, pair_sets, jobs)


# ------------------------------------------------------------------------ TRAINING


def train(
    train_samples: Sequence[Tuple[Table, GrayImage]],
    val_samples: Sequence[Tuple[Table, GrayImage]],
    config: TrainConfig,
    jobs: int = 1,
    cache_dir=None,
) -> TrainResult:
    """Prepare the pairs of both splits and fit a model."""
    prepare = dict(
        k=config.k,
        bbox_mode=config.bbox_mode,
        input_size=config.model.input_size,
        jobs=jobs,
        cache_dir=cache_dir,
    )
    train_sets = build_pair_sets(train_samples, **prepare)
    val_sets = build_pair_sets(val_samples, **prepare)
    return fit(train_sets, val_sets, config, jobs)


def fit(
    train_sets: Sequence[PairSet],
    val_sets: Sequence[PairSet],
    config: TrainConfig,
    jobs: int = 1,
) -> TrainResult:
    """Train a fresh model and keep the epoch with the best validation F1.

    Raises:
        TrainingError: A split has no pairs or the loss is not finite.
    """
    train_pairs = sum(len(pair_set) for pair_set in train_sets)
    val_pairs = sum(len(pair_set) for pair_set in val_sets)
    if train_pairs == 0 or val_pairs == 0:
        raise TrainingError(
            f"Need pairs in both splits, got {train_pairs} training"
            f" and {val_pairs} validation pairs"
        )

    rng = np.random.default_rng(config.seed)
    model = build_model(config.model_config())
    optimizer = AdamW(model.params(), lr=config.lr, weight_decay=config.weight_decay)
    with_images = config.variant != Variant.POSITION_ONLY
    LOG.info(
        "Training %s on %s pairs, validating on %s pairs.",
        config.variant.value,
        train_pairs,
        val_pairs,
    )

    history: List[EpochRecord] = []
    best: Optional[Tuple[RelationModel, AdamW]] = None
    best_epoch, best_f1 = 0, -1.0
    for epoch in range(1, config.epochs + 1):
        model.train()
        total_loss = 0.0
        batches = iterate_batches(
            train_sets, config.batch_size, model.dtype, rng, with_images
        )
        for batch in batches:
            loss = train_step(model, optimizer, batch, config, epoch)
            total_loss += loss * len(batch)

        report = evaluate(ModelPredictor(model), val_sets, jobs)
        record = EpochRecord(
            epoch=epoch,
            train_loss=total_loss / train_pairs,
            val_micro_f1=report.micro[2],
            val_macro_f1=report.macro[2],
        )
        history.append(record)
        LOG.info(
            "Epoch %s: train loss %.5f, val micro F1 %.4f, val macro F1 %.4f.",
            epoch,
            record.train_loss,
            record.val_micro_f1,
            record.val_macro_f1,
        )
        if record.val_micro_f1 > best_f1:
            best_epoch, best_f1 = epoch, record.val_micro_f1
            best = copy.deepcopy((model, optimizer))
        elif epoch - best_epoch >= config.patience:
            LOG.info("No improvement since epoch %s, stopping.", best_epoch)
            break

    assert best is not None, "At least one epoch must have run!"
    best_model, best_optimizer = best
    best_model.eval()
    return TrainResult(best_model, best_optimizer, history, best_epoch)


def train_step(
    model: RelationModel,
    optimizer: AdamW,
    batch,
    config: TrainConfig,
    epoch: int = 0,
) -> float:
    """One optimization step on a batch.

    Returns:
        The loss before the update.

    Raises:
        TrainingError: The loss is not finite.
    """
    if config.warn_batch_timeout:
        start_time = time.perf_counter()

    optimizer.zero_grad()
    class_weights = None
    if config.class_weights is not None:
        class_weights = np.asarray(config.class_weights)
    loss = T.softmax_cross_entropy(model(batch), batch.labels, class_weights)
    value = float(loss.data)
    if not np.isfinite(value):
        raise TrainingError(f"Loss diverged to {value}", epoch=epoch)
    loss.backward()
    optimizer.step()

    if config.warn_batch_timeout:
        duration = time.perf_counter() - start_time
        if duration >= config.warn_batch_timeout:
            LOG.warning(
                "Training step %s took %.3f seconds (>%.3f)!"
                " Debug log contains batch details.",
                optimizer.steps,
                duration,
                config.warn_batch_timeout,
            )
            LOG.debug(
                "Slow training step %s: %s pairs, epoch %s.",
                optimizer.steps,
                len(batch),
                epoch,
            )
    return value


def write_history(history: Sequence[EpochRecord], path) -> None:
    """Write the history as CSV."""
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as stream:
        writer = csv.writer(stream)
        writer.writerow(HISTORY_COLUMNS)
        for record in history:
            writer.writerow([getattr(record, name) for name in HISTORY_COLUMNS])


def read_history(path) -> List[EpochRecord]:
    """Read a CSV written by `write_history`."""
    with pathlib.Path(path).open(newline="", encoding="utf-8") as stream:
        return [
            EpochRecord(
                epoch=int(row["epoch"]),
                train_loss=float(row["train_loss"]),
                val_micro_f1=float(row["val_micro_f1"]),
                val_macro_f1=float(row["val_macro_f1"]),
            )
            for row in csv.DictReader(stream)
        ]
