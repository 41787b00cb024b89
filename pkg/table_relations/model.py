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

"""Relation classifier for cell pairs.

The full model embeds both cell images with one convolutional embedder
and the union crop of the pair with another one (the parameters are
not shared). Two shared perceptrons turn the cell embeddings into a
channel gate `[N, C, 1, 1]` and a spatial gate `[N, 1, s, s]`:

    gate = sigmoid(f(flatten(e_a)) + f(flatten(e_b)))

The product of both gates multiplies the union-crop features, and a
two-layer classifier maps the gated features to three logits (no
relation, vertical, horizontal). Since the gates add the contributions
of both cells, swapping the cells of a pair does not change the result.

Two ablations exist: `no_attention` classifies the union-crop features
directly, `position_only` is a perceptron on the ten box coordinate
features and never looks at pixels.
"""

import dataclasses
import enum
import logging
from typing import Any, Dict, Mapping, Optional

import numpy as np

from . import tensor as T
from .error import ConfigError
from .layers import ConvEmbedder, Mlp, Module

# Module logger.
LOG = logging.getLogger(__name__)

# Number of relation classes.
CLASSES = 3
# Position features per pair: both normalized boxes and the center delta.
POSITION_FEATURES = 10


class Variant(str, enum.Enum):
    """Model architecture variants."""

    FULL = "full"
    NO_ATTENTION = "no_attention"
    POSITION_ONLY = "position_only"


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    The reference configuration is `input_size=84, channels=64,
    depth=4`, giving `64 x 5 x 5` embeddings. Smaller values are meant
    for gradient checks and quick tests.
    """

    variant: Variant = Variant.FULL
    input_size: int = 84
    channels: int = 64
    # Number of conv-BN-relu-pool blocks in each embedder.
    depth: int = 4
    attention_hidden: int = 256
    classifier_hidden: int = 512
    position_hidden: int = 64
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        """Normalize the variant and check the values.

        Raises:
            ConfigError: Unknown variant or dtype, non-positive sizes,
                or too many pooling steps for the input size.
        """
        try:
            object.__setattr__(self, "variant", Variant(self.variant))
        except ValueError as ex:
            known = ", ".join(v.value for v in Variant)
            raise ConfigError(
                f"Unknown variant {self.variant!r}, use one of {known}"
            ) from ex
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"Model dtype must be float32 or float64: {self.dtype}")
        sizes = (
            "input_size",
            "channels",
            "depth",
            "attention_hidden",
            "classifier_hidden",
            "position_hidden",
        )
        for name in sizes:
            if getattr(self, name) < 1:
                value = getattr(self, name)
                raise ConfigError(f"Model {name} must be positive: {value}")
        size = self.input_size
        for _ in range(self.depth):
            if size < 2:
                raise ConfigError(
                    f"Input size {self.input_size} cannot pass {self.depth} pooling"
                    " steps"
                )
            size //= 2

    @property
    def embedding_size(self) -> int:
        """Spatial side of the embedding maps."""
        size = self.input_size
        for _ in range(self.depth):
            size //= 2
        return size

    @property
    def embedding_features(self) -> int:
        """Length of a flattened embedding."""
        return self.channels * self.embedding_size**2

    def to_dict(self) -> Dict[str, Any]:
        """Plain JSON-compatible dict."""
        result = dataclasses.asdict(self)
        result["variant"] = self.variant.value
        return result

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ModelConfig":
        """Inverse of `to_dict`.

        Raises:
            ConfigError: Unknown keys or invalid values.
        """
        return _config_from_dict(cls, data)


@dataclasses.dataclass(frozen=True)
class PairBatch:
    """Network inputs of `N` cell pairs.

    Images are `[N, 1, S, S]` floats in [0, 1] with ink = 1. Variants
    which do not look at images accept batches without them.
    """

    positions: np.ndarray
    cell_a: Optional[np.ndarray] = None
    cell_b: Optional[np.ndarray] = None
    union: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        """Check that all parts describe the same pairs."""
        size = len(self.positions)
        if self.positions.shape != (size, POSITION_FEATURES):
            raise T.ShapeError(f"Positions must be [N, 10], got {self.positions.shape}")
        images = [self.cell_a, self.cell_b, self.union]
        shapes = {image.shape for image in images if image is not None}
        if len(shapes) > 1:
            raise T.ShapeError(f"Image batches differ in shape: {sorted(shapes)}")
        for shape in shapes:
            if len(shape) != 4 or shape[0] != size or shape[1] != 1:
                raise T.ShapeError(f"Images must be [{size}, 1, S, S], got {shape}")
        if self.labels is not None and self.labels.shape != (size,):
            raise T.ShapeError(f"Labels must be [{size}], got {self.labels.shape}")

    def __len__(self):
        """Number of pairs."""
        return len(self.positions)

    @property
    def has_images(self) -> bool:
        """Whether all three image batches are present."""
        images = (self.cell_a, self.cell_b, self.union)
        return all(image is not None for image in images)

    def swapped(self) -> "PairBatch":
        """The same pairs with the two cells exchanged."""
        positions = np.concatenate(
            [self.positions[:, 4:8], self.positions[:, 0:4], -self.positions[:, 8:10]],
            axis=1,
        )
        return dataclasses.replace(
            self, positions=positions, cell_a=self.cell_b, cell_b=self.cell_a
        )


class RelationModel(Module):
    """Cell pair classifier of the configured variant."""

    def __init__(self, config: ModelConfig):
        """Create the submodules of the variant with seeded weights."""
        self.config = config
        rng = np.random.default_rng(config.seed)
        dtype = np.dtype(config.dtype)
        depth, channels = config.depth, config.channels
        flat = config.embedding_features
        spatial = config.embedding_size**2
        if config.variant == Variant.FULL:
            self.cell_embedder = ConvEmbedder(depth, channels, rng, dtype)
            self.table_embedder = ConvEmbedder(depth, channels, rng, dtype)
            self.channel_mlp = Mlp(
                [flat, config.attention_hidden, channels], rng, dtype
            )
            self.spatial_mlp = Mlp([flat, config.attention_hidden, spatial], rng, dtype)
            self.classifier = Mlp([flat, config.classifier_hidden, CLASSES], rng, dtype)
        elif config.variant == Variant.NO_ATTENTION:
            self.table_embedder = ConvEmbedder(depth, channels, rng, dtype)
            self.classifier = Mlp([flat, config.classifier_hidden, CLASSES], rng, dtype)
        else:
            hidden = config.position_hidden
            sizes = [POSITION_FEATURES, hidden, hidden, CLASSES]
            self.position_mlp = Mlp(sizes, rng, dtype)
        for name, param in self.named_params():
            param.name = name

    @property
    def dtype(self) -> np.dtype:
        """Floating point type of parameters and activations."""
        return np.dtype(self.config.dtype)

    @property
    def parameter_count(self) -> int:
        """Total number of trainable scalars."""
        return sum(int(np.prod(param.shape)) for param in self.params())

    # ------------------------------------------------------------------------ STAGES

    def embed_cell(self, images: T.Tensor) -> T.Tensor:
        """Embed cell images, `[N, 1, S, S]` -> `[N, C, s, s]`."""
        self._require(Variant.FULL)
        return self.cell_embedder(self._check_images(images))

    def embed_table(self, images: T.Tensor) -> T.Tensor:
        """Embed union crops, `[N, 1, S, S]` -> `[N, C, s, s]`."""
        self._require(Variant.FULL, Variant.NO_ATTENTION)
        return self.table_embedder(self._check_images(images))

    def channel_attention(self, e_a: T.Tensor, e_b: T.Tensor) -> T.Tensor:
        """Channel gate `[N, C, 1, 1]` of two cell embeddings."""
        self._require(Variant.FULL)
        logits = self._gate_logits(self.channel_mlp, e_a, e_b)
        return T.reshape(T.sigmoid(logits), (-1, self.config.channels, 1, 1))

    def spatial_attention(self, e_a: T.Tensor, e_b: T.Tensor) -> T.Tensor:
        """Spatial gate `[N, 1, s, s]` of two cell embeddings."""
        self._require(Variant.FULL)
        side = self.config.embedding_size
        logits = self._gate_logits(self.spatial_mlp, e_a, e_b)
        return T.reshape(T.sigmoid(logits), (-1, 1, side, side))

    def attention(self, e_a: T.Tensor, e_b: T.Tensor) -> T.Tensor:
        """Combined gate `[N, C, s, s]`, the product of both gates."""
        return T.mul(self.channel_attention(e_a, e_b), self.spatial_attention(e_a, e_b))

    def classify(
        self, table_features: T.Tensor, attention: Optional[T.Tensor] = None
    ) -> T.Tensor:
        """Logits `[N, 3]` of (optionally gated) union-crop features."""
        self._require(Variant.FULL, Variant.NO_ATTENTION)
        if attention is None:
            return self.classifier(T.flatten(table_features))
        fused = T.mul(attention, table_features)
        return self.classifier(T.flatten(fused))

    def forward(self, batch: PairBatch) -> T.Tensor:
        """Logits `[N, 3]` of the pairs in `batch`.

        Raises:
            ConfigError: The batch lacks the inputs the variant needs.
        """
        variant = self.config.variant
        if variant == Variant.POSITION_ONLY:
            return self.position_mlp(T.Tensor(batch.positions.astype(self.dtype)))
        if not batch.has_images:
            raise ConfigError(f"Variant {variant.value} needs cell and union images")

        union = self.embed_table(self._tensor(batch.union))
        if variant == Variant.NO_ATTENTION:
            return self.classify(union)
        # Both cells go through the embedder as one batch, so they share
        # the batch normalization statistics in training mode.
        cells = self._tensor(np.concatenate([batch.cell_a, batch.cell_b]))
        e_a, e_b = T.split(self.embed_cell(cells), len(batch))
        return self.classify(union, self.attention(e_a, e_b))

    __call__ = forward

    def predict_proba(self, batch: PairBatch) -> np.ndarray:
        """Class probabilities `[N, 3]` in evaluation mode."""
        self.eval()
        return T.softmax(self.forward(batch).data.astype(np.float64))

    # ---------------------------------------------------------------- IMPLEMENTATION

    def _tensor(self, images: np.ndarray) -> T.Tensor:
        """Wrap an input array in the model dtype."""
        return T.Tensor(np.asarray(images, dtype=self.dtype))

    def _check_images(self, images: T.Tensor) -> T.Tensor:
        """Fail on inputs of the wrong size."""
        side = self.config.input_size
        if images.data.ndim != 4 or images.shape[1:] != (1, side, side):
            raise T.ShapeError(f"Expected [N, 1, {side}, {side}]: {images.shape}")
        return images

    def _gate_logits(self, mlp: Mlp, e_a: T.Tensor, e_b: T.Tensor) -> T.Tensor:
        """`f(flatten(e_a)) + f(flatten(e_b))`."""
        if e_a.shape != e_b.shape:
            raise T.ShapeError(f"Embeddings differ in shape: {e_a.shape}, {e_b.shape}")
        return T.add(mlp(T.flatten(e_a)), mlp(T.flatten(e_b)))

    def _require(self, *variants: Variant) -> None:
        """Check the stage exists in this variant."""
        if self.config.variant not in variants:
            raise ConfigError(f"Variant {self.config.variant.value} has no such stage")


def build_model(config: ModelConfig) -> RelationModel:
    """Create a freshly initialized model."""
    model = RelationModel(config)
    LOG.info(
        "Model %s: %s parameters in %s tensors.",
        config.variant.value,
        model.parameter_count,
        len(model.params()),
    )
    return model


def _config_from_dict(cls, data: Mapping[str, Any]):
    """Build a config dataclass from a dict, rejecting unknown keys."""
    names = {field.name for field in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"Unknown {cls.__name__} keys: {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as ex:
        raise ConfigError(f"Invalid {cls.__name__}: {ex}") from ex
