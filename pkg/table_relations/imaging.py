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

"""Grayscale images: I/O, crops, letterbox resizing and overlays.

Images are 8-bit grayscale with dark ink (0) on white background (255).
Before entering the network an image is converted to floats in [0, 1]
with ink = 1, so the background padding becomes zero.
"""

import dataclasses
import logging
import pathlib
from typing import Mapping, Optional

import numpy as np
import PIL.Image
import PIL.ImageDraw

from .error import TableRelationsError
from .table import BBox, RelationKey, RelationLabel, Table

# Module logger.
LOG = logging.getLogger(__name__)

# Background intensity.
BACKGROUND = 255

# Overlay colors.
BOX_COLOR = (128, 128, 128)
HORIZONTAL_COLOR = (0, 160, 0)
VERTICAL_COLOR = (0, 64, 224)
MISMATCH_COLOR = (224, 0, 0)


class ImagingError(TableRelationsError):
    """Invalid crop box, image size, or unreadable image file."""


@dataclasses.dataclass(frozen=True)
class GrayImage:
    """Row-major 8-bit grayscale image, shape `(height, width)`."""

    pixels: np.ndarray

    def __post_init__(self):
        """Check the pixel buffer."""
        assert self.pixels.ndim == 2, f"2D pixels expected, got {self.pixels.shape}!"
        assert self.pixels.dtype == np.uint8, f"uint8 expected: {self.pixels.dtype}!"

    @property
    def width(self) -> int:
        """Image width in pixels."""
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        """Image height in pixels."""
        return int(self.pixels.shape[0])

    @classmethod
    def blank(cls, height: int, width: int) -> "GrayImage":
        """Background-filled image."""
        return cls(np.full((height, width), BACKGROUND, dtype=np.uint8))


# ------------------------------------------------------------------------------- I/O


def load_image(path) -> GrayImage:
    """Read a PNG (any mode) as grayscale.

    Raises:
        ImagingError: The file is missing or not an image.
    """
    try:
        with PIL.Image.open(path) as image:
            return GrayImage(np.asarray(image.convert("L"), dtype=np.uint8).copy())
    except FileNotFoundError as ex:
        raise ImagingError(f"Image file {path} does not exist") from ex
    except (OSError, PIL.UnidentifiedImageError) as ex:
        raise ImagingError(f"Cannot read image {path}: {ex}") from ex


def save_image(image: GrayImage, path) -> None:
    """Write an 8-bit grayscale PNG."""
    pathlib.Path(path).parent.mkdir(parents=True, exist_ok=True)
    PIL.Image.fromarray(image.pixels).save(path, format="PNG")


def save_rgb(pixels: np.ndarray, path) -> None:
    """Write a 24-bit RGB PNG from an `(h, w, 3)` uint8 array."""
    pathlib.Path(path).parent.mkdir(parents=True, exist_ok=True)
    PIL.Image.fromarray(pixels).save(path, format="PNG")


# --------------------------------------------------------------------------- OPERATIONS


def crop(image: GrayImage, box: BBox) -> GrayImage:
    """Pixel-exact copy of the box region, corners inclusive.

    Raises:
        ImagingError: The box is degenerate or leaves the image.
    """
    if box.is_degenerate or not box.within(image.width, image.height):
        raise ImagingError(
            f"Box {box} does not fit the {image.width}x{image.height} image"
        )
    return GrayImage(image.pixels[box.y1 : box.y2 + 1, box.x1 : box.x2 + 1].copy())


def union_crop(image: GrayImage, box_a: BBox, box_b: BBox) -> GrayImage:
    """Crop the tightest region containing both boxes."""
    return crop(image, box_a.union(box_b))


def resize_pad(image: GrayImage, target_h: int, target_w: int) -> GrayImage:
    """Letterbox the image into `target_h` x `target_w`.

    An image which fits the target is only padded. A larger one is
    first scaled by `min(target_h / h, target_w / w)` with bilinear
    interpolation, so it fits in both dimensions and keeps its aspect
    ratio. Padding is background on the right and at the bottom.

    Interpolated intensities are floored, so faint ink left after a
    strong downscale never rounds up to pure background.

    Raises:
        ImagingError: Zero-area input or non-positive target.
    """
    if target_h < 1 or target_w < 1:
        raise ImagingError(f"Target size {target_h}x{target_w} is not positive")
    height, width = image.pixels.shape
    if height == 0 or width == 0:
        raise ImagingError("Cannot resize a zero-area image")

    pixels = image.pixels
    if height > target_h or width > target_w:
        ratio = min(target_h / height, target_w / width)
        new_h = min(target_h, max(1, round(height * ratio)))
        new_w = min(target_w, max(1, round(width * ratio)))
        scaled = PIL.Image.fromarray(pixels.astype(np.float32)).resize(
            (new_w, new_h), resample=PIL.Image.Resampling.BILINEAR
        )
        pixels = np.floor(np.clip(np.asarray(scaled), 0, BACKGROUND)).astype(np.uint8)

    result = np.full((target_h, target_w), BACKGROUND, dtype=np.uint8)
    result[: pixels.shape[0], : pixels.shape[1]] = pixels
    return GrayImage(result)


def to_network_input(pixels: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Convert uint8 intensities to floats in [0, 1] with ink = 1."""
    return (BACKGROUND - pixels.astype(dtype)) / dtype(BACKGROUND)


def render_overlay(
    image: GrayImage,
    table: Table,
    predictions: Optional[Mapping[RelationKey, RelationLabel]] = None,
) -> np.ndarray:
    """Draw cell boxes and relation edges over the table image.

    Without `predictions` the ground-truth relations of the table are
    drawn. With `predictions` the predicted edges are drawn and every
    pair whose prediction differs from the ground truth is highlighted.
    True edges absent from `predictions` count as predicted `NONE`, so
    missed edges are highlighted too.

    Returns:
        `(height, width, 3)` uint8 RGB array.
    """
    canvas = PIL.Image.fromarray(image.pixels).convert("RGB")
    draw = PIL.ImageDraw.Draw(canvas)
    for cell in table.cells:
        box = table.box(cell.id)
        draw.rectangle((box.x1, box.y1, box.x2, box.y2), outline=BOX_COLOR)

    edges = dict(table.relations)
    if predictions is not None:
        edges = {key: RelationLabel.NONE for key in edges}
        edges.update(predictions)
    for key in sorted(edges):
        label = RelationLabel(edges[key])
        truth = table.label(*key)
        if predictions is not None and label != truth:
            color = MISMATCH_COLOR
        elif label == RelationLabel.HORIZONTAL:
            color = HORIZONTAL_COLOR
        elif label == RelationLabel.VERTICAL:
            color = VERTICAL_COLOR
        else:
            continue
        start, end = table.box(key[0]).center, table.box(key[1]).center
        draw.line((start, end), fill=color, width=2)
    return np.asarray(canvas, dtype=np.uint8).copy()
