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

"""Test grayscale image operations."""

import numpy as np
import pytest

from table_relations import imaging
from table_relations.imaging import GrayImage, ImagingError
from table_relations.table import BBox, RelationLabel
from table_relations.training import RelationPrediction

from .conftest import draw_table


def ramp(height, width):
    """Image with distinct intensities."""
    pixels = np.arange(height * width) % 256
    return GrayImage(pixels.astype(np.uint8).reshape(height, width))


def test_crop_is_pixel_exact():
    """Crops copy the box region, both corners included."""
    image = ramp(10, 12)
    part = imaging.crop(image, BBox(2, 3, 5, 4))
    assert part.pixels.shape == (2, 4)
    assert (part.pixels == image.pixels[3:5, 2:6]).all()

    print("Union crop covers both boxes.")
    union = imaging.union_crop(image, BBox(0, 0, 1, 1), BBox(4, 6, 5, 7))
    assert (union.pixels == image.pixels[0:8, 0:6]).all()


@pytest.mark.parametrize(
    "box", [BBox(5, 0, 2, 3), BBox(-1, 0, 3, 3), BBox(0, 0, 12, 3), BBox(0, 0, 3, 10)]
)
def test_bad_crops(box):
    """Degenerate and out-of-bounds boxes are rejected."""
    with pytest.raises(ImagingError):
        imaging.crop(ramp(10, 12), box)


def test_resize_pad_small_image_is_only_padded():
    """An image which fits is copied to the top-left corner."""
    image = ramp(3, 5)
    result = imaging.resize_pad(image, 8, 8)
    assert result.pixels.shape == (8, 8)
    assert (result.pixels[:3, :5] == image.pixels).all()
    assert (result.pixels[3:, :] == imaging.BACKGROUND).all()
    assert (result.pixels[:, 5:] == imaging.BACKGROUND).all()


def test_resize_pad_keeps_aspect_ratio():
    """A wide image is scaled to the target width and padded below."""
    image = GrayImage(np.zeros((10, 40), dtype=np.uint8))
    result = imaging.resize_pad(image, 8, 8)
    assert (result.pixels[:2, :] == 0).all(), "Scaled ink must stay black!"
    assert (result.pixels[2:, :] == imaging.BACKGROUND).all()


def test_resize_pad_errors():
    """Zero-area inputs and targets fail."""
    with pytest.raises(ImagingError):
        imaging.resize_pad(GrayImage(np.zeros((0, 4), dtype=np.uint8)), 8, 8)
    with pytest.raises(ImagingError):
        imaging.resize_pad(ramp(2, 2), 0, 8)


def test_network_input_range():
    """Ink becomes 1 and background 0."""
    values = imaging.to_network_input(np.array([[0, 255, 51]], dtype=np.uint8))
    assert values.dtype == np.float32
    assert np.allclose(values, [[1.0, 0.0, 0.8]])


def test_png_roundtrip(tmp_path):
    """Saved images load back unchanged."""
    image = ramp(7, 9)
    imaging.save_image(image, tmp_path / "sub" / "img.png")
    loaded = imaging.load_image(tmp_path / "sub" / "img.png")
    assert (loaded.pixels == image.pixels).all()

    with pytest.raises(ImagingError):
        imaging.load_image(tmp_path / "missing.png")
    (tmp_path / "junk.png").write_bytes(b"not an image")
    with pytest.raises(ImagingError):
        imaging.load_image(tmp_path / "junk.png")


def test_render_overlay_marks_mismatches(sample):
    """Predicted edges which disagree with the truth are red."""
    table, image = sample
    truth = imaging.render_overlay(image, table)
    assert truth.shape == (table.height, table.width, 3)
    assert (truth == imaging.HORIZONTAL_COLOR).all(axis=2).any()
    assert not (truth == imaging.MISMATCH_COLOR).all(axis=2).any()

    print("Predict a vertical edge between two row neighbors.")
    predictions = dict(table.relations)
    predictions[(2, 3)] = RelationLabel.VERTICAL
    overlay = imaging.render_overlay(image, table, predictions)
    assert (overlay == imaging.MISMATCH_COLOR).all(axis=2).any()


def test_render_overlay_marks_missed_edges(grid_table):
    """A true edge predicted as no relation is highlighted."""
    table = grid_table(1, 2)
    assert table.relations == {(0, 1): RelationLabel.HORIZONTAL}
    prediction = RelationPrediction(
        table_id=table.id,
        pair_ids=np.array([[0, 1]]),
        probabilities=np.array([[1.0, 0.0, 0.0]]),
    )
    assert prediction.relations == {}, "No relation is not an edge!"
    overlay = imaging.render_overlay(draw_table(table), table, prediction.relations)
    assert (overlay == imaging.MISMATCH_COLOR).all(axis=2).any()
    assert not (overlay == imaging.HORIZONTAL_COLOR).all(axis=2).any()
