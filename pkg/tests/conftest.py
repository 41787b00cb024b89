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

"""Auxiliary fixtures to simplify testing."""

from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
import pytest

import table_relations.synthgen
from table_relations.imaging import GrayImage
from table_relations.model import ModelConfig
from table_relations.table import BBox, Cell, Table, derive_relations
from table_relations.training import TrainConfig

# Cell side lengths of the hand-built grids, pixels.
CELL_WIDTH = 40
CELL_HEIGHT = 20

# Large enough to learn synthetic tables, small enough for a CPU.
MEDIUM_MODEL = ModelConfig(
    input_size=32,
    channels=16,
    depth=3,
    attention_hidden=32,
    classifier_hidden=64,
    position_hidden=32,
)


def build_grid_table(
    rows: int,
    cols: int,
    spans: Iterable[Tuple[int, int, int, int]] = (),
    empties: Iterable[Tuple[int, int]] = (),
    table_id: str = "grid",
    text_inset: Optional[int] = 4,
) -> Table:
    """Regular grid table, ids numbered row-major over the cell starts.

    Args:
        rows: Number of grid rows.
        cols: Number of grid columns.
        spans: Grid rectangles `(r0, r1, c0, c1)` merged into one cell.
        empties: `(row, col)` start positions of empty cells.
        table_id: Table id.
        text_inset: Text boxes are the aligned boxes shrunk by this
            many pixels, `None` leaves cells without text boxes.
    """
    spans = list(spans)
    empties = set(empties)
    covered: Dict[Tuple[int, int], Tuple[int, int, int, int]] = {}
    for span in spans:
        for row in range(span[0], span[1] + 1):
            for col in range(span[2], span[3] + 1):
                covered[(row, col)] = span
    cells = []
    for row in range(rows):
        for col in range(cols):
            grid = covered.get((row, col), (row, row, col, col))
            if (grid[0], grid[2]) != (row, col):
                continue
            box = BBox(
                grid[2] * CELL_WIDTH,
                grid[0] * CELL_HEIGHT,
                (grid[3] + 1) * CELL_WIDTH - 1,
                (grid[1] + 1) * CELL_HEIGHT - 1,
            )
            is_empty = (row, col) in empties
            text_box = None
            if text_inset is not None and not is_empty:
                text_box = BBox(
                    box.x1 + text_inset,
                    box.y1 + text_inset,
                    box.x2 - text_inset,
                    box.y2 - text_inset,
                )
            cells.append(
                Cell(
                    id=len(cells),
                    aligned_box=box,
                    grid=grid,
                    text_box=text_box,
                    is_empty=is_empty,
                )
            )
    table = Table(
        id=table_id,
        image_path=f"{table_id}.png",
        width=cols * CELL_WIDTH,
        height=rows * CELL_HEIGHT,
        cells=tuple(cells),
    )
    return derive_relations(table)


def draw_table(table: Table) -> GrayImage:
    """White image with a dark block inside each non-empty text box."""
    pixels = np.full((table.height, table.width), 255, dtype=np.uint8)
    for cell in table.cells:
        if cell.is_empty or cell.text_box is None:
            continue
        box = cell.text_box
        pixels[box.y1 : box.y2 + 1, box.x1 : box.x2 + 1] = 40 + 10 * (cell.id % 10)
    return GrayImage(pixels)


@pytest.fixture
def grid_table():
    """Builder of regular grid tables, see `build_grid_table`."""
    return build_grid_table


@pytest.fixture
def sample(grid_table):
    """3x3 table with a header span and an empty cell, with its image."""
    table = grid_table(3, 3, spans=[(0, 0, 0, 1)], empties=[(2, 1)], table_id="s")
    return table, draw_table(table)


@pytest.fixture
def tiny_model_config():
    """Builder of small model configs, fast enough for unit tests."""

    def build(variant="full", dtype="float32", seed=0) -> ModelConfig:
        return ModelConfig(
            variant=variant,
            input_size=8,
            channels=3,
            depth=2,
            attention_hidden=6,
            classifier_hidden=8,
            position_hidden=8,
            seed=seed,
            dtype=dtype,
        )

    return build


@pytest.fixture
def tiny_train_config(tiny_model_config):
    """Builder of short training configs on the tiny model."""

    def build(variant="full", **overrides) -> TrainConfig:
        settings = dict(
            epochs=2,
            batch_size=16,
            lr=0.01,
            k=4,
            patience=5,
            variant=variant,
            model=tiny_model_config(variant),
        )
        settings.update(overrides)
        return TrainConfig(**settings)

    return build


@pytest.fixture
def synth_params():
    """Small, fast generator parameters."""
    return table_relations.synthgen.GenParams(
        seed=3, rows=(2, 4), cols=(2, 3), span_probability=0.2, empty_probability=0.1
    )


@pytest.fixture
def dataset_dir(tmp_path, synth_params):
    """Synthetic dataset of ten tables written into a temporary dir."""
    root = tmp_path / "data"
    table_relations.synthgen.write_dataset(synth_params, 10, root)
    return root


def labels_of(pairs: Sequence) -> Dict[Tuple[int, int], int]:
    """Pair key -> label of candidate pairs."""
    return {(p.cell_id_a, p.cell_id_b): int(p.label) for p in pairs}
