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

"""Seeded synthetic tables with ground-truth annotations.

Each table is a grid with jittered row heights and column widths.
Random adjacent grid rectangles merge into spanning cells, some cells
stay empty, and every other cell gets a line of dark rectangles
("glyph blobs") strictly inside its box in place of text. The tight
box around the blobs is the text box of the cell. Borders are drawn
according to the border style of the table.

Table `index` of a dataset is generated from the seed sequence
`(seed, index)` only, so any table can be regenerated alone and tables
can be produced concurrently.
"""

import dataclasses
import json
import logging
import pathlib
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import PIL.Image
import PIL.ImageDraw

from . import imaging
from .dataset import MANIFEST_NAME, SPLITS, image_file, table_file
from .error import ConfigError, TableRelationsError
from .imaging import GrayImage
from .table import BBox, Cell, Table, derive_relations, save_table, validate_table
from .workers import parallel_map

# Module logger.
LOG = logging.getLogger(__name__)

BORDER_STYLES = ("full", "partial", "none")
# Share of tables in the train, val and test splits.
SPLIT_RATIOS = (0.6, 0.2, 0.2)
# Smallest blob area inside a cell, pixels per side.
MIN_INNER = 3


class GenerationError(TableRelationsError):
    """No feasible layout within the retry budget."""


@dataclasses.dataclass(frozen=True)
class StyleProfile:
    """Visual style of a family of tables."""

    name: str
    border_style: str
    line_width: int
    # Free space between the cell border and its blobs, pixels.
    padding: int
    blob_height: Tuple[int, int]
    # Gap between blobs of one line, pixels.
    blob_gap: Tuple[int, int]
    # Darkest and lightest blob intensity.
    ink: Tuple[int, int]
    # Horizontal placement of the blob line: left, center or right.
    align: str


PROFILES: Dict[str, StyleProfile] = {
    "dense": StyleProfile(
        name="dense",
        border_style="full",
        line_width=2,
        padding=2,
        blob_height=(4, 9),
        blob_gap=(2, 4),
        ink=(0, 60),
        align="left",
    ),
    "sparse": StyleProfile(
        name="sparse",
        border_style="none",
        line_width=1,
        padding=5,
        blob_height=(3, 7),
        blob_gap=(3, 6),
        ink=(20, 110),
        align="center",
    ),
}


@dataclasses.dataclass(frozen=True)
class GenParams:
    """Generator parameters; ranges are inclusive `(min, max)`."""

    seed: int = 0
    rows: Tuple[int, int] = (3, 8)
    cols: Tuple[int, int] = (2, 6)
    span_probability: float = 0.1
    # `None` takes the border style of the profile.
    border_style: Optional[str] = None
    empty_probability: float = 0.1
    cell_width: Tuple[int, int] = (40, 110)
    cell_height: Tuple[int, int] = (18, 34)
    # Share of the free cell width covered by blobs, upper bound.
    ink_density: float = 0.7
    profile: str = "dense"
    # White space around the table, pixels.
    margin: int = 8
    max_retries: int = 20

    def __post_init__(self):
        """Normalize ranges and check the values.

        Raises:
            ConfigError: Invalid value.
        """
        for name in ("rows", "cols", "cell_width", "cell_height"):
            value = tuple(int(v) for v in getattr(self, name))
            if len(value) != 2 or value[0] < 1 or value[0] > value[1]:
                raise ConfigError(f"{name} must be a range 1 <= min <= max: {value}")
            object.__setattr__(self, name, value)
        for name in ("span_probability", "empty_probability", "ink_density"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]: {getattr(self, name)}")
        if self.profile not in PROFILES:
            raise ConfigError(f"Unknown style profile {self.profile!r}")
        if self.border_style is not None and self.border_style not in BORDER_STYLES:
            raise ConfigError(f"Unknown border style {self.border_style!r}")
        if self.margin < 0 or self.max_retries < 1:
            raise ConfigError("Need margin >= 0 and max_retries >= 1")

    @property
    def style(self) -> StyleProfile:
        """The style profile with the border style override applied."""
        style = PROFILES[self.profile]
        if self.border_style is not None:
            style = dataclasses.replace(style, border_style=self.border_style)
        return style

    def to_dict(self) -> Dict[str, Any]:
        """Plain JSON-compatible dict."""
        result = dataclasses.asdict(self)
        for name in ("rows", "cols", "cell_width", "cell_height"):
            result[name] = list(result[name])
        return result

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GenParams":
        """Inverse of `to_dict`.

        Raises:
            ConfigError: Unknown keys or invalid values.
        """
        names = {field.name for field in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"Unknown GenParams keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as ex:
            raise ConfigError(f"Invalid GenParams: {ex}") from ex


# ------------------------------------------------------------------------ GENERATE


def generate(
    params: GenParams, count: int, jobs: int = 1
) -> List[Tuple[Table, GrayImage]]:
    """Generate `count` tables with their images."""
    return parallel_map(lambda index: generate_table(params, index), range(count), jobs)


def generate_table(params: GenParams, index: int) -> Tuple[Table, GrayImage]:
    """Generate table number `index` of the parameter set.

    Raises:
        GenerationError: No feasible layout after `max_retries` attempts.
    """
    rng = np.random.default_rng([params.seed, index])
    table_id = f"{params.profile}-{params.seed}-{index:05d}"
    for attempt in range(params.max_retries):
        sample = _try_generate(params, rng, table_id)
        if sample is not None:
            table, image = sample
            diagnostics = validate_table(table)
            assert not diagnostics, f"Generated invalid table: {diagnostics}!"
            return table, image
        LOG.debug("Table %s: layout attempt %s infeasible.", table_id, attempt + 1)
    raise GenerationError(
        f"Table {table_id}: no feasible layout in {params.max_retries} attempts"
    )


def write_dataset(
    params: GenParams, count: int, out_dir, jobs: int = 1
) -> Dict[str, List[str]]:
    """Generate tables into a dataset directory and assign splits.

    Returns:
        The split assignment written to the manifest.
    """
    root = pathlib.Path(out_dir)

    def write(index):
        table, image = generate_table(params, index)
        table = dataclasses.replace(table, image_path=f"../images/{table.id}.png")
        imaging.save_image(image, image_file(root, table.id))
        save_table(table, table_file(root, table.id))
        return table.id

    ids = parallel_map(write, range(count), jobs)
    splits = split_ids(ids, params.seed)
    manifest = {"params": params.to_dict(), "count": count, "splits": splits}
    (root / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=1) + "\n", encoding="utf-8"
    )
    LOG.info(
        "Wrote %s tables to %s: %s.",
        count,
        root,
        ", ".join(f"{name} {len(splits[name])}" for name in SPLITS),
    )
    return splits


def split_ids(ids: List[str], seed: int) -> Dict[str, List[str]]:
    """Seeded 60:20:20 assignment of table ids to splits."""
    order = np.random.default_rng([seed, len(ids), 1]).permutation(len(ids))
    n_train = round(len(ids) * SPLIT_RATIOS[0])
    n_val = round(len(ids) * SPLIT_RATIOS[1])
    shuffled = [ids[i] for i in order]
    return {
        "train": sorted(shuffled[:n_train]),
        "val": sorted(shuffled[n_train : n_train + n_val]),
        "test": sorted(shuffled[n_train + n_val :]),
    }


# ------------------------------------------------------------------ IMPLEMENTATION


def _sample(rng: np.random.Generator, bounds: Tuple[int, int], size=None):
    """Uniform integers in an inclusive range."""
    return rng.integers(bounds[0], bounds[1] + 1, size=size)


def _layout_grid(params: GenParams, rng, rows: int, cols: int) -> List[Tuple]:
    """Split the grid into cell rectangles `(r0, r1, c0, c1)`."""
    owner = np.full((rows, cols), -1)
    rects = []
    for row in range(rows):
        for col in range(cols):
            if owner[row, col] >= 0:
                continue
            height, width = 1, 1
            if rng.random() < params.span_probability:
                height = int(rng.integers(1, 3))
                width = int(rng.integers(1, 3)) if height > 1 else 2
                height = min(height, rows - row)
                width = min(width, cols - col)
                while width > 1 and (owner[row, col : col + width] >= 0).any():
                    width -= 1
            owner[row : row + height, col : col + width] = len(rects)
            rects.append((row, row + height - 1, col, col + width - 1))
    return rects


def _try_generate(params: GenParams, rng, table_id: str):
    """One layout attempt, `None` when infeasible."""
    style = params.style
    rows, cols = int(_sample(rng, params.rows)), int(_sample(rng, params.cols))
    widths = _sample(rng, params.cell_width, cols)
    heights = _sample(rng, params.cell_height, rows)
    xs = params.margin + np.concatenate([[0], np.cumsum(widths)])
    ys = params.margin + np.concatenate([[0], np.cumsum(heights)])
    width, height = int(xs[-1]) + params.margin, int(ys[-1]) + params.margin

    rects = _layout_grid(params, rng, rows, cols)
    empty = rng.random(len(rects)) < params.empty_probability
    if (~empty).sum() < min(2, len(rects)):
        return None

    canvas = PIL.Image.new("L", (width, height), color=imaging.BACKGROUND)
    draw = PIL.ImageDraw.Draw(canvas)
    cells = []
    for cell_id, (r0, r1, c0, c1) in enumerate(rects):
        box = BBox(int(xs[c0]), int(ys[r0]), int(xs[c1 + 1]) - 1, int(ys[r1 + 1]) - 1)
        text_box = None
        if not empty[cell_id]:
            text_box = _draw_blobs(draw, rng, style, params.ink_density, box)
            if text_box is None:
                return None
        cells.append(
            Cell(
                id=cell_id,
                aligned_box=box,
                grid=(r0, r1, c0, c1),
                text_box=text_box,
                is_empty=bool(empty[cell_id]),
            )
        )
    _draw_borders(draw, style, cells, rows)

    table = Table(
        id=table_id,
        image_path=f"{table_id}.png",
        width=width,
        height=height,
        cells=tuple(cells),
    )
    pixels = np.asarray(canvas, dtype=np.uint8).copy()
    return derive_relations(table), GrayImage(pixels)


def _draw_blobs(draw, rng, style: StyleProfile, density: float, box: BBox):
    """Draw one line of blobs inside the box, return their tight box."""
    inset = style.line_width + style.padding
    left, right = box.x1 + inset, box.x2 - inset
    top, bottom = box.y1 + inset, box.y2 - inset
    inner_w, inner_h = right - left + 1, bottom - top + 1
    if inner_w < MIN_INNER or inner_h < MIN_INNER:
        return None

    low, high = (min(bound, inner_h) for bound in style.blob_height)
    blob_h = int(rng.integers(low, high + 1))
    line_w = max(MIN_INNER, int(inner_w * rng.uniform(0.2, max(density, 0.2))))
    line_w = min(line_w, inner_w)
    y1 = top + int(rng.integers(0, inner_h - blob_h + 1))
    if style.align == "center":
        x_start = left + (inner_w - line_w) // 2
    elif style.align == "right":
        x_start = right - line_w + 1
    else:
        x_start = left + int(rng.integers(0, inner_w - line_w + 1))

    x, x_end = x_start, x_start + line_w - 1
    blobs = []
    while x <= x_end:
        word_w = int(rng.integers(2, max(3, line_w // 2) + 1))
        x2 = min(x + word_w - 1, x_end)
        blobs.append((x, y1, x2, y1 + blob_h - 1))
        x = x2 + 1 + int(_sample(rng, style.blob_gap))
    for x1, b_y1, x2, b_y2 in blobs:
        draw.rectangle((x1, b_y1, x2, b_y2), fill=int(_sample(rng, style.ink)))
    return BBox(
        min(b[0] for b in blobs),
        min(b[1] for b in blobs),
        max(b[2] for b in blobs),
        max(b[3] for b in blobs),
    )


def _draw_borders(draw, style: StyleProfile, cells: List[Cell], rows: int) -> None:
    """Draw the grid lines of the border style."""
    if style.border_style == "none":
        return
    width = style.line_width
    for cell in cells:
        box = cell.aligned_box
        if style.border_style == "full":
            draw.rectangle((box.x1, box.y1, box.x2, box.y2), outline=0, width=width)
            continue
        # Partial: rules above and below the header row and at the bottom.
        if cell.row_start == 0:
            draw.rectangle((box.x1, box.y1, box.x2, box.y1 + width - 1), fill=0)
        if cell.row_start == 0 or cell.row_end == rows - 1:
            draw.rectangle((box.x1, box.y2 - width + 1, box.x2, box.y2), fill=0)
