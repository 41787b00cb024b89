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

"""Tables, cells, bounding boxes and relations between cells.

A table is a graph: cells are vertices and the relation of two cells is
an edge labeled with `RelationLabel`. Labels are never stored in the
annotation files, they are derived from the grid position of cells:
two cells are connected horizontally when they share a row and touch
each other along a column boundary, vertically when they share a column
and touch along a row boundary.

Relation keys are unordered pairs stored once with the smaller cell id
first. A missing key means `RelationLabel.NONE`.
"""

import dataclasses
import enum
import functools
import itertools
import json
import logging
import os
import pathlib
from typing import Any, Dict, List, Mapping, Optional, Sequence, Set, Tuple

from .error import TableRelationsError

# Module logger.
LOG = logging.getLogger(__name__)

# Grid position of a cell: (row_start, row_end, col_start, col_end).
Grid = Tuple[int, int, int, int]
# Unordered relation key, smaller id first.
RelationKey = Tuple[int, int]


class AnnotationError(TableRelationsError):
    """Malformed or inconsistent table annotation."""

    exit_code = 3

    def __init__(self, message, cell_ids: Sequence[int] = ()):
        """Remember the ids of the offending cells."""
        super().__init__(message)
        self.cell_ids = tuple(cell_ids)

    def __str__(self):
        """Nice string representation."""
        if self.cell_ids:
            return f"{self.message}: cells {list(self.cell_ids)}!"
        return f"{self.message}!"


class RelationLabel(enum.IntEnum):
    """Relation of two cells."""

    NONE = 0
    VERTICAL = 1
    HORIZONTAL = 2


class BBoxMode(str, enum.Enum):
    """Which box of a cell is the operative one."""

    ALIGNED = "aligned"
    TEXT_FOCUSED = "text_focused"


# ------------------------------------------------------------------------- DOMAIN TYPES


@dataclasses.dataclass(frozen=True)
class BBox:
    """Pixel bounding box, both corners inclusive.

    Origin is the top-left image corner, y grows downward.
    """

    x1: int
    y1: int
    x2: int
    y2: int

    @property
    def width(self) -> int:
        """Number of pixel columns covered by the box."""
        return self.x2 - self.x1 + 1

    @property
    def height(self) -> int:
        """Number of pixel rows covered by the box."""
        return self.y2 - self.y1 + 1

    @property
    def center(self) -> Tuple[float, float]:
        """Box center `(x, y)`."""
        return ((self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2)

    @property
    def is_degenerate(self) -> bool:
        """Whether corners are swapped."""
        return self.x2 < self.x1 or self.y2 < self.y1

    def within(self, width: int, height: int) -> bool:
        """Check the box lies inside a `width` x `height` image."""
        return (
            min(self.x1, self.y1, self.x2, self.y2) >= 0
            and self.x2 < width
            and self.y2 < height
        )

    def contains(self, other: "BBox") -> bool:
        """Check `other` lies inside this box."""
        return (
            self.x1 <= other.x1
            and self.y1 <= other.y1
            and other.x2 <= self.x2
            and other.y2 <= self.y2
        )

    def union(self, other: "BBox") -> "BBox":
        """The tightest box containing both boxes."""
        return BBox(
            min(self.x1, other.x1),
            min(self.y1, other.y1),
            max(self.x2, other.x2),
            max(self.y2, other.y2),
        )

    def to_list(self) -> List[int]:
        """Annotation file representation."""
        return [self.x1, self.y1, self.x2, self.y2]

    @classmethod
    def from_list(cls, value: Any) -> "BBox":
        """Parse `[x1, y1, x2, y2]`."""
        if (
            not isinstance(value, (list, tuple))
            or len(value) != 4
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in value)
        ):
            raise AnnotationError(f"Box must be four integers, got {value!r}")
        return cls(*value)


@dataclasses.dataclass(frozen=True)
class Cell:
    """Table cell with its grid position and boxes."""

    id: int
    aligned_box: BBox
    grid: Grid
    text_box: Optional[BBox] = None
    is_empty: bool = False

    @property
    def row_start(self) -> int:
        """First grid row."""
        return self.grid[0]

    @property
    def row_end(self) -> int:
        """Last grid row (inclusive)."""
        return self.grid[1]

    @property
    def col_start(self) -> int:
        """First grid column."""
        return self.grid[2]

    @property
    def col_end(self) -> int:
        """Last grid column (inclusive)."""
        return self.grid[3]

    def box(self, mode: BBoxMode) -> BBox:
        """The box used in the given bounding box regime."""
        if mode == BBoxMode.TEXT_FOCUSED and self.text_box is not None:
            return self.text_box
        return self.aligned_box

    def grid_positions(self):
        """Iterate over `(row, col)` grid slots covered by the cell."""
        return itertools.product(
            range(self.row_start, self.row_end + 1),
            range(self.col_start, self.col_end + 1),
        )


@dataclasses.dataclass(frozen=True)
class Table:
    """A table image reference, its cells, and the relation set."""

    id: str
    image_path: str
    width: int
    height: int
    cells: Tuple[Cell, ...]
    relations: Mapping[RelationKey, RelationLabel] = dataclasses.field(
        default_factory=dict
    )
    bbox_mode: BBoxMode = BBoxMode.ALIGNED

    @functools.cached_property
    def _cells_by_id(self) -> Dict[int, Cell]:
        """Cell index."""
        return {cell.id: cell for cell in self.cells}

    @property
    def cell_ids(self) -> List[int]:
        """Ids of all cells in the annotation order."""
        return [cell.id for cell in self.cells]

    def cell(self, cell_id: int) -> Cell:
        """Cell by its id."""
        try:
            return self._cells_by_id[cell_id]
        except KeyError as ex:
            raise AnnotationError(
                f"Table {self.id} has no such cell", [cell_id]
            ) from ex

    def box(self, cell_id: int) -> BBox:
        """Operative box of the cell according to `bbox_mode`."""
        return self.cell(cell_id).box(self.bbox_mode)

    def label(self, cell_a: int, cell_b: int) -> RelationLabel:
        """Relation of two cells, symmetric in its arguments."""
        return RelationLabel(
            self.relations.get(relation_key(cell_a, cell_b), RelationLabel.NONE)
        )

    def edges(self, label: RelationLabel) -> List[RelationKey]:
        """Sorted relation keys with the given label."""
        return sorted(key for key, value in self.relations.items() if value == label)


@dataclasses.dataclass(frozen=True)
class Diagnostic:
    """Single table invariant violation."""

    code: str
    message: str
    cell_ids: Tuple[int, ...] = ()


def relation_key(cell_a: int, cell_b: int) -> RelationKey:
    """Normalize an unordered cell pair."""
    assert cell_a != cell_b, f"Cell {cell_a} cannot relate to itself!"
    return (cell_a, cell_b) if cell_a < cell_b else (cell_b, cell_a)


# --------------------------------------------------------------------------- OPERATIONS


def derive_relations(table: Table) -> Table:
    """Label cell pairs by grid adjacency.

    Every annotated cell is a vertex, empty cells included: in the
    aligned regime empty cells are annotated and take part in the
    structure. Only labels `VERTICAL` and `HORIZONTAL` are stored.

    Raises:
        AnnotationError: Grid rectangles overlap.
    """
    relations, _ = _walk_grid(table.cells, transparent=frozenset())
    LOG.debug(
        "Table %s: %s cells, %s relations derived.",
        table.id,
        len(table.cells),
        len(relations),
    )
    return dataclasses.replace(table, relations=relations)


def apply_empty_cell_policy(table: Table, mode: BBoxMode) -> Table:
    """Adapt the table to the bounding box regime.

    The aligned regime keeps the table as is. The text-focused regime
    discards empty cells and connects the cells which were separated by
    a chain of empty cells only: horizontally along a row, vertically
    along a column. Surviving cells switch to their text boxes.

    Raises:
        AnnotationError: A non-empty cell has no text box.
    """
    mode = BBoxMode(mode)
    if mode == BBoxMode.ALIGNED:
        return table

    missing = [c.id for c in table.cells if not c.is_empty and c.text_box is None]
    if missing:
        raise AnnotationError(
            f"Table {table.id}: text-focused regime needs text boxes", missing
        )

    empties = frozenset(c.id for c in table.cells if c.is_empty)
    _, bridged = _walk_grid(table.cells, transparent=empties)
    relations = {
        key: label
        for key, label in table.relations.items()
        if key[0] not in empties and key[1] not in empties
    }
    for key, label in bridged.items():
        relations.setdefault(key, label)
    if empties:
        LOG.debug(
            "Table %s: %s empty cells discarded, %s relations bridged.",
            table.id,
            len(empties),
            len(bridged),
        )
    return dataclasses.replace(
        table,
        cells=tuple(c for c in table.cells if not c.is_empty),
        relations=relations,
        bbox_mode=BBoxMode.TEXT_FOCUSED,
    )


def validate_table(table: Table) -> List[Diagnostic]:
    """Collect all invariant violations of the table.

    Returns:
        The list of diagnostics, empty for a well-formed table.
    """
    diagnostics: List[Diagnostic] = []

    def report(code, message, *cell_ids):
        diagnostics.append(Diagnostic(code, message, tuple(cell_ids)))

    seen: Set[int] = set()
    for cell in table.cells:
        if cell.id in seen:
            report("duplicate-id", f"Cell id {cell.id} is used twice", cell.id)
        seen.add(cell.id)

        box = cell.aligned_box
        if box.is_degenerate:
            report("degenerate-box", f"Cell {cell.id} box {box} is degenerate", cell.id)
        elif not box.within(table.width, table.height):
            report(
                "box-out-of-image",
                f"Cell {cell.id} box {box} leaves the "
                f"{table.width}x{table.height} image",
                cell.id,
            )
        if cell.text_box is not None:
            if cell.text_box.is_degenerate:
                report(
                    "degenerate-box",
                    f"Cell {cell.id} text box {cell.text_box} is degenerate",
                    cell.id,
                )
            elif not box.contains(cell.text_box):
                report(
                    "text-box-outside",
                    f"Cell {cell.id} text box is not inside its aligned box",
                    cell.id,
                )
        elif table.bbox_mode == BBoxMode.TEXT_FOCUSED and not cell.is_empty:
            report("missing-text-box", f"Cell {cell.id} has no text box", cell.id)

        r_start, r_end, c_start, c_end = cell.grid
        if min(cell.grid) < 0 or r_start > r_end or c_start > c_end:
            message = f"Cell {cell.id} has invalid grid {cell.grid}"
            report("invalid-grid", message, cell.id)

    owners: Dict[Tuple[int, int], int] = {}
    overlaps: Set[RelationKey] = set()
    for cell in table.cells:
        for pos in cell.grid_positions():
            other = owners.setdefault(pos, cell.id)
            if other != cell.id:
                overlaps.add(relation_key(other, cell.id))
    for key in sorted(overlaps):
        report("grid-overlap", f"Cells {key[0]} and {key[1]} overlap in the grid", *key)

    for key, label in table.relations.items():
        cell_a, cell_b = key
        dangling = [i for i in key if i not in seen]
        if dangling:
            report("dangling-id", f"Relation {key} references missing cells", *dangling)
        if cell_a == cell_b:
            report("self-relation", f"Relation {key} connects a cell to itself", cell_a)
        elif cell_a > cell_b:
            report(
                "asymmetric-key",
                f"Relation {key} is not stored with the smaller id first",
                *key,
            )
        if label not in (RelationLabel.VERTICAL, RelationLabel.HORIZONTAL):
            report("invalid-label", f"Relation {key} has label {label!r}", *key)

    return diagnostics


# --------------------------------------------------------------------- ANNOTATION FILES


def table_from_dict(data: Mapping[str, Any]) -> Table:
    """Build a table from its annotation dict and derive its relations.

    Raises:
        AnnotationError: Missing fields, wrong field types or
            overlapping grid rectangles.
    """
    try:
        cells = []
        for raw in data["cells"]:
            text_box = raw.get("text_box")
            grid = raw["grid"]
            if len(grid) != 4 or not all(isinstance(v, int) for v in grid):
                raise AnnotationError(f"Cell grid must be four integers, got {grid!r}")
            cells.append(
                Cell(
                    id=int(raw["id"]),
                    aligned_box=BBox.from_list(raw["aligned_box"]),
                    grid=tuple(grid),  # type: ignore[arg-type]
                    text_box=None if text_box is None else BBox.from_list(text_box),
                    is_empty=bool(raw.get("empty", False)),
                )
            )
        table = Table(
            id=str(data["id"]),
            image_path=str(data["image"]),
            width=int(data["width"]),
            height=int(data["height"]),
            cells=tuple(cells),
        )
    except (AttributeError, KeyError, TypeError, ValueError) as ex:
        raise AnnotationError(f"Malformed annotation: {ex!r}") from ex
    return derive_relations(table)


def table_to_dict(table: Table) -> Dict[str, Any]:
    """Annotation dict of the table; relations are not stored."""
    return {
        "id": table.id,
        "image": table.image_path,
        "width": table.width,
        "height": table.height,
        "cells": [
            {
                "id": cell.id,
                "aligned_box": cell.aligned_box.to_list(),
                "text_box": None if cell.text_box is None else cell.text_box.to_list(),
                "grid": list(cell.grid),
                "empty": cell.is_empty,
            }
            for cell in table.cells
        ],
    }


def load_table(path) -> Table:
    """Read an annotation file.

    A relative image path is resolved against the annotation directory.

    Raises:
        AnnotationError: The file is missing, not JSON, or malformed.
    """
    path = pathlib.Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as ex:
        raise AnnotationError(f"Annotation file {path} does not exist") from ex
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as ex:
        raise AnnotationError(f"Cannot read annotation {path}: {ex}") from ex
    if not isinstance(data, dict):
        raise AnnotationError(f"Annotation {path} is not a JSON object")
    table = table_from_dict(data)
    image_path = pathlib.Path(table.image_path)
    if not image_path.is_absolute():
        image_path = path.parent / image_path
    return dataclasses.replace(table, image_path=str(image_path))


def save_table(table: Table, path) -> None:
    """Write an annotation file, image path relative to its directory."""
    path = pathlib.Path(path)
    data = table_to_dict(table)
    image_path = pathlib.Path(table.image_path)
    if image_path.is_absolute():
        data["image"] = os.path.relpath(image_path, path.parent)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=1) + "\n", encoding="utf-8")


# ----------------------------------------------------------------------- IMPLEMENTATION


def _walk_grid(
    cells: Sequence[Cell], transparent: frozenset
) -> Tuple[Dict[RelationKey, RelationLabel], Dict[RelationKey, RelationLabel]]:
    """Connect each cell with its right and bottom neighbors.

    From every grid row of a cell walk right (and from every column
    walk down) skipping `transparent` cells; the first opaque cell met
    is a neighbor. A hole in the grid stops the walk.

    Returns:
        All relations found, and the subset which crossed at least one
        transparent cell.
    """
    owners: Dict[Tuple[int, int], Cell] = {}
    for cell in cells:
        for pos in cell.grid_positions():
            other = owners.setdefault(pos, cell)
            if other is not cell:
                raise AnnotationError("Grid rectangles overlap", [other.id, cell.id])

    relations: Dict[RelationKey, RelationLabel] = {}
    bridged: Dict[RelationKey, RelationLabel] = {}

    def end(cell, label):
        """Last grid slot of the cell along the walking direction."""
        return cell.col_end if label == RelationLabel.HORIZONTAL else cell.row_end

    def walk(cell, lane, step, label):
        # `step` moves a (lane, offset) position to the grid slot.
        offset = end(cell, label) + 1
        crossed = False
        while True:
            other = owners.get(step(lane, offset))
            if other is None:
                return
            if other.id in transparent:
                crossed = True
                offset = end(other, label) + 1
                continue
            key = relation_key(cell.id, other.id)
            relations[key] = label
            if crossed:
                bridged[key] = label
            return

    for cell in cells:
        if cell.id in transparent:
            continue
        for row in range(cell.row_start, cell.row_end + 1):
            walk(cell, row, lambda r, c: (r, c), RelationLabel.HORIZONTAL)
        for col in range(cell.col_start, cell.col_end + 1):
            walk(cell, col, lambda c, r: (r, c), RelationLabel.VERTICAL)

    return relations, bridged
