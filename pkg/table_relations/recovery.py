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

"""Rows and columns of a table from its relation graph.

The first row is found by a breadth-first search along horizontal edges
starting from the top-most cell (ties: left-most, then smallest id).
Removing that row and repeating yields all rows in top-down order.
Columns are recovered the same way along vertical edges, starting from
the left-most cell. Every cell lands in exactly one row and exactly one
column: a cell spanning several rows belongs to the first row extracted
that contains it.
"""

import collections
import dataclasses
import itertools
import logging
from typing import Any, Dict, Iterable, List, Mapping, Optional, Set, Tuple

from .error import TableRelationsError
from .table import BBox, RelationKey, RelationLabel, Table

# Module logger.
LOG = logging.getLogger(__name__)

Groups = List[List[int]]


class RecoveryError(TableRelationsError):
    """Invalid relation graph or mismatching structures."""


@dataclasses.dataclass(frozen=True)
class RelationGraph:
    """Cells with their boxes and symmetric adjacency lists."""

    boxes: Mapping[int, BBox]
    horizontal: Mapping[int, Set[int]]
    vertical: Mapping[int, Set[int]]

    @classmethod
    def from_relations(
        cls, boxes: Mapping[int, BBox], relations: Mapping[RelationKey, RelationLabel]
    ) -> "RelationGraph":
        """Build the adjacency lists of labeled cell pairs.

        Raises:
            RecoveryError: A relation references an unknown cell.
        """
        horizontal: Dict[int, Set[int]] = {cell_id: set() for cell_id in boxes}
        vertical: Dict[int, Set[int]] = {cell_id: set() for cell_id in boxes}
        for (cell_a, cell_b), label in relations.items():
            if cell_a not in boxes or cell_b not in boxes:
                raise RecoveryError(
                    f"Relation ({cell_a}, {cell_b}) references an unknown cell"
                )
            if label == RelationLabel.HORIZONTAL:
                adjacency = horizontal
            elif label == RelationLabel.VERTICAL:
                adjacency = vertical
            else:
                continue
            adjacency[cell_a].add(cell_b)
            adjacency[cell_b].add(cell_a)
        return cls(dict(boxes), horizontal, vertical)

    @classmethod
    def from_table(
        cls,
        table: Table,
        relations: Optional[Mapping[RelationKey, RelationLabel]] = None,
    ) -> "RelationGraph":
        """Graph of a table with its own or the given (predicted) relations."""
        boxes = {cell_id: table.box(cell_id) for cell_id in table.cell_ids}
        return cls.from_relations(
            boxes, table.relations if relations is None else relations
        )

    @property
    def cell_ids(self) -> List[int]:
        """Sorted cell ids."""
        return sorted(self.boxes)

    def isolated(self) -> List[int]:
        """Cells without any edge, when the graph has more than one cell."""
        if len(self.boxes) < 2:
            return []
        return [
            cell_id
            for cell_id in self.cell_ids
            if not self.horizontal[cell_id] and not self.vertical[cell_id]
        ]


@dataclasses.dataclass(frozen=True)
class StructureResult:
    """Ordered rows and columns of cell ids."""

    rows: Groups
    columns: Groups
    # Cells without any relation, reported as anomalies; they still form
    # their own row and column.
    unassigned: List[int] = dataclasses.field(default_factory=list)

    @property
    def cell_ids(self) -> Set[int]:
        """All cells mentioned in the result."""
        groups = itertools.chain(self.rows, self.columns, [self.unassigned])
        return {cell_id for group in groups for cell_id in group}

    def to_dict(self) -> Dict[str, Any]:
        """JSON-compatible dict."""
        return {
            "rows": [list(row) for row in self.rows],
            "columns": [list(column) for column in self.columns],
            "unassigned": list(self.unassigned),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "StructureResult":
        """Inverse of `to_dict`."""
        return cls(
            rows=[[int(i) for i in row] for row in data["rows"]],
            columns=[[int(i) for i in column] for column in data["columns"]],
            unassigned=[int(i) for i in data.get("unassigned", [])],
        )


@dataclasses.dataclass(frozen=True)
class MatchResult:
    """Comparison of two structures."""

    exact: bool
    # Mean Jaccard index of greedily aligned groups, rows and columns
    # averaged.
    jaccard: float


# ------------------------------------------------------------------------ RECOVERY


def first_row(graph: RelationGraph, cells: Optional[Iterable[int]] = None) -> Set[int]:
    """Cells of the top row among `cells` (all cells by default).

    Raises:
        RecoveryError: No cells.
    """
    return _first_group(graph, cells, graph.horizontal, _row_seed_key)


def recover_rows(graph: RelationGraph) -> Groups:
    """All rows top-down, each sorted left to right."""
    return _partition(graph, graph.horizontal, _row_seed_key, _row_order_key)


def recover_columns(graph: RelationGraph) -> Groups:
    """All columns left to right, each sorted top-down."""
    return _partition(graph, graph.vertical, _column_seed_key, _column_order_key)


def recover_structure(graph: RelationGraph) -> StructureResult:
    """Rows, columns and anomalies of the graph."""
    result = StructureResult(
        rows=recover_rows(graph),
        columns=recover_columns(graph),
        unassigned=graph.isolated(),
    )
    if result.unassigned:
        LOG.warning("Cells without relations: %s.", result.unassigned)
    return result


def query_cell(graph: RelationGraph, cell_id: int) -> Tuple[List[int], List[int]]:
    """The row and the column a cell is connected to.

    Returns:
        Cells reachable along horizontal edges sorted left to right,
        and cells reachable along vertical edges sorted top-down, the
        query cell included.

    Raises:
        RecoveryError: Unknown cell.
    """
    if cell_id not in graph.boxes:
        raise RecoveryError(f"Graph has no cell {cell_id}")
    row = _component(cell_id, graph.horizontal, set(graph.boxes))
    column = _component(cell_id, graph.vertical, set(graph.boxes))
    return (
        sorted(row, key=lambda i: _row_order_key(graph, i)),
        sorted(column, key=lambda i: _column_order_key(graph, i)),
    )


def grid_structure(table: Table) -> StructureResult:
    """Rows and columns by grid position, for span-free tables.

    Rows group cells by their first grid row and columns by their first
    grid column, ordered by the operative boxes like recovered groups.
    """
    boxes = {cell.id: table.box(cell.id) for cell in table.cells}
    rows: Dict[int, List[int]] = collections.defaultdict(list)
    columns: Dict[int, List[int]] = collections.defaultdict(list)
    for cell in table.cells:
        rows[cell.row_start].append(cell.id)
        columns[cell.col_start].append(cell.id)
    return StructureResult(
        rows=[
            sorted(rows[r], key=lambda i: (boxes[i].x1, i)) for r in sorted(rows)
        ],
        columns=[
            sorted(columns[c], key=lambda i: (boxes[i].y1, i)) for c in sorted(columns)
        ],
    )


def structure_match(predicted: StructureResult, truth: StructureResult) -> MatchResult:
    """Compare a recovered structure with the ground truth.

    Exact means identical rows and columns, order included. Otherwise
    groups of both sides are aligned greedily by overlap and the
    Jaccard indices averaged; unaligned groups count as zero.

    Raises:
        RecoveryError: The structures cover different cells.
    """
    if predicted.cell_ids != truth.cell_ids:
        raise RecoveryError(
            "Structures cover different cells: "
            f"{sorted(predicted.cell_ids ^ truth.cell_ids)}"
        )
    if predicted.rows == truth.rows and predicted.columns == truth.columns:
        return MatchResult(exact=True, jaccard=1.0)
    jaccard = (
        _aligned_jaccard(predicted.rows, truth.rows)
        + _aligned_jaccard(predicted.columns, truth.columns)
    ) / 2
    return MatchResult(exact=False, jaccard=jaccard)


# ------------------------------------------------------------------ IMPLEMENTATION


def _row_seed_key(graph: RelationGraph, cell_id: int):
    box = graph.boxes[cell_id]
    return (box.y1, box.x1, cell_id)


def _column_seed_key(graph: RelationGraph, cell_id: int):
    box = graph.boxes[cell_id]
    return (box.x1, box.y1, cell_id)


def _row_order_key(graph: RelationGraph, cell_id: int):
    return (graph.boxes[cell_id].x1, cell_id)


def _column_order_key(graph: RelationGraph, cell_id: int):
    return (graph.boxes[cell_id].y1, cell_id)


def _component(start: int, adjacency: Mapping[int, Set[int]], allowed: Set[int]):
    """Breadth-first search from `start` within `allowed`."""
    visited = {start}
    queue = collections.deque([start])
    while queue:
        current = queue.popleft()
        for neighbor in sorted(adjacency[current]):
            if neighbor in allowed and neighbor not in visited:
                visited.add(neighbor)
                queue.append(neighbor)
    return visited


def _first_group(graph, cells, adjacency, seed_key) -> Set[int]:
    """Component of the seed cell among `cells`."""
    allowed = set(graph.boxes if cells is None else cells)
    if not allowed:
        raise RecoveryError("Cannot recover the structure of an empty graph")
    unknown = allowed - set(graph.boxes)
    if unknown:
        raise RecoveryError(f"Graph has no cells {sorted(unknown)}")
    seed = min(allowed, key=lambda i: seed_key(graph, i))
    return _component(seed, adjacency, allowed)


def _partition(graph, adjacency, seed_key, order_key) -> Groups:
    """Extract groups until every cell is assigned."""
    remaining = set(graph.boxes)
    groups = []
    while remaining:
        group = _first_group(graph, remaining, adjacency, seed_key)
        groups.append(sorted(group, key=lambda i: order_key(graph, i)))
        remaining -= group
    return groups


def _aligned_jaccard(predicted: Groups, truth: Groups) -> float:
    """Mean Jaccard index of greedily aligned groups."""
    if not predicted and not truth:
        return 1.0
    candidates = []
    for p_index, p_group in enumerate(predicted):
        for t_index, t_group in enumerate(truth):
            overlap = len(set(p_group) & set(t_group))
            if overlap:
                union = len(set(p_group) | set(t_group))
                candidates.append((-overlap, p_index, t_index, overlap / union))
    used_p, used_t, total = set(), set(), 0.0
    for _, p_index, t_index, score in sorted(candidates):
        if p_index in used_p or t_index in used_t:
            continue
        used_p.add(p_index)
        used_t.add(t_index)
        total += score
    return total / max(len(predicted), len(truth))
