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

"""Candidate cell pairs from k-nearest-neighbor search.

Classifying every pair of a table with M cells costs O(M^2). Instead
each cell is paired only with its K nearest cells (Euclidean distance
between the centers of the operative boxes), the directed neighbor
lists are merged into unordered pairs, and each pair gets its label
from the table relations.

Distance ties are broken by ascending cell id, so the candidate set
does not depend on the KD-tree traversal order.
"""

import collections
import dataclasses
import logging
from typing import Dict, List, Sequence

import numpy as np
import scipy.spatial

from .error import TableRelationsError
from .table import BBoxMode, Cell, RelationLabel, Table

# Module logger.
LOG = logging.getLogger(__name__)

# Number of nearest cells paired with each cell.
DEFAULT_K = 20


class PairingError(TableRelationsError):
    """Invalid pair generation request."""


@dataclasses.dataclass(frozen=True)
class PairCandidate:
    """Unordered cell pair, `cell_id_a < cell_id_b`."""

    cell_id_a: int
    cell_id_b: int
    label: RelationLabel
    # Distance between the operative box centers, pixels.
    distance: float


class SpatialIndex:
    """Exact k-NN over cell centers backed by `scipy.spatial.cKDTree`.

    The index is immutable after construction, so concurrent queries
    are safe.
    """

    def __init__(self, cells: Sequence[Cell], mode: BBoxMode = BBoxMode.ALIGNED):
        """Index the operative box centers of `cells`.

        Raises:
            PairingError: `cells` is empty.
        """
        if not cells:
            raise PairingError("Cannot index an empty cell list")
        self._ids = np.array([cell.id for cell in cells], dtype=np.int64)
        self._centers = np.array([cell.box(mode).center for cell in cells])
        self._tree = scipy.spatial.cKDTree(self._centers)

    def __len__(self):
        """Number of indexed cells."""
        return len(self._ids)

    @property
    def ids(self) -> List[int]:
        """Indexed cell ids in insertion order."""
        return self._ids.tolist()

    def within(self, point, radius: float) -> List[int]:
        """Ids of cells with centers at most `radius` from `point`.

        Returns:
            Ids sorted by distance, ties by id.
        """
        found = self._tree.query_ball_point(point, r=radius)
        return self._rank(np.asarray(found, dtype=np.int64), np.asarray(point))

    def nearest(self, cell_id: int, k: int) -> List[int]:
        """The `k` cells nearest to the given indexed cell, itself excluded.

        Returns:
            At most `k` ids sorted by distance, ties by id.
        """
        positions = np.flatnonzero(self._ids == cell_id)
        assert positions.size == 1, f"Cell {cell_id} is not indexed exactly once!"
        origin = self._centers[positions[0]]
        k = min(k, len(self._ids) - 1)
        if k <= 0:
            return []
        # The (k+1)-th nearest point, self included, fixes the radius;
        # everything on that radius takes part in the tie breaking.
        distances, _ = self._tree.query(origin, k=k + 1)
        radius = float(np.atleast_1d(distances)[-1])
        found = self._tree.query_ball_point(origin, r=radius * (1 + 1e-9) + 1e-9)
        ranked = self._rank(np.asarray(found, dtype=np.int64), origin)
        return [i for i in ranked if i != cell_id][:k]

    def _rank(self, positions: np.ndarray, origin: np.ndarray) -> List[int]:
        """Sort tree positions by squared distance to `origin`, then id."""
        if positions.size == 0:
            return []
        squared = np.sum((self._centers[positions] - origin) ** 2, axis=1)
        ids = self._ids[positions]
        order = np.lexsort((ids, squared))
        return ids[order].tolist()


def build_spatial_index(
    cells: Sequence[Cell], mode: BBoxMode = BBoxMode.ALIGNED
) -> SpatialIndex:
    """Build the k-NN index over operative box centers."""
    return SpatialIndex(cells, mode)


def generate_pairs(table: Table, k: int = DEFAULT_K) -> List[PairCandidate]:
    """Pair every cell with its `k` nearest cells.

    Returns:
        Unordered, deduplicated pairs sorted by `(cell_id_a, cell_id_b)`,
        labeled from `table.relations`.

    Raises:
        PairingError: `k` is not positive or the table has no cells.
    """
    if k < 1:
        raise PairingError(f"K must be positive, got {k}")
    index = build_spatial_index(table.cells, table.bbox_mode)
    keys = set()
    for cell in table.cells:
        for other in index.nearest(cell.id, k):
            keys.add((min(cell.id, other), max(cell.id, other)))

    pairs = []
    for cell_a, cell_b in sorted(keys):
        (xa, ya), (xb, yb) = table.box(cell_a).center, table.box(cell_b).center
        pairs.append(
            PairCandidate(
                cell_id_a=cell_a,
                cell_id_b=cell_b,
                label=table.label(cell_a, cell_b),
                distance=float(np.hypot(xa - xb, ya - yb)),
            )
        )
    LOG.debug(
        "Table %s: %s candidate pairs from %s cells with K=%s.",
        table.id,
        len(pairs),
        len(table.cells),
        k,
    )
    return pairs


def pair_statistics(table: Table, pairs: Sequence[PairCandidate]) -> Dict[str, int]:
    """Label counts of the candidate set and ground-truth edge coverage.

    Returns:
        Dict with `pairs`, per-label counts (`none`, `vertical`,
        `horizontal`), `edges` (ground-truth edges of the table) and
        `covered_edges` (those present among the candidates).
    """
    counts = collections.Counter(pair.label for pair in pairs)
    candidate_keys = {(pair.cell_id_a, pair.cell_id_b) for pair in pairs}
    return {
        "pairs": len(pairs),
        **{label.name.lower(): counts.get(label, 0) for label in RelationLabel},
        "edges": len(table.relations),
        "covered_edges": sum(1 for key in table.relations if key in candidate_keys),
    }
