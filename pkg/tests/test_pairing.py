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

"""Test k-nearest-neighbor pair generation."""

import itertools

import numpy as np
import pytest

from table_relations.pairing import (
    PairingError,
    SpatialIndex,
    generate_pairs,
    pair_statistics,
)
from table_relations.table import (
    BBox,
    BBoxMode,
    Cell,
    RelationLabel,
    Table,
    apply_empty_cell_policy,
)

from .conftest import labels_of


def brute_force_pairs(table: Table, k: int):
    """Reference candidate keys from sorting all distances."""
    ids = np.array(table.cell_ids)
    centers = np.array([table.box(cell_id).center for cell_id in ids])
    squared = ((centers[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    keys = set()
    for row, cell_id in enumerate(ids):
        others = np.flatnonzero(ids != cell_id)
        order = np.lexsort((ids[others], squared[row, others]))
        for other in ids[others[order]][:k]:
            keys.add((min(cell_id, other), max(cell_id, other)))
    return sorted((int(a), int(b)) for a, b in keys)


def random_table(rng: np.random.Generator) -> Table:
    """Up to fifty cells packed on a small canvas, some exactly stacked."""
    count = int(rng.integers(1, 51))
    corners = rng.integers(0, 60, size=(count, 2))
    sizes = rng.integers(1, 4, size=(count, 2)) * 2 - 1
    for i in range(1, count):
        if rng.uniform() < 0.2:
            corners[i], sizes[i] = corners[i - 1], sizes[i - 1]
    cells = tuple(
        Cell(i, BBox(x, y, x + w, y + h), (i, i, 0, 0))
        for i, ((x, y), (w, h)) in enumerate(zip(corners.tolist(), sizes.tolist()))
    )
    return Table(id="random", image_path="random.png", width=64, height=64, cells=cells)


@pytest.mark.parametrize("k", [1, 2, 4, 8, 20])
def test_pairs_match_brute_force(grid_table, k):
    """KD-tree candidates equal those of the exhaustive search."""
    table = grid_table(5, 4, spans=[(0, 0, 0, 3), (2, 3, 1, 1)])
    pairs = generate_pairs(table, k)
    assert [(p.cell_id_a, p.cell_id_b) for p in pairs] == brute_force_pairs(table, k)


@pytest.mark.parametrize("k", [1, 3, 20])
def test_random_tables_match_brute_force(k):
    """Random layouts with ties and stacked cells agree with the search."""
    rng = np.random.default_rng(k)
    for attempt in range(1000):
        table = random_table(rng)
        keys = [(p.cell_id_a, p.cell_id_b) for p in generate_pairs(table, k)]
        assert keys == brute_force_pairs(table, k), f"Table {attempt} differs!"


def test_pairs_are_unique_ordered_and_labeled(grid_table):
    """Every pair appears once, smaller id first, with its true label."""
    table = grid_table(3, 3, empties=[(1, 1)])
    pairs = generate_pairs(table, 3)
    keys = [(p.cell_id_a, p.cell_id_b) for p in pairs]
    assert len(keys) == len(set(keys)), "Duplicate pairs!"
    assert all(a < b for a, b in keys), "Pairs must keep the smaller id first!"
    for pair in pairs:
        assert pair.label == table.label(pair.cell_id_a, pair.cell_id_b)
        assert pair.distance > 0


def test_large_k_gives_all_pairs(grid_table):
    """With K >= M-1 every unordered pair is a candidate."""
    table = grid_table(2, 3)
    pairs = generate_pairs(table, 50)
    expected = list(itertools.combinations(table.cell_ids, 2))
    assert [(p.cell_id_a, p.cell_id_b) for p in pairs] == expected


def test_equidistant_ties_break_by_id():
    """Cells at the same distance are taken in the order of their ids."""
    cells = tuple(
        Cell(i, BBox(x, y, x + 9, y + 9), (i, i, 0, 0))
        for i, (x, y) in enumerate([(50, 50), (70, 50), (30, 50), (50, 70), (50, 30)])
    )
    index = SpatialIndex(cells)
    assert index.nearest(0, 2) == [1, 2]
    assert index.nearest(0, 4) == [1, 2, 3, 4]
    assert index.within((54.5, 54.5), 0.5) == [0]


def test_single_cell_and_invalid_requests(grid_table):
    """Degenerate inputs produce no pairs or a `PairingError`."""
    assert generate_pairs(grid_table(1, 1), 5) == []
    with pytest.raises(PairingError):
        generate_pairs(grid_table(2, 2), 0)
    with pytest.raises(PairingError):
        SpatialIndex([])


def test_text_focused_pairs_use_text_boxes(sample):
    """The operative boxes decide the neighbors."""
    focused = apply_empty_cell_policy(sample[0], BBoxMode.TEXT_FOCUSED)
    pairs = generate_pairs(focused, 20)
    assert all(6 not in key for key in labels_of(pairs)), "Empty cell paired!"
    assert labels_of(pairs)[(5, 7)] == RelationLabel.HORIZONTAL


def test_pair_statistics(grid_table):
    """Statistics count labels and the covered ground-truth edges."""
    table = grid_table(3, 3)
    pairs = generate_pairs(table, 20)
    stats = pair_statistics(table, pairs)
    assert stats == {
        "pairs": 36,
        "none": 24,
        "vertical": 6,
        "horizontal": 6,
        "edges": 12,
        "covered_edges": 12,
    }

    print("With K=1 some edges are not among the candidates.")
    stats = pair_statistics(table, generate_pairs(table, 1))
    assert stats["covered_edges"] < stats["edges"]
    assert stats["pairs"] == stats["none"] + stats["vertical"] + stats["horizontal"]
