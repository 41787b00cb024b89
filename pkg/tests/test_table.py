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

"""Test table annotations and relation derivation."""

import dataclasses
import json
import random

import pytest

from table_relations.table import (
    AnnotationError,
    BBox,
    BBoxMode,
    Cell,
    RelationLabel,
    Table,
    apply_empty_cell_policy,
    derive_relations,
    load_table,
    relation_key,
    save_table,
    table_from_dict,
    table_to_dict,
    validate_table,
)

H, V = RelationLabel.HORIZONTAL, RelationLabel.VERTICAL


def test_two_cells_in_a_row_and_in_a_column(grid_table):
    """Adjacent cells in one row or one column are connected."""

    print("One row with two cells.")
    table = grid_table(1, 2)
    assert table.relations == {(0, 1): H}, "Row neighbors must be horizontal!"

    print("One column with two cells.")
    table = grid_table(2, 1)
    assert table.relations == {(0, 1): V}, "Column neighbors must be vertical!"


def test_header_spanning_two_columns(grid_table):
    """A spanning header is vertically connected to every cell below."""
    table = grid_table(2, 2, spans=[(0, 0, 0, 1)])
    assert table.relations == {(0, 1): V, (0, 2): V, (1, 2): H}


@pytest.mark.parametrize("rows,cols", [(1, 1), (2, 3), (4, 4), (5, 2)])
def test_full_grid_relation_counts(grid_table, rows, cols):
    """A full grid has n(m-1) horizontal and m(n-1) vertical relations."""
    table = grid_table(rows, cols)
    assert len(table.edges(H)) == rows * (cols - 1)
    assert len(table.edges(V)) == cols * (rows - 1)


def test_relations_are_symmetric_and_order_independent(grid_table):
    """Lookups ignore the pair order, cell order does not change labels."""
    table = grid_table(3, 4, spans=[(0, 1, 0, 0), (1, 1, 2, 3)])
    for cell_a in table.cell_ids:
        for cell_b in table.cell_ids:
            if cell_a != cell_b:
                assert table.label(cell_a, cell_b) == table.label(cell_b, cell_a)

    print("Shuffle the cells and derive the relations again.")
    cells = list(table.cells)
    random.Random(7).shuffle(cells)
    shuffled = derive_relations(dataclasses.replace(table, cells=tuple(cells)))
    assert shuffled.relations == table.relations, "Cell order changed the labels!"


def test_relation_key_normalization():
    """Keys keep the smaller id first."""
    assert relation_key(5, 2) == (2, 5)
    assert relation_key(2, 5) == (2, 5)


def test_overlapping_grid_is_rejected():
    """Overlapping grid rectangles name both offending cells."""
    table = Table(
        id="bad",
        image_path="bad.png",
        width=100,
        height=100,
        cells=(
            Cell(0, BBox(0, 0, 49, 19), (0, 0, 0, 1)),
            Cell(1, BBox(40, 0, 79, 19), (0, 0, 1, 1)),
        ),
    )
    with pytest.raises(AnnotationError) as info:
        derive_relations(table)
    assert info.value.cell_ids == (0, 1)
    assert str(info.value).endswith("!"), "Messages end with an exclamation mark!"


def test_empty_cells_in_aligned_and_text_focused_modes(sample):
    """Empty cells are vertices when aligned, bridged when text-focused."""
    table, _ = sample

    print("Aligned: the empty cell 6 is connected like any other cell.")
    assert table.edges(H) == [(0, 1), (2, 3), (3, 4), (5, 6), (6, 7)]
    assert table.edges(V) == [(0, 2), (0, 3), (1, 4), (2, 5), (3, 6), (4, 7)]
    assert apply_empty_cell_policy(table, BBoxMode.ALIGNED) is table

    print("Text-focused: cell 6 disappears, its row neighbors get connected.")
    focused = apply_empty_cell_policy(table, BBoxMode.TEXT_FOCUSED)
    assert 6 not in focused.cell_ids
    assert focused.edges(H) == [(0, 1), (2, 3), (3, 4), (5, 7)]
    assert focused.edges(V) == [(0, 2), (0, 3), (1, 4), (2, 5), (4, 7)]
    assert focused.bbox_mode == BBoxMode.TEXT_FOCUSED
    assert focused.box(0) == focused.cell(0).text_box, "Text boxes are operative!"

    print("Applying the policy twice changes nothing.")
    again = apply_empty_cell_policy(focused, BBoxMode.TEXT_FOCUSED)
    assert again.relations == focused.relations
    assert again.cell_ids == focused.cell_ids


def test_chain_of_empty_cells_is_bridged(grid_table):
    """Cells separated by several empty cells become neighbors."""
    table = grid_table(4, 4, empties=[(0, 1), (0, 2), (1, 0), (2, 0)])
    focused = apply_empty_cell_policy(table, "text_focused")
    ids = {cell.grid[:3:2]: cell.id for cell in table.cells}
    assert focused.label(ids[(0, 0)], ids[(0, 3)]) == H
    assert focused.label(ids[(0, 0)], ids[(3, 0)]) == V


def test_text_focused_needs_text_boxes(grid_table):
    """Non-empty cells without text boxes cannot be text-focused."""
    table = grid_table(2, 2, text_inset=None)
    with pytest.raises(AnnotationError) as info:
        apply_empty_cell_policy(table, BBoxMode.TEXT_FOCUSED)
    assert info.value.cell_ids == (0, 1, 2, 3)


def test_validate_table(grid_table):
    """Diagnostics list every violated invariant."""
    table = grid_table(2, 2)
    assert validate_table(table) == [], "Well-formed table has no diagnostics!"

    print("Dangling relation id.")
    broken = dataclasses.replace(table, relations={**table.relations, (0, 99): H})
    codes = [d.code for d in validate_table(broken)]
    assert codes == ["dangling-id"]

    print("Degenerate box.")
    cell = dataclasses.replace(table.cells[0], aligned_box=BBox(30, 0, 10, 19))
    broken = dataclasses.replace(table, cells=(cell,) + table.cells[1:])
    assert "degenerate-box" in [d.code for d in validate_table(broken)]

    print("Box leaving the image.")
    broken = dataclasses.replace(table, width=50)
    assert "box-out-of-image" in [d.code for d in validate_table(broken)]


def test_annotation_file_roundtrip(tmp_path, sample):
    """Saved tables load back with the image path resolved."""
    table, _ = sample
    table = dataclasses.replace(table, image_path=str(tmp_path / "img" / "s.png"))
    path = tmp_path / "ann" / "s.json"
    save_table(table, path)

    stored = json.loads(path.read_text())
    assert stored["image"] == "../img/s.png", "Image path must be relative!"
    assert "relations" not in stored, "Relations are derived, not stored!"

    loaded = load_table(path)
    assert loaded.cells == table.cells
    assert loaded.relations == table.relations
    assert loaded.image_path == str(path.parent / "../img/s.png")


def test_malformed_annotations(tmp_path, sample):
    """Broken files raise `AnnotationError`."""
    with pytest.raises(AnnotationError):
        load_table(tmp_path / "missing.json")

    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(AnnotationError):
        load_table(path)

    data = table_to_dict(sample[0])
    data["cells"][0]["aligned_box"] = [0, 0, 10]
    with pytest.raises(AnnotationError):
        table_from_dict(data)
    del data["cells"]
    with pytest.raises(AnnotationError):
        table_from_dict(data)
