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

"""Test pair set preprocessing, batching and dataset directories."""

import dataclasses
import json

import numpy as np
import pytest

from table_relations import dataset, synthgen
from table_relations.imaging import BACKGROUND, GrayImage, ImagingError
from table_relations.pairing import PairingError, generate_pairs
from table_relations.table import AnnotationError, BBox, BBoxMode

from .conftest import draw_table


def test_position_features():
    """Normalized boxes followed by the center delta."""
    features = dataset.position_features(
        BBox(0, 0, 10, 10), BBox(50, 0, 70, 20), width=100, height=50
    )
    expected = [0, 0, 0.1, 0.2, 0.5, 0, 0.7, 0.4, 0.55, 0.1]
    assert np.allclose(features, expected)


def test_prepare_pair_set(sample):
    """Shapes, ids and labels follow the candidate pairs."""
    table, image = sample
    pair_set = dataset.prepare_pair_set(table, image, k=4, input_size=8)
    pairs = generate_pairs(table, 4)
    count = len(pairs)
    assert len(pair_set) == count
    assert pair_set.cell_images.shape == (8, 8, 8)
    assert pair_set.union_images.shape == (count, 8, 8)
    assert pair_set.positions.shape == (count, 10)
    assert pair_set.cell_images.dtype == np.uint8
    assert pair_set.labels.tolist() == [int(pair.label) for pair in pairs]

    print("Pair index rows point at the images of the pair cells.")
    ids = pair_set.cell_ids
    for (a, b), (row_a, row_b) in zip(pair_set.pair_ids, pair_set.pair_index):
        assert (ids[row_a], ids[row_b]) == (a, b)

    print("The empty cell has a blank image.")
    row = ids.tolist().index(6)
    assert (pair_set.cell_images[row] == BACKGROUND).all()


def test_prepare_pair_set_text_focused(sample):
    """The text-focused regime drops empty cells before pairing."""
    table, image = sample
    pair_set = dataset.prepare_pair_set(
        table, image, k=4, bbox_mode=BBoxMode.TEXT_FOCUSED, input_size=8
    )
    assert 6 not in pair_set.cell_ids.tolist()
    assert 6 not in pair_set.pair_ids.reshape(-1).tolist()

    focused = dataset.prepare_table(table, BBoxMode.TEXT_FOCUSED)
    with pytest.raises(PairingError):
        dataset.prepare_table(focused, BBoxMode.ALIGNED)


def test_prepare_pair_set_size_mismatch(sample):
    """An image which does not match the annotation is rejected."""
    table, _ = sample
    small = GrayImage(np.full((10, 10), 255, dtype=np.uint8))
    with pytest.raises(ImagingError):
        dataset.prepare_pair_set(table, small)


def test_iterate_batches(sample, grid_table):
    """Batches cover every pair once, in order unless shuffled."""
    table, image = sample
    other = grid_table(2, 2, table_id="o")
    pair_sets = [
        dataset.prepare_pair_set(table, image, k=3, input_size=8),
        dataset.prepare_pair_set(other, draw_table(other), k=3, input_size=8),
    ]
    total = sum(len(ps) for ps in pair_sets)
    labels = np.concatenate([ps.labels for ps in pair_sets])

    batches = list(dataset.iterate_batches(pair_sets, batch_size=5))
    assert sum(len(batch) for batch in batches) == total
    assert all(len(batch) == 5 for batch in batches[:-1])
    assert np.concatenate([b.labels for b in batches]).tolist() == labels.tolist()
    first = batches[0]
    assert first.union.shape == (5, 1, 8, 8)
    assert first.union.dtype == np.float32
    assert 0 <= first.union.min() and first.union.max() <= 1

    print("Shuffled batches hold the same pairs.")
    rng = np.random.default_rng(0)
    shuffled = list(dataset.iterate_batches(pair_sets, 5, rng=rng))
    shuffled_labels = np.concatenate([b.labels for b in shuffled])
    assert sorted(shuffled_labels.tolist()) == sorted(labels.tolist())

    print("Position-only batches carry no images.")
    blind = next(dataset.iterate_batches(pair_sets, 5, with_images=False))
    assert not blind.has_images


def test_manifest_errors(tmp_path):
    """Missing, malformed and unknown-split manifests fail."""
    with pytest.raises(AnnotationError):
        dataset.read_manifest(tmp_path)
    (tmp_path / dataset.MANIFEST_NAME).write_text("{", encoding="utf-8")
    with pytest.raises(AnnotationError):
        dataset.read_manifest(tmp_path)
    manifest = {"splits": {"train": ["a"], "holdout": ["b"]}}
    (tmp_path / dataset.MANIFEST_NAME).write_text(json.dumps(manifest))
    with pytest.raises(AnnotationError):
        dataset.read_manifest(tmp_path)

    manifest = {"splits": {"train": ["a"]}}
    (tmp_path / dataset.MANIFEST_NAME).write_text(json.dumps(manifest))
    assert dataset.read_manifest(tmp_path) == {"train": ["a"], "val": [], "test": []}
    with pytest.raises(AnnotationError):
        dataset.load_split(tmp_path, "dev")


def test_load_split(dataset_dir):
    """Splits load their tables together with matching images."""
    manifest = dataset.read_manifest(dataset_dir)
    samples = dataset.load_split(dataset_dir, "train", jobs=2)
    assert [table.id for table, _ in samples] == manifest["train"]
    for table, image in samples:
        assert (image.width, image.height) == (table.width, table.height)


def test_pair_cache(dataset_dir, caplog):
    """The cache is reused, keyed by the settings and rebuilt when broken."""
    samples = dataset.load_split(dataset_dir, "val")
    cache = dataset_dir / "cache"
    first = dataset.build_pair_sets(samples, k=3, input_size=8, cache_dir=cache)
    files = list(cache.iterdir())
    assert len(files) == 1

    print("A second build reads the cached file.")
    second = dataset.build_pair_sets(samples, k=3, input_size=8, cache_dir=cache)
    for a, b in zip(first, second):
        assert a.table_id == b.table_id
        assert (a.union_images == b.union_images).all()
        assert (a.positions == b.positions).all()
        assert a.positions.dtype == b.positions.dtype

    print("Other settings use another key.")
    key = dataset.pair_cache_key(samples, 3, BBoxMode.ALIGNED, 8)
    assert files[0].name == f"{key}.msgpack"
    assert key != dataset.pair_cache_key(samples, 4, BBoxMode.ALIGNED, 8)
    assert key != dataset.pair_cache_key(samples, 3, BBoxMode.TEXT_FOCUSED, 8)

    print("A corrupted file is rebuilt with a warning.")
    files[0].write_bytes(b"\xc1garbage")
    rebuilt = dataset.build_pair_sets(samples, k=3, input_size=8, cache_dir=cache)
    assert "unreadable" in caplog.text
    assert [ps.table_id for ps in rebuilt] == [ps.table_id for ps in first]
    assert dataset.load_pair_sets(files[0])[0].table_id == first[0].table_id


def test_rewritten_dataset_misses_the_cache(dataset_dir, synth_params):
    """Tables regenerated under the same ids get fresh pair sets."""
    cache = dataset_dir / "cache"
    samples = dataset.load_split(dataset_dir, "train")
    old = dataset.build_pair_sets(samples, k=3, input_size=8, cache_dir=cache)

    print("Rewrite the dataset in place with larger grids and the same seed.")
    bigger = dataclasses.replace(synth_params, rows=(5, 6), cols=(4, 5))
    synthgen.write_dataset(bigger, 10, dataset_dir)
    samples = dataset.load_split(dataset_dir, "train")
    assert [ps.table_id for ps in old] == [table.id for table, _ in samples]

    cached = dataset.build_pair_sets(samples, k=3, input_size=8, cache_dir=cache)
    fresh = dataset.build_pair_sets(samples, k=3, input_size=8)
    assert [len(ps) for ps in cached] == [len(ps) for ps in fresh]
    assert [len(ps) for ps in cached] != [len(ps) for ps in old], "Stale pairs!"
    for a, b in zip(cached, fresh):
        assert (a.labels == b.labels).all()
        assert (a.union_images == b.union_images).all()
    assert len(list(cache.iterdir())) == 2
