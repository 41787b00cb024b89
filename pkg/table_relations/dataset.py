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

"""Preprocessed pair sets and dataset directories.

A `PairSet` holds everything the network needs for the candidate
pairs of one table: one letterboxed image per cell, one letterboxed
union crop per pair, the ten position features and the labels. Images
are kept as uint8 and converted to floats per batch.

Pair sets of a whole split are cached in `<dataset>/cache/` as a
MessagePack file whose name is the SHA-256 of everything the
preprocessing depends on.

Dataset directory layout:

    manifest.json          {"splits": {"train": [ids], "val": ..., "test": ...}}
    tables/<id>.json       annotation
    images/<id>.png        grayscale table image
    cache/<sha256>.msgpack pair sets
"""

import dataclasses
import hashlib
import json
import logging
import pathlib
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import imaging
from .error import TableRelationsError
from .imaging import GrayImage
from .model import PairBatch
from .pairing import DEFAULT_K, PairingError, generate_pairs
from .serializer import Serializer
from .table import (
    AnnotationError,
    BBox,
    BBoxMode,
    Table,
    apply_empty_cell_policy,
    load_table,
    table_to_dict,
)
from .workers import parallel_map

# Module logger.
LOG = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
SPLITS = ("train", "val", "test")
# Bump when the cached layout changes.
CACHE_VERSION = 2


@dataclasses.dataclass(frozen=True)
class PairSet:
    """Network-ready candidate pairs of one table."""

    table_id: str
    # `[M]` cell ids and `[M, S, S]` uint8 letterboxed cell images.
    cell_ids: np.ndarray
    cell_images: np.ndarray
    # `[P, 2]` cell ids of each pair, smaller first.
    pair_ids: np.ndarray
    # `[P, 2]` rows of `cell_images` for each pair.
    pair_index: np.ndarray
    # `[P, S, S]` uint8 union crops.
    union_images: np.ndarray
    # `[P, 10]` position features.
    positions: np.ndarray
    # `[P]` relation labels.
    labels: np.ndarray

    def __len__(self):
        """Number of pairs."""
        return len(self.pair_ids)

    def to_dict(self) -> Dict:
        """Dict of plain values and arrays for the serializer."""
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "PairSet":
        """Inverse of `to_dict`."""
        return cls(**data)


# -------------------------------------------------------------------------------- PAIRS


def position_features(box_a: BBox, box_b: BBox, width: int, height: int) -> np.ndarray:
    """Ten position features of a pair.

    Both boxes normalized by the table size, `(x1, y1, x2, y2)` each,
    then the center delta `(dx, dy)` from the first to the second box.
    """
    scale = np.array([width, height, width, height], dtype=np.float64)
    norm_a = np.asarray(box_a.to_list(), dtype=np.float64) / scale
    norm_b = np.asarray(box_b.to_list(), dtype=np.float64) / scale
    center_a = (norm_a[:2] + norm_a[2:]) / 2
    center_b = (norm_b[:2] + norm_b[2:]) / 2
    return np.concatenate([norm_a, norm_b, center_b - center_a])


def prepare_table(table: Table, bbox_mode: BBoxMode) -> Table:
    """Put the table into the requested bounding box regime.

    Raises:
        PairingError: An aligned table was requested from a table which
            already dropped its empty cells.
    """
    if bbox_mode == table.bbox_mode:
        return table
    if bbox_mode == BBoxMode.ALIGNED:
        raise PairingError(f"Table {table.id} is text-focused, cannot restore it")
    return apply_empty_cell_policy(table, bbox_mode)


def prepare_pair_set(
    table: Table,
    image: GrayImage,
    k: int = DEFAULT_K,
    bbox_mode: BBoxMode = BBoxMode.ALIGNED,
    input_size: int = 84,
) -> PairSet:
    """Generate the candidate pairs of a table and preprocess them.

    Raises:
        ImagingError: The image size differs from the annotation or a
            box leaves the image.
        PairingError: Invalid `k`.
    """
    if (image.width, image.height) != (table.width, table.height):
        raise imaging.ImagingError(
            f"Table {table.id} is {table.width}x{table.height} but its image is"
            f" {image.width}x{image.height}"
        )
    table = prepare_table(table, bbox_mode)
    pairs = generate_pairs(table, k)
    size = input_size

    cell_ids = np.array(table.cell_ids, dtype=np.int64)
    row_of = {cell_id: row for row, cell_id in enumerate(table.cell_ids)}
    cell_images = np.zeros((len(table.cells), size, size), dtype=np.uint8)
    for row, cell_id in enumerate(table.cell_ids):
        cell_crop = imaging.crop(image, table.box(cell_id))
        cell_images[row] = imaging.resize_pad(cell_crop, size, size).pixels

    union_images = np.zeros((len(pairs), size, size), dtype=np.uint8)
    positions = np.zeros((len(pairs), 10), dtype=np.float32)
    for index, pair in enumerate(pairs):
        box_a, box_b = table.box(pair.cell_id_a), table.box(pair.cell_id_b)
        union = imaging.union_crop(image, box_a, box_b)
        union_images[index] = imaging.resize_pad(union, size, size).pixels
        positions[index] = position_features(box_a, box_b, table.width, table.height)

    return PairSet(
        table_id=table.id,
        cell_ids=cell_ids,
        cell_images=cell_images,
        pair_ids=np.array(
            [(pair.cell_id_a, pair.cell_id_b) for pair in pairs], dtype=np.int64
        ).reshape(-1, 2),
        pair_index=np.array(
            [(row_of[pair.cell_id_a], row_of[pair.cell_id_b]) for pair in pairs],
            dtype=np.int64,
        ).reshape(-1, 2),
        union_images=union_images,
        positions=positions,
        labels=np.array([int(pair.label) for pair in pairs], dtype=np.int64),
    )


def collate(
    pair_sets: Sequence[PairSet],
    index: np.ndarray,
    dtype=np.float32,
    with_images: bool = True,
) -> PairBatch:
    """Assemble a batch from `(pair_set, pair)` index rows."""
    sets, pairs = index[:, 0], index[:, 1]
    positions = np.stack([pair_sets[s].positions[p] for s, p in zip(sets, pairs)])
    labels = np.array([pair_sets[s].labels[p] for s, p in zip(sets, pairs)])
    if not with_images:
        return PairBatch(positions=positions.astype(dtype), labels=labels)

    def images(select):
        stack = np.stack([select(pair_sets[s], p) for s, p in zip(sets, pairs)])
        return imaging.to_network_input(stack, dtype)[:, None, :, :]

    return PairBatch(
        positions=positions.astype(dtype),
        cell_a=images(lambda ps, p: ps.cell_images[ps.pair_index[p, 0]]),
        cell_b=images(lambda ps, p: ps.cell_images[ps.pair_index[p, 1]]),
        union=images(lambda ps, p: ps.union_images[p]),
        labels=labels,
    )


def iterate_batches(
    pair_sets: Sequence[PairSet],
    batch_size: int,
    dtype=np.float32,
    rng: Optional[np.random.Generator] = None,
    with_images: bool = True,
) -> Iterator[PairBatch]:
    """Batches over all pairs of all sets, shuffled when `rng` is given."""
    assert batch_size >= 1, f"Batch size must be positive, got {batch_size}!"
    index = np.array(
        [(s, p) for s, pair_set in enumerate(pair_sets) for p in range(len(pair_set))],
        dtype=np.int64,
    ).reshape(-1, 2)
    if rng is not None:
        index = index[rng.permutation(len(index))]
    for start in range(0, len(index), batch_size):
        yield collate(pair_sets, index[start : start + batch_size], dtype, with_images)


# ------------------------------------------------------------------------------ DATASET


def table_file(root, table_id: str) -> pathlib.Path:
    """Annotation path of a table in a dataset directory."""
    return pathlib.Path(root) / "tables" / f"{table_id}.json"


def image_file(root, table_id: str) -> pathlib.Path:
    """Image path of a table in a dataset directory."""
    return pathlib.Path(root) / "images" / f"{table_id}.png"


def read_manifest(root) -> Dict[str, List[str]]:
    """Split assignment of a dataset directory.

    Raises:
        AnnotationError: The manifest is missing or malformed.
    """
    path = pathlib.Path(root) / MANIFEST_NAME
    try:
        splits = json.loads(path.read_text(encoding="utf-8"))["splits"]
    except FileNotFoundError as ex:
        raise AnnotationError(f"Dataset manifest {path} does not exist") from ex
    except (json.JSONDecodeError, KeyError, TypeError) as ex:
        raise AnnotationError(f"Malformed dataset manifest {path}: {ex}") from ex
    if not isinstance(splits, dict) or set(splits) - set(SPLITS):
        raise AnnotationError(f"Manifest {path} must map {SPLITS} to table ids")
    return {split: [str(i) for i in splits.get(split, [])] for split in SPLITS}


def load_split(root, split: str, jobs: int = 1) -> List[Tuple[Table, GrayImage]]:
    """Tables and images of one split of a dataset directory.

    Raises:
        AnnotationError: Unknown split or malformed annotation.
        ImagingError: Unreadable image.
    """
    if split not in SPLITS:
        raise AnnotationError(f"Unknown split {split!r}, use one of {SPLITS}")
    ids = read_manifest(root)[split]

    def load(table_id):
        table = load_table(table_file(root, table_id))
        return table, imaging.load_image(table.image_path)

    return parallel_map(load, ids, jobs)


def pair_cache_key(
    samples: Sequence[Tuple[Table, GrayImage]],
    k: int,
    bbox_mode: BBoxMode,
    input_size: int,
) -> str:
    """SHA-256 of everything the pair sets of `samples` depend on.

    Besides the settings, the key covers the annotation and the pixels
    of every table, so a dataset rewritten in place gets new keys even
    when its table ids repeat.
    """
    digest = hashlib.sha256()
    settings = {
        "version": CACHE_VERSION,
        "k": k,
        "bbox_mode": BBoxMode(bbox_mode).value,
        "input_size": input_size,
    }
    digest.update(json.dumps(settings, sort_keys=True).encode())
    for table, image in samples:
        annotation = table_to_dict(table)
        # The image path moves with the dataset, the pixels below do not.
        del annotation["image"]
        digest.update(json.dumps(annotation, sort_keys=True).encode())
        digest.update(np.asarray(image.pixels.shape, dtype="<i8").tobytes())
        digest.update(np.ascontiguousarray(image.pixels).tobytes())
    return digest.hexdigest()


def save_pair_sets(pair_sets: Sequence[PairSet], path) -> None:
    """Write pair sets as one MessagePack file."""
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(Serializer.serialize([ps.to_dict() for ps in pair_sets]))


def load_pair_sets(path) -> List[PairSet]:
    """Read pair sets written by `save_pair_sets`."""
    data = Serializer.deserialize(pathlib.Path(path).read_bytes())
    return [PairSet.from_dict(item) for item in data]


def build_pair_sets(
    samples: Sequence[Tuple[Table, GrayImage]],
    k: int = DEFAULT_K,
    bbox_mode: BBoxMode = BBoxMode.ALIGNED,
    input_size: int = 84,
    jobs: int = 1,
    cache_dir=None,
) -> List[PairSet]:
    """Pair sets of all samples, through the cache when `cache_dir` is set.

    A cache file which cannot be read is rebuilt.
    """
    path = None
    if cache_dir is not None:
        key = pair_cache_key(samples, k, bbox_mode, input_size)
        path = pathlib.Path(cache_dir) / f"{key}.msgpack"
        if path.exists():
            try:
                pair_sets = load_pair_sets(path)
            except (ValueError, TypeError, KeyError, TableRelationsError) as ex:
                LOG.warning("Pair cache %s is unreadable (%s), rebuilding.", path, ex)
            else:
                LOG.debug("Loaded %s pair sets from %s.", len(pair_sets), path)
                return pair_sets

    pair_sets = parallel_map(
        lambda sample: prepare_pair_set(sample[0], sample[1], k, bbox_mode, input_size),
        samples,
        jobs,
    )
    if path is not None:
        save_pair_sets(pair_sets, path)
        LOG.info("Cached %s pair sets in %s.", len(pair_sets), path)
    return pair_sets
