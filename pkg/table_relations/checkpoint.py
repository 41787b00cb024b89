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

"""Binary model checkpoints.

Layout, all integers little-endian:

    8 bytes   magic `TRELCKPT`
    uint32    format version
    uint32    manifest length in bytes
    ...       UTF-8 JSON manifest
    ...       tensor blobs in manifest order, raw little-endian floats
    uint32    CRC32 of everything above

The manifest holds the model configuration, the optional training
configuration, the optimizer step count, and the name, kind and shape
of every stored tensor: parameters, their AdamW moments, and batch
norm running statistics once they exist. Blobs are 32-bit floats for
32-bit models and 64-bit floats for 64-bit models.
"""

import dataclasses
import json
import logging
import pathlib
import struct
import zlib
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .error import TableRelationsError
from .layers import BatchNorm2d
from .model import ModelConfig, RelationModel, build_model
from .optim import AdamW

# Module logger.
LOG = logging.getLogger(__name__)

MAGIC = b"TRELCKPT"
VERSION = 1
_HEADER = struct.Struct("<8sII")
_CRC = struct.Struct("<I")


class CheckpointError(TableRelationsError):
    """Unusable checkpoint file."""

    exit_code = 4


class CheckpointVersionError(CheckpointError):
    """Checkpoint written by an unsupported format version."""


class CheckpointChecksumError(CheckpointError):
    """Truncated or corrupted checkpoint."""


class CheckpointVariantError(CheckpointError):
    """Checkpoint holds another model variant than requested."""


@dataclasses.dataclass
class Checkpoint:
    """Restored model with its provenance."""

    model: RelationModel
    optimizer_steps: int
    # Training configuration dict as saved, if any.
    train_config: Optional[Dict[str, Any]]
    manifest: Dict[str, Any]

    def optimizer(self, lr: float = 0.001, weight_decay: float = 0.01) -> AdamW:
        """AdamW continuing from the saved step count and moments."""
        optimizer = AdamW(self.model.params(), lr=lr, weight_decay=weight_decay)
        optimizer.steps = self.optimizer_steps
        return optimizer


def save_checkpoint(
    model: RelationModel,
    path,
    optimizer: Optional[AdamW] = None,
    train_config: Optional[Dict[str, Any]] = None,
) -> None:
    """Write the model, its optimizer state and provenance to `path`."""
    dtype = np.dtype(model.dtype).newbyteorder("<")
    entries, arrays = [], []
    for kind, name, array in _state(model):
        entries.append({"name": name, "kind": kind, "shape": list(array.shape)})
        arrays.append(np.ascontiguousarray(array, dtype=dtype))

    manifest = {
        "model": model.config.to_dict(),
        "train": train_config,
        "seed": model.config.seed,
        "dtype": dtype.str,
        "optimizer_steps": 0 if optimizer is None else optimizer.steps,
        "norm_batches": {
            name: module.running.batches
            for name, module in model.named_modules()
            if isinstance(module, BatchNorm2d)
        },
        "tensors": entries,
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    body = b"".join(
        [_HEADER.pack(MAGIC, VERSION, len(manifest_bytes)), manifest_bytes]
        + [array.tobytes() for array in arrays]
    )
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(body + _CRC.pack(zlib.crc32(body)))
    LOG.info("Saved checkpoint %s with %s tensors.", path, len(entries))


def load_checkpoint(path, expected: Optional[ModelConfig] = None) -> Checkpoint:
    """Read a checkpoint written by `save_checkpoint`.

    Args:
        path: Checkpoint file.
        expected: When given, the checkpoint must hold this variant.

    Raises:
        CheckpointError: Missing file or not a checkpoint.
        CheckpointVersionError: Unsupported format version.
        CheckpointChecksumError: Truncated or corrupted file.
        CheckpointVariantError: The variant differs from `expected`.
    """
    try:
        data = pathlib.Path(path).read_bytes()
    except OSError as ex:
        raise CheckpointError(f"Cannot read checkpoint {path}: {ex}") from ex

    if len(data) < _HEADER.size + _CRC.size:
        raise CheckpointChecksumError(f"Checkpoint {path} is truncated")
    magic, version, manifest_size = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"File {path} is not a checkpoint")
    if version != VERSION:
        raise CheckpointVersionError(
            f"Checkpoint {path} has format version {version}, expected {VERSION}"
        )
    body, (crc,) = data[: -_CRC.size], _CRC.unpack(data[-_CRC.size :])
    if zlib.crc32(body) != crc:
        raise CheckpointChecksumError(f"Checkpoint {path} fails its checksum")

    try:
        manifest = json.loads(body[_HEADER.size : _HEADER.size + manifest_size])
        config = ModelConfig.from_dict(manifest["model"])
        dtype = np.dtype(manifest["dtype"])
        entries = list(manifest["tensors"])
    except (json.JSONDecodeError, UnicodeDecodeError, KeyError, TypeError) as ex:
        raise CheckpointError(f"Checkpoint {path} has a malformed manifest") from ex
    if expected is not None and expected.variant != config.variant:
        raise CheckpointVariantError(
            f"Checkpoint {path} holds variant {config.variant.value},"
            f" not {expected.variant.value}"
        )

    model = build_model(config)
    offset = _HEADER.size + manifest_size
    arrays: List[Tuple[Dict[str, Any], np.ndarray]] = []
    for entry in entries:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        blob = np.frombuffer(body, dtype=dtype, count=count, offset=offset)
        arrays.append((entry, blob.reshape(entry["shape"]).astype(model.dtype)))
        offset += count * dtype.itemsize
    if offset != len(body):
        raise CheckpointError(f"Checkpoint {path} size disagrees with its manifest")
    _restore(model, arrays, manifest.get("norm_batches", {}))
    LOG.debug("Loaded checkpoint %s: %s.", path, config.to_dict())
    return Checkpoint(
        model=model,
        optimizer_steps=int(manifest["optimizer_steps"]),
        train_config=manifest.get("train"),
        manifest=manifest,
    )


def _state(model: RelationModel):
    """Yield `(kind, name, array)` of everything a checkpoint stores."""
    for name, param in model.named_params():
        yield "param", name, param.data
        yield "moment1", name, param.moment1
        yield "moment2", name, param.moment2
    for name, module in model.named_modules():
        if isinstance(module, BatchNorm2d) and module.running.mean is not None:
            yield "running_mean", name, module.running.mean
            yield "running_var", name, module.running.var


def _restore(model: RelationModel, arrays, norm_batches: Dict[str, int]) -> None:
    """Put the loaded arrays into the model.

    Raises:
        CheckpointError: Names or shapes do not fit the model.
    """
    params = dict(model.named_params())
    norms = {
        name: module
        for name, module in model.named_modules()
        if isinstance(module, BatchNorm2d)
    }
    for entry, array in arrays:
        kind, name = entry["kind"], entry["name"]
        target = params.get(name) if kind in ("param", "moment1", "moment2") else None
        norm = norms.get(name) if kind.startswith("running_") else None
        if target is None and norm is None:
            raise CheckpointError(f"Checkpoint tensor {kind} {name} fits no layer")
        if target is not None and array.shape != target.shape:
            raise CheckpointError(
                f"Checkpoint tensor {name} has shape {array.shape},"
                f" the model expects {target.shape}"
            )
        if kind == "param":
            target.data = array
        elif kind == "moment1":
            target.moment1 = array
        elif kind == "moment2":
            target.moment2 = array
        elif kind == "running_mean":
            norm.running.mean = array
        else:
            norm.running.var = array
    for name, batches in norm_batches.items():
        if name in norms:
            norms[name].running.batches = int(batches)
