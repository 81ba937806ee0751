"""Binary checkpoint container (``STCK``).

Layout, all integers little-endian::

    magic      4 bytes  b"STCK"
    version    u16      (currently 1)
    count      u32      number of tensor entries
    entries    count x {
        name_len  u16
        name      name_len bytes, UTF-8
        precision u8      0 = float32, 1 = float64
        rank      u8
        extents   rank x u32
        payload   prod(extents) x element size, little-endian, row-major
    }
    meta_len   u32      (optional; absent in bare named-tensor files)
    meta       meta_len bytes of UTF-8 JSON

The metadata JSON carries the model id, the builder arguments needed to
rebuild the graph, per-parameter trainable flags, which entries are
batch-norm buffers, the epoch and the RMSE history. A pretrained-weights
import file is the same container, usually without metadata.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .builders import rebuild
from .graph import ModelGraph

MAGIC = b"STCK"
VERSION = 1
_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_OF = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class CheckpointError(Exception):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class UnknownParameterError(CheckpointError):
    pass


class TensorMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)


@dataclass
class ImportReport:
    loaded: list[str]
    unmatched_in_file: list[str]
    not_in_file: list[str]


def write_tensors(path, tensors: dict[str, np.ndarray], metadata: dict | None = None) -> None:
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _TAG_OF:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<BB", _TAG_OF[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=_TAGS[_TAG_OF[arr.dtype]]).tobytes())
    if metadata is not None:
        meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
        chunks.append(struct.pack("<I", len(meta)) + meta)
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(f"file ends inside {what} (offset {self.pos}, need {n} bytes)")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes())
    if r.take(4, "magic") != MAGIC:
        raise CheckpointFormatError(f"{path}: not an STCK file")
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, this reader handles {VERSION}")
    (count,) = r.unpack("<I", "entry count")
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        (n,) = r.unpack("<H", f"entry {i} name length")
        name = r.take(n, f"entry {i} name").decode("utf-8")
        tag, rank = r.unpack("<BB", f"{name} header")
        if tag not in _TAGS:
            raise CheckpointFormatError(f"{name}: unknown precision tag {tag}")
        shape = r.unpack(f"<{rank}I", f"{name} extents")
        dt = _TAGS[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        payload = r.take(nbytes, f"{name} payload")
        if name in tensors:
            raise CheckpointFormatError(f"duplicate entry {name!r}")
        tensors[name] = np.frombuffer(payload, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    metadata = {}
    if r.pos < len(r.data):
        (n,) = r.unpack("<I", "metadata length")
        metadata = json.loads(r.take(n, "metadata").decode("utf-8"))
        if r.pos != len(r.data):
            raise CheckpointFormatError(f"{len(r.data) - r.pos} trailing bytes after metadata")
    return Checkpoint(tensors, metadata)


def save_checkpoint(g: ModelGraph, path, epoch: int | None = None, rmse_history: list | None = None) -> None:
    tensors = {**g.params, **g.buffers}
    metadata = {
        "model_id": g.model_id,
        "build_args": g.build_args,
        "trainable": g.trainable,
        "buffers": list(g.buffers),
        "epoch": epoch,
        "rmse_history": rmse_history or [],
    }
    write_tensors(path, tensors, metadata)


def restore(g: ModelGraph, ckpt: Checkpoint, strict: bool = True) -> ImportReport:
    """Copy checkpoint tensors into ``g``.

    Strict mode requires the file and the model to hold exactly the same
    names, shapes and precisions and raises on the first difference. Non-strict
    mode loads every name that fits and reports the rest.
    """
    targets = {**g.params, **g.buffers}
    loaded, unmatched = [], []
    for name, arr in ckpt.tensors.items():
        if name not in targets:
            if strict:
                raise UnknownParameterError(f"checkpoint tensor {name!r} has no counterpart in model {g.model_id}")
            unmatched.append(name)
            continue
        want = targets[name]
        if arr.shape != want.shape or (strict and arr.dtype != want.dtype):
            if strict:
                raise TensorMismatchError(
                    f"tensor {name!r}: checkpoint has {arr.dtype}{list(arr.shape)}, model has {want.dtype}{list(want.shape)}"
                )
            unmatched.append(name)
            continue
        loaded.append(name)
    missing = [n for n in targets if n not in ckpt.tensors]
    if strict and missing:
        raise TensorMismatchError(f"model tensor {missing[0]!r} is missing from the checkpoint")
    for name in loaded:
        store = g.params if name in g.params else g.buffers
        store[name] = ckpt.tensors[name].astype(targets[name].dtype, copy=True)
    if strict and "trainable" in ckpt.metadata:
        g.trainable.update({k: bool(v) for k, v in ckpt.metadata["trainable"].items()})
    return ImportReport(loaded, unmatched, missing)


def import_named_tensors(g: ModelGraph, path) -> ImportReport:
    """Load whatever matches from a named-tensor file, e.g. a pretrained trunk."""
    return restore(g, load_checkpoint(path), strict=False)


def load_model(path) -> tuple[ModelGraph, Checkpoint]:
    ckpt = load_checkpoint(path)
    if "build_args" not in ckpt.metadata:
        raise CheckpointFormatError(f"{path}: no model metadata; use import_named_tensors for bare tensor files")
    g = rebuild(ckpt.metadata["build_args"])
    restore(g, ckpt, strict=True)
    return g, ckpt
