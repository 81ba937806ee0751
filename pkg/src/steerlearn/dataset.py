"""Frame indexes, train/validation splits, 5x5 clip windows and batching.

On-disk layout: one directory per video under a dataset root, each holding
``index.csv`` and the frame images it references::

    <root>/<video-id>/index.csv
    <root>/<video-id>/<frame files>

``index.csv`` has a header with the columns ``timestamp, frame, camera,
steering, torque, speed``. ``frame`` is a path relative to the video
directory; ``camera`` is ``left``, ``center`` or ``right``; ``steering`` is the
inverse turning radius 1/r.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .tensor_core import SeededRng

log = logging.getLogger(__name__)

COLUMNS = ("timestamp", "frame", "camera", "steering", "torque", "speed")
CAMERAS = ("left", "center", "right")
SEQUENCES = 5
FRAMES = 5


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class FrameRecord:
    image_path: Path
    timestamp: int
    camera: str
    steering: float
    torque: float
    speed: float
    video: str = ""


@dataclass(frozen=True)
class SkippedRow:
    row: int
    reason: str


@dataclass(frozen=True)
class SequenceWindow:
    """``indices[j][k]`` is frame ``k`` of clip ``j``, as positions in the video's record list."""

    indices: tuple[tuple[int, ...], ...]
    label: float
    video: str = ""


def parse_index(csv_path, image_root=None, video: str | None = None) -> tuple[list[FrameRecord], list[SkippedRow]]:
    """Read one ``index.csv``. Rows whose image file is absent are skipped and reported."""
    csv_path = Path(csv_path)
    image_root = csv_path.parent if image_root is None else Path(image_root)
    video = image_root.name if video is None else video
    records, skipped = [], []
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DatasetError(f"{csv_path}: no header")
        header = [h.strip() for h in header]
        for col in COLUMNS:
            if col not in header:
                raise DatasetError(f"{csv_path}: missing column {col!r}")
        pos = {c: header.index(c) for c in COLUMNS}
        last_ts = None
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DatasetError(f"{csv_path}: row {rownum} has {len(row)} fields, header has {len(header)}")
            try:
                ts = int(row[pos["timestamp"]])
                steering = float(row[pos["steering"]])
                torque = float(row[pos["torque"]])
                speed = float(row[pos["speed"]])
            except ValueError as exc:
                raise DatasetError(f"{csv_path}: row {rownum}: {exc}") from None
            camera = row[pos["camera"]].strip()
            if camera not in CAMERAS:
                raise DatasetError(f"{csv_path}: row {rownum}: unknown camera {camera!r}")
            if not math.isfinite(steering):
                raise DatasetError(f"{csv_path}: row {rownum}: non-finite steering")
            if last_ts is not None and ts < last_ts:
                raise DatasetError(f"{csv_path}: row {rownum}: timestamp {ts} goes backwards")
            last_ts = ts
            path = image_root / row[pos["frame"]].strip()
            if not path.is_file():
                skipped.append(SkippedRow(rownum, f"missing image {path}"))
                continue
            records.append(FrameRecord(path, ts, camera, steering, torque, speed, video))
    return records, skipped


@dataclass
class DatasetIndex:
    videos: dict[str, list[FrameRecord]]
    skipped: dict[str, list[SkippedRow]]

    @property
    def records(self) -> list[FrameRecord]:
        return [r for recs in self.videos.values() for r in recs]


def load_dataset(root, camera: str | None = "center") -> DatasetIndex:
    """Parse every ``<root>/<video>/index.csv``; ``camera=None`` keeps all cameras."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not dirs:
        raise DatasetError(f"dataset root {root} has no video directories")
    videos, skipped = {}, {}
    for d in dirs:
        index = d / "index.csv"
        if not index.is_file():
            raise DatasetError(f"{d} has no index.csv")
        recs, skip = parse_index(index, d, d.name)
        if camera is not None:
            recs = [r for r in recs if r.camera == camera]
        videos[d.name], skipped[d.name] = recs, skip
    return DatasetIndex(videos, skipped)


def split(records: Sequence[FrameRecord], ratio: float = 0.8, policy: str = "chronological", seed: int = 0):
    """Partition into (train, validation).

    ``chronological`` keeps the first ``floor(ratio * n)`` frames of every
    video for training; ``seeded-random`` shuffles the whole list with ``seed``.
    """
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    if not records:
        raise DatasetError("cannot split an empty record list")
    records = list(records)
    if policy == "chronological":
        by_video: dict[str, list] = {}
        for r in records:
            by_video.setdefault(r.video, []).append(r)
        train, val = [], []
        for recs in by_video.values():
            k = int(math.floor(ratio * len(recs)))
            train += recs[:k]
            val += recs[k:]
        return train, val
    if policy == "seeded-random":
        perm = SeededRng(seed).permutation(len(records))
        k = int(math.floor(ratio * len(records)))
        return [records[i] for i in perm[:k]], [records[i] for i in perm[k:]]
    raise ValueError(f"unknown split policy {policy!r}")


def make_windows(records: Sequence[FrameRecord], sequences: int = SEQUENCES, frames: int = FRAMES) -> list[SequenceWindow]:
    """All causal windows of one video.

    The window ending at frame ``t`` (for ``t >= sequences + frames - 2``)
    has clip ``j`` covering frames ``t - (sequences + frames - 2) + j`` through
    ``t - (sequences - 1) + j`` and is labelled with the steering of frame ``t``.
    """
    span = sequences + frames - 1
    n = len(records)
    if n < span:
        log.info("video with %d frames is shorter than a %d-frame window; no windows", n, span)
        return []
    video = records[0].video if n else ""
    out = []
    for t in range(span - 1, n):
        start = t - (span - 1)
        idx = tuple(tuple(range(start + j, start + j + frames)) for j in range(sequences))
        out.append(SequenceWindow(idx, records[t].steering, video))
    return out


def batches(items: Sequence, batch_size: int = 32, seed: int = 0, shuffle: bool = True, epoch: int = 0) -> list[list]:
    """Split into batches; the shuffle order depends only on ``(seed, epoch)``. The last batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = SeededRng.derived(seed, epoch).permutation(len(items)) if shuffle else range(len(items))
    ordered = [items[i] for i in order]
    return [ordered[i : i + batch_size] for i in range(0, len(ordered), batch_size)]


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_image(path, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path, format="PNG", compress_level=6)


# --- sample sets consumed by train/eval ----------------------------------


class ArraySamples:
    """In-memory samples: ``inputs[i]`` is a raw frame (uint8), a frame stack, or a float model input."""

    def __init__(self, inputs, labels):
        if len(inputs) != len(labels):
            raise ValueError("inputs and labels differ in length")
        self.inputs = inputs
        self.labels = np.asarray(labels, dtype=np.float64)

    def __len__(self):
        return len(self.labels)

    def get(self, i: int):
        return self.inputs[i], float(self.labels[i])


class FrameSamples:
    """One sample per frame record, images loaded lazily from disk."""

    def __init__(self, records: Sequence[FrameRecord]):
        self.records = list(records)
        self.labels = np.array([r.steering for r in self.records], dtype=np.float64)

    def __len__(self):
        return len(self.records)

    def get(self, i: int):
        r = self.records[i]
        return load_image(r.image_path), r.steering


class WindowSamples:
    """One sample per 5x5 window; ``get`` returns a ``(5, 5, H, W, 3)`` uint8 stack."""

    def __init__(self, videos: dict[str, list[FrameRecord]], sequences: int = SEQUENCES, frames: int = FRAMES, windows=None):
        self.videos = videos
        if windows is None:
            windows = [w for recs in videos.values() for w in make_windows(recs, sequences, frames)]
        self.windows = list(windows)
        # leading frames of each video that no window can label
        self.skipped_frames = sum(min(len(r), sequences + frames - 2) for r in videos.values())
        self.labels = np.array([w.label for w in self.windows], dtype=np.float64)

    def __len__(self):
        return len(self.windows)

    def get(self, i: int):
        w = self.windows[i]
        recs = self.videos[w.video]
        cache: dict[int, np.ndarray] = {}
        clips = []
        for clip in w.indices:
            frames = []
            for k in clip:
                if k not in cache:
                    cache[k] = load_image(recs[k].image_path)
                frames.append(cache[k])
            clips.append(np.stack(frames))
        return np.stack(clips), w.label


def group_by_video(records: Sequence[FrameRecord]) -> dict[str, list[FrameRecord]]:
    out: dict[str, list[FrameRecord]] = {}
    for r in records:
        out.setdefault(r.video, []).append(r)
    return out
