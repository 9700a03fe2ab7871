"""Scan segments, datasets, the container format and volunteer-based splits."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..errors import DataError
from ..numerics import Rng, as_rng
from .labels import NUM_CLASSES, Label

META_FIELDS = ("volunteer", "angle", "direction", "repeat")
SPLIT_TAGS = ("train", "validation", "test", "unsplit")
CONTAINER_MAGIC = b"MDDECT01"
AXES = ("volunteer", "angle", "direction", "repeat", "class", "time", "channel")
CANONICAL_SHAPE = (30, 8, 2, 5, 20, 1250, 2)


@dataclass(frozen=True)
class ScanSegment:
    """One (T, 2) in-phase/quadrature trace with its label and provenance."""

    samples: np.ndarray
    label: Label
    volunteer: int = 0
    angle: int = 0
    direction: int = 0
    repeat: int = 0

    def __post_init__(self):
        s = self.samples
        if s.ndim != 2 or s.shape[1] != 2:
            raise DataError(f"segment samples must be (T, 2), got {s.shape}")
        if not np.isfinite(s).all():
            raise DataError("segment contains non-finite samples")

    @property
    def length(self) -> int:
        return self.samples.shape[0]

    @property
    def meta(self) -> dict:
        return {k: getattr(self, k) for k in META_FIELDS}


@dataclass
class Dataset:
    """Column-oriented collection of segments.

    ``samples`` (n, T, 2), ``labels`` (n,) class indices, ``meta`` (n, 4) ints
    ordered as volunteer, angle, direction, repeat.
    """

    samples: np.ndarray
    labels: np.ndarray
    meta: np.ndarray
    split_tag: str = "unsplit"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.meta = np.asarray(self.meta, dtype=np.int64).reshape(-1, len(META_FIELDS))
        n = self.samples.shape[0]
        if self.samples.ndim != 3 or self.samples.shape[2] != 2:
            raise DataError(f"dataset samples must be (n, T, 2), got {self.samples.shape}")
        if self.labels.shape[0] != n or self.meta.shape[0] != n:
            raise DataError("samples, labels and meta disagree on the number of segments")
        if n and (self.labels.min() < 0 or self.labels.max() >= NUM_CLASSES):
            raise DataError("labels outside the 20-class range")
        if self.split_tag not in SPLIT_TAGS:
            raise DataError(f"unknown split tag {self.split_tag!r}")

    def __len__(self) -> int:
        return self.samples.shape[0]

    def __getitem__(self, i: int) -> ScanSegment:
        v, a, d, r = (int(x) for x in self.meta[i])
        return ScanSegment(self.samples[i], Label.from_index(self.labels[i]), v, a, d, r)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    @property
    def volunteers(self) -> np.ndarray:
        return self.meta[:, 0]

    def volunteer_ids(self) -> list[int]:
        return sorted(int(v) for v in np.unique(self.volunteers))

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=NUM_CLASSES)

    def subset(self, index, split_tag: str | None = None) -> "Dataset":
        return Dataset(self.samples[index], self.labels[index], self.meta[index],
                       split_tag or self.split_tag, dict(self.info))

    def with_samples(self, samples: np.ndarray) -> "Dataset":
        return Dataset(samples, self.labels.copy(), self.meta.copy(), self.split_tag, dict(self.info))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.samples.shape).encode())
        h.update(np.ascontiguousarray(self.samples).tobytes())
        h.update(self.labels.tobytes())
        h.update(self.meta.tobytes())
        return h.hexdigest()

    @classmethod
    def from_segments(cls, segments, split_tag: str = "unsplit") -> "Dataset":
        segments = list(segments)
        if not segments:
            return cls(np.zeros((0, 0, 2)), np.zeros(0), np.zeros((0, 4)), split_tag)
        return cls(
            np.stack([s.samples for s in segments]),
            np.array([s.label.index for s in segments]),
            np.array([[s.volunteer, s.angle, s.direction, s.repeat] for s in segments]),
            split_tag,
        )


# -- container format ------------------------------------------------------------

def _from_grid(grid: np.ndarray, source: str) -> Dataset:
    if grid.ndim != 7:
        raise DataError(f"{source}: expected 7 axes {AXES}, got shape {grid.shape}")
    if grid.shape[4] != NUM_CLASSES or grid.shape[6] != 2:
        raise DataError(f"{source}: class axis must be 20 and channel axis 2, got shape {grid.shape}")
    if not np.isfinite(grid).all():
        raise DataError(f"{source}: payload contains non-finite values")
    v, a, d, r, k, t, c = grid.shape
    idx = np.indices((v, a, d, r, k)).reshape(5, -1).T
    return Dataset(
        grid.reshape(-1, t, c),
        idx[:, 4],
        idx[:, :4],
        info={"source": source, "grid_shape": list(grid.shape)},
    )


def _read_container(path: Path) -> np.ndarray:
    data = path.read_bytes()
    head = len(CONTAINER_MAGIC) + 7 * 8
    if len(data) < head or data[: len(CONTAINER_MAGIC)] != CONTAINER_MAGIC:
        raise DataError(f"{path}: not an MDDECT container (bad magic or short header)")
    shape = struct.unpack("<7Q", data[len(CONTAINER_MAGIC) : head])
    expected = int(np.prod(shape)) * 4
    if len(data) - head != expected:
        raise DataError(
            f"{path}: header shape {shape} needs {expected} payload bytes, file has {len(data) - head} (truncated?)"
        )
    return np.frombuffer(data, dtype="<f4", offset=head).reshape(shape).astype(np.float32)


def _read_npy(path: Path) -> np.ndarray:
    return np.load(path, allow_pickle=False)


# Import adapters keyed by file suffix. The canonical container is the default;
# other layouts (e.g. a published numpy dump) plug in here.
ADAPTERS: dict[str, Callable[[Path], np.ndarray]] = {".npy": _read_npy}


def load_mddect(path, adapter: Callable[[Path], np.ndarray] | None = None) -> Dataset:
    """Load a 7-axis (volunteer, angle, direction, repeat, class, time, channel) tensor."""
    path = Path(path)
    if adapter is None:
        adapter = ADAPTERS.get(path.suffix.lower(), _read_container)
    try:
        grid = adapter(path)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    return _from_grid(np.asarray(grid), str(path))


def to_grid(ds: Dataset) -> np.ndarray:
    """Inverse of loading: rebuild the dense 7-axis tensor (needs a complete grid)."""
    if len(ds) == 0:
        raise DataError("cannot write an empty dataset")
    keys = []
    for col in range(4):
        uniq, inv = np.unique(ds.meta[:, col], return_inverse=True)
        keys.append((uniq.size, inv))
    shape = tuple(k[0] for k in keys) + (NUM_CLASSES, ds.length, 2)
    if int(np.prod(shape[:5])) != len(ds):
        raise DataError(f"dataset of {len(ds)} segments does not fill a {shape[:5]} grid")
    grid = np.full(shape, np.nan, dtype=np.float32)
    grid[keys[0][1], keys[1][1], keys[2][1], keys[3][1], ds.labels] = ds.samples
    if np.isnan(grid).any():
        raise DataError("dataset grid has holes (duplicate or missing metadata)")
    return grid


def save_mddect(ds: Dataset, path) -> Path:
    grid = to_grid(ds)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC)
        fh.write(struct.pack("<7Q", *grid.shape))
        fh.write(grid.astype("<f4").tobytes())
    return path


# -- splitting and decimation ------------------------------------------------------

def split_by_volunteer(ds: Dataset, test_ids, val_ids=None, rng: Rng | int | None = None,
                       n_val: int = 3) -> tuple[Dataset, Dataset, Dataset]:
    """Partition by operator so no volunteer appears in two splits.

    ``val_ids=None`` draws ``n_val`` validation volunteers from the
    non-test volunteers with ``rng``; the chosen ids are recorded in each
    split's ``info``.
    """
    test_ids = sorted({int(v) for v in test_ids})
    if val_ids is None:
        pool = [v for v in ds.volunteer_ids() if v not in test_ids]
        if len(pool) < n_val:
            raise DataError(f"cannot draw {n_val} validation volunteers from {len(pool)}")
        chosen = as_rng(rng).stream("split").choice(np.array(pool, dtype=np.int64), size=n_val, replace=False)
        val_ids = sorted(int(v) for v in chosen)
    else:
        val_ids = sorted({int(v) for v in val_ids})
    overlap = set(test_ids) & set(val_ids)
    if overlap:
        raise DataError(f"volunteers {sorted(overlap)} assigned to both test and validation")
    vol = ds.volunteers
    test_mask = np.isin(vol, test_ids)
    val_mask = np.isin(vol, val_ids)
    train_mask = ~(test_mask | val_mask)
    ids = {"test_ids": test_ids, "val_ids": val_ids}
    out = []
    for mask, tag in ((train_mask, "train"), (val_mask, "validation"), (test_mask, "test")):
        part = ds.subset(np.flatnonzero(mask), tag)
        part.info.update(ids)
        out.append(part)
    return tuple(out)


def decimate(ds: Dataset, factor: int = 5, lowpass: bool = False) -> Dataset:
    """Keep every ``factor``-th sample starting at index 0.

    ``lowpass=True`` applies scipy's zero-phase FIR anti-alias filter first.
    """
    if factor < 1:
        raise DataError("decimation factor must be >= 1")
    if ds.length % factor:
        raise DataError(f"length {ds.length} is not divisible by {factor}")
    if factor == 1:
        return ds.with_samples(ds.samples.copy())
    if lowpass:
        from scipy.signal import decimate as _sp_decimate

        out = _sp_decimate(ds.samples, factor, ftype="fir", axis=1, zero_phase=True)
        return ds.with_samples(out.astype(ds.samples.dtype))
    return ds.with_samples(np.ascontiguousarray(ds.samples[:, ::factor, :]))
