"""Channel-wise z-normalisation and random cropping."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from ..numerics import Rng, as_rng
from .dataset import Dataset, ScanSegment


@dataclass(frozen=True)
class NormStats:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        sigma = np.asarray(self.sigma, dtype=np.float64).reshape(-1)
        if mu.shape != sigma.shape:
            raise DataError("mu and sigma must have one entry per channel")
        if not (sigma > 0).all():
            raise DataError(f"sigma must be positive, got {sigma}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "sigma": self.sigma.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.array(d["mu"]), np.array(d["sigma"]))


def compute_norm_stats(train: Dataset | np.ndarray) -> NormStats:
    """Per-channel mean and population standard deviation over samples and time."""
    x = train.samples if isinstance(train, Dataset) else np.asarray(train)
    if x.size == 0:
        raise DataError("cannot compute normalisation statistics of an empty set")
    flat = x.reshape(-1, x.shape[-1]).astype(np.float64)
    mu = flat.mean(axis=0)
    sigma = flat.std(axis=0)
    if (sigma == 0).any():
        raise DataError(f"zero standard deviation in channel(s) {np.flatnonzero(sigma == 0).tolist()}")
    return NormStats(mu, sigma)


def apply_znorm(ds: Dataset | np.ndarray, stats: NormStats):
    x = ds.samples if isinstance(ds, Dataset) else np.asarray(ds)
    out = ((x.astype(np.float64) - stats.mu) / stats.sigma).astype(x.dtype if x.dtype.kind == "f" else np.float64)
    return ds.with_samples(out) if isinstance(ds, Dataset) else out


def crop_offsets(n: int, length: int, out_len: int, rng: Rng | int | None) -> np.ndarray:
    """Uniform start offsets in {0, ..., length - out_len} (both ends included)."""
    if out_len > length:
        raise DataError(f"crop length {out_len} exceeds segment length {length}")
    return as_rng(rng).integers(0, length - out_len + 1, size=n)


def crop_at(x: np.ndarray, offsets: np.ndarray, out_len: int) -> np.ndarray:
    """Window every row of ``x`` (n, T, C) at its own offset; pure indexing."""
    offsets = np.asarray(offsets, dtype=np.int64)
    idx = offsets[:, None] + np.arange(out_len)[None, :]
    return np.take_along_axis(x, idx[:, :, None], axis=1)


def random_crop(seg: ScanSegment, out_len: int = 224, rng: Rng | int | None = None) -> ScanSegment:
    (offset,) = crop_offsets(1, seg.length, out_len, rng)
    return ScanSegment(seg.samples[offset : offset + out_len], seg.label, seg.volunteer, seg.angle,
                       seg.direction, seg.repeat)


def random_crop_batch(x: np.ndarray, out_len: int, rng: Rng | int | None) -> tuple[np.ndarray, np.ndarray]:
    offsets = crop_offsets(x.shape[0], x.shape[1], out_len, rng)
    return crop_at(x, offsets, out_len), offsets
