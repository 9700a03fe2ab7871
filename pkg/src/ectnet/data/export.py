"""Delimited-text exports for complex-plane plots."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .labels import CLASS_NAMES

PLANE_HEADER = ("sample_id", "label", "predicted", "time_index", "in_phase", "quadrature")


def export_complex_plane(ds: Dataset, path, predicted: Sequence[int] | None = None,
                         flags: Sequence[str] | None = None, sample_ids: Sequence[int] | None = None,
                         delimiter: str = ",") -> Path:
    """One row per (segment, time step). ``flags`` adds a trailing ``status`` column."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = len(ds)
    ids = np.arange(n) if sample_ids is None else np.asarray(sample_ids)
    header = PLANE_HEADER + (("status",) if flags is not None else ())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(header)
        t_idx = np.arange(ds.length) if n else np.zeros(0, dtype=int)
        for i in range(n):
            label = CLASS_NAMES[ds.labels[i]]
            pred = CLASS_NAMES[predicted[i]] if predicted is not None else ""
            extra = (flags[i],) if flags is not None else ()
            seg = ds.samples[i]
            w.writerows(
                (int(ids[i]), label, pred, int(t), repr(float(seg[t, 0])), repr(float(seg[t, 1]))) + extra
                for t in t_idx
            )
    return path
