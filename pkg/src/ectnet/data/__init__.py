"""Scan datasets: container I/O, splits, normalisation, cropping, synthesis."""
from .dataset import (
    CONTAINER_MAGIC,
    CANONICAL_SHAPE,
    Dataset,
    ScanSegment,
    decimate,
    load_mddect,
    save_mddect,
    split_by_volunteer,
    to_grid,
)
from .export import PLANE_HEADER, export_complex_plane
from .labels import ALL_LABELS, CLASS_NAMES, DEFECT_DEPTHS_MM, NUM_CLASSES, Label, label_index, within_tolerance
from .synth import SynthConfig, class_indices, synth_generate
from .transforms import (
    NormStats,
    apply_znorm,
    compute_norm_stats,
    crop_at,
    crop_offsets,
    random_crop,
    random_crop_batch,
)

__all__ = [
    "ALL_LABELS",
    "CLASS_NAMES",
    "CONTAINER_MAGIC",
    "DEFECT_DEPTHS_MM",
    "Dataset",
    "Label",
    "NUM_CLASSES",
    "NormStats",
    "CANONICAL_SHAPE",
    "PLANE_HEADER",
    "ScanSegment",
    "SynthConfig",
    "apply_znorm",
    "class_indices",
    "compute_norm_stats",
    "crop_at",
    "crop_offsets",
    "decimate",
    "export_complex_plane",
    "label_index",
    "load_mddect",
    "random_crop",
    "random_crop_batch",
    "save_mddect",
    "split_by_volunteer",
    "synth_generate",
    "to_grid",
    "within_tolerance",
]
