"""The 20-way label taxonomy: Normal, LiftOff, and 18 defect depths."""
from __future__ import annotations

from dataclasses import dataclass

from ..errors import DataError

DEFECT_DEPTHS_MM = tuple(round(0.3 + 0.1 * i, 1) for i in range(18))  # 0.3 .. 2.0
NUM_CLASSES = 20
NORMAL, LIFTOFF = 0, 1
_TOLERANCE_MM = 0.1 + 1e-9


@dataclass(frozen=True, order=True)
class Label:
    """``kind`` is "Normal", "LiftOff" or "Defect"; ``depth_mm`` only for defects."""

    kind: str
    depth_mm: float | None = None

    def __post_init__(self):
        if self.kind in ("Normal", "LiftOff"):
            if self.depth_mm is not None:
                raise DataError(f"{self.kind} carries no depth")
        elif self.kind == "Defect":
            if self.depth_mm is None or round(self.depth_mm, 1) not in DEFECT_DEPTHS_MM:
                raise DataError(f"defect depth {self.depth_mm} not on the 0.3..2.0 mm grid")
            object.__setattr__(self, "depth_mm", round(float(self.depth_mm), 1))
        else:
            raise DataError(f"unknown label kind {self.kind!r}")

    @property
    def index(self) -> int:
        if self.kind == "Normal":
            return NORMAL
        if self.kind == "LiftOff":
            return LIFTOFF
        return 2 + DEFECT_DEPTHS_MM.index(self.depth_mm)

    @classmethod
    def from_index(cls, i: int) -> "Label":
        i = int(i)
        if i == NORMAL:
            return cls("Normal")
        if i == LIFTOFF:
            return cls("LiftOff")
        if 2 <= i < NUM_CLASSES:
            return cls("Defect", DEFECT_DEPTHS_MM[i - 2])
        raise DataError(f"class index {i} outside [0, {NUM_CLASSES})")

    @classmethod
    def defect(cls, depth_mm: float) -> "Label":
        return cls("Defect", depth_mm)

    def __str__(self) -> str:
        return f"{self.depth_mm:.1f}mm" if self.kind == "Defect" else self.kind


ALL_LABELS = tuple(Label.from_index(i) for i in range(NUM_CLASSES))
CLASS_NAMES = tuple(str(lbl) for lbl in ALL_LABELS)


def label_index(label) -> int:
    """Accept a Label, an int index or a display name."""
    if isinstance(label, Label):
        return label.index
    if isinstance(label, str):
        try:
            return CLASS_NAMES.index(label)
        except ValueError:
            raise DataError(f"unknown label name {label!r}") from None
    i = int(label)
    if not 0 <= i < NUM_CLASSES:
        raise DataError(f"class index {i} outside [0, {NUM_CLASSES})")
    return i


def within_tolerance(true_idx: int, pred_idx: int) -> bool:
    """Exact match, or both defects at most one 0.1 mm grid step apart."""
    if true_idx == pred_idx:
        return True
    a, b = Label.from_index(true_idx), Label.from_index(pred_idx)
    if a.kind != "Defect" or b.kind != "Defect":
        return False
    return abs(a.depth_mm - b.depth_mm) <= _TOLERANCE_MM
