"""Plain records shared between the data pipeline, the model and evaluation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

from .detection.head import CLASS_NAMES


def class_index(name_or_index) -> int:
    """1-based foreground class index from a name or an index."""
    if isinstance(name_or_index, str):
        try:
            return CLASS_NAMES.index(name_or_index) + 1
        except ValueError:
            raise ValueError(f"unknown class {name_or_index!r}") from None
    idx = int(name_or_index)
    if not 1 <= idx <= len(CLASS_NAMES):
        raise ValueError(f"class index {idx} outside 1..{len(CLASS_NAMES)}")
    return idx


@dataclass(frozen=True)
class GroundTruthBox:
    label: int
    x: float
    y: float
    w: float
    h: float
    image_id: str | int = 0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"ground-truth box needs positive size, got {self.w}x{self.h}")

    @property
    def xywh(self) -> Tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class Detection:
    label: int
    score: float
    x: float
    y: float
    w: float
    h: float
    image_id: str | int = 0

    @property
    def xywh(self) -> Tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)
