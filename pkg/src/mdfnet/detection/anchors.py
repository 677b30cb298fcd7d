from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class AnchorGrid:
    """Anchors for every feature-map cell, ordered cell-major then (scale, ratio).

    ``boxes`` is (H' * W' * K, 4) in xyxy image pixels; index ``(i * W' + j) * K + k``
    is anchor ``k`` of cell ``(i, j)``.
    """

    feature_hw: Tuple[int, int]
    stride: float
    scales: Tuple[float, ...]
    ratios: Tuple[float, ...]
    boxes: np.ndarray

    @property
    def per_cell(self) -> int:
        return len(self.scales) * len(self.ratios)

    def __len__(self) -> int:
        return self.boxes.shape[0]


def make_anchor_grid(feature_hw: Tuple[int, int], image_size: int,
                     scales: Sequence[float], ratios: Sequence[float] = (0.5, 1.0, 2.0)) -> AnchorGrid:
    """Anchors centred on cell centres; ratio is height / width at constant area ``scale**2``."""
    fh, fw = feature_hw
    if fh <= 0 or fw <= 0 or not scales or not ratios:
        raise ValueError("empty anchor grid")
    stride = image_size / fw
    base = []
    for s in scales:
        for r in ratios:
            w = s / np.sqrt(r)
            h = s * np.sqrt(r)
            base.append((-w / 2, -h / 2, w / 2, h / 2))
    base = np.array(base)
    cy = (np.arange(fh) + 0.5) * stride
    cx = (np.arange(fw) + 0.5) * stride
    yy, xx = np.meshgrid(cy, cx, indexing="ij")
    centres = np.stack([xx, yy, xx, yy], axis=-1).reshape(-1, 1, 4)
    boxes = (centres + base[None]).reshape(-1, 4)
    return AnchorGrid((fh, fw), stride, tuple(float(s) for s in scales), tuple(float(r) for r in ratios), boxes)


def default_scales(image_size: int) -> Tuple[float, ...]:
    return (image_size / 8, image_size / 4, image_size / 2)
