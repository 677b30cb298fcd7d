from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..tensor import Tensor, ops
from ..tensor.nn import Deconv2d, Linear, Module

CLASS_NAMES: Tuple[str, ...] = (
    "Enlarged Cardiac Silhouette",
    "Atelectasis",
    "Consolidation",
    "Pleural Abnormality",
    "Pulmonary Edema",
)
NUM_CLASSES = len(CLASS_NAMES) + 1  # index 0 is background


@dataclass
class DetectionOutput:
    class_scores: np.ndarray   # (R, 6), rows sum to 1
    box_deltas: np.ndarray     # (R, 6, 4)
    mask_logits: np.ndarray    # (R, 5, M, M)


class DetectionHead(Module):
    """Flattened RoI features (optionally joined with the clinical vector) -> class, box, mask.

    The mask branch sees only the pooled RoI: a 2x2 stride-2 transposed
    convolution from 7x7 to 14x14 with one output map per foreground class.
    """

    def __init__(self, rng: np.random.Generator, channels: int, pool: int = 7,
                 clinical_size: int = 64, use_1d_fusion: bool = True, hidden: int = 256,
                 num_classes: int = NUM_CLASSES):
        self.channels = channels
        self.pool = pool
        self.use_1d_fusion = use_1d_fusion
        self.clinical_size = clinical_size if use_1d_fusion else 0
        self.num_classes = num_classes
        self.in_features = channels * pool * pool + self.clinical_size
        self.fc = Linear(rng, self.in_features, hidden)
        self.cls = Linear(rng, hidden, num_classes)
        self.bbox = Linear(rng, hidden, 4 * num_classes)
        self.mask = Deconv2d(rng, channels, num_classes - 1, kernel=2, stride=2)

    def __call__(self, roi: Tensor, z: Optional[Tensor] = None) -> Tuple[Tensor, Tensor, Tensor]:
        R = roi.shape[0]
        flat = ops.flatten(roi)
        if self.use_1d_fusion:
            if z is None or z.ndim != 2 or z.shape != (R, self.clinical_size):
                raise ValueError(f"1-D fusion needs a clinical tensor of shape ({R}, {self.clinical_size})")
            flat = ops.concat([flat, z], axis=1)
        if flat.shape[1] != self.in_features:
            raise ValueError(f"classifier expects {self.in_features} inputs, got {flat.shape[1]}")
        h = ops.relu(self.fc(flat))
        cls_logits = self.cls(h)
        deltas = ops.reshape(self.bbox(h), (R, self.num_classes, 4))
        masks = self.mask(roi)
        return cls_logits, deltas, masks


def head_forward(roi: Tensor, z_clinical: Optional[Tensor], head: DetectionHead) -> DetectionOutput:
    """Single or batched RoI evaluation returning normalised class scores."""
    if roi.ndim == 3:
        roi = ops.reshape(roi, (1,) + roi.shape)
    if z_clinical is not None and z_clinical.ndim == 1:
        z_clinical = ops.reshape(z_clinical, (1, z_clinical.shape[0]))
    cls_logits, deltas, masks = head(roi, z_clinical if head.use_1d_fusion else None)
    return DetectionOutput(ops.softmax(cls_logits, axis=1).data, deltas.data, masks.data)
