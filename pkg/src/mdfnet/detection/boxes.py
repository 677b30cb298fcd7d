"""Box geometry: (x, y, w, h) top-left boxes in image pixels, delta coding, IoU."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

# largest log-scale delta accepted when decoding; exp(4.135) ~ 62x
MAX_LOG_DELTA = math.log(1000.0 / 16)


@dataclass(frozen=True)
class Proposal:
    x: float
    y: float
    w: float
    h: float
    c_obj: float = 1.0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"proposal needs positive size, got w={self.w}, h={self.h}")

    def xywh(self) -> Tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


def xywh_to_xyxy(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    return np.concatenate([b[..., :2], b[..., :2] + b[..., 2:4]], axis=-1)


def xyxy_to_xywh(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    return np.concatenate([b[..., :2], b[..., 2:4] - b[..., :2]], axis=-1)


def clip_xyxy(b: np.ndarray, width: float, height: float) -> np.ndarray:
    out = np.array(b, dtype=np.float64, copy=True)
    out[..., 0::2] = np.clip(out[..., 0::2], 0.0, width)
    out[..., 1::2] = np.clip(out[..., 1::2], 0.0, height)
    return out


def area_xyxy(b: np.ndarray) -> np.ndarray:
    return np.clip(b[..., 2] - b[..., 0], 0, None) * np.clip(b[..., 3] - b[..., 1], 0, None)


def intersection_xyxy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise intersection areas, shape (len(a), len(b))."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0, None)
    return wh[..., 0] * wh[..., 1]


def iou_xyxy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    inter = intersection_xyxy(a, b)
    union = area_xyxy(a)[:, None] + area_xyxy(b)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def encode_deltas(gt_xyxy: np.ndarray, ref_xyxy: np.ndarray) -> np.ndarray:
    """Centre-offset / log-size deltas of ``gt`` relative to ``ref`` (both (N, 4) xyxy)."""
    gt = np.asarray(gt_xyxy, dtype=np.float64).reshape(-1, 4)
    ref = np.asarray(ref_xyxy, dtype=np.float64).reshape(-1, 4)
    rw, rh = ref[:, 2] - ref[:, 0], ref[:, 3] - ref[:, 1]
    rx, ry = ref[:, 0] + 0.5 * rw, ref[:, 1] + 0.5 * rh
    gw, gh = gt[:, 2] - gt[:, 0], gt[:, 3] - gt[:, 1]
    gx, gy = gt[:, 0] + 0.5 * gw, gt[:, 1] + 0.5 * gh
    return np.stack([(gx - rx) / rw, (gy - ry) / rh, np.log(gw / rw), np.log(gh / rh)], axis=1)


def apply_deltas(ref_xyxy: np.ndarray, deltas: np.ndarray,
                 image_size: Optional[Tuple[float, float]] = None) -> np.ndarray:
    """Inverse of :func:`encode_deltas`; optionally clips to ``(width, height)``."""
    ref = np.asarray(ref_xyxy, dtype=np.float64).reshape(-1, 4)
    d = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    if not np.isfinite(d).all():
        raise ValueError("non-finite box deltas")
    rw, rh = ref[:, 2] - ref[:, 0], ref[:, 3] - ref[:, 1]
    rx, ry = ref[:, 0] + 0.5 * rw, ref[:, 1] + 0.5 * rh
    cx, cy = rx + d[:, 0] * rw, ry + d[:, 1] * rh
    w = rw * np.exp(np.minimum(d[:, 2], MAX_LOG_DELTA))
    h = rh * np.exp(np.minimum(d[:, 3], MAX_LOG_DELTA))
    out = np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)
    if image_size is not None:
        out = clip_xyxy(out, *image_size)
    return out


def decode_boxes(proposal: Proposal, deltas: Sequence[float],
                 image_size: Optional[Tuple[float, float]] = None) -> Tuple[float, float, float, float]:
    """Apply ``(dx, dy, dw, dh)`` to one proposal; returns an (x, y, w, h) box."""
    ref = xywh_to_xyxy(np.array(proposal.xywh()))
    out = apply_deltas(ref, np.asarray(deltas, dtype=np.float64), image_size)[0]
    return tuple(float(v) for v in xyxy_to_xywh(out))


def encode_box(gt_xywh: Sequence[float], proposal: Proposal) -> np.ndarray:
    return encode_deltas(xywh_to_xyxy(np.array(gt_xywh)), xywh_to_xyxy(np.array(proposal.xywh())))[0]
