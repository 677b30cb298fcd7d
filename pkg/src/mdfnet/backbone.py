"""Feature extractors for both modalities and the 3-D fusion block."""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np

from .tensor import Tensor, ops
from .tensor.nn import Conv2d, Module


@dataclass(frozen=True)
class BackboneConfig:
    """Stage layout of the small CNN used for both ``f_CXR`` and ``f_clinical``.

    Each stage is a 3x3 convolution with the given stride followed by ReLU,
    optionally followed by ``extra_convs`` stride-1 3x3 convolutions.
    """

    channels: Tuple[int, ...] = (8, 16, 32, 64, 64)
    strides: Tuple[int, ...] = (2, 2, 2, 2, 2)
    in_channels: int = 1
    extra_convs: int = 0

    def __post_init__(self):
        if len(self.channels) != len(self.strides):
            raise ValueError("channels and strides must have one entry per stage")
        if any(s < 1 for s in self.strides):
            raise ValueError("strides must be >= 1")

    @property
    def downsample(self) -> int:
        return int(np.prod(self.strides))

    @property
    def out_channels(self) -> int:
        return self.channels[-1]

    def output_hw(self, size: int) -> int:
        if size % self.downsample:
            raise ValueError(f"input size {size} is not divisible by the stride schedule ({self.downsample})")
        return size // self.downsample

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        return cls(channels=tuple(d["channels"]), strides=tuple(d["strides"]),
                   in_channels=d.get("in_channels", 1), extra_convs=d.get("extra_convs", 0))


PAPER_BACKBONE = BackboneConfig()
DESK_BACKBONE = BackboneConfig(channels=(16, 32, 64), strides=(2, 2, 2))
# default for 64 px training: stop downsampling after two stages so the map is
# 16x16x64 (the full-size layout); at stride 8 a 10-20 px blob covers one or
# two cells and the RoI classifier barely separates textures
DESK_FINE_BACKBONE = BackboneConfig(channels=(16, 32, 64), strides=(2, 2, 1))


class Backbone(Module):
    def __init__(self, rng: np.random.Generator, cfg: BackboneConfig):
        self.cfg = cfg
        self.stages = []
        c_prev = cfg.in_channels
        for c, s in zip(cfg.channels, cfg.strides):
            self.stages.append(Conv2d(rng, c_prev, c, kernel=3, stride=s, padding=1))
            for _ in range(cfg.extra_convs):
                self.stages.append(Conv2d(rng, c, c, kernel=3, stride=1, padding=1))
            c_prev = c

    def __call__(self, x: Tensor) -> Tensor:
        size = x.shape[2]
        if x.shape[2] != x.shape[3]:
            raise ValueError(f"square inputs expected, got {x.shape}")
        self.cfg.output_hw(size)
        h = x
        for conv in self.stages:
            h = ops.relu(conv(h))
        return h


def backbone_forward(image: Tensor, backbone: Backbone) -> Tensor:
    return backbone(image)


class FusionMethod(str, enum.Enum):
    ELEMENTWISE_SUM = "sum"
    CONCAT_LINEAR = "concat-linear"
    CONCAT_CONV = "concat-conv"
    HADAMARD = "hadamard"

    @classmethod
    def parse(cls, value) -> "FusionMethod":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown fusion method {value!r}; choose from {[m.value for m in cls]}") from None


class Fusion(Module):
    """Combine step (sum / product / concat + projection) followed by ``f_fused``.

    ``f_fused`` is two shape-preserving 3x3 conv + ReLU layers. With
    ``clinical_map=None`` only ``f_fused`` runs, which is how the image-only
    modes keep the same depth as the fused ones.
    """

    def __init__(self, rng: np.random.Generator, channels: int, method: FusionMethod = FusionMethod.ELEMENTWISE_SUM):
        self.method = FusionMethod.parse(method)
        self.channels = channels
        if self.method is FusionMethod.CONCAT_LINEAR:
            self.project = Conv2d(rng, 2 * channels, channels, kernel=1)
        elif self.method is FusionMethod.CONCAT_CONV:
            self.project = Conv2d(rng, 2 * channels, channels, kernel=3, padding=1)
        self.fused1 = Conv2d(rng, channels, channels, kernel=3, padding=1)
        self.fused2 = Conv2d(rng, channels, channels, kernel=3, padding=1)

    def combine(self, clinical_map: Tensor, image_map: Tensor) -> Tensor:
        if clinical_map.shape != image_map.shape:
            raise ValueError(f"fusion inputs differ in shape: {clinical_map.shape} vs {image_map.shape}")
        m = self.method
        if m is FusionMethod.ELEMENTWISE_SUM:
            return ops.add(clinical_map, image_map)
        if m is FusionMethod.HADAMARD:
            return ops.mul(clinical_map, image_map)
        return ops.relu(self.project(ops.concat([clinical_map, image_map], axis=1)))

    def __call__(self, clinical_map: Optional[Tensor], image_map: Tensor) -> Tensor:
        h = image_map if clinical_map is None else self.combine(clinical_map, image_map)
        h = ops.relu(self.fused1(h))
        return ops.relu(self.fused2(h))


def fuse(clinical_map: Tensor, image_map: Tensor, fusion: Fusion) -> Tensor:
    return fusion(clinical_map, image_map)
