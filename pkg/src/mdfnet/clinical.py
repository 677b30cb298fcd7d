"""Clinical feature encoding and spatialisation into an image-shaped tensor.

The ten triage/demographic features become a latent vector: the nine numeric
ones are z-scored with training-split statistics and the categorical gender
is looked up in a learned embedding table of width 55, giving length 64.
``SpatialisationStack`` lifts that vector to a ``(1, C, 2**e, 2**e)`` pseudo
image with ``e`` stride-2 deconvolution + convolution layers.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .tensor import Tensor, ops
from .tensor.nn import Conv2d, Deconv2d, Embedding, Module

NUMERIC_FEATURES: Tuple[str, ...] = (
    "temperature", "heartrate", "resprate", "o2sat", "sbp", "dbp", "pain", "acuity", "age",
)
CATEGORICAL_FEATURES: Tuple[str, ...] = ("gender",)
ALL_FEATURES: Tuple[str, ...] = NUMERIC_FEATURES + CATEGORICAL_FEATURES
GENDER_CATEGORIES: Tuple[str, ...] = ("F", "M")

LATENT_SIZE = 64
EMBEDDING_WIDTH = LATENT_SIZE - len(NUMERIC_FEATURES)  # 55
STD_FLOOR = 1e-8


class ClinicalDataError(ValueError):
    pass


@dataclass(frozen=True)
class ClinicalRecord:
    """One patient's triage vitals plus age and gender.

    Units: temperature in degrees Fahrenheit, heart rate in beats/min,
    respiratory rate in breaths/min, o2sat in percent, blood pressures in
    mmHg, pain on 0-10, acuity 1 (most urgent) to 5. ``None`` marks a
    missing value.
    """

    temperature: Optional[float]
    heartrate: Optional[float]
    resprate: Optional[float]
    o2sat: Optional[float]
    sbp: Optional[float]
    dbp: Optional[float]
    pain: Optional[float]
    acuity: Optional[float]
    age: Optional[float]
    gender: Optional[str]

    def __post_init__(self):
        for name in NUMERIC_FEATURES:
            v = getattr(self, name)
            if v is not None and not math.isfinite(v):
                raise ClinicalDataError(f"{name} is not finite: {v}")
        if self.pain is not None and not 0 <= self.pain <= 10:
            raise ClinicalDataError(f"pain must be in [0, 10], got {self.pain}")
        if self.acuity is not None and not 1 <= self.acuity <= 5:
            raise ClinicalDataError(f"acuity must be in [1, 5], got {self.acuity}")
        if self.gender is not None and self.gender not in GENDER_CATEGORIES:
            raise ClinicalDataError(f"unknown gender category {self.gender!r}")

    def numeric(self) -> List[Optional[float]]:
        return [getattr(self, n) for n in NUMERIC_FEATURES]

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, object]) -> "ClinicalRecord":
        kwargs = {}
        for f in fields(cls):
            v = d.get(f.name)
            if f.name == "gender":
                kwargs[f.name] = None if v in (None, "") else str(v)
            else:
                kwargs[f.name] = None if v in (None, "") else float(v)
        return cls(**kwargs)


@dataclass
class NormalizationStats:
    """Per-feature mean/std (std floored) and medians for optional imputation."""

    features: Tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    median: np.ndarray

    def to_arrays(self, prefix: str = "norm.") -> Dict[str, np.ndarray]:
        return {prefix + "mean": self.mean, prefix + "std": self.std, prefix + "median": self.median}

    @classmethod
    def from_arrays(cls, features: Sequence[str], arrays: Dict[str, np.ndarray],
                    prefix: str = "norm.") -> "NormalizationStats":
        return cls(tuple(features), arrays[prefix + "mean"], arrays[prefix + "std"], arrays[prefix + "median"])


def _numeric_subset(features: Sequence[str]) -> Tuple[str, ...]:
    unknown = [f for f in features if f not in ALL_FEATURES]
    if unknown:
        raise ClinicalDataError(f"unknown clinical features: {unknown}")
    return tuple(f for f in NUMERIC_FEATURES if f in features)


def fit_normalization(train_records: Sequence[ClinicalRecord],
                      features: Sequence[str] = ALL_FEATURES) -> NormalizationStats:
    """Mean and population std of each selected numeric feature on the training split."""
    if len(train_records) == 0:
        raise ClinicalDataError("cannot fit normalization on an empty training set")
    names = _numeric_subset(features)
    cols = np.array([[np.nan if getattr(r, n) is None else getattr(r, n) for n in names]
                     for r in train_records], dtype=np.float64).reshape(len(train_records), len(names))
    mean = np.nanmean(cols, axis=0) if cols.size else np.zeros(0)
    std = np.nanstd(cols, axis=0) if cols.size else np.zeros(0)
    median = np.nanmedian(cols, axis=0) if cols.size else np.zeros(0)
    # all-missing columns fall back to neutral statistics
    mean = np.where(np.isfinite(mean), mean, 0.0)
    median = np.where(np.isfinite(median), median, 0.0)
    std = np.maximum(np.where(np.isfinite(std), std, 1.0), STD_FLOOR)
    return NormalizationStats(names, mean, std, median)


def numeric_matrix(records: Sequence[ClinicalRecord], stats: NormalizationStats,
                   impute: str = "reject") -> np.ndarray:
    """Z-scored numeric block, shape (len(records), n_numeric)."""
    if impute not in ("reject", "median"):
        raise ValueError(f"impute must be 'reject' or 'median', got {impute!r}")
    out = np.empty((len(records), len(stats.features)))
    for i, r in enumerate(records):
        for j, name in enumerate(stats.features):
            v = getattr(r, name)
            if v is None:
                if impute == "reject":
                    raise ClinicalDataError(f"missing {name} and imputation is disabled")
                v = stats.median[j]
            out[i, j] = v
    return (out - stats.mean) / stats.std


def gender_ids(records: Sequence[ClinicalRecord]) -> np.ndarray:
    ids = []
    for r in records:
        if r.gender is None:
            raise ClinicalDataError("missing gender")
        ids.append(GENDER_CATEGORIES.index(r.gender))
    return np.array(ids, dtype=np.int64)


class ClinicalEncoder(Module):
    """Builds the latent clinical vector: z-scored numerics then the gender embedding row.

    ``features`` selects a subset of the ten inputs (feature ablations); the
    vector length is ``n_numeric + embedding_width`` when gender is kept and
    ``n_numeric`` otherwise.
    """

    def __init__(self, stats: NormalizationStats, rng: np.random.Generator,
                 features: Sequence[str] = ALL_FEATURES, embedding_width: int = EMBEDDING_WIDTH,
                 impute: str = "reject"):
        if len(features) == 0:
            raise ClinicalDataError("at least one clinical feature is required")
        numeric = _numeric_subset(features)
        if numeric != stats.features:
            raise ClinicalDataError(f"normalization stats cover {stats.features}, encoder wants {numeric}")
        self.stats = stats
        self.features = tuple(f for f in ALL_FEATURES if f in features)
        self.use_gender = "gender" in features
        self.impute = impute
        self.embedding_width = embedding_width
        if self.use_gender:
            self.embedding = Embedding(rng, len(GENDER_CATEGORIES), embedding_width)

    @property
    def output_size(self) -> int:
        return len(self.stats.features) + (self.embedding_width if self.use_gender else 0)

    def __call__(self, records: Sequence[ClinicalRecord]) -> Tensor:
        num = Tensor(numeric_matrix(records, self.stats, self.impute))
        if not self.use_gender:
            return num
        emb = self.embedding(gender_ids(records))
        return ops.concat([num, emb], axis=1)


def encode_clinical(record: ClinicalRecord, stats: NormalizationStats, embedding_table: np.ndarray,
                    impute: str = "reject") -> np.ndarray:
    """Plain-array encoding of a single record (no tape): numerics then embedding row."""
    num = numeric_matrix([record], stats, impute)[0]
    return np.concatenate([num, np.asarray(embedding_table)[gender_ids([record])[0]]])


class SpatialisationStack(Module):
    """``e`` layers of (2x2 stride-2 deconv, 3x3 conv) taking (B, n) to (B, C, 2**e, 2**e).

    The vector enters as an ``n``-channel 1x1 map. Every layer but the last
    ends in a ReLU; the last conv projects to ``out_channels`` and stays linear
    so the pseudo-image is not clipped at zero.
    """

    def __init__(self, rng: np.random.Generator, n_in: int, e: int, out_channels: int = 1,
                 channels: int = 8, image_size: Optional[int] = None):
        if e < 1:
            raise ValueError("spatialisation needs at least one layer")
        if image_size is not None and 2 ** e != image_size:
            raise ValueError(f"2**e = {2 ** e} does not match the image size {image_size}")
        self.e = e
        self.n_in = n_in
        self.out_channels = out_channels
        self.layers = []
        c_prev = n_in
        for i in range(e):
            c_out = out_channels if i == e - 1 else channels
            self.layers.append(_SpaLayer(rng, c_prev, channels, c_out))
            c_prev = c_out

    @property
    def output_size(self) -> Tuple[int, int, int]:
        return (2 ** self.e, 2 ** self.e, self.out_channels)

    def __call__(self, z: Tensor) -> Tensor:
        if z.ndim != 2 or z.shape[1] != self.n_in:
            raise ValueError(f"expected clinical vectors of shape (B, {self.n_in}), got {z.shape}")
        h = ops.reshape(z, (z.shape[0], self.n_in, 1, 1))
        for i, layer in enumerate(self.layers):
            h = layer(h, final=(i == self.e - 1))
        return h


class _SpaLayer(Module):
    def __init__(self, rng, c_in: int, c_mid: int, c_out: int):
        self.deconv = Deconv2d(rng, c_in, c_mid, kernel=2, stride=2)
        self.conv = Conv2d(rng, c_mid, c_out, kernel=3, padding=1)

    def __call__(self, x: Tensor, final: bool = False) -> Tensor:
        h = self.conv(self.deconv(x))
        return h if final else ops.relu(h)


def spatialise(z: Tensor, stack: SpatialisationStack, image_size: Optional[int] = None) -> Tensor:
    """Lift clinical vectors to pseudo-images; checks ``2**e`` against ``image_size``."""
    if image_size is not None and stack.output_size[0] != image_size:
        raise ValueError(f"spatialisation produces {stack.output_size[0]}px, image is {image_size}px")
    return stack(z)
