"""Seeded synthetic multimodal detection data with a controllable image/clinical coupling.

Each 64x64 grayscale image holds 1-3 elliptical blobs on a noisy background.
Blob texture encodes the class, except that Consolidation and Pulmonary Edema
share one texture (the *ambiguous pair*). Within an image every ambiguous
blob carries the same label, and with probability ``kappa`` that label also
drives temperature and respiratory rate (fever + mild tachypnoea for
Consolidation, normal temperature + marked tachypnoea for Edema). With
``kappa=0`` the vitals are drawn independently of the label.

Three independent random streams are used per instance ``i``:
``[seed, 0, i]`` for pixels and geometry, ``[seed, 1, i]`` for label choice
and ``[seed, 2, i]`` for clinical values. Pixels therefore never depend on
which member of the ambiguous pair an image was assigned.
"""
from __future__ import annotations

import datetime as _dt
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..detection.head import CLASS_NAMES
from .tables import TIME_FORMAT, SourceTables, write_tables

# appearance groups; classes 3 and 5 (Consolidation, Pulmonary Edema) share "checker"
TEXTURE_OF_CLASS = {1: "solid", 2: "hstripe", 3: "checker", 4: "vstripe", 5: "checker"}
AMBIGUOUS_PAIR = (3, 5)
GROUPS = ("solid", "hstripe", "checker", "vstripe")

# (temperature mean, sd), (resprate mean, sd) of the coupled signal
VITALS_OF_CLASS = {3: ((101.5, 0.6), (17.0, 2.0)), 5: ((98.4, 0.5), (26.0, 2.0))}

_EPOCH = _dt.datetime(2180, 1, 1, 8, 0, 0)


@dataclass
class SynthConfig:
    n_train: int = 800
    n_test: int = 200
    image_size: int = 64
    class_frequencies: Tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 1.0)
    kappa: float = 1.0
    min_blobs: int = 1
    max_blobs: int = 3
    min_size: int = 10
    max_size: int = 22

    def __post_init__(self):
        self.class_frequencies = tuple(float(f) for f in self.class_frequencies)
        if self.n_train < 0 or self.n_test < 0 or self.n_train + self.n_test == 0:
            raise ValueError("instance counts must be non-negative with a positive total")
        if len(self.class_frequencies) != len(CLASS_NAMES):
            raise ValueError(f"need {len(CLASS_NAMES)} class frequencies")
        if any(f < 0 for f in self.class_frequencies) or sum(self.class_frequencies) <= 0:
            raise ValueError("class frequencies must be non-negative and not all zero")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError(f"kappa must lie in [0, 1], got {self.kappa}")
        if not 1 <= self.min_blobs <= self.max_blobs:
            raise ValueError("need 1 <= min_blobs <= max_blobs")
        if not 2 <= self.min_size <= self.max_size < self.image_size:
            raise ValueError("need 2 <= min_size <= max_size < image_size")
        if self.image_size < 8:
            raise ValueError("image_size must be at least 8")

    @property
    def n_total(self) -> int:
        return self.n_train + self.n_test

    def group_weights(self) -> np.ndarray:
        f = self.class_frequencies
        w = np.array([f[0], f[1], f[2] + f[4], f[3]])
        return w / w.sum()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class_frequencies"] = list(self.class_frequencies)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**d)


@dataclass
class SynthInstance:
    dicom_id: str
    image: np.ndarray                  # (S, S) uint8
    boxes: List[Tuple[int, float, float, float, float]]   # (label, xmin, ymin, xmax, ymax)
    ambiguous_class: int
    clinical: Dict[str, object]


def _texture(kind: str, size: int) -> np.ndarray:
    # 3 px bands; the checker sits at a darker level so that it is not only
    # orientation that separates it from the stripes
    yy, xx = np.mgrid[0:size, 0:size]
    band = 3
    if kind == "solid":
        return np.full((size, size), 0.85)
    if kind == "hstripe":
        return np.where((yy // band) % 2 == 0, 0.95, 0.45)
    if kind == "vstripe":
        return np.where((xx // band) % 2 == 0, 0.95, 0.45)
    if kind == "checker":
        return np.where(((yy // band) + (xx // band)) % 2 == 0, 0.75, 0.35)
    raise ValueError(kind)


def _place_blobs(rng: np.random.Generator, cfg: SynthConfig):
    """Non-overlapping (with a 1 px gap) blob rectangles plus their texture groups."""
    n = int(rng.integers(cfg.min_blobs, cfg.max_blobs + 1))
    S = cfg.image_size
    placed: List[Tuple[int, int, int, int]] = []
    groups: List[str] = []
    weights = cfg.group_weights()
    for _ in range(n):
        g = GROUPS[int(rng.choice(len(GROUPS), p=weights))]
        for _attempt in range(50):
            w = int(rng.integers(cfg.min_size, cfg.max_size + 1))
            h = int(rng.integers(cfg.min_size, cfg.max_size + 1))
            x0 = int(rng.integers(0, S - w + 1))
            y0 = int(rng.integers(0, S - h + 1))
            if all(x0 + w + 1 <= a or a1 + 1 <= x0 or y0 + h + 1 <= b or b1 + 1 <= y0
                   for a, b, a1, b1 in placed):
                placed.append((x0, y0, x0 + w, y0 + h))
                groups.append(g)
                break
    return placed, groups


def render_image(seed: int, index: int, cfg: SynthConfig):
    """Pixels (uint8) and blob geometry for instance ``index``; uses only the pixel stream."""
    rng = np.random.default_rng([seed, 0, index])
    S = cfg.image_size
    img = 0.15 + rng.normal(0.0, 0.04, size=(S, S))
    rects, groups = _place_blobs(rng, cfg)
    for (x0, y0, x1, y1), g in zip(rects, groups):
        w, h = x1 - x0, y1 - y0
        yy, xx = np.mgrid[0:h, 0:w]
        inside = ((xx + 0.5 - w / 2) / (w / 2)) ** 2 + ((yy + 0.5 - h / 2) / (h / 2)) ** 2 <= 1.0
        tex = _texture(g, max(w, h))[:h, :w]
        patch = img[y0:y1, x0:x1]
        patch[inside] = tex[inside] + rng.normal(0.0, 0.04, size=int(inside.sum()))
    pix = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    return pix, rects, groups


def draw_labels(seed: int, index: int, cfg: SynthConfig, groups: Sequence[str]) -> Tuple[List[int], int]:
    """Per-blob labels and the image's ambiguous-pair class (label stream only)."""
    rng = np.random.default_rng([seed, 1, index])
    f = cfg.class_frequencies
    pair_total = f[2] + f[4]
    p3 = 0.5 if pair_total == 0 else f[2] / pair_total
    amb = AMBIGUOUS_PAIR[0] if rng.random() < p3 else AMBIGUOUS_PAIR[1]
    lookup = {"solid": 1, "hstripe": 2, "vstripe": 4, "checker": amb}
    return [lookup[g] for g in groups], amb


def draw_clinical(seed: int, index: int, cfg: SynthConfig, ambiguous_class: int) -> Dict[str, object]:
    rng = np.random.default_rng([seed, 2, index])
    coupled = rng.random() < cfg.kappa
    independent = AMBIGUOUS_PAIR[int(rng.integers(0, 2))]
    signal = ambiguous_class if coupled else independent
    (tm, ts), (rm, rs) = VITALS_OF_CLASS[signal]
    rec = {
        "temperature": round(float(rng.normal(tm, ts)), 1),
        "heartrate": round(float(np.clip(rng.normal(88, 14), 40, 180))),
        "resprate": round(float(np.clip(rng.normal(rm, rs), 8, 45))),
        "o2sat": round(float(np.clip(rng.normal(96.5, 2.0), 80, 100))),
        "sbp": round(float(np.clip(rng.normal(132, 18), 80, 220))),
        "dbp": round(float(np.clip(rng.normal(78, 11), 40, 130))),
        "pain": int(rng.integers(0, 11)),
        "acuity": int(rng.integers(1, 6)),
        "age": int(rng.integers(18, 91)),
        "gender": "F" if rng.random() < 0.5 else "M",
    }
    return rec


def make_instance(seed: int, index: int, cfg: SynthConfig) -> SynthInstance:
    pix, rects, groups = render_image(seed, index, cfg)
    labels, amb = draw_labels(seed, index, cfg, groups)
    clinical = draw_clinical(seed, index, cfg, amb)
    boxes = [(lab, float(x0), float(y0), float(x1), float(y1)) for lab, (x0, y0, x1, y1) in zip(labels, rects)]
    return SynthInstance(f"syn{seed}_{index:06d}", pix, boxes, amb, clinical)


def synth_generate(config: SynthConfig, seed: int) -> Tuple[SourceTables, Dict[str, np.ndarray]]:
    """MIMIC-shaped tables plus ``dicom_id -> uint8 image``; deterministic per seed.

    One subject, one ED stay and one frontal study per instance. The first
    ``n_train`` instances form the train split, the rest the test split.
    """
    cfg = config
    pats, stays, tri, meta, ann, split = [], [], [], [], [], []
    images: Dict[str, np.ndarray] = {}
    for i in range(cfg.n_total):
        inst = make_instance(seed, i, cfg)
        subject, stay, study = 10_000_000 + i, 30_000_000 + i, 50_000_000 + i
        intime = _EPOCH + _dt.timedelta(days=i)
        c = inst.clinical
        pats.append({"subject_id": subject, "gender": c["gender"], "anchor_age": c["age"]})
        stays.append({"subject_id": subject, "stay_id": stay, "intime": intime.strftime(TIME_FORMAT),
                      "outtime": (intime + _dt.timedelta(hours=6)).strftime(TIME_FORMAT)})
        tri.append({"subject_id": subject, "stay_id": stay,
                    **{k: c[k] for k in ("temperature", "heartrate", "resprate", "o2sat", "sbp", "dbp",
                                         "pain", "acuity")}})
        meta.append({"dicom_id": inst.dicom_id, "subject_id": subject, "study_id": study, "ViewPosition": "PA",
                     "study_datetime": (intime + _dt.timedelta(hours=2)).strftime(TIME_FORMAT)})
        for lab, x0, y0, x1, y1 in inst.boxes:
            ann.append({"dicom_id": inst.dicom_id, "label": CLASS_NAMES[lab - 1],
                        "xmin": x0, "ymin": y0, "xmax": x1, "ymax": y1})
        split.append({"dicom_id": inst.dicom_id, "split": "train" if i < cfg.n_train else "test"})
        images[inst.dicom_id] = inst.image

    def frame(rows):
        return pd.DataFrame(rows).astype(str)

    tables = SourceTables(frame(pats), frame(stays), frame(tri), frame(meta), frame(ann), frame(split))
    return tables, images


# -- PGM ------------------------------------------------------------------

def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("PGM writer expects a 2-D uint8 array")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    """Binary (P5) 8-bit PGM reader; comments in the header are skipped."""
    raw = Path(path).read_bytes()
    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    data = raw[pos + 1:pos + 1 + w * h]
    if len(data) != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


def write_dataset(tables: SourceTables, images: Dict[str, np.ndarray], out_dir) -> Path:
    out = Path(out_dir)
    write_tables(tables, out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    for dicom, img in sorted(images.items()):
        write_pgm(out / "images" / f"{dicom}.pgm", img)
    return out
