"""Attach each frontal chest X-ray to the ED stay it was taken in, its triage vitals and its boxes."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..clinical import ClinicalRecord
from ..structures import GroundTruthBox, class_index
from ..detection.head import CLASS_NAMES
from .tables import SchemaError, SourceTables, typed, validate_schema

FRONTAL_VIEWS = ("AP", "PA")

REASON_VIEW = "non-frontal view"
REASON_NO_STAY = "no covering ED stay"
REASON_AMBIGUOUS = "ambiguous stay"
REASON_NO_TRIAGE = "missing triage"
REASON_NO_ANNOTATION = "missing annotation"
REASON_NO_IMAGE = "missing image file"
REASONS = (REASON_VIEW, REASON_NO_STAY, REASON_AMBIGUOUS, REASON_NO_TRIAGE, REASON_NO_ANNOTATION, REASON_NO_IMAGE)


@dataclass(frozen=True)
class IdentityKeys:
    subject_id: int
    stay_id: int
    study_id: int
    dicom_id: str


@dataclass
class JoinedInstance:
    keys: IdentityKeys
    image: str                       # path relative to the dataset directory
    record: ClinicalRecord
    boxes: List[GroundTruthBox]
    split: str = "train"

    def to_json(self) -> dict:
        return {
            "dicom_id": self.keys.dicom_id,
            "subject_id": self.keys.subject_id,
            "stay_id": self.keys.stay_id,
            "study_id": self.keys.study_id,
            "image": self.image,
            "split": self.split,
            "clinical": self.record.to_dict(),
            "boxes": [{"label": CLASS_NAMES[b.label - 1], "x": b.x, "y": b.y, "w": b.w, "h": b.h} for b in self.boxes],
        }

    @classmethod
    def from_json(cls, d: dict) -> "JoinedInstance":
        keys = IdentityKeys(int(d["subject_id"]), int(d["stay_id"]), int(d["study_id"]), str(d["dicom_id"]))
        boxes = [GroundTruthBox(class_index(b["label"]), float(b["x"]), float(b["y"]), float(b["w"]), float(b["h"]),
                                image_id=keys.dicom_id) for b in d["boxes"]]
        return cls(keys, d["image"], ClinicalRecord.from_dict(d["clinical"]), boxes, d.get("split", "train"))


@dataclass(frozen=True)
class Exclusion:
    dicom_id: str
    reason: str


def _num(v) -> Optional[float]:
    return None if v is None or (isinstance(v, float) and np.isnan(v)) else float(v)


def join(tables: SourceTables, image_dir: Optional[Path] = None,
         frontal_views: Sequence[str] = FRONTAL_VIEWS) -> Tuple[List[JoinedInstance], List[Exclusion]]:
    """Build the multimodal instance list.

    An image is kept iff its view is frontal, exactly one ED stay of the same
    subject has ``intime <= study_datetime <= outtime``, that stay has a
    triage row, and the image carries at least one annotated box. Every other
    image is logged once, with the first failing check as its reason. Output
    is sorted by ``dicom_id`` so row order in the inputs does not matter.
    """
    violations = validate_schema(tables)
    if violations:
        raise SchemaError(violations)
    t = typed(tables)
    meta, stays, triage, pats, ann = (t["cxr_metadata"], t["edstays"], t["triage"], t["patients"],
                                       t["annotations"])
    stays_by_subject: Dict[int, pd.DataFrame] = {k: g for k, g in stays.groupby("subject_id")}
    triage_by_stay: Dict[int, pd.DataFrame] = {k: g for k, g in triage.groupby("stay_id")}
    pat_by_subject = {int(r.subject_id): r for r in pats.itertuples(index=False)}
    ann_by_dicom: Dict[str, pd.DataFrame] = {k: g for k, g in ann.groupby("dicom_id")}
    split_by_dicom = {}
    if tables.split is not None:
        split_by_dicom = dict(zip(tables.split["dicom_id"], tables.split["split"]))

    joined: List[JoinedInstance] = []
    excluded: List[Exclusion] = []
    for row in meta.sort_values("dicom_id", kind="stable").itertuples(index=False):
        dicom = str(row.dicom_id)
        subject = int(row.subject_id)
        if str(row.ViewPosition).upper() not in frontal_views:
            excluded.append(Exclusion(dicom, REASON_VIEW))
            continue
        cand = stays_by_subject.get(subject)
        if cand is not None:
            cand = cand[(cand["intime"] <= row.study_datetime) & (row.study_datetime <= cand["outtime"])]
        if cand is None or len(cand) == 0:
            excluded.append(Exclusion(dicom, REASON_NO_STAY))
            continue
        if len(cand) > 1:
            excluded.append(Exclusion(dicom, REASON_AMBIGUOUS))
            continue
        stay_id = int(cand["stay_id"].iloc[0])
        tri = triage_by_stay.get(stay_id)
        if tri is None or len(tri) == 0:
            excluded.append(Exclusion(dicom, REASON_NO_TRIAGE))
            continue
        boxes_df = ann_by_dicom.get(dicom)
        if boxes_df is None or len(boxes_df) == 0:
            excluded.append(Exclusion(dicom, REASON_NO_ANNOTATION))
            continue
        image_rel = f"images/{dicom}.pgm"
        if image_dir is not None and not (Path(image_dir) / f"{dicom}.pgm").exists():
            excluded.append(Exclusion(dicom, REASON_NO_IMAGE))
            continue
        tr = tri.iloc[0]
        pat = pat_by_subject[subject]
        record = ClinicalRecord(
            temperature=_num(tr["temperature"]), heartrate=_num(tr["heartrate"]), resprate=_num(tr["resprate"]),
            o2sat=_num(tr["o2sat"]), sbp=_num(tr["sbp"]), dbp=_num(tr["dbp"]), pain=_num(tr["pain"]),
            acuity=_num(tr["acuity"]), age=float(pat.anchor_age), gender=str(pat.gender),
        )
        boxes = [GroundTruthBox(class_index(b.label), float(b.xmin), float(b.ymin), float(b.xmax - b.xmin),
                                float(b.ymax - b.ymin), image_id=dicom)
                 for b in boxes_df.sort_values(["xmin", "ymin", "xmax", "ymax", "label"], kind="stable")
                 .itertuples(index=False)]
        keys = IdentityKeys(subject, stay_id, int(row.study_id), dicom)
        joined.append(JoinedInstance(keys, image_rel, record, boxes, split_by_dicom.get(dicom, "train")))
    return joined, excluded


def write_manifest(instances: Iterable[JoinedInstance], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_json(), sort_keys=True) + "\n")


def read_manifest(path) -> List[JoinedInstance]:
    with open(path, encoding="utf-8") as fh:
        return [JoinedInstance.from_json(json.loads(line)) for line in fh if line.strip()]


def write_exclusions(exclusions: Iterable[Exclusion], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("dicom_id,reason\n")
        for e in exclusions:
            fh.write(f"{e.dicom_id},{e.reason}\n")
