"""CSV table contracts mirroring the MIMIC-IV / MIMIC-CXR / REFLACX column names.

Files inside a dataset directory::

    patients.csv       subject_id, gender, anchor_age
    edstays.csv        subject_id, stay_id, intime, outtime
    triage.csv         subject_id, stay_id, temperature, heartrate, resprate,
                       o2sat, sbp, dbp, pain, acuity
    cxr_metadata.csv   dicom_id, subject_id, study_id, ViewPosition, study_datetime
    annotations.csv    dicom_id, label, xmin, ymin, xmax, ymax
    split.csv          dicom_id, split                   (optional)
    images/<dicom_id>.pgm

Timestamps are ISO-8601 (``YYYY-MM-DD HH:MM:SS``). ``label`` is one of the
five abnormality class names. Box corners are image pixels.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from ..detection.head import CLASS_NAMES

SCHEMA: Dict[str, Dict[str, str]] = {
    "patients": {"subject_id": "int", "gender": "str", "anchor_age": "float"},
    "edstays": {"subject_id": "int", "stay_id": "int", "intime": "datetime", "outtime": "datetime"},
    "triage": {"subject_id": "int", "stay_id": "int", "temperature": "float", "heartrate": "float",
               "resprate": "float", "o2sat": "float", "sbp": "float", "dbp": "float", "pain": "float",
               "acuity": "float"},
    "cxr_metadata": {"dicom_id": "str", "subject_id": "int", "study_id": "int", "ViewPosition": "str",
                     "study_datetime": "datetime"},
    "annotations": {"dicom_id": "str", "label": "str", "xmin": "float", "ymin": "float", "xmax": "float",
                    "ymax": "float"},
}
OPTIONAL_TABLES = {"split": {"dicom_id": "str", "split": "str"}}

RANGES = {
    ("triage", "pain"): (0, 10),
    ("triage", "acuity"): (1, 5),
    ("triage", "o2sat"): (0, 100),
    ("patients", "anchor_age"): (0, 130),
}

TIME_FORMAT = "%Y-%m-%d %H:%M:%S"

# triage vitals may be blank (missing measurement); imputation is decided downstream
NULLABLE = {("triage", c) for c in ("temperature", "heartrate", "resprate", "o2sat", "sbp", "dbp", "pain", "acuity")}


class SchemaError(ValueError):
    """Raised when tables violate the contract; ``violations`` lists every problem."""

    def __init__(self, violations: List["Violation"]):
        self.violations = violations
        head = "; ".join(str(v) for v in violations[:5])
        more = f" (+{len(violations) - 5} more)" if len(violations) > 5 else ""
        super().__init__(f"{len(violations)} schema violation(s): {head}{more}")


@dataclass(frozen=True)
class Violation:
    table: str
    column: str
    row: Optional[int]
    kind: str          # missing-column | type | range | referential | uniqueness | interval | category
    detail: str

    def __str__(self) -> str:
        where = f"{self.table}.{self.column}" + (f" row {self.row}" if self.row is not None else "")
        return f"[{self.kind}] {where}: {self.detail}"


@dataclass
class SourceTables:
    patients: pd.DataFrame
    edstays: pd.DataFrame
    triage: pd.DataFrame
    cxr_metadata: pd.DataFrame
    annotations: pd.DataFrame
    split: Optional[pd.DataFrame] = None

    def items(self):
        for name in SCHEMA:
            yield name, getattr(self, name)
        if self.split is not None:
            yield "split", self.split


def read_tables(directory) -> SourceTables:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"dataset directory {d} does not exist")
    frames = {}
    for name in SCHEMA:
        path = d / f"{name}.csv"
        if not path.exists():
            raise FileNotFoundError(f"missing table {path}")
        frames[name] = pd.read_csv(path, dtype=str, keep_default_na=False)
    split_path = d / "split.csv"
    split = pd.read_csv(split_path, dtype=str, keep_default_na=False) if split_path.exists() else None
    return SourceTables(**frames, split=split)


def write_tables(tables: SourceTables, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, df in tables.items():
        df.to_csv(d / f"{name}.csv", index=False, lineterminator="\n")


def _coerce(series: pd.Series, kind: str) -> pd.Series:
    if kind == "int":
        return pd.to_numeric(series, errors="coerce")
    if kind == "float":
        return pd.to_numeric(series, errors="coerce")
    if kind == "datetime":
        return pd.to_datetime(series, format=TIME_FORMAT, errors="coerce")
    return series.astype(str)


def typed(tables: SourceTables) -> Dict[str, pd.DataFrame]:
    """Column-typed copies (unparseable cells become NaN/NaT)."""
    out = {}
    for name, df in tables.items():
        schema = SCHEMA.get(name) or OPTIONAL_TABLES[name]
        t = df.copy()
        for col, kind in schema.items():
            if col in t.columns:
                t[col] = _coerce(t[col].astype(str) if kind != "str" else t[col], kind)
        out[name] = t
    return out


def validate_schema(tables: SourceTables) -> List[Violation]:
    """Every contract violation: columns, cell types, ranges, uniqueness, intervals, references."""
    v: List[Violation] = []
    for name, df in tables.items():
        schema = SCHEMA.get(name) or OPTIONAL_TABLES[name]
        for col in schema:
            if col not in df.columns:
                v.append(Violation(name, col, None, "missing-column", "required column absent"))
    if v:
        return v

    t = typed(tables)
    for name, df in tables.items():
        schema = SCHEMA.get(name) or OPTIONAL_TABLES[name]
        for col, kind in schema.items():
            raw = df[col].astype(str)
            if kind == "str":
                bad = raw.str.len() == 0
            else:
                bad = t[name][col].isna()
                if (name, col) in NULLABLE:
                    bad = bad & (raw.str.strip() != "")
                if kind == "int":
                    vals = t[name][col]
                    bad = bad | (vals.notna() & (vals != np.floor(vals.fillna(0))))
            for row in np.flatnonzero(bad.to_numpy()):
                v.append(Violation(name, col, int(row), "type", f"cannot parse {raw.iloc[row]!r} as {kind}"))

    for (name, col), (lo, hi) in RANGES.items():
        vals = t[name][col]
        for row in np.flatnonzero(((vals < lo) | (vals > hi)).to_numpy()):
            v.append(Violation(name, col, int(row), "range", f"{vals.iloc[row]} outside [{lo}, {hi}]"))

    pats = t["patients"]
    for row in np.flatnonzero((~tables.patients["gender"].isin(["M", "F"])).to_numpy()):
        v.append(Violation("patients", "gender", int(row), "category",
                           f"{tables.patients['gender'].iloc[row]!r} not in {{M, F}}"))
    ann = tables.annotations
    for row in np.flatnonzero((~ann["label"].isin(CLASS_NAMES)).to_numpy()):
        v.append(Violation("annotations", "label", int(row), "category", f"unknown class {ann['label'].iloc[row]!r}"))
    a = t["annotations"]
    for row in np.flatnonzero(((a["xmax"] <= a["xmin"]) | (a["ymax"] <= a["ymin"])).to_numpy()):
        v.append(Violation("annotations", "xmax", int(row), "range", "box has non-positive extent"))

    for name, col in (("patients", "subject_id"), ("edstays", "stay_id"), ("cxr_metadata", "dicom_id")):
        dup = t[name][col].duplicated(keep="first")
        for row in np.flatnonzero(dup.to_numpy()):
            v.append(Violation(name, col, int(row), "uniqueness", f"duplicate {col} {t[name][col].iloc[row]}"))

    st = t["edstays"]
    for row in np.flatnonzero((st["intime"] >= st["outtime"]).to_numpy()):
        v.append(Violation("edstays", "outtime", int(row), "interval", "intime must precede outtime"))

    known_subjects = set(pats["subject_id"].dropna())
    known_stays = set(st["stay_id"].dropna())
    known_dicoms = set(tables.cxr_metadata["dicom_id"])
    for name in ("edstays", "cxr_metadata", "triage"):
        for row in np.flatnonzero((~t[name]["subject_id"].isin(known_subjects)).to_numpy()):
            v.append(Violation(name, "subject_id", int(row), "referential",
                               f"subject {t[name]['subject_id'].iloc[row]} not in patients"))
    for row in np.flatnonzero((~t["triage"]["stay_id"].isin(known_stays)).to_numpy()):
        v.append(Violation("triage", "stay_id", int(row), "referential",
                           f"stay {t['triage']['stay_id'].iloc[row]} not in edstays"))
    for row in np.flatnonzero((~ann["dicom_id"].isin(known_dicoms)).to_numpy()):
        v.append(Violation("annotations", "dicom_id", int(row), "referential",
                           f"image {ann['dicom_id'].iloc[row]} not in cxr_metadata"))
    if tables.split is not None:
        sp = tables.split
        for row in np.flatnonzero((~sp["split"].isin(["train", "test", "validate"])).to_numpy()):
            v.append(Violation("split", "split", int(row), "category", f"unknown split {sp['split'].iloc[row]!r}"))
    return v
