"""Hand-specified 50-image join fixture with the expected manifest written out case by case.

The expectation for every image is stated here from the case description,
not computed by running the join.
"""
import datetime as dt

import pandas as pd

from mdfnet.data.join import (REASON_AMBIGUOUS, REASON_NO_ANNOTATION, REASON_NO_STAY, REASON_NO_TRIAGE,
                              REASON_VIEW)
from mdfnet.data.tables import SourceTables

T0 = dt.datetime(2180, 3, 1, 10, 0, 0)


def ts(hours=0.0, seconds=0):
    return (T0 + dt.timedelta(hours=hours, seconds=seconds)).strftime("%Y-%m-%d %H:%M:%S")


def build():
    pats, stays, tri, meta, ann = [], [], [], [], []
    expected_join, expected_excl = {}, {}

    def patient(sid, gender="F", age=50):
        pats.append({"subject_id": sid, "gender": gender, "anchor_age": age})

    def stay(sid, stay_id, start_h, end_h, triage=True):
        stays.append({"subject_id": sid, "stay_id": stay_id, "intime": ts(start_h), "outtime": ts(end_h)})
        vit = None
        if triage:
            vit = {"temperature": 98.0 + (stay_id % 7) * 0.5, "heartrate": 70 + stay_id % 30,
                   "resprate": 14 + stay_id % 10, "o2sat": 92 + stay_id % 8, "sbp": 110 + stay_id % 40,
                   "dbp": 60 + stay_id % 25, "pain": stay_id % 11, "acuity": 1 + stay_id % 5}
            tri.append({"subject_id": sid, "stay_id": stay_id, **vit})
        return vit

    def image(dicom, sid, study, when, view="PA", boxes=(("Atelectasis", 2, 3, 12, 15),)):
        meta.append({"dicom_id": dicom, "subject_id": sid, "study_id": study, "ViewPosition": view,
                     "study_datetime": when})
        for label, x0, y0, x1, y1 in boxes:
            ann.append({"dicom_id": dicom, "label": label, "xmin": x0, "ymin": y0, "xmax": x1, "ymax": y1})

    def expect(dicom, sid, stay_id, study, vit, gender, age, boxes):
        expected_join[dicom] = {
            "dicom_id": dicom, "subject_id": sid, "stay_id": stay_id, "study_id": study,
            "image": f"images/{dicom}.pgm", "split": "train",
            "clinical": {**{k: float(v) for k, v in vit.items()}, "age": float(age), "gender": gender},
            "boxes": [{"label": l, "x": float(x0), "y": float(y0), "w": float(x1 - x0), "h": float(y1 - y0)}
                      for l, x0, y0, x1, y1 in sorted(boxes, key=lambda b: (b[1], b[2], b[3], b[4], b[0]))],
        }

    # 0-19: clean single-path joins, alternating AP/PA and sexes, some with two boxes
    for k in range(20):
        sid, stay_id, study, dicom = 100 + k, 1000 + k, 5000 + k, f"img{k:02d}"
        gender, age = ("F", "M")[k % 2], 30 + k
        patient(sid, gender, age)
        vit = stay(sid, stay_id, 0, 8)
        boxes = [("Consolidation", 1, 1, 9, 9)] if k % 3 else [("Pulmonary Edema", 20, 4, 40, 30),
                                                               ("Enlarged Cardiac Silhouette", 5, 5, 15, 25)]
        image(dicom, sid, study, ts(2), ("AP", "PA")[k % 2], boxes)
        expect(dicom, sid, stay_id, study, vit, gender, age, boxes)

    # 20-24: non-frontal views (covered stay, triage and boxes all present)
    for k in range(20, 25):
        sid = 100 + k
        patient(sid)
        stay(sid, 1000 + k, 0, 8)
        image(f"img{k:02d}", sid, 5000 + k, ts(2), ("LATERAL", "LL", "lateral", "RL", "SWIMMERS")[k - 20])
        expected_excl[f"img{k:02d}"] = REASON_VIEW

    # 25-29: no covering stay (before, after, one second past outtime, no stays at all)
    for k, when in zip(range(25, 30), (ts(-1), ts(9), ts(8, seconds=1), ts(2), ts(-0.01))):
        sid = 100 + k
        patient(sid)
        if k != 28:
            stay(sid, 1000 + k, 0, 8)
        image(f"img{k:02d}", sid, 5000 + k, when)
        expected_excl[f"img{k:02d}"] = REASON_NO_STAY

    # 30-34: two overlapping stays for the subject both cover the study time
    for k in range(30, 35):
        sid = 100 + k
        patient(sid)
        stay(sid, 1000 + k, 0, 8)
        stay(sid, 2000 + k, 1, 5)
        image(f"img{k:02d}", sid, 5000 + k, ts(3))
        expected_excl[f"img{k:02d}"] = REASON_AMBIGUOUS

    # 35-39: covering stay without a triage row
    for k in range(35, 40):
        sid = 100 + k
        patient(sid)
        stay(sid, 1000 + k, 0, 8, triage=False)
        image(f"img{k:02d}", sid, 5000 + k, ts(2))
        expected_excl[f"img{k:02d}"] = REASON_NO_TRIAGE

    # 40-44: everything present except boxes
    for k in range(40, 45):
        sid = 100 + k
        patient(sid)
        stay(sid, 1000 + k, 0, 8)
        image(f"img{k:02d}", sid, 5000 + k, ts(2), boxes=())
        expected_excl[f"img{k:02d}"] = REASON_NO_ANNOTATION

    # 45-49: boundary joins
    sid = 145
    patient(sid, "M", 61)
    vit = stay(sid, 1045, 0, 8)
    b = [("Pleural Abnormality", 0, 0, 5, 5)]
    image("img45", sid, 5045, ts(0), boxes=b)           # exactly at intime
    expect("img45", sid, 1045, 5045, vit, "M", 61, b)
    image("img46", sid, 5046, ts(8), "AP", boxes=b)     # exactly at outtime, same stay
    expect("img46", sid, 1045, 5046, vit, "M", 61, b)
    sid = 147
    patient(sid, "F", 77)
    stay(sid, 1047, 0, 8)
    vit = stay(sid, 1147, 24, 30)                       # second, later, non-overlapping stay
    image("img47", sid, 5047, ts(25), boxes=b)
    expect("img47", sid, 1147, 5047, vit, "F", 77, b)
    sid = 148
    patient(sid, "M", 18)
    vit = stay(sid, 1048, 0, 8)
    image("img48", sid, 5048, ts(1), boxes=b)
    expect("img48", sid, 1048, 5048, vit, "M", 18, b)
    # unannotated lateral: view check comes first
    sid = 149
    patient(sid)
    stay(sid, 1049, 0, 8)
    image("img49", sid, 5049, ts(1), "LATERAL", boxes=())
    expected_excl["img49"] = REASON_VIEW

    frame = lambda rows: pd.DataFrame(rows).astype(str)  # noqa: E731
    tables = SourceTables(frame(pats), frame(stays), frame(tri), frame(meta), frame(ann))
    assert len(tables.cxr_metadata) == 50
    return tables, expected_join, expected_excl
