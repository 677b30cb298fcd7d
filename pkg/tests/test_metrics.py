from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdfnet.metrics import (
    DEFAULT_SWEEP, average_precision, average_recall, evaluate, iobb, match_detections, read_detections,
    sweep_iobb, write_detections,
)
from mdfnet.structures import Detection, GroundTruthBox


# -- exhaustive oracles -----------------------------------------------------

def iobb_naive(p, g):
    ix = max(0.0, min(p[0] + p[2], g[0] + g[2]) - max(p[0], g[0]))
    iy = max(0.0, min(p[1] + p[3], g[1] + g[3]) - max(p[1], g[1]))
    return ix * iy / (p[2] * p[3])


def max_tp_oracle(preds, gts, score_cut, thresh):
    """Maximum number of TPs over all valid one-to-one assignments (bitmask DP per image/class)."""
    total = 0
    keys = {(d.image_id, d.label) for d in preds} | {(g.image_id, g.label) for g in gts}
    for key in keys:
        P = [d for d in preds if (d.image_id, d.label) == key and d.score >= score_cut]
        G = [g for g in gts if (g.image_id, g.label) == key]
        ok = [[iobb_naive(p.xywh, g.xywh) >= thresh for g in G] for p in P]

        @lru_cache(maxsize=None)
        def best(i, used):
            if i == len(P):
                return 0
            r = best(i + 1, used)
            for j in range(len(G)):
                if ok[i][j] and not used >> j & 1:
                    r = max(r, 1 + best(i + 1, used | 1 << j))
            return r

        total += best(0, 0)
    return total


def ap_oracle(preds, gts, label, thresh):
    P = [d for d in preds if d.label == label]
    G = [g for g in gts if g.label == label]
    if not G:
        return 0.0
    pts = []
    for cut in sorted({d.score for d in P}, reverse=True):
        n_det = sum(d.score >= cut for d in P)
        tp = max_tp_oracle(P, G, cut, thresh)
        pts.append((tp / len(G), tp / n_det))
    if not pts:
        return 0.0
    # exact integral of the interpolated precision envelope over recall
    recalls = sorted({r for r, _ in pts})
    area, prev = 0.0, 0.0
    for r in recalls:
        env = max(p for rr, p in pts if rr >= r)
        area += (r - prev) * env
        prev = r
    return area


def random_instance(rng, n_pred=20, n_gt=10, n_img=3, n_cls=2, size=40.0):
    gts = []
    for _ in range(n_gt):
        x, y = rng.uniform(0, size, 2)
        w, h = rng.uniform(4, 16, 2)
        gts.append(GroundTruthBox(int(rng.integers(1, n_cls + 1)), x, y, w, h, image_id=int(rng.integers(n_img))))
    preds = []
    for _ in range(n_pred):
        if gts and rng.random() < 0.7:
            g = gts[int(rng.integers(len(gts)))]
            x, y = g.x + rng.normal(0, 3), g.y + rng.normal(0, 3)
            w, h = g.w * rng.uniform(0.5, 1.4), g.h * rng.uniform(0.5, 1.4)
            lab, img = (g.label if rng.random() < 0.8 else int(rng.integers(1, n_cls + 1))), g.image_id
        else:
            x, y = rng.uniform(0, size, 2)
            w, h = rng.uniform(4, 16, 2)
            lab, img = int(rng.integers(1, n_cls + 1)), int(rng.integers(n_img))
        preds.append(Detection(lab, float(np.round(rng.uniform(0.05, 1), 1)), x, y, w, h, image_id=img))
    return preds, gts


# -- IoBB -----------------------------------------------------------------------

def test_iobb_examples():
    assert iobb((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0
    assert iobb((0, 0, 10, 10), (20, 20, 5, 5)) == 0.0
    assert iobb((0, 0, 10, 10), (0, 0, 10, 5)) == 0.5


def test_iobb_is_asymmetric():
    small, large = (2, 2, 4, 4), (0, 0, 10, 10)
    assert iobb(small, large) == 1.0
    assert iobb(large, small) < 1.0


def test_iobb_rejects_empty_prediction():
    with pytest.raises(ValueError):
        iobb((0, 0, 0, 5), (0, 0, 1, 1))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.5, 30), min_size=8, max_size=8))
def test_iobb_matches_naive(v):
    p, g = v[:4], v[4:]
    assert 0.0 <= iobb(p, g) <= 1.0
    assert iobb(p, g) == pytest.approx(iobb_naive(p, g), abs=1e-12)


# -- matching -------------------------------------------------------------------

def test_match_single_hit():
    r = match_detections([Detection(1, 0.9, 0, 0, 10, 10)], [GroundTruthBox(1, 0, 0, 10, 10)])
    assert (r.counts[1].tp, r.counts[1].fp, r.counts[1].fn) == (1, 0, 0)


def test_match_class_mismatch():
    r = match_detections([Detection(2, 0.9, 0, 0, 10, 10)], [GroundTruthBox(1, 0, 0, 10, 10)])
    assert r.counts[2].fp == 1 and r.counts[1].fn == 1 and r.counts[1].tp == 0


def test_match_drops_low_scores():
    r = match_detections([Detection(1, 0.04, 0, 0, 10, 10)], [GroundTruthBox(1, 0, 0, 10, 10)], 0.05)
    assert r.flags == [None] and r.counts[1].fn == 1


def test_match_reassigns_when_greedy_would_lose_a_hit():
    # the top prediction overlaps both GTs but prefers the one the second prediction needs
    gts = [GroundTruthBox(1, 0, 0, 10, 10), GroundTruthBox(1, 8, 0, 10, 10)]
    preds = [Detection(1, 0.9, 6, 0, 4, 10), Detection(1, 0.8, 0, 0, 6, 10)]
    assert iobb(preds[0].xywh, gts[0].xywh) == 1.0
    r = match_detections(preds, gts, 0.0, 0.5)
    assert r.counts[1].tp == 2


def test_match_counts_equal_exhaustive_oracle():
    rng = np.random.default_rng(0)
    for trial in range(150):
        preds, gts = random_instance(rng)
        thresh = float(rng.uniform(0.2, 0.9))
        r = match_detections(preds, gts, 0.05, thresh)
        tp = sum(c.tp for c in r.counts.values())
        assert tp == max_tp_oracle(preds, gts, 0.05, thresh)
        for c, cc in r.counts.items():
            assert cc.tp + cc.fn == sum(g.label == c for g in gts)
            assert cc.tp + cc.fp == sum(d.label == c for d in preds)


def test_match_invariant_to_order_of_equal_scores():
    rng = np.random.default_rng(1)
    for _ in range(30):
        preds, gts = random_instance(rng)
        perm = rng.permutation(len(preds))
        a = match_detections(preds, gts).counts
        b = match_detections([preds[i] for i in perm], gts).counts
        assert {k: (v.tp, v.fp, v.fn) for k, v in a.items()} == {k: (v.tp, v.fp, v.fn) for k, v in b.items()}


# -- AP / AR ------------------------------------------------------------------------

def test_ap_perfect_detector():
    gts = [GroundTruthBox(1, i * 12, 0, 10, 10) for i in range(4)]
    preds = [Detection(1, 0.9 - 0.1 * i, g.x, g.y, g.w, g.h) for i, g in enumerate(gts)]
    assert average_precision(preds, gts, 0.5, label=1) == 1.0
    assert average_recall(preds, gts, 1) == 1.0


def test_ap_no_predictions():
    assert average_precision([], [GroundTruthBox(1, 0, 0, 5, 5)], 0.5, label=1) == 0.0


def test_ap_no_ground_truth():
    assert average_precision([Detection(1, 0.5, 0, 0, 5, 5)], [], 0.5, label=1) == 0.0


def test_ap_equals_threshold_enumeration_oracle():
    rng = np.random.default_rng(2)
    for trial in range(120):
        preds, gts = random_instance(rng, n_pred=int(rng.integers(0, 20)), n_gt=int(rng.integers(1, 10)))
        thresh = float(rng.uniform(0.2, 0.9))
        for label in (1, 2):
            got = average_precision(preds, gts, thresh, label=label)
            assert got == pytest.approx(ap_oracle(preds, gts, label, thresh), abs=1e-9)
            assert 0.0 <= got <= 1.0


def test_ap_worked_example():
    # hits at ranks 1 and 3 of 3, two GTs: points (0.5, 1), (0.5, 0.5), (1, 2/3)
    gts = [GroundTruthBox(1, 0, 0, 10, 10), GroundTruthBox(1, 20, 0, 10, 10)]
    preds = [Detection(1, 0.9, 0, 0, 10, 10), Detection(1, 0.8, 40, 40, 5, 5), Detection(1, 0.7, 20, 0, 10, 10)]
    assert average_precision(preds, gts, 0.5, label=1) == pytest.approx(0.5 * 1 + 0.5 * 2 / 3, abs=1e-12)


# -- sweep / report -----------------------------------------------------------------

def test_sweep_monotone_non_increasing():
    rng = np.random.default_rng(3)
    for _ in range(40):
        preds, gts = random_instance(rng)
        rows = sweep_iobb(preds, gts, DEFAULT_SWEEP)
        maps = [m for _, m, _ in rows]
        assert len(rows) == 9
        assert all(b <= a + 1e-12 for a, b in zip(maps, maps[1:]))


def test_sweep_singleton_matches_report():
    rng = np.random.default_rng(4)
    preds, gts = random_instance(rng)
    rep = evaluate(preds, gts, 0.05, 0.5, sweep=(0.5,))
    assert rep.sweep == [(0.5, rep.mean_ap, rep.mean_ar)]


def test_sweep_perfect_detector():
    gts = [GroundTruthBox(c, 5, 5, 10, 10, image_id=c) for c in range(1, 6)]
    preds = [Detection(g.label, 0.9, *g.xywh, image_id=g.image_id) for g in gts]
    assert all(m == 1.0 for _, m, _ in sweep_iobb(preds, gts, DEFAULT_SWEEP))


def test_sweep_requires_ascending():
    with pytest.raises(ValueError):
        sweep_iobb([], [], [0.5, 0.3])


def test_report_counts_and_files(tmp_path):
    rng = np.random.default_rng(5)
    preds, gts = random_instance(rng, n_cls=5)
    rep = evaluate(preds, gts, config={"seed": 1})
    for c in rep.classes:
        assert c.tp + c.fn == sum(g.label == c.label for g in gts)
    rep.write(tmp_path)
    for name in ("report.json", "report.csv", "report_sweep.csv", "report_pr.csv"):
        assert (tmp_path / name).exists()
    assert '"seed": 1' in (tmp_path / "report.json").read_text()


def test_empty_predictions_report():
    gts = [GroundTruthBox(2, 0, 0, 5, 5), GroundTruthBox(2, 10, 0, 5, 5)]
    rep = evaluate([], gts)
    assert rep.by_label(2).fn == 2 and rep.mean_ap == 0.0


def test_detection_csv_roundtrip(tmp_path):
    dets = [Detection(3, 0.7, 1.5, 2.0, 3.0, 4.0, image_id="a"), Detection(1, 0.2, 0, 0, 1, 1, image_id="b")]
    write_detections(dets, tmp_path / "d.csv")
    assert read_detections(tmp_path / "d.csv") == dets
