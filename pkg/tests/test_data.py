import random

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from join_fixture import build
from mdfnet.data import (
    SchemaError, SynthConfig, join, load_dataset, read_manifest, read_pgm, read_tables,
    synth_generate, validate_schema, write_dataset, write_exclusions, write_manifest, write_pgm,
)
from mdfnet.data.join import REASON_NO_IMAGE
from mdfnet.data.synth import AMBIGUOUS_PAIR, TEXTURE_OF_CLASS, draw_clinical, make_instance, render_image
from mdfnet.data.tables import SourceTables


def as_dicts(joined, excluded):
    return {i.keys.dicom_id: i.to_json() for i in joined}, {e.dicom_id: e.reason for e in excluded}


# -- join ---------------------------------------------------------------------

def test_fixture_join_matches_expected():
    tables, exp_join, exp_excl = build()
    joined, excluded = join(tables)
    got_join, got_excl = as_dicts(joined, excluded)
    assert got_join == exp_join
    assert got_excl == exp_excl
    assert len(joined) + len(excluded) == 50
    # every image accounted for exactly once
    assert not set(got_join) & set(got_excl)


def test_join_output_sorted():
    joined, excluded = join(build()[0])
    ids = [i.keys.dicom_id for i in joined]
    assert ids == sorted(ids)
    assert [e.dicom_id for e in excluded] == sorted(e.dicom_id for e in excluded)


def test_join_idempotent_and_order_independent(tmp_path):
    tables = build()[0]
    first = join(tables)
    assert as_dicts(*join(tables)) == as_dicts(*first)
    rng = random.Random(3)
    shuffled = {}
    for name, df in tables.items():
        order = list(range(len(df)))
        rng.shuffle(order)
        shuffled[name] = df.iloc[order].reset_index(drop=True)
    again = join(SourceTables(**shuffled))
    assert as_dicts(*again) == as_dicts(*first)
    write_manifest(first[0], tmp_path / "a.jsonl")
    write_manifest(again[0], tmp_path / "b.jsonl")
    write_exclusions(first[1], tmp_path / "a.csv")
    write_exclusions(again[1], tmp_path / "b.csv")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_manifest_roundtrip(tmp_path):
    joined, _ = join(build()[0])
    write_manifest(joined, tmp_path / "m.jsonl")
    back = read_manifest(tmp_path / "m.jsonl")
    assert [b.to_json() for b in back] == [j.to_json() for j in joined]


def test_missing_image_file_reason(tmp_path):
    tables = build()[0]
    (tmp_path / "images").mkdir()
    for k in range(0, 20, 2):
        write_pgm(tmp_path / "images" / f"img{k:02d}.pgm", np.zeros((4, 4), np.uint8))
    joined, excluded = join(tables, image_dir=tmp_path / "images")
    reasons = dict((e.dicom_id, e.reason) for e in excluded)
    assert reasons["img01"] == REASON_NO_IMAGE and "img02" in {i.keys.dicom_id for i in joined}


def _with(tables, name, row, col, value):
    df = getattr(tables, name).copy()
    df.loc[row, col] = value
    d = dict(tables.items())
    d[name] = df
    return SourceTables(**d)


def test_acuity_out_of_range_is_a_violation():
    tables = _with(build()[0], "triage", 0, "acuity", "6")
    v = validate_schema(tables)
    assert any(x.table == "triage" and x.column == "acuity" and x.kind == "range" for x in v)
    with pytest.raises(SchemaError) as err:
        join(tables)
    assert err.value.violations == v


def test_triage_for_unknown_stay_is_a_violation():
    tables = _with(build()[0], "triage", 0, "stay_id", "999999")
    v = validate_schema(tables)
    assert any(x.table == "triage" and x.kind == "referential" for x in v)


def test_blank_vitals_are_allowed():
    tables = _with(build()[0], "triage", 0, "heartrate", "")
    assert validate_schema(tables) == []
    joined, _ = join(tables)
    assert joined[0].record.heartrate is None


def test_bad_timestamp_and_missing_column():
    tables = _with(build()[0], "edstays", 0, "intime", "yesterday")
    assert any(x.kind == "type" for x in validate_schema(tables))
    d = dict(build()[0].items())
    d["patients"] = d["patients"].drop(columns=["gender"])
    assert any(x.kind == "missing-column" for x in validate_schema(SourceTables(**d)))


def test_schema_reports_all_violations():
    tables = _with(build()[0], "triage", 0, "acuity", "0")
    tables = _with(tables, "triage", 1, "pain", "12")
    assert len(validate_schema(tables)) >= 2


# -- synthetic generator -----------------------------------------------------------

SMALL = SynthConfig(n_train=12, n_test=4, image_size=32, min_size=6, max_size=12)


def test_generator_deterministic_per_seed():
    t1, i1 = synth_generate(SMALL, 5)
    t2, i2 = synth_generate(SMALL, 5)
    for (n, a), (_, b) in zip(t1.items(), t2.items()):
        pd.testing.assert_frame_equal(a, b)
    assert i1.keys() == i2.keys() and all((i1[k] == i2[k]).all() for k in i1)
    _, i3 = synth_generate(SMALL, 6)
    assert any((a != b).any() for a, b in zip(i1.values(), i3.values()))


def test_generated_tables_pass_schema_and_fully_join():
    tables, images = synth_generate(SMALL, 1)
    assert validate_schema(tables) == []
    joined, excluded = join(tables)
    assert len(joined) == SMALL.n_total and not excluded
    assert sum(i.split == "train" for i in joined) == SMALL.n_train


def test_ambiguous_pair_shares_texture():
    a, b = AMBIGUOUS_PAIR
    assert TEXTURE_OF_CLASS[a] == TEXTURE_OF_CLASS[b]
    others = [TEXTURE_OF_CLASS[c] for c in TEXTURE_OF_CLASS if c not in AMBIGUOUS_PAIR]
    assert len(set(others)) == len(others) and TEXTURE_OF_CLASS[a] not in others


def test_forced_ambiguous_class_leaves_pixels_unchanged():
    # same group weights, but the pair member is forced to 3 in one config and to 5 in the other
    c3 = SynthConfig(image_size=32, min_size=6, max_size=12, class_frequencies=(1, 1, 2, 1, 0))
    c5 = SynthConfig(image_size=32, min_size=6, max_size=12, class_frequencies=(1, 1, 0, 1, 2))
    seen_pair = False
    for i in range(30):
        a, b = make_instance(9, i, c3), make_instance(9, i, c5)
        np.testing.assert_array_equal(a.image, b.image)
        assert [x[1:] for x in a.boxes] == [x[1:] for x in b.boxes]
        assert a.ambiguous_class == 3 and b.ambiguous_class == 5
        la, lb = [x[0] for x in a.boxes], [x[0] for x in b.boxes]
        seen_pair |= 3 in la
        assert [5 if l == 3 else l for l in la] == lb
    assert seen_pair


def test_kappa_zero_clinical_ignores_ambiguous_class():
    cfg = SynthConfig(kappa=0.0)
    for i in range(50):
        assert draw_clinical(2, i, cfg, 3) == draw_clinical(2, i, cfg, 5)


def test_kappa_one_vitals_follow_ambiguous_class():
    cfg = SynthConfig(kappa=1.0)
    t3 = np.mean([draw_clinical(2, i, cfg, 3)["temperature"] for i in range(200)])
    t5 = np.mean([draw_clinical(2, i, cfg, 5)["temperature"] for i in range(200)])
    assert t3 - t5 > 2.5


def test_boxes_inside_image_and_disjoint():
    cfg = SynthConfig(image_size=48, min_size=8, max_size=16, max_blobs=4)
    for i in range(40):
        _, rects, _ = render_image(4, i, cfg)
        for k, (x0, y0, x1, y1) in enumerate(rects):
            assert 0 <= x0 < x1 <= 48 and 0 <= y0 < y1 <= 48
            for (u0, v0, u1, v1) in rects[k + 1:]:
                assert x1 <= u0 or u1 <= x0 or y1 <= v0 or v1 <= y0


def test_default_generation_count():
    cfg = SynthConfig()
    assert cfg.n_total == 1000 and cfg.image_size == 64


@pytest.mark.parametrize("kw", [dict(kappa=1.5), dict(n_train=0, n_test=0), dict(min_size=30, max_size=20),
                                dict(class_frequencies=(1, 1))])
def test_bad_config_rejected(kw):
    with pytest.raises(ValueError):
        SynthConfig(**kw)


# -- files ----------------------------------------------------------------------------

@settings(max_examples=20, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2 ** 32 - 1))
def test_pgm_roundtrip(h, w, seed):
    import tempfile, os
    img = np.random.default_rng(seed).integers(0, 256, (h, w)).astype(np.uint8)
    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "x.pgm")
        write_pgm(p, img)
        np.testing.assert_array_equal(read_pgm(p), img)


def test_pgm_rejects_other_formats(tmp_path):
    (tmp_path / "a.pgm").write_bytes(b"P2\n2 2\n255\n0 0 0 0\n")
    with pytest.raises(ValueError):
        read_pgm(tmp_path / "a.pgm")
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "b.pgm", np.zeros((2, 2), np.float64))


def test_write_then_load_dataset(tmp_path):
    tables, images = synth_generate(SMALL, 3)
    write_dataset(tables, images, tmp_path)
    back = read_tables(tmp_path)
    for (_, a), (_, b) in zip(tables.items(), back.items()):
        pd.testing.assert_frame_equal(a.reset_index(drop=True), b)
    ds = load_dataset(tmp_path)
    assert ds.images.shape == (16, 1, 32, 32)
    assert 0.0 <= ds.images.min() and ds.images.max() <= 1.0
    assert len(ds.subset("test")) == 4
    b = ds.batch([0, 1])
    assert b.images.shape == (2, 1, 32, 32) and len(b.records) == 2


def test_missing_table_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_tables(tmp_path)
