import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfonn_ecg import beats, dsp, wfdbio
from selfonn_ecg.beats import AamiClass, BeatSet
from selfonn_ecg.wfdbio import AnnotationEvent

from conftest import requires_mitbih, mitbih_dir

SPEC = dsp.WaveletSpec.for_sampling_rate(360.0)


# ---------------------------------------------------------------------------
# label mapping

@pytest.mark.parametrize("sym,cls", [
    ("N", "N"), ("L", "N"), ("R", "N"), ("e", "N"), ("j", "N"),
    ("a", "S"), ("A", "S"), ("S", "S"), ("J", "S"),
    ("V", "V"), ("E", "V"), ("!", "V"),
    ("F", "X"), ("f", "X"), ("/", "X"), ("Q", "X"), ("?", "X"), ("+", "X"), ("~", "X"),
])
def test_aami_mapping(sym, cls):
    assert beats.map_symbol_to_aami(sym).value == cls


def test_class_indices():
    assert [c.index for c in (AamiClass.N, AamiClass.S, AamiClass.V)] == [0, 1, 2]


# ---------------------------------------------------------------------------
# split

def test_split_sizes_and_exclusions():
    s = beats.split_ds1_ds2()
    assert len(s.ds1) == len(s.ds2) == 22
    assert not set(s.ds1) & set(s.ds2)
    for rec in ("102", "104", "107", "217"):
        assert rec not in s.ds1 + s.ds2
    assert "111" in s.ds2 and "11" not in s.ds2


def test_split_overlap_rejected():
    with pytest.raises(ValueError):
        beats.DatasetSplit(ds1=("100",), ds2=("100",))


# ---------------------------------------------------------------------------
# segmentation

def test_segment_boundaries():
    x = np.arange(1000, dtype=float)
    r = beats.segment_beats(x, [(89, "N"), (90, "N"), (860, "V"), (861, "V")])
    assert r.n_dropped == 2
    assert r.r_index.tolist() == [90, 860]
    np.testing.assert_array_equal(r.segments[0], np.arange(230))
    assert r.segments.shape == (2, 230) and r.segments[1, -1] == 999


def test_segment_alignment_impulse():
    x = np.zeros(2000)
    x[700] = 1.0
    seg = beats.segment_beats(x, [(700, "N")]).segments[0]
    assert seg[90] == 1.0 and seg.sum() == 1.0


@given(st.lists(st.integers(0, 4999), min_size=1, max_size=40, unique=True))
@settings(max_examples=50, deadline=None)
def test_segment_offset_90_is_r_sample(idx):
    x = np.random.default_rng(0).standard_normal(5000)
    idx = sorted(idx)
    r = beats.segment_beats(x, [(i, "N") for i in idx])
    np.testing.assert_array_equal(r.segments[:, 90], x[r.r_index])


def test_segment_wrong_rate():
    with pytest.raises(ValueError):
        beats.segment_beats(np.zeros(1000), [(500, "N")], fs=250.0)


# ---------------------------------------------------------------------------
# temporal features

def test_uniform_rhythm():
    t = np.arange(0, 40) * 288  # 0.8 s at 360 Hz
    f = beats.extract_temporal(t, 20)
    assert f == pytest.approx((0.8, 0.8, 1.0, 0.8))


def test_premature_beat():
    f = beats.extract_temporal([0, 288, 430, 718], 2)
    assert f.rr_prev == pytest.approx(142 / 360)
    assert f.rr_next == pytest.approx(0.8)
    assert f.rr_ratio == pytest.approx(0.4931, abs=5e-5)
    # only the three intervals fit the window
    assert f.rr_avg == pytest.approx((288 + 142 + 288) / 3 / 360)


def test_minimal_window_average():
    t = [0, 3000, 6500, 9600, 13000]  # outer intervals cross the 10 s half-window
    f = beats.extract_temporal(t, 2)
    assert f.rr_avg == pytest.approx(np.mean([f.rr_prev, f.rr_next]))


def test_boundary_beats_raise():
    with pytest.raises(beats.BoundaryBeatError):
        beats.extract_temporal([0, 288, 576], 0)
    with pytest.raises(beats.BoundaryBeatError):
        beats.extract_temporal([0, 288, 576], 2)


@given(st.lists(st.integers(50, 2000), min_size=3, max_size=80))
@settings(max_examples=60, deadline=None)
def test_temporal_matrix_matches_per_beat(gaps):
    t = np.cumsum(gaps)
    m = beats.temporal_matrix(t)
    assert np.all(np.isnan(m[[0, -1]]))
    for i in range(1, len(t) - 1):
        np.testing.assert_allclose(m[i], beats.extract_temporal(t, i), rtol=1e-12)


def test_temporal_independent_of_amplitudes(tmp_path):
    rng = np.random.default_rng(1)
    idx = np.cumsum(rng.integers(250, 350, 30)) + 200
    anns = [AnnotationEvent(int(i), "N") for i in idx]
    n = int(idx[-1] + 400)
    out = []
    for k, scale in enumerate((1, 3)):
        sig = np.clip(np.round(rng.standard_normal(n) * 50 * scale), -2000, 2000).astype(int)
        wfdbio.write_record(tmp_path, f"r{k}", sig, 360.0, annotations=anns)
        out.append(beats.build_record_beats(wfdbio.read_record(tmp_path / f"r{k}"), SPEC))
    np.testing.assert_array_equal(out[0].temporal, out[1].temporal)
    np.testing.assert_array_equal(out[0].beats.temporal, out[1].beats.temporal)


# ---------------------------------------------------------------------------
# standardization

def test_standardizer_train_only():
    rng = np.random.default_rng(2)
    train = rng.normal([1, 2, 3, 4], [1, 2, 3, 4], (500, 4))
    evals = rng.normal(10, 5, (200, 4))
    st_, tf = beats.standardize_temporal(train)
    z = tf(train)
    np.testing.assert_allclose(z.mean(axis=0), 0, atol=1e-9)
    np.testing.assert_allclose(z.std(axis=0), 1, atol=1e-9)
    assert np.all(np.abs(tf(evals).mean(axis=0)) > 0.5)
    np.testing.assert_allclose(st_.inverse(z), train, atol=1e-9)
    again = beats.Standardizer.from_dict(st_.to_dict())
    np.testing.assert_array_equal(again.transform(evals), tf(evals))


def test_standardizer_constant_column():
    x = np.ones((10, 4))
    x[:, :3] = np.random.default_rng(0).standard_normal((10, 3))
    with pytest.raises(dsp.DegenerateSignalError):
        beats.Standardizer.fit(x)


# ---------------------------------------------------------------------------
# record-level builder

def _record(tmp_path, symbols, rr=300, name="rec"):
    idx = 300 + rr * np.arange(len(symbols))
    n = int(idx[-1] + 300)
    t = np.arange(n)
    sig = np.round(100 * np.sin(2 * np.pi * t / rr) + 5 * np.cos(t / 7)).astype(int)
    anns = [AnnotationEvent(int(i), s) for i, s in zip(idx, symbols)]
    wfdbio.write_record(tmp_path, name, sig, 360.0, annotations=anns)
    return wfdbio.read_record(tmp_path / name), idx


def test_build_record_beats(tmp_path):
    rec, idx = _record(tmp_path, list("NNAVNFN/N"))
    rb = beats.build_record_beats(rec, SPEC)
    b = rb.beats
    # first/last beats lack an RR neighbour; F and / are excluded
    assert b.r_index.tolist() == [idx[1], idx[2], idx[3], idx[4], idx[6]]
    assert b.labels.tolist() == [0, 1, 2, 0, 0]
    assert set(b.labels.tolist()) <= {0, 1, 2}
    assert rb.stats["excluded_symbols"] == 2
    assert rb.stats["dropped_rr_boundary"] == 2
    x = dsp.normalize_record(rec.physical(0)).values
    seg = x[idx[2] - 90: idx[2] + 140]
    np.testing.assert_allclose(b.scalograms[1], dsp.dwt_scalogram(seg, SPEC), atol=1e-5)


def test_rhythm_annotations_ignored(tmp_path):
    rec, idx = _record(tmp_path, list("NNNN"))
    rec.annotations.insert(2, AnnotationEvent(int(idx[1]) + 5, "+"))
    b = beats.build_record_beats(rec, SPEC).beats
    assert b.r_index.tolist() == [idx[1], idx[2]]


def test_beatset_save_load_and_subsets(tmp_path):
    rng = np.random.default_rng(3)
    n = 7
    bs = BeatSet(rng.standard_normal((n, 9, 230)).astype(np.float32), rng.random((n, 4)),
                 rng.integers(0, 3, n), np.array(["a", "a", "b", "b", "b", "c", "c"]),
                 np.arange(n) * 100, np.array([0, 0, 0, 1, 0, 0, 1], bool))
    bs.save(tmp_path / "set")
    back = BeatSet.load(tmp_path / "set")
    for col in ("scalograms", "temporal", "labels", "record_ids", "r_index", "augmented"):
        np.testing.assert_array_equal(getattr(back, col), getattr(bs, col))
    assert back.patients == ["a", "b", "c"]
    assert len(bs.for_records(["b"])) == 3
    assert len(BeatSet.concat([bs, bs])) == 2 * n
    assert sum(bs.class_counts().values()) == n


def test_beatset_rejects_bad_labels():
    with pytest.raises(ValueError):
        BeatSet(np.zeros((1, 9, 230), np.float32), np.zeros((1, 4)), [3], ["a"], [0])


# ---------------------------------------------------------------------------
# real data

TABLE_II = {"ds1": {"N": 45786, "S": 941, "V": 3784}, "ds2": {"N": 44177, "S": 1834, "V": 3218}}


@requires_mitbih
def test_class_counts_match_published_table():
    d = mitbih_dir()
    s = beats.split_ds1_ds2()
    for part, recs in (("ds1", s.ds1), ("ds2", s.ds2)):
        counts = {"N": 0, "S": 0, "V": 0}
        for r in recs:
            rb = beats.build_record_beats(wfdbio.read_record(d / r), SPEC)
            for c, v in rb.beats.class_counts().items():
                counts[c] += v
        for c, v in TABLE_II[part].items():
            assert abs(counts[c] - v) <= 0.005 * v, (part, c, counts[c], v)
