import math

import numpy as np
import pytest

from selfonn_ecg import augment, beats, dsp, synth, wfdbio
from selfonn_ecg.augment import AugmentConfig
from selfonn_ecg.beats import AamiClass

SPEC = dsp.WaveletSpec.for_sampling_rate(360.0)
N, S, V = AamiClass.N, AamiClass.S, AamiClass.V


def measured_snr(clean, noisy):
    return 10 * math.log10(augment.signal_power(clean) / augment.signal_power(noisy - clean))


# ---------------------------------------------------------------------------
# windows

def test_no_arrhythmia_no_windows():
    assert augment.find_arrhythmic_windows([100, 400, 700], [N, N, N], 72000) == []


def test_single_v_beat_window():
    assert augment.find_arrhythmic_windows([10000], [V], 72000) == [(7200, 14400)]


def test_partial_tail_tile_unused():
    assert augment.find_arrhythmic_windows([7300], [S], 10000) == []


def test_windows_rescan():
    rng = np.random.default_rng(0)
    idx = np.sort(rng.choice(200000, 300, replace=False))
    labels = [[N, N, N, N, S, V][k] for k in rng.integers(0, 6, 300)]
    wins = augment.find_arrhythmic_windows(idx, labels, 200000)
    assert wins
    for a, b in wins:
        assert b - a == 7200 and a % 7200 == 0
        assert any(a <= i < b and lab in (S, V) for i, lab in zip(idx, labels))
    tiles = {(a, b) for a, b in wins}
    for i, lab in zip(idx, labels):
        k = i // 7200
        if lab in (S, V) and (k + 1) * 7200 <= 200000:
            assert (k * 7200, (k + 1) * 7200) in tiles


# ---------------------------------------------------------------------------
# mixing

def test_infinite_snr_is_identity():
    x = np.random.default_rng(1).standard_normal(7200)
    y = augment.mix_noise(x, np.ones(9000), float("inf"), np.random.default_rng(0))
    np.testing.assert_array_equal(x, y)
    assert y is not x


@pytest.mark.parametrize("snr", [-6.0, 0.0, 6.0, 12.0, 18.0, 24.0, 40.0])
def test_measured_snr(snr):
    rng = np.random.default_rng(2)
    x = np.sin(np.linspace(0, 60, 7200)) + 0.1 * rng.standard_normal(7200)
    bank = augment.synthetic_noise_bank(seed=3)
    noise = augment.combined_noise(bank, 7200, [1.0, 1.0], rng)
    y = augment.mix_noise(x, noise, snr, rng)
    assert abs(measured_snr(x, y) - snr) < 0.01


def test_zero_power_window():
    with pytest.raises(augment.DegenerateWindowError):
        augment.mix_noise(np.zeros(10), np.ones(20), 6.0, np.random.default_rng(0))


def test_mix_is_seeded():
    x = np.random.default_rng(4).standard_normal(720)
    noise = np.random.default_rng(5).standard_normal(5000)
    a = augment.mix_noise(x, noise, 6.0, np.random.default_rng(9))
    b = augment.mix_noise(x, noise, 6.0, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)


def test_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(noise_mix=[0, 0])
    with pytest.raises(ValueError):
        AugmentConfig(snr_db_choices=[])


def test_noise_bank_from_nstdb_files(tmp_path):
    rng = np.random.default_rng(6)
    for name in ("bw", "ma"):
        wfdbio.write_record(tmp_path, name, rng.integers(-500, 500, 10000), 360.0)
    bank = augment.load_noise_bank(tmp_path)
    assert bank.source == "nstdb" and not bank.synthetic
    assert augment.load_noise_bank(tmp_path / "missing").synthetic


# ---------------------------------------------------------------------------
# rebalancing

@pytest.fixture(scope="module")
def records(tmp_path_factory):
    d = tmp_path_factory.mktemp("aug")
    # a long, N-heavy synthetic set so the floor is not met before augmenting
    synth.generate_synthetic(d, synth.SynthConfig(n_records=3, beats_per_record=120,
                                                  mix=(0.9, 0.05, 0.05), seed=4))
    return [beats.build_record_beats(wfdbio.read_record(d / n), SPEC) for n in ("s001", "s002", "s003")]


def test_augment_rebalances_and_inherits(records):
    bank = augment.synthetic_noise_bank(seed=0)
    res = augment.augment_records(records, bank, AugmentConfig(seed=1), SPEC)
    b = res.beats
    assert len(b) > 0 and np.all(b.augmented)
    assert set(b.labels.tolist()) <= {1, 2}
    by_id = {r.record_id: r for r in records}
    for k in range(len(b)):
        rec = by_id[b.record_ids[k]]
        pos = int(np.flatnonzero(rec.beat_index == b.r_index[k])[0])
        assert rec.beat_labels[pos].index == b.labels[k]
        np.testing.assert_array_equal(b.temporal[k], rec.temporal[pos])
    for c in ("S", "V"):
        assert res.counts_after[c] > res.counts_before[c]
    if res.targets_met:
        for c in ("S", "V"):
            assert res.counts_after[c] >= 0.25 * res.counts_after["N"]
    assert res.counts_after["N"] == res.counts_before["N"]
    assert res.manifest()["noise_source"] == "synthetic"


def test_augment_deterministic(records):
    bank = augment.synthetic_noise_bank(seed=0)
    a = augment.augment_records(records, bank, AugmentConfig(seed=5), SPEC).beats
    b = augment.augment_records(records, bank, AugmentConfig(seed=5), SPEC).beats
    np.testing.assert_array_equal(a.scalograms, b.scalograms)
    c = augment.augment_records(records, bank, AugmentConfig(seed=6), SPEC).beats
    assert len(c) != len(a) or not np.array_equal(c.scalograms, a.scalograms)


def test_augment_disabled(records):
    res = augment.augment_records(records, augment.synthetic_noise_bank(),
                                  AugmentConfig(enabled=False), SPEC)
    assert len(res.beats) == 0 and res.copies_made == 0


def test_noisy_copy_differs_from_clean(records):
    res = augment.augment_records(records, augment.synthetic_noise_bank(seed=0),
                                  AugmentConfig(seed=2, snr_db_choices=[0.0]), SPEC)
    b = res.beats
    clean = {(r.record_id, int(i)): s for r in records
             for i, s in zip(r.beats.r_index, r.beats.scalograms)}
    k = 0
    assert not np.allclose(b.scalograms[k], clean[(b.record_ids[k], int(b.r_index[k]))])
