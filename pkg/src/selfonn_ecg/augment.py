"""Training-set rebalancing with noisy copies of arrhythmic 20 s windows."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import wfdbio
from .beats import AamiClass, BeatSet, RecordBeats, beats_from_signal, CLASS_NAMES
from .dsp import NormalizedSignal, WaveletSpec

logger = logging.getLogger(__name__)

WINDOW_S = 20.0


class DegenerateWindowError(ValueError):
    pass


@dataclass
class NoiseBank:
    baseline_wander: np.ndarray
    motion_artifact: np.ndarray
    fs: float = 360.0
    source: str = "nstdb"

    def __post_init__(self):
        min_len = int(WINDOW_S * self.fs)
        for name in ("baseline_wander", "motion_artifact"):
            if len(getattr(self, name)) <= min_len:
                raise ValueError(f"{name} noise must be longer than one {WINDOW_S:g} s window")

    @property
    def synthetic(self):
        return self.source != "nstdb"


@dataclass
class AugmentConfig:
    snr_db_choices: list = field(default_factory=lambda: [0.0, 6.0, 12.0, 18.0, 24.0])
    copies_per_window: int = 10
    seed: int = 0
    noise_mix: list = field(default_factory=lambda: [1.0, 1.0])
    floor_fraction: float = 0.25
    enabled: bool = True

    def __post_init__(self):
        if self.copies_per_window < 0:
            raise ValueError("copies_per_window must be >= 0")
        w = np.asarray(self.noise_mix, dtype=float)
        if w.shape != (2,) or np.any(w < 0) or not np.any(w > 0):
            raise ValueError("noise_mix needs two non-negative weights, not both zero")
        if not self.snr_db_choices:
            raise ValueError("snr_db_choices must not be empty")


def synthetic_noise_bank(fs=360.0, duration_s=120.0, seed=0) -> NoiseBank:
    """Stand-in for NSTDB: slow sinusoidal drift plus band-limited noise."""
    rng = np.random.default_rng(seed)
    n = int(duration_s * fs)
    t = np.arange(n) / fs
    bw = np.zeros(n)
    for f in (0.15, 0.3, 0.5):
        bw += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    white = rng.standard_normal(n)
    # 1-25 Hz band via FFT masking
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1 / fs)
    spec[(freqs < 1.0) | (freqs > 25.0)] = 0
    ma = np.fft.irfft(spec, n)
    ma /= ma.std()
    return NoiseBank(baseline_wander=bw, motion_artifact=ma, fs=fs, source="synthetic")


def load_noise_bank(nstdb_dir=None, fs=360.0, seed=0) -> NoiseBank:
    """NSTDB ``bw``/``ma`` records when present, else the synthetic stand-in."""
    if nstdb_dir is not None:
        d = Path(nstdb_dir)
        if (d / "bw.hea").exists() and (d / "ma.hea").exists():
            bw = wfdbio.read_record(d / "bw", annotator=None)
            ma = wfdbio.read_record(d / "ma", annotator=None)
            return NoiseBank(bw.physical(0), ma.physical(0), fs=bw.header.fs, source="nstdb")
    logger.info("NSTDB noise records not found; using synthetic noise bank")
    return synthetic_noise_bank(fs=fs, seed=seed)


def find_arrhythmic_windows(beat_index, labels, n_samples, fs=360.0):
    """Non-overlapping 20 s tiles from sample 0 holding at least one S or V beat.

    Returns ``[(start, stop), ...]`` half-open sample ranges; partial tiles at
    the end of the record are not used.
    """
    width = int(round(WINDOW_S * fs))
    idx = np.asarray(beat_index, dtype=np.int64)
    arrhythmic = np.array([AamiClass(lab) in (AamiClass.S, AamiClass.V) for lab in labels], dtype=bool)
    tiles = sorted(set((idx[arrhythmic] // width).tolist()))
    return [(k * width, (k + 1) * width) for k in tiles if (k + 1) * width <= n_samples]


def signal_power(x):
    return float(np.mean(np.square(x)))


def mix_noise(window, noise, snr_db, rng):
    """``window + alpha * noise_slice`` with alpha set so the mix has ``snr_db``.

    ``snr_db = inf`` returns an unchanged copy.
    """
    window = np.asarray(window, dtype=np.float64)
    if math.isinf(snr_db) and snr_db > 0:
        return window.copy()
    p_sig = signal_power(window)
    if p_sig == 0:
        raise DegenerateWindowError("window has zero power")
    noise = np.asarray(noise, dtype=np.float64)
    if noise.size < window.size:
        raise ValueError("noise series shorter than the window")
    start = int(rng.integers(0, noise.size - window.size + 1))
    piece = noise[start:start + window.size]
    p_noise = signal_power(piece)
    if p_noise == 0:
        raise DegenerateWindowError("noise slice has zero power")
    alpha = math.sqrt(p_sig / (p_noise * 10.0 ** (snr_db / 10.0)))
    return window + alpha * piece


def combined_noise(bank: NoiseBank, length, weights, rng):
    """Weighted sum of unit-RMS baseline-wander and motion-artifact slices."""
    parts = []
    for series in (bank.baseline_wander, bank.motion_artifact):
        start = int(rng.integers(0, series.size - length + 1))
        piece = series[start:start + length]
        rms = math.sqrt(signal_power(piece))
        parts.append(piece / rms if rms > 0 else piece)
    return weights[0] * parts[0] + weights[1] * parts[1]


@dataclass
class AugmentResult:
    beats: BeatSet
    windows_available: int
    copies_made: int
    counts_before: dict
    counts_after: dict
    targets_met: bool
    noise_source: str

    def manifest(self):
        return {
            "augmented": True,
            "noise_source": self.noise_source,
            "windows_available": self.windows_available,
            "copies_made": self.copies_made,
            "augmented_beats": self.beats.class_counts(),
            "counts_before": self.counts_before,
            "counts_after": self.counts_after,
            "targets_met": self.targets_met,
        }


def _deficient(counts, floor):
    target = floor * counts["N"]
    return {c for c in ("S", "V") if counts[c] < target}


def augment_records(records: list[RecordBeats], bank: NoiseBank, cfg: AugmentConfig,
                    spec: WaveletSpec) -> AugmentResult:
    """Add noisy copies of arrhythmic windows until S and V each reach
    ``floor_fraction`` of the N count or the copy budget runs out.

    Only S and V beats of a noisy window are kept; the copy inherits the
    original R positions, labels and RR features.
    """
    records = sorted(records, key=lambda r: r.record_id)
    counts = {c: 0 for c in CLASS_NAMES}
    for rec in records:
        for c, v in rec.beats.class_counts().items():
            counts[c] += v
    before = dict(counts)
    windows = []
    for rec_no, rec in enumerate(records):
        for w in find_arrhythmic_windows(rec.beat_index, rec.beat_labels,
                                         rec.signal.values.size, rec.signal.fs):
            windows.append((rec_no, w))
    weights = np.asarray(cfg.noise_mix, dtype=float)
    out = []
    copies = 0
    if cfg.enabled:
        for round_no in range(cfg.copies_per_window):
            if not _deficient(counts, cfg.floor_fraction):
                break
            for win_no, (rec_no, (start, stop)) in enumerate(windows):
                need = _deficient(counts, cfg.floor_fraction)
                if not need:
                    break
                rec = records[rec_no]
                in_win = (rec.beat_index >= start) & (rec.beat_index < stop)
                labels_here = {rec.beat_labels[k].value for k in np.flatnonzero(in_win)}
                if not (labels_here & need):
                    continue
                rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, rec_no, win_no, round_no]))
                snr = float(cfg.snr_db_choices[int(rng.integers(len(cfg.snr_db_choices)))])
                window = rec.signal.values[start:stop]
                noise = combined_noise(bank, stop - start, weights, rng)
                noisy = rec.signal.values.copy()
                noisy[start:stop] = mix_noise(window, noise, snr, rng)
                sig = NormalizedSignal(noisy, rec.signal.fs, rec.record_id)
                # keep beats whose whole segment lies inside the noisy window
                select = in_win & (rec.beat_index - 90 >= start) & (rec.beat_index + 139 < stop)
                select &= np.array([lab in (AamiClass.S, AamiClass.V) for lab in rec.beat_labels], dtype=bool)
                if not select.any():
                    continue
                beats, _ = beats_from_signal(sig, rec.beat_index, rec.beat_labels, rec.temporal,
                                             spec, rec.record_id, select=select, augmented=True)
                out.append(beats)
                copies += 1
                for c, v in beats.class_counts().items():
                    counts[c] += v
    result = BeatSet.concat(out)
    met = not _deficient(counts, cfg.floor_fraction)
    if not met:
        logger.warning("augmentation budget exhausted before class floor: %s", counts)
    return AugmentResult(beats=result, windows_available=len(windows), copies_made=copies,
                         counts_before=before, counts_after=counts, targets_met=met,
                         noise_source=bank.source)
