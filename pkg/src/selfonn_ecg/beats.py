"""Labeled beat datasets: AAMI mapping, R-anchored segmentation, RR features
and the DS1/DS2 inter-patient split."""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import dsp
from .wfdbio import BEAT_SYMBOLS, RawRecord

logger = logging.getLogger(__name__)

FS = 360.0
PRE_SAMPLES = 90    # round(0.250 s * 360 Hz)
POST_SAMPLES = 139  # R sample + 139 -> 230 samples in total
SEGMENT_LENGTH = PRE_SAMPLES + 1 + POST_SAMPLES
RR_WINDOW_S = 10.0


class AamiClass(str, enum.Enum):
    N = "N"
    S = "S"
    V = "V"
    EXCLUDED = "X"

    @property
    def index(self):
        return CLASS_NAMES.index(self.value)


CLASS_NAMES = ("N", "S", "V")

_AAMI = {
    **dict.fromkeys("NLRej", AamiClass.N),
    **dict.fromkeys("aASJ", AamiClass.S),
    **dict.fromkeys("VE!", AamiClass.V),
}


def map_symbol_to_aami(symbol: str) -> AamiClass:
    """N/S/V superclass of a beat symbol; fusion, paced, unknown and
    anything else map to EXCLUDED."""
    return _AAMI.get(symbol, AamiClass.EXCLUDED)


# ---------------------------------------------------------------------------
# split

DS1 = ("101", "106", "108", "109", "112", "114", "115", "116", "118", "119", "122",
       "124", "201", "203", "205", "207", "208", "209", "215", "220", "223", "230")
DS2 = ("100", "103", "105", "111", "113", "117", "121", "123", "200", "202", "210",
       "212", "213", "214", "219", "221", "222", "228", "231", "232", "233", "234")
PACED_RECORDS = ("102", "104", "107", "217")


@dataclass(frozen=True)
class DatasetSplit:
    ds1: tuple[str, ...]
    ds2: tuple[str, ...]
    excluded: tuple[str, ...] = PACED_RECORDS

    def __post_init__(self):
        overlap = set(self.ds1) & set(self.ds2)
        if overlap:
            raise ValueError(f"records in both partitions: {sorted(overlap)}")
        bad = (set(self.ds1) | set(self.ds2)) & set(self.excluded)
        if bad:
            raise ValueError(f"excluded records present in a partition: {sorted(bad)}")


def split_ds1_ds2() -> DatasetSplit:
    return DatasetSplit(ds1=DS1, ds2=DS2)


# ---------------------------------------------------------------------------
# segmentation and timing

class SegmentResult(NamedTuple):
    segments: np.ndarray   # (n, 230)
    r_index: np.ndarray    # (n,) absolute R positions of the kept beats
    labels: list           # AamiClass per kept beat
    kept: np.ndarray       # bool mask over the input beats
    n_dropped: int


def segment_beats(signal, beats, fs=FS) -> SegmentResult:
    """Cut ``[r - 90, r + 139]`` windows around each ``(r_index, label)``.

    Beats whose window leaves the record are dropped and counted.
    """
    if fs != FS:
        raise ValueError(f"segmentation is defined for {FS:g} Hz records, got {fs}")
    x = signal.values if isinstance(signal, dsp.NormalizedSignal) else np.asarray(signal)
    idx = np.asarray([b[0] for b in beats], dtype=np.int64)
    labels = [b[1] for b in beats]
    if idx.size and np.any(np.diff(idx) < 0):
        raise ValueError("beat indices must be sorted")
    kept = (idx - PRE_SAMPLES >= 0) & (idx + POST_SAMPLES < x.size)
    starts = idx[kept] - PRE_SAMPLES
    segs = x[starts[:, None] + np.arange(SEGMENT_LENGTH)[None, :]] if starts.size \
        else np.empty((0, SEGMENT_LENGTH))
    return SegmentResult(segments=segs, r_index=idx[kept],
                         labels=[lab for lab, k in zip(labels, kept) if k],
                         kept=kept, n_dropped=int((~kept).sum()))


class TemporalFeatures(NamedTuple):
    rr_prev: float
    rr_next: float
    rr_ratio: float
    rr_avg: float


class BoundaryBeatError(IndexError):
    pass


def extract_temporal(beat_indices, i, fs=FS) -> TemporalFeatures:
    """RR features of beat ``i`` from annotation timing alone."""
    t = np.asarray(beat_indices, dtype=np.int64)
    if i <= 0 or i >= t.size - 1:
        raise BoundaryBeatError(f"beat {i} has no prior or next RR interval")
    rr_prev = (t[i] - t[i - 1]) / fs
    rr_next = (t[i + 1] - t[i]) / fs
    lo, hi = t[i] - RR_WINDOW_S * fs, t[i] + RR_WINDOW_S * fs
    rr = np.diff(t)
    inside = (t[:-1] >= lo) & (t[1:] <= hi)
    rr_avg = rr[inside].mean() / fs if inside.any() else 0.5 * (rr_prev + rr_next)
    return TemporalFeatures(rr_prev, rr_next, rr_prev / rr_next, float(rr_avg))


def temporal_matrix(beat_indices, fs=FS) -> np.ndarray:
    """:func:`extract_temporal` for every beat at once; boundary rows are NaN."""
    t = np.asarray(beat_indices, dtype=np.int64)
    n = t.size
    out = np.full((n, 4), np.nan)
    if n < 3:
        return out
    rr = np.diff(t).astype(np.float64)
    rr_prev, rr_next = rr[:-1], rr[1:]
    inner = t[1:-1]
    # interval j spans t[j]..t[j+1]; it qualifies when t[j] >= lo and t[j+1] <= hi
    first = np.searchsorted(t, inner - RR_WINDOW_S * fs, side="left")
    last = np.searchsorted(t, inner + RR_WINDOW_S * fs, side="right") - 2
    csum = np.concatenate([[0.0], np.cumsum(rr)])
    count = last - first + 1
    total = csum[np.maximum(last + 1, first)] - csum[first]
    with np.errstate(invalid="ignore", divide="ignore"):
        avg = np.where(count > 0, total / np.maximum(count, 1), 0.5 * (rr_prev + rr_next))
    out[1:-1, 0] = rr_prev / fs
    out[1:-1, 1] = rr_next / fs
    out[1:-1, 2] = rr_prev / rr_next
    out[1:-1, 3] = avg / fs
    return out


@dataclass
class Standardizer:
    """Column-wise z-score fitted on the training split."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, features):
        x = np.asarray(features, dtype=np.float64)
        if x.shape[0] == 0:
            raise ValueError("cannot fit a standardizer on an empty training set")
        std = x.std(axis=0)
        if np.any(std == 0):
            raise dsp.DegenerateSignalError(f"constant feature column(s): {np.flatnonzero(std == 0).tolist()}")
        return cls(mean=x.mean(axis=0), std=std)

    @classmethod
    def identity(cls, n):
        return cls(mean=np.zeros(n), std=np.ones(n))

    def transform(self, features):
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.std

    def inverse(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(mean=np.asarray(d["mean"], dtype=np.float64),
                   std=np.asarray(d["std"], dtype=np.float64))


def standardize_temporal(train_features):
    """Fit on training features; returns ``(standardizer, transform)``."""
    st = Standardizer.fit(train_features)
    return st, st.transform


# ---------------------------------------------------------------------------
# beat sets

TEMPORAL_COLUMNS = ("rr_prev", "rr_next", "rr_ratio", "rr_avg")


@dataclass
class BeatSet:
    """Column store of labeled beats (raw, unstandardized inputs)."""

    scalograms: np.ndarray            # (n, 9, 230) float32
    temporal: np.ndarray              # (n, 4) float64, seconds / ratio
    labels: np.ndarray                # (n,) int64 in 0..2
    record_ids: np.ndarray            # (n,) str
    r_index: np.ndarray               # (n,) int64
    augmented: np.ndarray = None      # (n,) bool

    def __post_init__(self):
        n = len(self.labels)
        if self.augmented is None:
            self.augmented = np.zeros(n, dtype=bool)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.record_ids = np.asarray(self.record_ids, dtype=str)
        self.r_index = np.asarray(self.r_index, dtype=np.int64)
        for name in ("scalograms", "temporal", "record_ids", "r_index", "augmented"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has {len(getattr(self, name))} rows, expected {n}")
        if n and (self.labels.min() < 0 or self.labels.max() > 2):
            raise ValueError("labels must be N/S/V indices")

    def __len__(self):
        return len(self.labels)

    @classmethod
    def empty(cls, n_scales=9):
        return cls(np.zeros((0, n_scales, SEGMENT_LENGTH), np.float32), np.zeros((0, 4)),
                   np.zeros(0, np.int64), np.zeros(0, str), np.zeros(0, np.int64))

    @classmethod
    def concat(cls, sets):
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty()
        return cls(np.concatenate([s.scalograms for s in sets]),
                   np.concatenate([s.temporal for s in sets]),
                   np.concatenate([s.labels for s in sets]),
                   np.concatenate([s.record_ids for s in sets]),
                   np.concatenate([s.r_index for s in sets]),
                   np.concatenate([s.augmented for s in sets]))

    def subset(self, mask):
        return BeatSet(self.scalograms[mask], self.temporal[mask], self.labels[mask],
                       self.record_ids[mask], self.r_index[mask], self.augmented[mask])

    def for_records(self, records):
        return self.subset(np.isin(self.record_ids, list(records)))

    @property
    def patients(self):
        return sorted(set(self.record_ids.tolist()))

    def class_counts(self):
        counts = np.bincount(self.labels, minlength=3)
        return dict(zip(CLASS_NAMES, map(int, counts)))

    def save(self, prefix, **meta):
        prefix = Path(prefix)
        dsp.write_packed(prefix, self.scalograms, n_beats=len(self), **meta)
        with open(prefix.with_suffix(".beats.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["record", "r_index", "label", *TEMPORAL_COLUMNS, "augmented"])
            for k in range(len(self)):
                w.writerow([self.record_ids[k], int(self.r_index[k]), CLASS_NAMES[self.labels[k]],
                            *(repr(float(v)) for v in self.temporal[k]), int(self.augmented[k])])

    @classmethod
    def load(cls, prefix):
        prefix = Path(prefix)
        scal, _ = dsp.read_packed(prefix)
        with open(prefix.with_suffix(".beats.csv"), newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(scalograms=scal,
                   temporal=np.array([[float(r[c]) for c in TEMPORAL_COLUMNS] for r in rows]).reshape(-1, 4),
                   labels=np.array([CLASS_NAMES.index(r["label"]) for r in rows], dtype=np.int64),
                   record_ids=np.array([r["record"] for r in rows], dtype=str),
                   r_index=np.array([int(r["r_index"]) for r in rows], dtype=np.int64),
                   augmented=np.array([r["augmented"] == "1" for r in rows], dtype=bool))


@dataclass
class RecordBeats:
    """Per-record intermediate kept for augmentation and reporting."""

    record_id: str
    signal: dsp.NormalizedSignal
    beat_index: np.ndarray          # all QRS annotations
    beat_labels: list               # AamiClass per QRS annotation
    temporal: np.ndarray            # temporal_matrix(beat_index)
    beats: BeatSet
    stats: dict = field(default_factory=dict)


def beat_annotations(record: RawRecord):
    """QRS annotations inside the record, as ``(index array, AamiClass list)``."""
    evs = [ev for ev in record.annotations
           if ev.symbol in BEAT_SYMBOLS and ev.sample_index < record.header.n_samples]
    idx = np.array([ev.sample_index for ev in evs], dtype=np.int64)
    return idx, [map_symbol_to_aami(ev.symbol) for ev in evs]


def beats_from_signal(signal: dsp.NormalizedSignal, beat_index, beat_labels, temporal,
                      spec: dsp.WaveletSpec, record_id, select=None, augmented=False):
    """Build a BeatSet from a normalized signal and QRS annotations.

    ``select`` optionally restricts which annotation positions are emitted.
    """
    usable = np.array([lab is not AamiClass.EXCLUDED for lab in beat_labels], dtype=bool)
    usable &= np.all(np.isfinite(temporal), axis=1)
    if select is not None:
        usable &= select
    pos = np.flatnonzero(usable)
    seg = segment_beats(signal, [(int(beat_index[p]), beat_labels[p]) for p in pos], fs=signal.fs)
    pos = pos[seg.kept]
    scal = dsp.batch_scalograms(seg.segments, spec, signal.fs).astype(np.float32) \
        if len(pos) else np.zeros((0, spec.n_scales, SEGMENT_LENGTH), np.float32)
    beats = BeatSet(scalograms=scal, temporal=temporal[pos],
                    labels=np.array([beat_labels[p].index for p in pos], dtype=np.int64),
                    record_ids=np.full(len(pos), record_id, dtype=object).astype(str),
                    r_index=beat_index[pos],
                    augmented=np.full(len(pos), augmented, dtype=bool))
    return beats, seg.n_dropped


def build_record_beats(record: RawRecord, spec: dsp.WaveletSpec, channel=0) -> RecordBeats:
    """Normalize channel ``channel`` and emit every usable N/S/V beat."""
    fs = record.header.fs
    signal = dsp.normalize_record(record.physical(channel), fs=fs, record_id=record.name)
    idx, labels = beat_annotations(record)
    temporal = temporal_matrix(idx, fs)
    beats, n_window_drops = beats_from_signal(signal, idx, labels, temporal, spec, record.name)
    n_excluded = sum(lab is AamiClass.EXCLUDED for lab in labels)
    n_boundary = sum(1 for k, lab in enumerate(labels)
                     if lab is not AamiClass.EXCLUDED and (k == 0 or k == len(labels) - 1))
    annotated = {c: sum(lab.value == c for lab in labels) for c in CLASS_NAMES}
    stats = {
        "fs": fs,
        "n_samples": record.header.n_samples,
        "n_qrs_annotations": int(idx.size),
        "annotated": annotated,
        "beats": beats.class_counts(),
        "excluded_symbols": int(n_excluded),
        "dropped_rr_boundary": int(n_boundary),
        "dropped_window": int(n_window_drops),
        "unknown_annotation_codes": int(record.unknown_annotation_codes),
    }
    return RecordBeats(record_id=record.name, signal=signal, beat_index=idx,
                       beat_labels=labels, temporal=temporal, beats=beats, stats=stats)
