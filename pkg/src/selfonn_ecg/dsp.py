"""Record normalization and the 9-band Ricker wavelet scalogram."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

SEGMENT_LENGTH = 230
DEFAULT_BANDS = tuple(float(f) for f in range(10, 100, 10))

RICKER_AMPLITUDE = 2.0 / (math.sqrt(3.0) * math.pi ** 0.25)
# spectral peak of the unit-scale Ricker wavelet is at omega = sqrt(2)
RICKER_CENTER_FREQUENCY = math.sqrt(2.0) / (2.0 * math.pi)


class DegenerateSignalError(ValueError):
    pass


@dataclass
class NormalizedSignal:
    values: np.ndarray
    fs: float
    record_id: str = ""


def normalize_record(signal, fs=360.0, record_id="") -> NormalizedSignal:
    """Zero-mean, unit-variance (population std) copy of a whole record."""
    x = np.asarray(signal, dtype=np.float64)
    if x.size < 2:
        raise DegenerateSignalError("need at least two samples to normalize")
    std = x.std()
    if not np.isfinite(std) or std == 0.0:
        raise DegenerateSignalError(f"record {record_id or '?'} is constant or non-finite")
    return NormalizedSignal(values=(x - x.mean()) / std, fs=fs, record_id=record_id)


def ricker(t):
    """Mexican-hat wavelet ``A * exp(-t**2 / 2) * (1 - t**2)``."""
    t = np.asarray(t, dtype=np.float64)
    t2 = t * t
    return RICKER_AMPLITUDE * np.exp(-0.5 * t2) * (1.0 - t2)


def scales_for_bands(fs, bands=DEFAULT_BANDS, center_frequency=RICKER_CENTER_FREQUENCY):
    """Scales (in samples) whose pseudo-frequency ``Fc * fs / a`` equals each band."""
    bands = np.asarray(bands, dtype=np.float64)
    if np.any(bands <= 0) or np.any(bands >= fs / 2):
        raise ValueError(f"bands must lie in (0, {fs / 2}) Hz, got {bands.tolist()}")
    return center_frequency * fs / bands


@dataclass(frozen=True)
class WaveletSpec:
    scales: tuple[float, ...]
    target_bands: tuple[float, ...] = DEFAULT_BANDS
    center_frequency: float = RICKER_CENTER_FREQUENCY
    support_halfwidth: float = 8.0

    def __post_init__(self):
        if len(self.scales) != len(self.target_bands):
            raise ValueError("one scale per target band is required")
        if any(a <= 0 for a in self.scales):
            raise ValueError("scales must be positive")
        if list(self.target_bands) != sorted(self.target_bands):
            raise ValueError("target bands must ascend")

    @classmethod
    def for_sampling_rate(cls, fs=360.0, bands=DEFAULT_BANDS, support_halfwidth=8.0):
        scales = scales_for_bands(fs, bands)
        return cls(scales=tuple(float(a) for a in scales),
                   target_bands=tuple(float(b) for b in bands),
                   support_halfwidth=support_halfwidth)

    @property
    def n_scales(self):
        return len(self.scales)


@lru_cache(maxsize=16)
def _kernel_bank(scales, support_halfwidth, fs, length):
    # bank[i, t, b] = psi((t - b) / a_i) / sqrt(a_i) * dt, zero outside the support
    lag = np.arange(length)[:, None] - np.arange(length)[None, :]
    bank = np.empty((len(scales), length, length))
    for i, a in enumerate(scales):
        k = ricker(lag / a) / (math.sqrt(a) * fs)
        k[np.abs(lag) > support_halfwidth * a] = 0.0
        bank[i] = k
    bank.setflags(write=False)
    return bank


def dwt_scalogram(segment, spec: WaveletSpec, fs=360.0) -> np.ndarray:
    """Wavelet coefficients of one segment, shape ``(n_scales, len(segment))``.

    The segment is zero-padded outside its own bounds.
    """
    x = np.asarray(segment, dtype=np.float64)
    return batch_scalograms(x[None, :], spec, fs)[0]


def batch_scalograms(segments, spec: WaveletSpec, fs=360.0) -> np.ndarray:
    """Scalograms for a ``(n, length)`` stack of segments -> ``(n, n_scales, length)``."""
    x = np.asarray(segments, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a 2-D stack of segments")
    if not np.all(np.isfinite(x)):
        raise ValueError("segments contain non-finite values")
    bank = _kernel_bank(spec.scales, spec.support_halfwidth, float(fs), x.shape[1])
    out = np.empty((x.shape[0], bank.shape[0], x.shape[1]))
    for i in range(bank.shape[0]):
        out[:, i, :] = x @ bank[i]
    return out


# ---------------------------------------------------------------------------
# export

def write_scalogram_csv(path, scalogram, bands=DEFAULT_BANDS):
    """One beat per file: rows are time samples, one column per band."""
    scalogram = np.asarray(scalogram)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample"] + [f"{b:g}Hz" for b in bands])
        for t in range(scalogram.shape[1]):
            writer.writerow([t] + [repr(float(v)) for v in scalogram[:, t]])


def read_scalogram_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    values = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
    return values.T


def write_packed(prefix, array, **meta):
    """Little-endian float32 blob ``<prefix>.f32`` with a ``<prefix>.json`` sidecar."""
    prefix = Path(prefix)
    arr = np.ascontiguousarray(array, dtype="<f4")
    prefix.with_suffix(".f32").write_bytes(arr.tobytes())
    sidecar = {"dtype": "<f4", "shape": list(arr.shape), **meta}
    prefix.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))
    return sidecar


def read_packed(prefix):
    prefix = Path(prefix)
    meta = json.loads(prefix.with_suffix(".json").read_text())
    data = np.frombuffer(prefix.with_suffix(".f32").read_bytes(), dtype=meta["dtype"])
    expected = int(np.prod(meta["shape"])) if meta["shape"] else 1
    if data.size != expected:
        raise ValueError(f"{prefix}: blob has {data.size} values, sidecar says {expected}")
    return data.reshape(meta["shape"]).astype(np.float32), meta


@dataclass
class RowStandardizer:
    """Per-scale z-scoring of scalograms, fitted on training beats only."""

    mean: np.ndarray = field(default_factory=lambda: np.zeros(len(DEFAULT_BANDS)))
    std: np.ndarray = field(default_factory=lambda: np.ones(len(DEFAULT_BANDS)))

    @classmethod
    def fit(cls, scalograms):
        x = np.asarray(scalograms, dtype=np.float64)
        mean = x.mean(axis=(0, 2))
        std = x.std(axis=(0, 2))
        if np.any(std == 0):
            raise DegenerateSignalError("a scalogram row is constant across the training set")
        return cls(mean=mean, std=std)

    def transform(self, scalograms):
        x = np.asarray(scalograms)
        return ((x - self.mean[:, None]) / self.std[:, None]).astype(x.dtype, copy=False)

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(mean=np.asarray(d["mean"], dtype=np.float64),
                   std=np.asarray(d["std"], dtype=np.float64))
