"""Synthetic WFDB records with three separable beat families.

* N: patient template at the patient's regular RR.
* S: the same template, arriving early (prior RR shortened).
* V: wide, inverted QRS at regular timing.

Labels are recoverable from the RR ratio and the QRS width, which makes the
data a sanity check for the full pipeline without any licensed database.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .wfdbio import AnnotationEvent, write_record

FS = 360.0
GAIN = 200.0
BASELINE = 1024
PREMATURE_FACTOR = 0.6


@dataclass
class SynthConfig:
    n_records: int = 24
    beats_per_record: int = 100
    mix: tuple = (0.7, 0.15, 0.15)
    eval_fraction: float = 1 / 3
    noise_mv: float = 0.02
    seed: int = 0

    def __post_init__(self):
        self.mix = tuple(float(m) for m in self.mix)
        if len(self.mix) != 3 or min(self.mix) < 0 or sum(self.mix) <= 0:
            raise ValueError("mix needs three non-negative weights")
        if self.n_records < 2:
            raise ValueError("need at least two records for a patient split")
        if self.beats_per_record < 5:
            raise ValueError("beats_per_record must be at least 5")


def class_counts(n, mix):
    """Largest-remainder apportionment of ``n`` beats to N/S/V."""
    w = np.asarray(mix, dtype=float) / sum(mix)
    raw = w * n
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts), kind="stable")[: n - counts.sum()]:
        counts[i] += 1
    return counts


def _gauss(t, mu, sigma):
    return np.exp(-0.5 * ((t - mu) / sigma) ** 2)


def _label_sequence(counts, rng):
    """N/S/V sequence with no two ectopic beats adjacent and N at both ends."""
    n_n, n_s, n_v = (int(c) for c in counts)
    ectopic = np.array(["S"] * n_s + ["V"] * n_v)
    rng.shuffle(ectopic)
    if ectopic.size > max(n_n - 1, 0):
        raise ValueError("too many ectopic beats to keep them separated by normal beats")
    gaps = np.sort(rng.choice(n_n - 1, size=ectopic.size, replace=False)) if ectopic.size else []
    seq = []
    gi = 0
    for k in range(n_n):
        seq.append("N")
        while gi < len(gaps) and gaps[gi] == k:
            seq.append(str(ectopic[gi]))
            gi += 1
    return seq


def synth_record(counts, rng, noise_mv=0.02):
    """Return ``(signal_mv, r_indices, labels)`` for one synthetic patient."""
    labels = _label_sequence(counts, rng)
    base_rr = rng.uniform(0.75, 1.0)
    r_amp = rng.uniform(0.9, 1.4)
    r_width = rng.uniform(0.008, 0.012)
    t_amp = rng.uniform(0.2, 0.4)
    times = [0.6]
    for prev, lab in zip(labels[:-1], labels[1:]):
        rr = base_rr * (1 + rng.uniform(-0.03, 0.03))
        if lab == "S":
            rr *= PREMATURE_FACTOR
        times.append(times[-1] + rr)
    n = int(np.ceil((times[-1] + 0.8) * FS))
    t = np.arange(n) / FS
    x = np.zeros(n)
    r_idx = []
    for tc, lab in zip(times, labels):
        k = int(round(tc * FS))
        r_idx.append(k)
        tc = k / FS
        lo, hi = max(0, k - int(0.4 * FS)), min(n, k + int(0.6 * FS))
        tt = t[lo:hi]
        amp = 1 + rng.uniform(-0.08, 0.08)
        if lab == "V":
            w = x[lo:hi]
            w += amp * -1.2 * r_amp * _gauss(tt, tc, 3.5 * r_width)
            w += amp * 0.5 * t_amp * _gauss(tt, tc + 0.28, 0.06)
        else:
            w = x[lo:hi]
            w += amp * 0.15 * _gauss(tt, tc - 0.18, 0.025)
            w += amp * -0.12 * _gauss(tt, tc - 0.025, 0.008)
            w += amp * r_amp * _gauss(tt, tc, r_width)
            w += amp * -0.2 * _gauss(tt, tc + 0.03, 0.01)
            w += amp * t_amp * _gauss(tt, tc + 0.25, 0.04)
    x += 0.1 * np.sin(2 * np.pi * rng.uniform(0.1, 0.3) * t + rng.uniform(0, 2 * np.pi))
    x += noise_mv * rng.standard_normal(n)
    return x, np.asarray(r_idx, dtype=np.int64), labels


def generate_synthetic(out_dir, cfg: SynthConfig | None = None):
    """Write ``cfg.n_records`` WFDB records plus ``split.json`` into ``out_dir``."""
    cfg = cfg or SynthConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    root = np.random.SeedSequence(cfg.seed)
    counts = class_counts(cfg.beats_per_record, cfg.mix)
    names = []
    for i, child in enumerate(root.spawn(cfg.n_records)):
        rng = np.random.default_rng(child)
        name = f"s{i + 1:03d}"
        sig, r_idx, labels = synth_record(counts, rng, cfg.noise_mv)
        adc = np.clip(np.round(sig * GAIN) + BASELINE, -2048, 2047).astype(np.int64)
        anns = [AnnotationEvent(int(k), lab) for k, lab in zip(r_idx, labels)]
        write_record(out, name, adc[:, None], FS, gains=[GAIN], baselines=[BASELINE],
                     descriptions=["MLII"], annotations=anns,
                     comments=[f"synthetic seed={cfg.seed} index={i}"])
        names.append(name)
    n_eval = max(1, int(round(cfg.n_records * cfg.eval_fraction)))
    split = {"train": names[:-n_eval], "eval": names[-n_eval:]}
    (out / "split.json").write_text(json.dumps(split, indent=2))
    (out / "synth.json").write_text(json.dumps(
        {**asdict(cfg), "counts_per_record": dict(zip("NSV", map(int, counts)))}, indent=2))
    return split
