"""Record-level orchestration: ingest, preprocess into beat sets, augment."""

from __future__ import annotations

import json
import logging
from pathlib import Path

from . import beats as beats_mod
from . import dsp, wfdbio
from .augment import AugmentConfig, augment_records, load_noise_bank
from .beats import BeatSet, PACED_RECORDS, RecordBeats

logger = logging.getLogger(__name__)


class DataError(RuntimeError):
    """A record could not be read; the message names it."""


class NoRecordsError(DataError):
    pass


def read_named_record(data_dir, name):
    try:
        return wfdbio.read_record(Path(data_dir) / name)
    except (wfdbio.WFDBError, OSError, ValueError) as exc:
        raise DataError(f"record {name}: {exc}") from exc


def ingest(data_dir):
    """Summary of every record in ``data_dir``: rate, length and AAMI counts."""
    names = wfdbio.list_records(data_dir)
    if not names:
        raise NoRecordsError(f"no records found in {data_dir}")
    records = {}
    totals = {c: 0 for c in ("N", "S", "V", "X")}
    usable = []
    for name in names:
        rec = read_named_record(data_dir, name)
        idx, labels = beats_mod.beat_annotations(rec)
        counts = {c: 0 for c in ("N", "S", "V", "X")}
        for lab in labels:
            counts[lab.value] += 1
        excluded = name in PACED_RECORDS
        records[name] = {"fs": rec.header.fs, "n_samples": rec.header.n_samples,
                         "n_signals": rec.header.n_signals,
                         "leads": [s.description for s in rec.header.signals],
                         "beats": counts, "excluded": excluded,
                         "unknown_annotation_codes": rec.unknown_annotation_codes}
        if not excluded:
            usable.append(name)
            for c, v in counts.items():
                totals[c] += v
    return {"data_dir": str(data_dir), "n_records": len(names), "usable_records": usable,
            "n_usable": len(usable), "class_totals": totals, "records": records}


def resolve_split(split, data_dir=None):
    """``(train_ids, eval_ids)`` for "ds1-ds2", "ds2-ds1", a dict or a JSON path."""
    if isinstance(split, dict):
        train, evals = list(split["train"]), list(split["eval"])
    elif split in ("ds1-ds2", "ds1->ds2"):
        s = beats_mod.split_ds1_ds2()
        train, evals = list(s.ds1), list(s.ds2)
    elif split in ("ds2-ds1", "ds2->ds1"):
        s = beats_mod.split_ds1_ds2()
        train, evals = list(s.ds2), list(s.ds1)
    elif split == "auto" and data_dir is not None and (Path(data_dir) / "split.json").exists():
        return resolve_split(json.loads((Path(data_dir) / "split.json").read_text()))
    else:
        path = Path(str(split))
        if not path.exists():
            raise ValueError(f"unknown split {split!r}")
        return resolve_split(json.loads(path.read_text()))
    overlap = set(train) & set(evals)
    if overlap:
        raise ValueError(f"split is not patient-disjoint: {sorted(overlap)}")
    return train, evals


def build_beats(data_dir, names, spec, channel=0) -> list[RecordBeats]:
    out = []
    for name in sorted(names):
        rec = read_named_record(data_dir, name)
        if rec.header.fs != beats_mod.FS:
            raise DataError(f"record {name}: sampling rate {rec.header.fs} Hz, expected 360 Hz")
        out.append(beats_mod.build_record_beats(rec, spec, channel=channel))
    return out


def preprocess(data_dir, out_dir, split="ds1-ds2", channel=0, keep_records=False):
    """Write ``train`` and ``eval`` beat sets plus ``manifest.json`` to ``out_dir``.

    Standardization statistics are fitted on the training split only.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_ids, eval_ids = resolve_split(split, data_dir)
    spec = dsp.WaveletSpec.for_sampling_rate(beats_mod.FS)
    train_recs = build_beats(data_dir, train_ids, spec, channel)
    eval_recs = build_beats(data_dir, eval_ids, spec, channel)
    train = BeatSet.concat([r.beats for r in train_recs])
    evals = BeatSet.concat([r.beats for r in eval_recs])
    meta = {"fs": beats_mod.FS, "scales": list(spec.scales), "bands_hz": list(spec.target_bands),
            "support_halfwidth": spec.support_halfwidth}
    train.save(out / "train", **meta)
    evals.save(out / "eval", **meta)
    row_norm = dsp.RowStandardizer.fit(train.scalograms)
    temporal_norm = beats_mod.Standardizer.fit(train.temporal)
    manifest = {
        "data_dir": str(data_dir),
        "channel": channel,
        "split": {"train": sorted(train_ids), "eval": sorted(eval_ids)},
        "wavelet": meta,
        "records": {r.record_id: {**r.stats, "partition": part}
                    for part, recs in (("train", train_recs), ("eval", eval_recs)) for r in recs},
        "class_counts": {"train": train.class_counts(), "eval": evals.class_counts()},
        "standardization": {"scalogram_rows": row_norm.to_dict(),
                            "temporal": temporal_norm.to_dict(),
                            "fitted_on": "train"},
        "augmentation": None,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    if keep_records:
        return manifest, train_recs, eval_recs
    return manifest


def augment(data_dir, dataset_dir, cfg: AugmentConfig, nstdb_dir=None, records=None):
    """Add ``augmented`` beats for the training split of a preprocessed dataset."""
    dataset_dir = Path(dataset_dir)
    manifest = json.loads((dataset_dir / "manifest.json").read_text())
    spec = dsp.WaveletSpec(scales=tuple(manifest["wavelet"]["scales"]),
                           target_bands=tuple(manifest["wavelet"]["bands_hz"]),
                           support_halfwidth=manifest["wavelet"]["support_halfwidth"])
    if records is None:
        records = build_beats(data_dir, manifest["split"]["train"], spec, manifest["channel"])
    bank = load_noise_bank(nstdb_dir, seed=cfg.seed)
    result = augment_records(records, bank, cfg, spec)
    result.beats.save(dataset_dir / "augmented", **manifest["wavelet"], augmented=True)
    manifest["augmentation"] = {**result.manifest(), "config": vars(cfg).copy()}
    (dataset_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return result


def load_training_data(dataset_dir):
    """``(train_with_augmented, eval)`` beat sets from a dataset directory."""
    d = Path(dataset_dir)
    train = BeatSet.load(d / "train")
    if (d / "augmented.json").exists():
        train = BeatSet.concat([train, BeatSet.load(d / "augmented")])
    return train, BeatSet.load(d / "eval")
