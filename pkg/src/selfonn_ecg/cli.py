"""Command line entry point: ``selfonn-ecg <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import dsp, metrics, pipeline, selfonn, synth, train, wfdbio
from .beats import CLASS_NAMES, BeatSet, FS, POST_SAMPLES, PRE_SAMPLES, temporal_matrix

logger = logging.getLogger("selfonn_ecg")


class UsageError(Exception):
    pass


USAGE_ERRORS = (UsageError, train.ConfigError, metrics.ConfusionFormatError, pipeline.NoRecordsError)


def _echo(msg=""):
    print(msg, flush=True)


def _prepare_dir(path, force):
    path = Path(path)
    if path.exists() and any(path.iterdir()):
        if not force:
            raise UsageError(f"output directory {path} is not empty; pass --force to overwrite")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _prepare_file(path, force):
    path = Path(path)
    if path.exists() and not force:
        raise UsageError(f"{path} exists; pass --force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _load_config(args, need_data=False):
    cfg = config_mod.load(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.apply_seed(args.seed)
    if getattr(args, "data_dir", None):
        cfg.data_dir = args.data_dir
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    if getattr(args, "split", None):
        cfg.split = args.split
    if need_data:
        if not cfg.data_dir:
            raise UsageError(f"no data directory: pass --data-dir or set {config_mod.DATA_DIR_ENV}")
        if not Path(cfg.data_dir).is_dir():
            raise UsageError(f"data directory does not exist: {cfg.data_dir}")
    print("config: " + json.dumps(cfg.to_dict(), sort_keys=True), file=sys.stderr)
    return cfg


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _read_csv_dicts(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# commands

def cmd_ingest(args):
    cfg = _load_config(args, need_data=True)
    manifest = pipeline.ingest(cfg.data_dir)
    if args.out:
        out = _prepare_file(Path(args.out), args.force)
        out.write_text(json.dumps(manifest, indent=2))
    t = manifest["class_totals"]
    _echo(f"records: {manifest['n_records']}  usable: {manifest['n_usable']}")
    _echo(f"beats N={t['N']} S={t['S']} V={t['V']} excluded={t['X']}")
    return 0


def cmd_synth(args):
    cfg = _load_config(args)
    out = _prepare_dir(args.out, args.force)
    split = synth.generate_synthetic(out, cfg.synth)
    _echo(f"wrote {len(split['train']) + len(split['eval'])} synthetic records to {out}")
    return 0


def cmd_preprocess(args):
    cfg = _load_config(args, need_data=True)
    out = _prepare_dir(args.out, args.force)
    manifest = pipeline.preprocess(cfg.data_dir, out, split=_split_for(cfg), channel=cfg.channel)
    for part, counts in manifest["class_counts"].items():
        _echo(f"{part}: " + " ".join(f"{c}={v}" for c, v in counts.items()))
    return 0


def cmd_augment(args):
    cfg = _load_config(args, need_data=True)
    result = pipeline.augment(cfg.data_dir, args.dataset, cfg.augment,
                              nstdb_dir=args.nstdb_dir or cfg.nstdb_dir)
    _echo(f"augmented copies: {result.copies_made} ({result.noise_source} noise); "
          f"class counts now {result.counts_after}")
    return 0


def _split_for(cfg):
    if cfg.data_dir and (Path(cfg.data_dir) / "split.json").exists() and cfg.split == "ds1-ds2":
        return "auto"
    return cfg.split


def cmd_train(args):
    cfg = _load_config(args)
    if args.dry_run:
        model = selfonn.build_model(cfg.model, seed=cfg.train.seed)
        _echo(f"trainable parameters: {model.count_params()}")
        return 0
    if not cfg.output_dir:
        raise UsageError("pass --out for the run directory")
    if args.synthetic and args.dataset:
        raise UsageError("--synthetic and --dataset are mutually exclusive")
    run = _prepare_dir(cfg.output_dir, args.force)
    records = None
    if args.dataset:
        dataset_dir = Path(args.dataset)
    else:
        if args.synthetic:
            cfg.data_dir = str(run / "data")
            synth.generate_synthetic(cfg.data_dir, cfg.synth)
            cfg.split = "auto"
        elif not cfg.data_dir or not Path(cfg.data_dir).is_dir():
            raise UsageError(f"no data directory: pass --data-dir, --dataset, --synthetic "
                             f"or set {config_mod.DATA_DIR_ENV}")
        dataset_dir = run / "dataset"
        _, records, _ = pipeline.preprocess(cfg.data_dir, dataset_dir, split=_split_for(cfg),
                                            channel=cfg.channel, keep_records=True)
        if cfg.augment.enabled:
            pipeline.augment(cfg.data_dir, dataset_dir, cfg.augment, nstdb_dir=cfg.nstdb_dir,
                             records=records)
    train_set, eval_set = pipeline.load_training_data(dataset_dir)
    if set(train_set.patients) & set(eval_set.patients):
        raise train.LeakageError("training and evaluation splits share patients")
    (run / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))

    k = min(5, len(train_set.patients))
    fold_plan = {"k": k, "seed": cfg.train.seed, "cross_validated": cfg.cv_folds > 0,
                 "folds": train.make_folds(train_set.patients, k=k, seed=cfg.train.seed)}
    if cfg.cv_folds > 0:
        folds, results = train.cross_validate(train_set, cfg.train, cfg.model, k=cfg.cv_folds)
        fold_plan.update(k=cfg.cv_folds, folds=folds)
        (run / "cv.json").write_text(json.dumps(results, indent=2))
        _echo("cv val macro-F1: " + ", ".join(f"{r['final_val_macro_f1']:.4f}" for r in results))
    (run / "folds.json").write_text(json.dumps(fold_plan, indent=2))

    model, history, best = train.train_model(train_set, None, cfg.train, cfg.model)
    _write_csv(run / "history.csv", ["epoch", "lr", "train_loss", "val_loss", "val_macro_f1"],
               [[r["epoch"], repr(r["lr"]), repr(r["train_loss"]), r.get("val_loss", ""),
                 r.get("val_macro_f1", "")] for r in history])
    selfonn.save_checkpoint(model, run / "model", epoch=cfg.train.epochs - 1,
                            metrics={"final_train_loss": history[-1]["train_loss"]},
                            extra={"train_records": train_set.patients})
    if best is not None:
        selfonn.save_checkpoint(best, run / "best")
    _echo(f"trained {cfg.train.epochs} epochs on {len(train_set)} beats; "
          f"final loss/beat {history[-1]['train_loss']:.5f}")
    _echo(f"checkpoint: {run / 'model.json'}")
    _echo(f"evaluation beats: {dataset_dir / 'eval'}")
    return 0


def _dataset_prefix(path):
    p = Path(path)
    return p / "eval" if p.is_dir() else p.with_suffix("")


def cmd_evaluate(args):
    if bool(args.confusion) == bool(args.checkpoint):
        raise UsageError("pass exactly one of --confusion or --checkpoint")
    extra = {}
    if args.confusion:
        try:
            text = Path(args.confusion).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read {args.confusion}: {exc}") from None
        cm = metrics.confusion_from_csv(text)
        out = _prepare_dir(args.out, args.force) if args.out else None
    else:
        if not args.dataset:
            raise UsageError("--checkpoint needs --dataset")
        model = selfonn.load_checkpoint(args.checkpoint)
        beats = BeatSet.load(_dataset_prefix(args.dataset))
        out = _prepare_dir(args.out or Path(args.checkpoint).parent / "eval", args.force)
        classes, scores = selfonn.predict(model, beats.scalograms, beats.temporal)
        cm = metrics.confusion(beats.labels, classes)
        _write_csv(out / "predictions.csv",
                   ["record", "r_index", "truth", "pred", "score_N", "score_S", "score_V"],
                   [[beats.record_ids[i], int(beats.r_index[i]), CLASS_NAMES[beats.labels[i]],
                     CLASS_NAMES[classes[i]], *(repr(float(v)) for v in scores[i])]
                    for i in range(len(beats))])
        aucs = {}
        for name in ("S", "V"):
            try:
                curve = metrics.one_vs_rest_roc(scores, beats.labels, name)
            except metrics.UndefinedCurveError:
                continue
            metrics.write_roc_csv(out / f"roc_{name}.csv", curve)
            aucs[name] = curve.auc
        extra = {"auc": aucs, "n_beats": len(beats)}
    if out is not None:
        rep = metrics.write_report(out, cm, extra)
    else:
        rep = metrics.metrics(cm)
    _echo(rep.table())
    _echo(f"macro-F1 {rep.macro_f1:.4f}")
    return 0


def cmd_report(args):
    run = Path(args.run)
    if not run.is_dir():
        raise UsageError(f"run directory {run} does not exist")
    from . import plotting

    def find(name):
        for d in (run, run / "eval"):
            if (d / name).exists():
                return d / name
        return None

    out = Path(args.out) if args.out else run / "figures"
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    made = []
    conf = find("confusion.csv")
    if conf:
        cm = metrics.confusion_from_csv(conf.read_text())
        rep = metrics.metrics(cm)
        plotting.plot_confusion(cm, out / "confusion.png")
        made.append("confusion.png")
        rows.append(["all", "acc", rep.acc])
        for c, m in rep.classes.items():
            for k in ("sen", "spe", "ppr", "f1"):
                rows.append([c, k, getattr(m, k)])
        _echo(rep.table())
    preds = find("predictions.csv")
    if preds:
        p = _read_csv_dicts(preds)
        truth = [r["truth"] for r in p]
        scores = np.array([[float(r[f"score_{c}"]) for c in CLASS_NAMES] for r in p])
        curves = {}
        for name in ("S", "V"):
            try:
                curves[name] = metrics.one_vs_rest_roc(scores, truth, name)
                rows.append([name, "auc", curves[name].auc])
            except metrics.UndefinedCurveError:
                pass
        if curves:
            plotting.plot_roc(curves, out / "roc.png")
            made.append("roc.png")
    hist = find("history.csv")
    if hist:
        h = [{k: (float(v) if v not in ("", None) else None) for k, v in r.items()}
             for r in _read_csv_dicts(hist)]
        plotting.plot_history(h, out / "history.png")
        made.append("history.png")
    if not made:
        raise UsageError(f"nothing to report in {run}: no confusion.csv, predictions.csv or history.csv")
    _write_csv(out / "summary.csv", ["class", "metric", "value"],
               [[c, k, "" if v is None else f"{v:.6f}"] for c, k, v in rows])
    _echo("figures: " + ", ".join(str(out / m) for m in made))
    return 0


def _read_peaks(path):
    rows = list(csv.reader(open(path, newline="")))
    if not rows:
        raise UsageError(f"{path} holds no peaks")
    start = 0 if rows[0][0].strip().lstrip("-").isdigit() else 1
    try:
        return np.array(sorted(int(r[0]) for r in rows[start:] if r), dtype=np.int64)
    except ValueError:
        raise UsageError(f"{path}: first column must hold integer sample indices") from None


def cmd_predict(args):
    model = selfonn.load_checkpoint(args.checkpoint)
    rec_path = Path(args.record)
    has_ann = rec_path.with_name(rec_path.name + ".atr").exists()
    if not args.peaks and not has_ann:
        raise UsageError("no R-peak source: the record has no .atr annotations; "
                         "pass --peaks with a CSV of R-peak sample indices")
    record = pipeline.read_named_record(rec_path.parent, rec_path.name)
    if record.header.fs != FS:
        raise UsageError(f"record sampled at {record.header.fs} Hz; only {FS:g} Hz is supported")
    symbols = None
    if args.peaks:
        peaks = _read_peaks(args.peaks)
    else:
        evs = [ev for ev in record.annotations if ev.is_beat]
        peaks = np.array([ev.sample_index for ev in evs], dtype=np.int64)
        symbols = [ev.symbol for ev in evs]
    signal = dsp.normalize_record(record.physical(args.channel), fs=FS, record_id=record.name)
    temporal = temporal_matrix(peaks, FS)
    n = signal.values.size
    usable = np.all(np.isfinite(temporal), axis=1) & (peaks - PRE_SAMPLES >= 0) & (peaks + POST_SAMPLES < n)
    pos = np.flatnonzero(usable)
    segs = signal.values[(peaks[pos] - PRE_SAMPLES)[:, None] + np.arange(PRE_SAMPLES + 1 + POST_SAMPLES)]
    spec = dsp.WaveletSpec.for_sampling_rate(FS)
    scal = dsp.batch_scalograms(segs, spec, FS).astype(np.float32)
    classes, scores = selfonn.predict(model, scal, temporal[pos])
    out = _prepare_file(args.out, args.force)
    header = ["sample_index", "pred", "score_N", "score_S", "score_V"]
    if symbols is not None:
        header.append("annotation")
    rows = []
    for k, p in enumerate(pos):
        row = [int(peaks[p]), CLASS_NAMES[classes[k]], *(repr(float(v)) for v in scores[k])]
        if symbols is not None:
            row.append(symbols[p])
        rows.append(row)
    _write_csv(out, header, rows)
    _echo(f"{len(rows)} beats classified ({len(peaks) - len(rows)} skipped at record boundaries)")
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="selfonn-ecg",
                                     description="Inter-patient ECG beat classification with Self-ONNs")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, out=True, seed=True):
        p.add_argument("--config", help="JSON run configuration")
        if data:
            p.add_argument("--data-dir", default=os.environ.get(config_mod.DATA_DIR_ENV),
                           help=f"WFDB record directory (default: ${config_mod.DATA_DIR_ENV})")
        if out:
            p.add_argument("--out", help="output path")
        if seed:
            p.add_argument("--seed", type=int)
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p = sub.add_parser("ingest", help="parse records and summarize beat counts")
    common(p, seed=False)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="write synthetic WFDB records")
    common(p, data=False)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="build train/eval beat sets")
    common(p)
    p.add_argument("--split", help="ds1-ds2, ds2-ds1 or a JSON file with train/eval lists")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("augment", help="add noisy arrhythmic copies to a preprocessed training split")
    common(p, out=False)
    p.add_argument("--dataset", required=True, help="directory written by preprocess")
    p.add_argument("--nstdb-dir", help="directory holding NSTDB records bw and ma")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="preprocess, augment and train a model")
    common(p)
    p.add_argument("--split")
    p.add_argument("--dataset", help="use an existing preprocessed dataset directory")
    p.add_argument("--synthetic", action="store_true", help="train on generated synthetic records")
    p.add_argument("--dry-run", action="store_true", help="build the model, print its size and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics from a checkpoint or a confusion CSV")
    p.add_argument("--confusion", help="3x3 confusion CSV (no inference)")
    p.add_argument("--checkpoint")
    p.add_argument("--dataset", help="beat set prefix or dataset directory (uses its eval split)")
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="classify the beats of one record")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--record", required=True, help="record path without extension")
    p.add_argument("--peaks", help="CSV of R-peak sample indices (first column)")
    p.add_argument("--channel", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="render figures and a summary CSV for a run")
    p.add_argument("--run", required=True, help="train run or evaluate output directory")
    p.add_argument("--out", help="figure directory (default: <run>/figures)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (pipeline.DataError, wfdbio.WFDBError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
