"""Confusion matrices, per-class Acc/Sen/Spe/Ppr/F1, and ROC curves."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .beats import CLASS_NAMES


class LabelError(ValueError):
    pass


class ConfusionFormatError(ValueError):
    pass


class UndefinedCurveError(ValueError):
    pass


def _as_indices(labels):
    out = []
    for lab in labels:
        if isinstance(lab, str):
            if lab not in CLASS_NAMES:
                raise LabelError(f"label {lab!r} is not one of N, S, V")
            out.append(CLASS_NAMES.index(lab))
        else:
            v = int(lab)
            if v not in (0, 1, 2):
                raise LabelError(f"label index {lab!r} outside 0..2")
            out.append(v)
    return np.asarray(out, dtype=np.int64)


@dataclass
class ConfusionMatrix3:
    """``counts[truth, pred]`` over (N, S, V)."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros((3, 3), dtype=np.int64))

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (3, 3) or np.any(self.counts < 0):
            raise ConfusionFormatError("confusion matrix must be 3x3 non-negative counts")

    def __add__(self, other):
        return ConfusionMatrix3(self.counts + other.counts)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix3) and np.array_equal(self.counts, other.counts)

    @property
    def total(self):
        return int(self.counts.sum())

    def tp(self, c):
        return int(self.counts[c, c])

    def fn(self, c):
        return int(self.counts[c].sum() - self.counts[c, c])

    def fp(self, c):
        return int(self.counts[:, c].sum() - self.counts[c, c])

    def tn(self, c):
        return self.total - self.tp(c) - self.fn(c) - self.fp(c)


def confusion(truth, pred) -> ConfusionMatrix3:
    t, p = _as_indices(truth), _as_indices(pred)
    if t.shape != p.shape:
        raise LabelError(f"truth has {t.size} labels, predictions {p.size}")
    counts = np.zeros((3, 3), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix3(counts)


def _pct(num, den):
    return None if den == 0 else 100.0 * num / den


@dataclass
class ClassMetrics:
    acc: float | None   # one-vs-rest accuracy of this class
    sen: float | None
    spe: float | None
    ppr: float | None
    f1: float | None


@dataclass
class MetricsReport:
    acc: float | None
    classes: dict

    @property
    def macro_f1(self):
        """Mean F1 over classes as a fraction; undefined classes count as 0."""
        return float(np.mean([(m.f1 or 0.0) for m in self.classes.values()])) / 100.0

    def to_dict(self, digits=None):
        def r(v):
            return v if v is None or digits is None else round(v, digits)
        return {
            "acc": r(self.acc),
            "macro_f1": self.macro_f1 if digits is None else round(self.macro_f1, digits + 2),
            "classes": {c: {k: r(getattr(m, k)) for k in ("sen", "spe", "ppr", "f1", "acc")}
                        for c, m in self.classes.items()},
        }

    def table(self):
        def fmt(v):
            return "   n/a" if v is None else f"{v:6.2f}"
        lines = [f"Acc {fmt(self.acc)}", "class    Sen    Spe    Ppr     F1   Acc(1vR)"]
        for c, m in self.classes.items():
            lines.append(f"{c:<5} {fmt(m.sen)} {fmt(m.spe)} {fmt(m.ppr)} {fmt(m.f1)} {fmt(m.acc)}")
        return "\n".join(lines)


def metrics(cm: ConfusionMatrix3) -> MetricsReport:
    """Percent metrics per class; a zero denominator gives ``None``, except
    F1 which is 0 when both Sen and Ppr are 0."""
    if cm.total == 0:
        raise ValueError("metrics of an empty confusion matrix are undefined")
    out = {}
    for c, name in enumerate(CLASS_NAMES):
        tp, fn, fp, tn = cm.tp(c), cm.fn(c), cm.fp(c), cm.tn(c)
        sen = _pct(tp, tp + fn)
        ppr = _pct(tp, tp + fp)
        if sen is None or ppr is None:
            f1 = None
        elif sen + ppr == 0:
            f1 = 0.0
        else:
            f1 = 2 * sen * ppr / (sen + ppr)
        out[name] = ClassMetrics(acc=_pct(tp + tn, cm.total), sen=sen,
                                 spe=_pct(tn, tn + fp), ppr=ppr, f1=f1)
    return MetricsReport(acc=_pct(int(np.trace(cm.counts)), cm.total), classes=out)


# ---------------------------------------------------------------------------
# ROC

@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc(scores, truth) -> RocCurve:
    """Sweep unique thresholds from high to low; tied scores share a point."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(truth).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedCurveError("ROC needs at least one positive and one negative example")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(y)[last_of_group]
    fp = np.cumsum(~y)[last_of_group]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thresholds = np.r_[np.inf, s[last_of_group]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds, auc=auc)


def one_vs_rest_roc(scores, truth, cls):
    """ROC of class ``cls`` (name or index) against the other two."""
    c = CLASS_NAMES.index(cls) if isinstance(cls, str) else int(cls)
    return roc(np.asarray(scores)[:, c], _as_indices(truth) == c)


# ---------------------------------------------------------------------------
# I/O

def confusion_to_csv(cm: ConfusionMatrix3) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["truth\\pred", *CLASS_NAMES])
    for c, name in enumerate(CLASS_NAMES):
        w.writerow([name, *map(int, cm.counts[c])])
    return buf.getvalue()


def confusion_from_csv(text: str) -> ConfusionMatrix3:
    """Parse a 3x3 matrix with an N,S,V header row and label column."""
    rows = [r for r in csv.reader(io.StringIO(text)) if any(cell.strip() for cell in r)]
    if len(rows) != 4:
        raise ConfusionFormatError(f"expected a header and 3 rows, found {len(rows)} rows")
    header = [h.strip().upper() for h in rows[0][1:]]
    if header != list(CLASS_NAMES):
        raise ConfusionFormatError(f"header must list N,S,V; got {rows[0]}")
    counts = np.zeros((3, 3), dtype=np.int64)
    seen = set()
    for row in rows[1:]:
        if len(row) != 4:
            raise ConfusionFormatError(f"row {row} must have a label and 3 counts")
        label = row[0].strip().upper()
        if label not in CLASS_NAMES or label in seen:
            raise ConfusionFormatError(f"bad or repeated row label {row[0]!r}")
        seen.add(label)
        try:
            values = [int(v) for v in row[1:]]
        except ValueError:
            raise ConfusionFormatError(f"non-integer count in row {row}") from None
        if min(values) < 0:
            raise ConfusionFormatError(f"negative count in row {row}")
        counts[CLASS_NAMES.index(label)] = values
    return ConfusionMatrix3(counts)


def write_roc_csv(path, curve: RocCurve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "fpr", "tpr"])
        for th, f, t in zip(curve.thresholds, curve.fpr, curve.tpr):
            w.writerow([repr(float(th)), repr(float(f)), repr(float(t))])


def write_report(out_dir, cm: ConfusionMatrix3, extra=None):
    """confusion.csv, metrics.json (full precision plus 2-decimal copy) and metrics.txt."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rep = metrics(cm)
    (out_dir / "confusion.csv").write_text(confusion_to_csv(cm))
    payload = {"raw": rep.to_dict(), "rounded": rep.to_dict(digits=2),
               "confusion": cm.counts.tolist(), **(extra or {})}
    (out_dir / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    (out_dir / "metrics.txt").write_text(rep.table() + "\n")
    return rep
