"""Confusion matrices, per-label metrics and one-vs-rest ROC curves.

Binary counts use the P/Q/R/S naming: P true positives, Q true negatives,
R false positives, S false negatives. A metric whose denominator is zero is
reported as 0.0 and its name is listed in ``undefined``; tables render it
as ``0.00*``.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from .schema import LABELS


@dataclass(frozen=True)
class BinaryCounts:
    P: int
    Q: int
    R: int
    S: int

    @property
    def total(self):
        return self.P + self.Q + self.R + self.S


@dataclass(frozen=True)
class MetricSuite:
    accuracy: float
    recall: float
    precision: float
    f1: float
    undefined: frozenset = frozenset()

    def is_defined(self, name):
        return name not in self.undefined


class ConfusionMatrix:
    """``counts[i, j]`` = samples of actual class i predicted as class j."""

    def __init__(self, counts, labels=LABELS):
        self.counts = np.asarray(counts, dtype=np.int64)
        self.labels = tuple(labels)
        if self.counts.shape != (len(self.labels), len(self.labels)):
            raise ValueError("confusion matrix shape does not match the label vocabulary")
        if (self.counts < 0).any():
            raise ValueError("confusion matrix counts must be non-negative")

    @property
    def total(self):
        return int(self.counts.sum())

    def index(self, label):
        if isinstance(label, (int, np.integer)):
            if not 0 <= label < len(self.labels):
                raise ValueError(f"label index {label} out of range")
            return int(label)
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValueError(f"unknown label {label!r}") from None


def _as_indices(seq, labels):
    lookup = {name: i for i, name in enumerate(labels)}
    out = np.empty(len(seq), dtype=np.int64)
    for n, item in enumerate(seq):
        if isinstance(item, (int, np.integer)):
            if not 0 <= item < len(labels):
                raise ValueError(f"label index {item} out of range at position {n}")
            out[n] = item
        elif item in lookup:
            out[n] = lookup[item]
        else:
            raise ValueError(f"unknown label {item!r} at position {n}")
    return out


def confusion_matrix(actual, predicted, labels=LABELS):
    """Count (actual, predicted) pairs; entries are names or indices into ``labels``."""
    if len(actual) != len(predicted):
        raise ValueError(f"length mismatch: {len(actual)} actual vs {len(predicted)} predicted")
    if len(actual) == 0:
        raise ValueError("confusion matrix needs at least one sample")
    a = _as_indices(actual, labels)
    p = _as_indices(predicted, labels)
    K = len(labels)
    counts = np.bincount(a * K + p, minlength=K * K).reshape(K, K)
    return ConfusionMatrix(counts, labels)


def one_vs_rest(cm, label):
    i = cm.index(label)
    P = int(cm.counts[i, i])
    S = int(cm.counts[i].sum()) - P
    R = int(cm.counts[:, i].sum()) - P
    return BinaryCounts(P, cm.total - P - S - R, R, S)


def _ratio(num, den, name, undefined):
    if den == 0:
        undefined.add(name)
        return 0.0
    return num / den


def metric_suite(bc):
    """Accuracy, recall, precision and F1 (harmonic mean) of binary counts."""
    if bc.total <= 0:
        raise ValueError("metric_suite needs a positive sample total")
    undefined = set()
    accuracy = (bc.P + bc.Q) / bc.total
    recall = _ratio(bc.P, bc.P + bc.S, "recall", undefined)
    precision = _ratio(bc.P, bc.P + bc.R, "precision", undefined)
    if undefined:
        undefined.add("f1")
        f1 = 0.0
    else:
        f1 = _ratio(2 * precision * recall, precision + recall, "f1", undefined)
    return MetricSuite(accuracy, recall, precision, f1, frozenset(undefined))


@dataclass(frozen=True)
class ReportRow:
    label: str
    precision: float
    recall: float
    f1: float
    support: int
    undefined: frozenset = frozenset()


@dataclass(frozen=True)
class ClassificationReport:
    rows: tuple
    accuracy: float
    macro: dict = field(default_factory=dict)
    total: int = 0

    def row(self, label):
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)


def classification_report(cm):
    if cm.total <= 0:
        raise ValueError("classification report needs a positive sample total")
    rows = []
    for i, label in enumerate(cm.labels):
        suite = metric_suite(one_vs_rest(cm, i))
        support = int(cm.counts[i].sum())
        rows.append(
            ReportRow(label, suite.precision, suite.recall, suite.f1, support, suite.undefined)
        )
    macro = {}
    for name in ("precision", "recall", "f1"):
        vals = [getattr(r, name) for r in rows if name not in r.undefined]
        macro[name] = float(np.mean(vals)) if vals else 0.0
    accuracy = float(np.trace(cm.counts)) / cm.total
    return ClassificationReport(tuple(rows), accuracy, macro, cm.total)


def _cell(value, undefined):
    return f"{value:.2f}*" if undefined else f"{value:.2f} "


def format_report(report, title="Classification report"):
    """Fixed-width text table: one line per label then accuracy and macro average."""
    width = max(12, max(len(r.label) for r in report.rows) + 2)
    lines = [title, "", f"{'Label':<{width}}{'Precision':>11}{'Recall':>11}{'F1-score':>11}{'Support':>10}"]
    for r in report.rows:
        lines.append(
            f"{r.label:<{width}}"
            f"{_cell(r.precision, 'precision' in r.undefined):>11}"
            f"{_cell(r.recall, 'recall' in r.undefined):>11}"
            f"{_cell(r.f1, 'f1' in r.undefined):>11}"
            f"{r.support:>10}"
        )
    lines.append("")
    lines.append(f"{'accuracy':<{width}}{'':>11}{'':>11}{report.accuracy:>10.4f} {report.total:>10}")
    m = report.macro
    lines.append(
        f"{'macro avg':<{width}}{m['precision']:>10.4f} {m['recall']:>10.4f} {m['f1']:>10.4f} {report.total:>10}"
    )
    lines.append("")
    lines.append("* undefined (zero denominator), shown as 0")
    return "\n".join(lines) + "\n"


def report_to_dict(report, auc=None):
    out = {
        "accuracy": report.accuracy,
        "total": report.total,
        "macro": dict(report.macro),
        "labels": {
            r.label: {
                "precision": r.precision,
                "recall": r.recall,
                "f1": r.f1,
                "support": r.support,
                "undefined": sorted(r.undefined),
            }
            for r in report.rows
        },
    }
    if auc is not None:
        out["auc"] = auc
    return out


def report_json(report, auc=None):
    return json.dumps(report_to_dict(report, auc), indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    thresholds: np.ndarray = None


def roc_auc(scores, actual, positive_label):
    """One-vs-rest ROC of ``scores`` for ``positive_label`` with trapezoidal AUC.

    Tied scores form a single step, so tied positive/negative pairs count one half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray([a == positive_label for a in actual], dtype=bool)
    if len(scores) != len(positive):
        raise ValueError("scores and labels differ in length")
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one positive and one negative sample")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    pos = positive[order]
    tp = np.cumsum(pos)
    fp = np.cumsum(~pos)
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tpr = np.r_[0.0, tp[ends] / n_pos]
    fpr = np.r_[0.0, fp[ends] / n_neg]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1])) / 2.0)
    return RocCurve(fpr, tpr, auc, np.r_[np.inf, s[ends]])


def roc_curves(score_matrix, actual, class_indices):
    """ROC per class column; classes lacking positives or negatives are skipped."""
    actual = np.asarray(actual)
    curves = {}
    for col, c in enumerate(class_indices):
        n_pos = int((actual == c).sum())
        if 0 < n_pos < len(actual):
            curves[c] = roc_auc(score_matrix[:, col], actual, c)
    return curves


def macro_auc(curves):
    return float(np.mean([c.auc for c in curves.values()])) if curves else float("nan")


def roc_csv(curve):
    lines = ["fpr,tpr"]
    lines += [f"{f!r},{t!r}" for f, t in zip(curve.fpr.tolist(), curve.tpr.tolist())]
    return "\n".join(lines) + "\n"


_PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
    "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939", "#8c6d31",
)


def roc_svg(curves, size=400, title="ROC"):
    """Minimal SVG with one polyline per named curve (dict name -> RocCurve)."""
    pad = 40
    span = size - 2 * pad
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size + 160}" height="{size}">',
        f'<text x="{pad}" y="20" font-size="14">{title}</text>',
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad + span}" x2="{pad + span}" y2="{pad}" stroke="#bbb" stroke-dasharray="4"/>',
    ]
    for k, (name, curve) in enumerate(curves.items()):
        color = _PALETTE[k % len(_PALETTE)]
        pts = " ".join(
            f"{pad + f * span:.2f},{pad + (1 - t) * span:.2f}" for f, t in zip(curve.fpr, curve.tpr)
        )
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(
            f'<text x="{size - pad + 50}" y="{pad + 14 * k}" font-size="11" fill="{color}">'
            f"{name} ({curve.auc:.3f})</text>"
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
