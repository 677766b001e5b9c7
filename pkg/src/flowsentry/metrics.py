"""Confusion matrices and one-vs-rest accuracy / precision / recall / F1.

For a class ``c`` over a matrix with rows = true, columns = predicted:
TP is the diagonal entry, FP the rest of column ``c``, FN the rest of row
``c`` and TN everything else. A zero denominator yields 0 and raises an
:class:`~flowsentry.exceptions.UndefinedMetricWarning`.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import UndefinedMetricWarning


@dataclass(frozen=True)
class ConfusionMatrix:
    labels: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (len(self.labels), len(self.labels)):
            raise ValueError("counts must be C x C for C labels")
        if (counts < 0).any():
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_predictions(cls, y_true, y_pred, labels=None) -> "ConfusionMatrix":
        y_true = [str(v) for v in y_true]
        y_pred = [str(v) for v in y_pred]
        if len(y_true) != len(y_pred):
            raise ValueError("y_true and y_pred differ in length")
        if labels is None:
            labels = sorted(set(y_true) | set(y_pred))
        labels = list(labels)
        extra = (set(y_true) | set(y_pred)) - set(labels)
        if extra:
            labels += sorted(extra)
        index = {c: i for i, c in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        np.add.at(counts, ([index[t] for t in y_true], [index[p] for p in y_pred]), 1)
        return cls(tuple(labels), counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def index(self, cls_label) -> int:
        try:
            return self.labels.index(str(cls_label))
        except ValueError:
            raise KeyError(f"unknown class {cls_label!r}") from None

    def outcomes(self, cls_label) -> tuple[int, int, int, int]:
        """(TP, TN, FP, FN) for one class against the rest."""
        i = self.index(cls_label)
        tp = int(self.counts[i, i])
        fp = int(self.counts[:, i].sum()) - tp
        fn = int(self.counts[i, :].sum()) - tp
        return tp, self.total - tp - fp - fn, fp, fn

    def transpose(self) -> "ConfusionMatrix":
        return ConfusionMatrix(self.labels, self.counts.T.copy())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred", *self.labels])
        for label, row in zip(self.labels, self.counts):
            w.writerow([label, *map(int, row)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"labels": list(self.labels), "counts": self.counts.tolist()}


def _ratio(num: int, den: int, name: str, cls_label, flags: list | None) -> float:
    if den == 0:
        warnings.warn(f"{name} is undefined for class {cls_label!r}; reported as 0", UndefinedMetricWarning,
                      stacklevel=3)
        if flags is not None:
            flags.append(f"{name}[{cls_label}]")
        return 0.0
    return num / den


def _check(cm: ConfusionMatrix):
    if cm.total == 0:
        raise ValueError("confusion matrix is empty")


def accuracy(cm: ConfusionMatrix, cls_label=None) -> float:
    """Overall accuracy (trace / total), or one-vs-rest (TP+TN)/N for a class."""
    _check(cm)
    if cls_label is None:
        return int(np.trace(cm.counts)) / cm.total
    tp, tn, _, _ = cm.outcomes(cls_label)
    return (tp + tn) / cm.total


def precision(cm: ConfusionMatrix, cls_label, flags: list | None = None) -> float:
    _check(cm)
    tp, _, fp, _ = cm.outcomes(cls_label)
    return _ratio(tp, tp + fp, "precision", cls_label, flags)


def recall(cm: ConfusionMatrix, cls_label, flags: list | None = None) -> float:
    _check(cm)
    tp, _, _, fn = cm.outcomes(cls_label)
    return _ratio(tp, tp + fn, "recall", cls_label, flags)


def f1(cm: ConfusionMatrix, cls_label, flags: list | None = None) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UndefinedMetricWarning)
        p = precision(cm, cls_label)
        r = recall(cm, cls_label)
    return _ratio(2 * p * r, p + r, "f1", cls_label, flags)


@dataclass
class MetricReport:
    stage: str
    confusion: ConfusionMatrix
    accuracy: float
    macro_accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: dict[str, dict[str, float]]
    undefined: list[str] = field(default_factory=list)
    micro_precision: float = 0.0
    micro_recall: float = 0.0
    micro_f1: float = 0.0

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix, stage: str = "", classes=None) -> "MetricReport":
        """Macro values average over ``classes`` (default: every label with
        at least one true or predicted instance)."""
        _check(cm)
        if classes is None:
            present = (cm.counts.sum(axis=0) + cm.counts.sum(axis=1)) > 0
            classes = [c for c, p in zip(cm.labels, present) if p]
        flags: list[str] = []
        per = {}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UndefinedMetricWarning)
            for c in classes:
                tp, tn, fp, fn = cm.outcomes(c)
                per[c] = {
                    "accuracy": accuracy(cm, c),
                    "precision": precision(cm, c, flags),
                    "recall": recall(cm, c, flags),
                    "f1": f1(cm, c, flags),
                    "support": tp + fn,
                }
        mean = lambda key: float(np.mean([per[c][key] for c in classes]))  # noqa: E731
        tp = fp = fn = 0
        for c in classes:
            t, _, p, n = cm.outcomes(c)
            tp, fp, fn = tp + t, fp + p, fn + n
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UndefinedMetricWarning)
            mp = _ratio(tp, tp + fp, "precision", "micro", flags)
            mr = _ratio(tp, tp + fn, "recall", "micro", flags)
            mf = _ratio(2 * mp * mr, mp + mr, "f1", "micro", flags)
        return cls(stage, cm, accuracy(cm), mean("accuracy"), mean("precision"), mean("recall"), mean("f1"),
                   per, flags, mp, mr, mf)

    @classmethod
    def from_predictions(cls, y_true, y_pred, labels=None, stage: str = "") -> "MetricReport":
        return cls.from_confusion(ConfusionMatrix.from_predictions(y_true, y_pred, labels), stage)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "n": self.confusion.total,
            "accuracy": self.accuracy,
            "macro": {
                "accuracy": self.macro_accuracy,
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "f1": self.macro_f1,
            },
            "micro": {"precision": self.micro_precision, "recall": self.micro_recall, "f1": self.micro_f1},
            "per_class": self.per_class,
            "confusion": self.confusion.to_dict(),
            "undefined": list(self.undefined),
        }

    @classmethod
    def from_dict(cls, d) -> "MetricReport":
        cm = ConfusionMatrix(tuple(d["confusion"]["labels"]), np.asarray(d["confusion"]["counts"]))
        m, mi = d["macro"], d["micro"]
        return cls(d["stage"], cm, d["accuracy"], m["accuracy"], m["precision"], m["recall"], m["f1"],
                   d["per_class"], list(d["undefined"]), mi["precision"], mi["recall"], mi["f1"])
