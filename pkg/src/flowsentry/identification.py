"""Attack-family identification with a reserved ``0_other`` class, unknown
pooling, exemplar replay and class-incremental head growth."""

from __future__ import annotations

import copy
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import TransformerFlowClassifier, build_model, softmax
from .encoder.train import train
from .exceptions import DataError
from .metrics import MetricReport

logger = logging.getLogger(__name__)

OTHER = "0_other"
INITIAL = "initial"


class ForgettingWarning(UserWarning):
    """Old-class recall dropped by more than the configured budget."""


def cluster_labels(chunk_id: int, k: int) -> list[str]:
    return [f"X{chunk_id}_{j}" for j in range(1, k + 1)]


class LabelRegistry:
    """Ordered, append-only label list with ``0_other`` pinned at index 0."""

    def __init__(self, labels=(), provenance=None):
        self._labels: list[str] = [OTHER]
        self._prov: dict[str, str] = {OTHER: INITIAL}
        provenance = dict(provenance or {})
        rest = [str(lbl) for lbl in labels if str(lbl) != OTHER]
        if labels and str(list(labels)[0]) != OTHER and OTHER in map(str, labels):
            raise ValueError(f"{OTHER!r} must be at index 0")
        for lbl in rest:
            self.append([lbl], provenance.get(lbl, INITIAL))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(self._labels)

    @property
    def provenance(self) -> dict[str, str]:
        return dict(self._prov)

    def __len__(self):
        return len(self._labels)

    def __contains__(self, label):
        return label in self._prov

    def __iter__(self):
        return iter(self._labels)

    def __eq__(self, other):
        return isinstance(other, LabelRegistry) and self.labels == other.labels and self._prov == other._prov

    def index(self, label) -> int:
        return self._labels.index(label)

    def append(self, labels, source: str = INITIAL) -> None:
        labels = [str(lbl) for lbl in labels]
        dup = [lbl for lbl in labels if lbl in self._prov]
        if dup or len(set(labels)) != len(labels):
            raise ValueError(f"duplicate label(s) {dup or labels}")
        for lbl in labels:
            self._labels.append(lbl)
            self._prov[lbl] = str(source)

    def to_dict(self) -> dict:
        return {"labels": list(self._labels), "provenance": dict(self._prov)}

    @classmethod
    def from_dict(cls, d) -> "LabelRegistry":
        return cls(d["labels"], d["provenance"])


@dataclass
class UnknownPool:
    """Flows the identifier assigned to ``0_other``.

    ``index`` points into the batch handed to :meth:`collect_unknowns`;
    ``truth`` optionally carries ground-truth labels for diagnostics only.
    """

    index: np.ndarray
    ids: np.ndarray
    embeddings: np.ndarray
    truth: np.ndarray | None = None

    def __len__(self):
        return len(self.index)


class ReplayStore:
    """Class-balanced exemplar memory filled by per-class reservoir sampling."""

    def __init__(self, per_class: int = 200, seed: int = 0):
        if per_class < 1:
            raise ValueError("per_class must be >= 1")
        self.per_class = per_class
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self._items: dict[str, list[np.ndarray]] = {}
        self._seen: dict[str, int] = {}

    def add(self, ids, labels) -> None:
        ids = np.asarray(ids, dtype=np.int64)
        for row, lbl in zip(ids, labels):
            lbl = str(lbl)
            bucket = self._items.setdefault(lbl, [])
            n = self._seen.get(lbl, 0)
            if n < self.per_class:
                bucket.append(row.copy())
            else:
                j = int(self._rng.integers(n + 1))
                if j < self.per_class:
                    bucket[j] = row.copy()
            self._seen[lbl] = n + 1

    @property
    def classes(self) -> list[str]:
        return sorted(self._items)

    def count(self, label) -> int:
        return len(self._items.get(label, ()))

    def arrays(self, labels=None) -> tuple[np.ndarray, np.ndarray]:
        labels = self.classes if labels is None else list(labels)
        rows, ys = [], []
        for lbl in labels:
            for r in self._items.get(lbl, ()):
                rows.append(r)
                ys.append(lbl)
        if not rows:
            return np.empty((0, 0), dtype=np.int64), np.empty(0, dtype=object)
        return np.stack(rows), np.asarray(ys, dtype=object)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        ids, ys = self.arrays()
        seen = [self._seen[c] for c in self.classes]
        with open(path, "wb") as fh:
            np.savez(fh, ids=ids, labels=ys.astype(str), classes=np.asarray(self.classes, dtype=str),
                     seen=np.asarray(seen, dtype=np.int64), per_class=self.per_class, seed=self.seed)
        return path

    @classmethod
    def load(cls, path) -> "ReplayStore":
        with np.load(path, allow_pickle=False) as z:
            store = cls(int(z["per_class"]), int(z["seed"]))
            for lbl, row in zip(z["labels"], z["ids"]):
                store._items.setdefault(str(lbl), []).append(row.astype(np.int64))
            for lbl, n in zip(z["classes"], z["seen"]):
                store._seen[str(lbl)] = int(n)
        return store


def _old_class_recall(report: MetricReport, classes) -> float:
    vals = [report.per_class[c]["recall"] for c in classes if c in report.per_class]
    return float(np.mean(vals)) if vals else 0.0


@dataclass
class RetrainReport:
    mode: str
    n_new: int
    n_replay: int
    new_labels: list[str]
    loss_curve: list[float]
    pre: MetricReport | None = None
    post: MetricReport | None = None
    old_recall_drop: float | None = None
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "n_new": self.n_new,
            "n_replay": self.n_replay,
            "new_labels": list(self.new_labels),
            "loss_curve": list(self.loss_curve),
            "old_recall_drop": self.old_recall_drop,
            "warnings": list(self.warnings),
        }


class FlowIdentifier(TransformerFlowClassifier):
    """Multi-class identifier whose label 0 is ``0_other``.

    Extra parameters
    ----------------
    unknown_threshold : float, optional
        When set, flows whose top softmax probability is below it are
        also predicted ``0_other``. Off by default.
    retrain_epochs : int
    encoder_lr_scale : float
        Encoder learning rate multiplier during incremental retraining.
    forgetting_budget : float
        Allowed drop of old-class macro recall before a
        :class:`ForgettingWarning` is issued.
    retrain_mode : {"warm", "scratch"}
    """

    def __init__(self, vocab_size=None, pad_id=None, labels=None, unknown_threshold=None, n_layers=4, d_model=64,
                 n_heads=4, d_ff=128, dropout=0.1, learning_rate=1e-3, batch_size=32, epochs=5,
                 betas=(0.9, 0.999), clip_norm=1.0, class_weight=None, shuffle=True, seed=0,
                 dtype="float32", retrain_epochs=5, encoder_lr_scale=0.1, forgetting_budget=0.05,
                 retrain_mode="warm"):
        super().__init__(vocab_size=vocab_size, pad_id=pad_id, labels=labels, n_layers=n_layers, d_model=d_model,
                         n_heads=n_heads, d_ff=d_ff, dropout=dropout, learning_rate=learning_rate,
                         batch_size=batch_size, epochs=epochs, betas=betas, clip_norm=clip_norm,
                         class_weight=class_weight, shuffle=shuffle, seed=seed, dtype=dtype)
        self.unknown_threshold = unknown_threshold
        self.retrain_epochs = retrain_epochs
        self.encoder_lr_scale = encoder_lr_scale
        self.forgetting_budget = forgetting_budget
        self.retrain_mode = retrain_mode

    def fit(self, X, y, init_encoder=None):
        y = [str(v) for v in y]
        if OTHER not in y:
            raise DataError(f"identifier training data has no {OTHER!r} examples")
        if self.labels is not None:
            registry = LabelRegistry(self.labels)
        else:
            registry = LabelRegistry(sorted(set(y) - {OTHER}))
        if len(registry) < 2:
            raise DataError("identifier needs at least one known attack class besides 0_other")
        saved = self.labels
        self.labels = registry.labels
        try:
            super().fit(X, y, init_encoder=init_encoder)
        finally:
            self.labels = saved
        self.registry_ = registry
        self.trained_labels_ = registry.labels
        self.history_: list[RetrainReport] = []
        return self

    def predict(self, X) -> np.ndarray:
        if self.unknown_threshold is None:
            return super().predict(X)
        p = self.predict_proba(X)
        pred = self.classes_[np.argmax(p, axis=1)].copy()
        pred[p.max(axis=1) < self.unknown_threshold] = OTHER
        return pred

    def predict_with_embeddings(self, X):
        pred, logits, emb = super().predict_with_embeddings(X)
        if self.unknown_threshold is not None:
            pred = pred.copy()
            pred[softmax(logits).max(axis=1) < self.unknown_threshold] = OTHER
        return pred, logits, emb

    def evaluate(self, X, y, stage: str = "") -> MetricReport:
        return MetricReport.from_predictions(y, self.predict(X), labels=list(self.classes_), stage=stage)

    # -- continual learning
    def collect_unknowns(self, X, truth=None) -> UnknownPool:
        X = self._validate_ids(X)
        if len(X) == 0:
            return UnknownPool(np.empty(0, np.int64), X, np.empty((0, self.d_model)), None)
        pred, _, emb = self.predict_with_embeddings(X)
        idx = np.flatnonzero(pred == OTHER)
        t = None if truth is None else np.asarray(truth, dtype=object)[idx]
        return UnknownPool(idx, X[idx], emb[idx], t)

    def expand_head(self, new_labels, source: str = INITIAL) -> "FlowIdentifier":
        """Append zero-initialised rows for ``new_labels``. Old logits are
        left bit-identical. An empty list is a no-op."""
        new_labels = [str(lbl) for lbl in new_labels]
        if not new_labels:
            return self
        dup = [lbl for lbl in new_labels if lbl in self.registry_]
        if dup or len(set(new_labels)) != len(new_labels):
            raise ValueError(f"duplicate label(s) {dup or new_labels}")
        self.head_.expand(new_labels)
        self.registry_.append(new_labels, source)
        self.classes_ = np.array(self.registry_.labels, dtype=object)
        return self

    def retrain_incremental(self, X_new, y_new, replay: ReplayStore, eval_set=None, seed: int | None = None):
        """Retrain on new flows mixed with replay exemplars of every old class.

        ``eval_set`` = ``(X, y)`` over old classes enables the forgetting
        check: if old-class macro recall drops by more than
        ``forgetting_budget`` a :class:`ForgettingWarning` is raised.
        """
        X_new = np.asarray(X_new, dtype=np.int64)
        y_new = np.asarray([str(v) for v in y_new], dtype=object)
        unknown = sorted(set(y_new) - set(self.registry_))
        if unknown:
            raise ValueError(f"labels {unknown} are not in the registry; expand_head first")
        old_classes = list(self.trained_labels_)
        new_classes = [c for c in self.registry_ if c not in old_classes]
        if len(X_new) == 0 and not new_classes:
            return self
        missing = [c for c in old_classes if replay.count(c) == 0]
        if missing:
            raise DataError(f"replay store holds no exemplars for {missing}")

        pre = None
        if eval_set is not None:
            pre = self.evaluate(*eval_set, stage="pre")
        X_rep, y_rep = replay.arrays(old_classes)
        X_all = np.concatenate([X_new, X_rep]) if len(X_rep) else X_new
        y_all = np.concatenate([y_new, y_rep])
        seed = self.seed if seed is None else seed
        cfg_kw = dict(epochs=self.retrain_epochs)
        if self.retrain_mode == "warm":
            cfg_kw["encoder_lr_scale"] = self.encoder_lr_scale
        elif self.retrain_mode == "scratch":
            self.model_, self.head_ = build_model(self.encoder_config_, list(self.registry_), seed, self.dtype)
        else:
            raise ValueError(f"unknown retrain_mode {self.retrain_mode!r}")
        cfg = self._train_config(y_all, seed=seed, **cfg_kw)
        rep = train(self.model_, self.head_, X_all, self._mask(X_all), self._encode_labels(y_all), cfg)

        report = RetrainReport(self.retrain_mode, len(X_new), len(X_rep), sorted(set(y_new)), rep.loss_curve)
        if pre is not None:
            post = self.evaluate(*eval_set, stage="post")
            drop = _old_class_recall(pre, old_classes) - _old_class_recall(post, old_classes)
            report.pre, report.post, report.old_recall_drop = pre, post, drop
            if drop > self.forgetting_budget:
                msg = f"old-class macro recall fell by {drop:.4f} (budget {self.forgetting_budget})"
                report.warnings.append(msg)
                warnings.warn(msg, ForgettingWarning, stacklevel=2)
        self.trained_labels_ = self.registry_.labels
        self.history_.append(report)
        return self

    def snapshot(self) -> "FlowIdentifier":
        return copy.deepcopy(self)

    # -- persistence
    def _checkpoint_extra(self) -> dict:
        extra = super()._checkpoint_extra()
        extra["registry"] = self.registry_.to_dict()
        extra["trained_labels"] = list(self.trained_labels_)
        extra["params"]["labels"] = None
        return extra

    def _restore(self, model, head, extra):
        super()._restore(model, head, extra)
        self.registry_ = LabelRegistry.from_dict(extra["registry"])
        if self.registry_.labels != tuple(head.labels):
            raise ValueError("registry and head label order disagree")
        self.trained_labels_ = tuple(extra.get("trained_labels", self.registry_.labels))
        self.history_ = []
