"""Binary benign/malicious detection and routing of traffic to the identifier."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .encoder import TransformerFlowClassifier
from .exceptions import DataError
from .flowdata import round_half_up

logger = logging.getLogger(__name__)

BENIGN = "benign"
MALICIOUS = "malicious"


def binarize(y, benign_label: str = "Benign") -> np.ndarray:
    return np.where(np.asarray([str(v) for v in y], dtype=object) == benign_label, BENIGN, MALICIOUS).astype(object)


class FlowDetector(TransformerFlowClassifier):
    """Two-class encoder + head. Any label other than ``benign_label`` is
    treated as malicious.

    ``threshold`` (optional) flags a flow malicious when
    ``P(malicious) >= threshold``; the default ``None`` is plain argmax.
    """

    def __init__(self, vocab_size=None, pad_id=None, benign_label="Benign", threshold=None, n_layers=4,
                 d_model=64, n_heads=4, d_ff=128, dropout=0.1, learning_rate=1e-3, batch_size=32, epochs=3,
                 betas=(0.9, 0.999), clip_norm=1.0, class_weight=None, shuffle=True, seed=0,
                 dtype="float32"):
        super().__init__(vocab_size=vocab_size, pad_id=pad_id, labels=(BENIGN, MALICIOUS), n_layers=n_layers,
                         d_model=d_model, n_heads=n_heads, d_ff=d_ff, dropout=dropout,
                         learning_rate=learning_rate, batch_size=batch_size, epochs=epochs, betas=betas,
                         clip_norm=clip_norm, class_weight=class_weight, shuffle=shuffle, seed=seed, dtype=dtype)
        self.benign_label = benign_label
        self.threshold = threshold

    def fit(self, X, y):
        yb = binarize(y, self.benign_label)
        present = set(yb)
        if present != {BENIGN, MALICIOUS}:
            missing = {BENIGN, MALICIOUS} - present
            raise DataError(f"detector training needs both classes; missing {sorted(missing)}")
        return super().fit(X, yb)

    def predict(self, X) -> np.ndarray:
        if self.threshold is None:
            return super().predict(X)
        p = self.predict_proba(X)[:, 1]
        return np.where(p >= self.threshold, MALICIOUS, BENIGN).astype(object)

    def is_malicious(self, X) -> np.ndarray:
        return self.predict(X) == MALICIOUS


def train_detector(X, y, **params) -> FlowDetector:
    """Fit a :class:`FlowDetector` on token ids ``X`` and raw labels ``y``."""
    return FlowDetector(**params).fit(X, y)


@dataclass(frozen=True)
class DetectionRoute:
    """Row indices into the routed batch.

    ``malicious`` holds every predicted-malicious row; ``benign_forward``
    a seeded sample of predicted-benign rows. Both are sorted.
    """

    malicious: np.ndarray
    benign_forward: np.ndarray
    n_benign: int
    forward_frac: float

    @property
    def forwarded(self) -> np.ndarray:
        return np.sort(np.concatenate([self.malicious, self.benign_forward]))

    def to_dict(self) -> dict:
        return {
            "n_malicious": int(len(self.malicious)),
            "n_benign_predicted": self.n_benign,
            "n_benign_forwarded": int(len(self.benign_forward)),
            "forward_frac": self.forward_frac,
        }


def route_predictions(is_malicious, forward_frac: float = 0.05, seed: int = 0) -> DetectionRoute:
    """Routing given boolean detector decisions."""
    if not 0 <= forward_frac <= 1:
        raise ValueError("forward_frac must be in [0, 1]")
    flags = np.asarray(is_malicious, dtype=bool)
    mal = np.flatnonzero(flags)
    ben = np.flatnonzero(~flags)
    n_fwd = round_half_up(forward_frac * len(ben))
    rng = np.random.default_rng(seed)
    fwd = np.sort(rng.choice(ben, size=n_fwd, replace=False)) if n_fwd else np.empty(0, dtype=np.int64)
    return DetectionRoute(mal, fwd.astype(np.int64), int(len(ben)), float(forward_frac))


def route(detector: FlowDetector, flows, forward_frac: float = 0.05, seed: int = 0) -> DetectionRoute:
    r = route_predictions(detector.is_malicious(flows), forward_frac, seed)
    logger.info("routed %d malicious + %d/%d benign", len(r.malicious), len(r.benign_forward), r.n_benign)
    return r
