from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowsentry.detection import BENIGN, MALICIOUS, FlowDetector, binarize, route, route_predictions, train_detector
from flowsentry.exceptions import DataError
from flowsentry.flowdata import split
from flowsentry.metrics import ConfusionMatrix, recall
from flowsentry.textenc import FlowTextEncoder

from .conftest import TINY, blob_dataset


@pytest.fixture(scope="module")
def trained():
    ds = blob_dataset(n_per_class=300, seed=1, labels=("Benign", "Bot", "DDoS"))
    tr, te = split(ds, 0.7, seed=0)
    enc = FlowTextEncoder(bins_per_feature=8, vocab_size=300, max_len=24).fit(tr)
    Xtr, Xte = enc.transform(tr), enc.transform(te)
    det = train_detector(Xtr, tr.y, vocab_size=enc.n_tokens, pad_id=enc.pad_id, epochs=8, learning_rate=3e-3,
                         batch_size=32, **TINY)
    return det, Xte, te.y, tr, te


def test_binarize():
    assert binarize(["Benign", "Bot", "x"]).tolist() == [BENIGN, MALICIOUS, MALICIOUS]
    assert binarize(["normal", "Bot"], benign_label="normal").tolist() == [BENIGN, MALICIOUS]


def test_separable_heldout_recall(trained):
    det, X, y, tr, te = trained
    # nearest-centroid oracle on raw features confirms the split is separable
    tb, eb = binarize(tr.y), binarize(y)
    cents = {c: tr.X.to_numpy()[tb == c].mean(0) for c in (BENIGN, MALICIOUS)}
    d = {c: np.linalg.norm(te.X.to_numpy() - m, axis=1) for c, m in cents.items()}
    oracle = np.where(d[BENIGN] < d[MALICIOUS], BENIGN, MALICIOUS)
    assert (oracle == eb).all()
    yb = eb
    cm = ConfusionMatrix.from_predictions(yb, det.predict(X), [BENIGN, MALICIOUS])
    assert recall(cm, MALICIOUS) >= 0.99
    assert list(det.classes_) == [BENIGN, MALICIOUS]


def test_single_class_rejected(trained):
    det, X, _ = trained[:3]
    with pytest.raises(DataError, match="malicious"):
        FlowDetector(vocab_size=det.vocab_size, pad_id=det.pad_id, **TINY).fit(X[:5], ["Benign"] * 5)
    with pytest.raises(DataError, match="benign"):
        FlowDetector(vocab_size=det.vocab_size, pad_id=det.pad_id, **TINY).fit(X[:5], ["Bot"] * 5)


def test_swapped_labels_transpose_confusion(trained):
    det, X, y = trained[:3]
    truth, pred = binarize(y), det.predict(X)
    a = ConfusionMatrix.from_predictions(truth, pred, [BENIGN, MALICIOUS])
    b = ConfusionMatrix.from_predictions(pred, truth, [BENIGN, MALICIOUS])
    np.testing.assert_array_equal(a.transpose().counts, b.counts)


def test_threshold_option(trained):
    det, X, _ = trained[:3]
    p = det.predict_proba(X)[:, 1]
    det2 = FlowDetector(**{**det.get_params(), "threshold": 0.0})
    det2.__dict__.update({k: v for k, v in det.__dict__.items() if k.endswith("_")})
    assert det2.is_malicious(X).all()
    assert (det.is_malicious(X) == (p > 0.5)).mean() > 0.99


# -- routing


def test_route_fraction_edges():
    flags = np.array([True, False, False, True, False])
    assert len(route_predictions(flags, 0.0).benign_forward) == 0
    r = route_predictions(flags, 1.0)
    assert r.benign_forward.tolist() == [1, 2, 4]
    assert r.forwarded.tolist() == [0, 1, 2, 3, 4]


def test_route_arithmetic():
    r = route_predictions(np.zeros(1000, dtype=bool), 0.05, seed=3)
    assert len(r.benign_forward) == 50
    assert r.to_dict()["n_benign_predicted"] == 1000
    with pytest.raises(ValueError):
        route_predictions([True], 1.5)


@given(flags=st.lists(st.booleans(), max_size=300), frac=st.floats(0, 1), seed=st.integers(0, 2**32 - 1))
def test_route_keeps_every_malicious_flow(flags, frac, seed):
    flags = np.array(flags, dtype=bool)
    r = route_predictions(flags, frac, seed)
    assert set(np.flatnonzero(flags)) <= set(r.forwarded.tolist())
    assert not flags[r.benign_forward].any()
    r2 = route_predictions(flags, frac, seed)
    np.testing.assert_array_equal(r.benign_forward, r2.benign_forward)


def test_route_with_detector_is_deterministic(trained):
    det, X, _ = trained[:3]
    a, b = route(det, X, 0.3, seed=4), route(det, X, 0.3, seed=4)
    np.testing.assert_array_equal(a.forwarded, b.forwarded)
    np.testing.assert_array_equal(a.malicious, np.flatnonzero(det.is_malicious(X)))
