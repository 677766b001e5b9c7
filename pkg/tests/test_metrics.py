from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowsentry.exceptions import UndefinedMetricWarning
from flowsentry.metrics import ConfusionMatrix, MetricReport, accuracy, f1, precision, recall


def count_oracle(y_true, y_pred, c):
    tp = sum(t == c and p == c for t, p in zip(y_true, y_pred))
    tn = sum(t != c and p != c for t, p in zip(y_true, y_pred))
    fp = sum(t != c and p == c for t, p in zip(y_true, y_pred))
    fn = sum(t == c and p != c for t, p in zip(y_true, y_pred))
    return tp, tn, fp, fn


def test_binary_example():
    # TP=3 TN=5 FP=1 FN=1
    y_true = ["a"] * 4 + ["b"] * 6
    y_pred = ["a", "a", "a", "b"] + ["a"] + ["b"] * 5
    cm = ConfusionMatrix.from_predictions(y_true, y_pred, ["a", "b"])
    assert cm.outcomes("a") == (3, 5, 1, 1)
    assert accuracy(cm, "a") == 0.8
    assert precision(cm, "a") == 0.75
    assert recall(cm, "a") == 0.75
    assert f1(cm, "a") == 0.75


def test_zero_denominator_flags_and_warns():
    cm = ConfusionMatrix.from_predictions(["a", "a"], ["a", "a"], ["a", "b"])
    flags = []
    with pytest.warns(UndefinedMetricWarning):
        assert precision(cm, "b", flags) == 0.0
    with pytest.warns(UndefinedMetricWarning):
        assert recall(cm, "b", flags) == 0.0
    assert flags == ["precision[b]", "recall[b]"]
    rep = MetricReport.from_confusion(cm, classes=["a", "b"])
    assert "precision[b]" in rep.undefined


def test_empty_matrix_rejected():
    cm = ConfusionMatrix(("a", "b"), np.zeros((2, 2), dtype=int))
    with pytest.raises(ValueError):
        accuracy(cm)
    with pytest.raises(ValueError):
        MetricReport.from_confusion(cm)
    with pytest.raises(ValueError):
        ConfusionMatrix(("a",), np.zeros((2, 2)))
    with pytest.raises(KeyError):
        ConfusionMatrix.from_predictions(["a"], ["a"]).outcomes("zz")


labels_st = st.lists(st.sampled_from("abcd"), min_size=1, max_size=80)


@given(st.data())
def test_metrics_match_counting_oracle(data):
    y_true = data.draw(labels_st)
    y_pred = data.draw(st.lists(st.sampled_from("abcd"), min_size=len(y_true), max_size=len(y_true)))
    cm = ConfusionMatrix.from_predictions(y_true, y_pred)
    assert cm.total == len(y_true)
    for c in cm.labels:
        tp, tn, fp, fn = count_oracle(y_true, y_pred, c)
        assert cm.outcomes(c) == (tp, tn, fp, fn)
        assert accuracy(cm, c) == (tp + tn) / len(y_true)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UndefinedMetricWarning)
            assert precision(cm, c) == (tp / (tp + fp) if tp + fp else 0.0)
            assert recall(cm, c) == (tp / (tp + fn) if tp + fn else 0.0)


@given(st.data())
def test_macro_is_mean_of_per_class(data):
    y_true = data.draw(labels_st)
    y_pred = data.draw(st.lists(st.sampled_from("abcd"), min_size=len(y_true), max_size=len(y_true)))
    rep = MetricReport.from_predictions(y_true, y_pred)
    for key, value in [("accuracy", rep.macro_accuracy), ("precision", rep.macro_precision),
                       ("recall", rep.macro_recall), ("f1", rep.macro_f1)]:
        assert abs(value - np.mean([v[key] for v in rep.per_class.values()])) <= 1e-12
    assert rep.accuracy == sum(t == p for t, p in zip(y_true, y_pred)) / len(y_true)
    assert rep.micro_recall == pytest.approx(rep.accuracy)


def test_report_roundtrip_and_csv():
    rep = MetricReport.from_predictions(["a", "b", "b"], ["a", "a", "b"], stage="s")
    back = MetricReport.from_dict(rep.to_dict())
    assert back.to_dict() == rep.to_dict()
    assert rep.confusion.to_csv() == "true\\pred,a,b\na,1,0\nb,1,1\n"


def test_label_order_and_extras():
    cm = ConfusionMatrix.from_predictions(["b", "c"], ["b", "z"], labels=["c", "b"])
    assert cm.labels == ("c", "b", "z")
    assert cm.transpose().counts.tolist() == np.asarray(cm.counts).T.tolist()

