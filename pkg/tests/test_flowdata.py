from __future__ import annotations

import json
from collections import Counter
from decimal import ROUND_HALF_UP, Decimal

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowsentry.exceptions import EmptyDatasetError, MissingLabelColumnError, StratificationError
from flowsentry.flowdata import (
    ClassSpec,
    Dataset,
    SyntheticSpec,
    clean_numeric,
    generate_synthetic,
    ingest_csv,
    round_half_up,
    split,
    subsample,
    subsample_counts,
    write_csv,
    write_manifest,
)


def _decimal_round(x: float) -> int:
    return int(Decimal(repr(x)).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def _write(tmp_path, text, name="flows.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- ingestion


def test_ingest_counts_classes(tmp_path):
    rows = ["Dst Port,Flow Duration,Label"]
    rows += [f"{80 + i},{i * 1.5},Benign" for i in range(6)]
    rows += [f"{443 + i},{i},Bot" for i in range(4)]
    ds = ingest_csv(_write(tmp_path, "\n".join(rows) + "\n"))
    assert ds.class_counts == {"Benign": 6, "Bot": 4}
    assert ds.schema == ("Dst Port", "Flow Duration")
    assert len(ds) == 10


def test_infinity_replaced_by_finite_column_max(tmp_path):
    p = _write(tmp_path, "a,b,Label\n1,2,Benign\nInfinity,3,Bot\n5,-inf,Benign\n")
    ds = ingest_csv(p)
    assert ds.X["a"].tolist() == [1.0, 5.0, 5.0]
    assert ds.X["b"].tolist() == [2.0, 3.0, 2.0]
    assert len(ds) == 3


def test_nan_becomes_zero_and_repeated_header_dropped(tmp_path):
    p = _write(tmp_path, "a,b,Label\n1,NaN,Benign\na,b,Label\n,4,Bot\n")
    ds = ingest_csv(p)
    assert len(ds) == 2
    assert ds.X["a"].tolist() == [1.0, 0.0]
    assert ds.X["b"].tolist() == [0.0, 4.0]


def test_label_column_case_insensitive_and_schema_map(tmp_path):
    p = _write(tmp_path, "x, LABEL \n1,Benign\n2,Bot\n")
    assert ingest_csv(p).class_counts == {"Benign": 1, "Bot": 1}
    p2 = _write(tmp_path, "x,cls\n1,Benign\n2,Bot\n", "m.csv")
    ds = ingest_csv(p2, schema_map={"cls": "Label", "x": "dur"})
    assert ds.schema == ("dur",)


def test_categorical_column_kept_as_strings(tmp_path):
    p = _write(tmp_path, "proto,n,Label\ntcp,1,Benign\nudp,2,Bot\n")
    ds = ingest_csv(p)
    assert ds.X["proto"].tolist() == ["tcp", "udp"]
    assert ds.numeric_features == ("n",)


def test_ingest_errors_are_distinct(tmp_path):
    with pytest.raises(FileNotFoundError):
        ingest_csv(tmp_path / "nope.csv")
    with pytest.raises(MissingLabelColumnError):
        ingest_csv(_write(tmp_path, "a,b\n1,2\n"))
    with pytest.raises(EmptyDatasetError):
        ingest_csv(_write(tmp_path, "", "empty.csv"))
    with pytest.raises(EmptyDatasetError):
        ingest_csv(_write(tmp_path, "a,Label\n", "header_only.csv"))


def test_clean_numeric_all_nonfinite():
    assert clean_numeric([np.inf, np.nan, -np.inf]).tolist() == [0.0, 0.0, 0.0]


def test_ingest_is_idempotent_over_canonical_writer(tmp_path):
    ds = generate_synthetic(SyntheticSpec((ClassSpec("Benign", (0.0, 1.0), (1.0, 2.0)),
                                           ClassSpec("Bot", (3.0, -1.0), (0.5, 0.1))), 25, 7))
    p = write_csv(ds, tmp_path / "ds.csv")
    back = ingest_csv(p)
    assert back == ds
    with open(p) as fh:
        assert fh.readline().strip().split(",")[-1] == "Label"


def test_manifest_contents(tmp_path, blobs):
    m = json.loads(write_manifest(blobs, tmp_path / "m.json").read_text())
    assert m["class_counts"] == blobs.class_counts
    assert m["schema"] == list(blobs.schema)
    assert m["provenance"]["synthetic_seed"] == 0


# -- dataset


def test_dataset_counts_match_recount(blobs):
    assert sum(blobs.class_counts.values()) == len(blobs)
    assert blobs.class_counts == dict(sorted(Counter(blobs.y.tolist()).items()))


def test_dataset_rejects_mismatched_lengths():
    with pytest.raises(ValueError):
        Dataset(pd.DataFrame({"a": [1.0, 2.0]}), ["x"])


def test_records_share_schema(blobs):
    names = {rec.names for rec in blobs.records()}
    assert names == {blobs.schema}


# -- subsample


def test_subsample_example():
    ds = Dataset(pd.DataFrame({"f": np.arange(1100, dtype=float)}), ["Benign"] * 1000 + ["A"] * 100)
    out = subsample(ds, 0.15, 0.30, seed=1)
    assert out.class_counts == {"A": 30, "Benign": 45}


def test_subsample_identity(blobs):
    assert subsample(blobs, 1.0, 1.0, seed=3) == blobs


def test_subsample_deterministic(blobs):
    assert subsample(blobs, 0.5, 0.5, seed=9) == subsample(blobs, 0.5, 0.5, seed=9)


def test_subsample_priority_and_exact_total():
    counts = {"Benign": 1000, "A": 15, "B": 15}
    assert subsample_counts(counts, 0.15, 0.3, priority=["A"]) == {"Benign": 45, "A": 15, "B": 5}
    exact = subsample_counts({"Benign": 10, "A": 5, "B": 5}, 1.0, 0.5, exact_total=True)
    assert sum(exact.values()) == 10


def test_subsample_rejects_empty_and_bad_fracs(blobs):
    with pytest.raises(EmptyDatasetError):
        subsample(Dataset(pd.DataFrame({"a": []}), []), 0.5, 0.5, seed=0)
    with pytest.raises(ValueError):
        subsample(blobs, 0.0, 0.5, seed=0)
    with pytest.raises(ValueError):
        subsample(blobs, 0.5, 1.5, seed=0)


@given(
    counts=st.dictionaries(st.sampled_from(["Benign", "A", "B", "C", "D"]), st.integers(1, 3000), min_size=1),
    benign_frac=st.floats(0.01, 1.0),
    total_frac=st.floats(0.01, 1.0),
)
def test_subsample_counts_follow_half_up_rule(counts, benign_frac, total_frac):
    out = subsample_counts(counts, benign_frac, total_frac)
    for label, n in counts.items():
        step1 = _decimal_round(n * benign_frac) if label == "Benign" else n
        assert out[label] == _decimal_round(step1 * total_frac)


@given(counts=st.dictionaries(st.sampled_from(["Benign", "A", "B"]), st.integers(1, 60), min_size=1),
       seed=st.integers(0, 2**32 - 1))
def test_subsample_recount_matches_targets(counts, seed):
    y = [label for label, n in counts.items() for _ in range(n)]
    ds = Dataset(pd.DataFrame({"f": np.arange(len(y), dtype=float)}), y)
    out = subsample(ds, 0.4, 0.7, seed)
    assert out.class_counts == {k: v for k, v in sorted(subsample_counts(counts, 0.4, 0.7).items()) if v > 0}


@given(st.floats(0, 1e6))
def test_round_half_up_matches_decimal(x):
    assert round_half_up(x) == _decimal_round(x)


# -- split


def test_split_example():
    ds = Dataset(pd.DataFrame({"f": np.arange(100, dtype=float)}), ["a"] * 50 + ["b"] * 50)
    tr, te = split(ds, 0.8, seed=0)
    assert (len(tr), len(te)) == (80, 20)
    assert tr.class_counts == {"a": 40, "b": 40}
    assert te.class_counts == {"a": 10, "b": 10}


def test_split_deterministic(blobs):
    a, b = split(blobs, 0.7, seed=5), split(blobs, 0.7, seed=5)
    assert a[0] == b[0] and a[1] == b[1]


def test_split_names_unsplittable_class():
    ds = Dataset(pd.DataFrame({"f": [1.0, 2.0, 3.0]}), ["a", "a", "lonely"])
    with pytest.raises(StratificationError, match="lonely"):
        split(ds, 0.5, seed=0)


def test_split_rejects_bad_fraction(blobs):
    for frac in (0.0, 1.0):
        with pytest.raises(ValueError):
            split(blobs, frac, seed=0)


@given(counts=st.lists(st.integers(2, 40), min_size=1, max_size=4), frac=st.floats(0.05, 0.95),
       seed=st.integers(0, 1000))
def test_split_is_partition(counts, frac, seed):
    y = [f"c{i}" for i, n in enumerate(counts) for _ in range(n)]
    ds = Dataset(pd.DataFrame({"f": np.arange(len(y), dtype=float)}), y)
    tr, te = split(ds, frac, seed)
    a, b = set(tr.X["f"]), set(te.X["f"])
    assert not a & b
    assert a | b == set(ds.X["f"])
    merged = Counter(tr.y.tolist()) + Counter(te.y.tolist())
    assert dict(sorted(merged.items())) == ds.class_counts


# -- synthetic


def test_generate_counts_and_schema():
    classes = tuple(ClassSpec(f"c{i}", (float(i),) * 8, (1.0,) * 8) for i in range(3))
    ds = generate_synthetic(SyntheticSpec(classes, 200, 0))
    assert len(ds) == 600
    assert len(ds.schema) == 8


def test_tiny_stddev_means():
    means = (0.3, -2.0, 5.0)
    ds = generate_synthetic(SyntheticSpec((ClassSpec("a", means, (1e-6,) * 3),), 50, 0))
    np.testing.assert_allclose(ds.X.to_numpy().mean(axis=0), means, atol=1e-3)


def test_seed_changes_values_not_counts():
    spec = lambda seed: SyntheticSpec((ClassSpec("a", (0.0,), (1.0,)), ClassSpec("b", (1.0,), (1.0,))), 20, seed)
    a, b = generate_synthetic(spec(1)), generate_synthetic(spec(2))
    assert a.class_counts == b.class_counts
    assert not np.array_equal(a.X.to_numpy(), b.X.to_numpy())
    assert generate_synthetic(spec(1)) == a


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec((), 10, 0)
    with pytest.raises(ValueError):
        SyntheticSpec((ClassSpec("a", (0.0,), (1.0,)),), 0, 0)
    with pytest.raises(ValueError):
        SyntheticSpec((ClassSpec("a", (0.0,), (-1.0,)),), 5, 0)
    with pytest.raises(ValueError):
        SyntheticSpec((ClassSpec("a", (0.0, 1.0), (1.0, 1.0)), ClassSpec("b", (0.0,), (1.0,))), 5, 0)


def test_spec_roundtrip():
    spec = SyntheticSpec((ClassSpec("a", (0.0, 1.0), (1.0, 0.5), n=7),), 3, 11, ("x", "y"))
    assert SyntheticSpec.from_dict(spec.to_dict()) == spec
