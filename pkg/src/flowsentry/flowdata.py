"""Labelled flow-record datasets: CSV ingestion, sampling, splitting and
synthetic generation."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
import pandas as pd

from .exceptions import (
    DataError,
    EmptyDatasetError,
    MissingLabelColumnError,
    StratificationError,
)

logger = logging.getLogger(__name__)

LABEL_COLUMN = "Label"

# Per-class counts of the sampled CSE-CIC-IDS2018 subset used in the original study.
CIC_IDS2018_SAMPLED_COUNTS = {
    "Benign": 2022706,
    "DDoS attack-HOIC": 205804,
    "DDoS attacks-LOIC-HTTP": 172857,
    "DoS attacks-Hulk": 138574,
    "Bot": 85857,
    "FTP-BruteForce": 58008,
    "SSH-Bruteforce": 56277,
    "DoS attacks-SlowHTTPTest": 41967,
}


def round_half_up(x) -> int:
    """Round to the nearest integer, halves away from zero.

    Goes through ``Decimal(str(x))`` so that products like ``1000 * 0.15``
    are not thrown off by binary representation error.
    """
    return int(Decimal(str(x)).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def _scaled_count(n: int, frac: float) -> int:
    return round_half_up(Decimal(n) * Decimal(str(frac)))


@dataclass(frozen=True)
class FlowRecord:
    features: tuple[tuple[str, float | str], ...]
    label: str

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.features)

    def as_dict(self) -> dict[str, float | str]:
        return dict(self.features)


class Dataset:
    """An immutable table of flow features plus one label per row.

    Parameters
    ----------
    X : pandas.DataFrame
        One column per feature, in schema order. Numeric columns are float64,
        categorical columns hold strings.
    y : sequence of str
        Class label per row.
    provenance : dict, optional
        Free-form metadata (seed, source path, sampling parameters) carried
        into the manifest.
    """

    def __init__(self, X: pd.DataFrame, y: Sequence[str], provenance: Mapping | None = None):
        y = np.asarray([str(v) for v in y], dtype=object)
        if len(X) != len(y):
            raise DataError(f"X has {len(X)} rows but y has {len(y)} labels")
        if LABEL_COLUMN in X.columns:
            raise DataError(f"feature columns must not contain {LABEL_COLUMN!r}")
        if X.columns.has_duplicates:
            raise DataError("duplicate feature names")
        self._X = X.reset_index(drop=True)
        self._y = y
        self.provenance = dict(provenance or {})

    @property
    def X(self) -> pd.DataFrame:
        return self._X

    @property
    def y(self) -> np.ndarray:
        return self._y

    @property
    def schema(self) -> tuple[str, ...]:
        return tuple(str(c) for c in self._X.columns)

    @property
    def class_counts(self) -> dict[str, int]:
        counts = Counter(self._y.tolist())
        return {label: counts[label] for label in sorted(counts)}

    @property
    def numeric_features(self) -> tuple[str, ...]:
        return tuple(c for c in self.schema if pd.api.types.is_float_dtype(self._X[c]))

    def __len__(self) -> int:
        return len(self._y)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.schema == other.schema
            and np.array_equal(self._y, other._y)
            and self._X.equals(other._X)
        )

    def __repr__(self) -> str:
        return f"Dataset(n={len(self)}, features={len(self.schema)}, classes={self.class_counts})"

    def records(self) -> Iterator[FlowRecord]:
        names = self.schema
        for row, label in zip(self._X.itertuples(index=False, name=None), self._y):
            yield FlowRecord(tuple(zip(names, row)), label)

    def take(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self._X.iloc[indices], self._y[indices], self.provenance)

    def where(self, mask) -> "Dataset":
        return self.take(np.flatnonzero(np.asarray(mask, dtype=bool)))

    def filter_labels(self, labels) -> "Dataset":
        return self.where(np.isin(self._y, list(labels)))

    def relabel(self, mapping: Mapping[str, str]) -> "Dataset":
        y = np.asarray([mapping.get(v, v) for v in self._y], dtype=object)
        return Dataset(self._X, y, self.provenance)

    @classmethod
    def concat(cls, parts: Sequence["Dataset"]) -> "Dataset":
        if not parts:
            raise EmptyDatasetError("nothing to concatenate")
        schema = parts[0].schema
        for p in parts[1:]:
            if p.schema != schema:
                raise DataError("cannot concatenate datasets with different schemas")
        X = pd.concat([p.X for p in parts], ignore_index=True)
        y = np.concatenate([p.y for p in parts])
        return cls(X, y, parts[0].provenance)

    @classmethod
    def from_records(cls, records: Sequence[FlowRecord], provenance=None) -> "Dataset":
        if not records:
            raise EmptyDatasetError("no records")
        names = records[0].names
        rows = []
        for rec in records:
            if rec.names != names:
                raise DataError("records do not share one feature schema")
            rows.append([v for _, v in rec.features])
        X = pd.DataFrame(rows, columns=list(names))
        for c in X.columns:
            if pd.api.types.is_numeric_dtype(X[c]):
                X[c] = X[c].astype(np.float64)
        return cls(X, [r.label for r in records], provenance)

    def manifest(self) -> dict:
        return {
            "schema": list(self.schema),
            "numeric_features": list(self.numeric_features),
            "class_counts": self.class_counts,
            "n_records": len(self),
            "provenance": self.provenance,
        }


# ---------------------------------------------------------------------------
# CSV in / out


def _parse_numeric(values: np.ndarray) -> np.ndarray:
    try:
        return values.astype(np.float64)
    except ValueError:
        out = np.empty(len(values), dtype=np.float64)
        for i, v in enumerate(values):
            try:
                out[i] = float(v)
            except ValueError:
                out[i] = np.nan
        return out


def _looks_numeric(values: np.ndarray) -> bool:
    nonempty = values[values != ""]
    if len(nonempty) == 0:
        return True
    parsed = _parse_numeric(nonempty)
    bad = np.isnan(parsed) & ~np.isin(np.char.lower(nonempty.astype(str)), ["nan", "+nan", "-nan"])
    return bad.mean() <= 0.5


def clean_numeric(col: np.ndarray) -> np.ndarray:
    """NaN -> 0.0, +inf -> finite column max, -inf -> finite column min."""
    col = np.array(col, dtype=np.float64)
    finite = np.isfinite(col)
    hi = col[finite].max() if finite.any() else 0.0
    lo = col[finite].min() if finite.any() else 0.0
    col[np.isposinf(col)] = hi
    col[np.isneginf(col)] = lo
    col[np.isnan(col)] = 0.0
    return col


def _find_label_column(columns, label_column: str | None) -> str:
    target = (label_column or LABEL_COLUMN).lower()
    matches = [c for c in columns if str(c).strip().lower() == target]
    if not matches:
        raise MissingLabelColumnError(
            f"no label column {label_column or LABEL_COLUMN!r} among {list(columns)[:10]}..."
        )
    return matches[0]


def ingest_csv(path, schema_map: Mapping[str, str] | None = None, label_column: str | None = None) -> Dataset:
    """Read a CIC-IDS-style flow CSV into a :class:`Dataset`.

    ``schema_map`` renames columns (column -> feature name); mapping a column
    to ``"Label"`` makes it the label column. Repeated header rows are
    dropped and non-finite numeric values cleaned (see :func:`clean_numeric`).

    Raises
    ------
    FileNotFoundError
        ``path`` does not exist.
    EmptyDatasetError
        The file is empty or contains no data rows.
    MissingLabelColumnError
        No label column could be identified.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such dataset file: {path}")
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError as exc:
        raise EmptyDatasetError(f"{path} is empty") from exc
    raw.columns = [str(c).strip() for c in raw.columns]
    if schema_map:
        raw = raw.rename(columns=dict(schema_map))
    label_col = _find_label_column(raw.columns, label_column)

    header = np.asarray(raw.columns, dtype=object)
    dup_header = (raw.to_numpy(dtype=object) == header).all(axis=1) if len(raw) else np.zeros(0, bool)
    if dup_header.any():
        logger.info("dropping %d repeated header row(s) from %s", int(dup_header.sum()), path)
        raw = raw.loc[~dup_header]
    if len(raw) == 0:
        raise EmptyDatasetError(f"{path} has a header but no data rows")

    y = raw[label_col].str.strip().to_numpy(dtype=object)
    features = {}
    for col in raw.columns:
        if col == label_col:
            continue
        values = raw[col].str.strip().to_numpy(dtype=str)
        if _looks_numeric(values):
            parsed = _parse_numeric(np.where(values == "", "nan", values))
            features[col] = clean_numeric(parsed)
        else:
            features[col] = values.astype(object)
    X = pd.DataFrame(features, columns=[c for c in raw.columns if c != label_col])
    return Dataset(X, y, {"source": str(path)})


def write_csv(ds: Dataset, path) -> Path:
    """Canonical writer: UTF-8, header row, label column last."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = ds.X.copy()
    frame[LABEL_COLUMN] = ds.y
    with open(path, "w", encoding="utf-8", newline="") as fh:
        frame.to_csv(fh, index=False, float_format=None, lineterminator="\n")
    return path


def write_manifest(ds: Dataset, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(ds.manifest(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Sampling


def subsample_counts(
    counts: Mapping[str, int],
    benign_frac: float,
    total_frac: float,
    benign_label: str = "Benign",
    priority: Sequence[str] = (),
    exact_total: bool = False,
) -> dict[str, int]:
    """Target per-class counts for :func:`subsample`.

    The benign class is first cut to ``benign_frac`` of its size, then every
    class not listed in ``priority`` is cut to ``total_frac`` of its
    post-first-step size. Each count is rounded half-up independently. With
    ``exact_total`` the largest class absorbs the rounding slack so the sum
    equals ``round_half_up(total_frac * sum(step-1 counts))``.
    """
    if not 0 < benign_frac <= 1 or not 0 < total_frac <= 1:
        raise ValueError("benign_frac and total_frac must be in (0, 1]")
    step1 = {k: (_scaled_count(n, benign_frac) if k == benign_label else n) for k, n in counts.items()}
    priority = set(priority)
    out = {k: (n if k in priority else _scaled_count(n, total_frac)) for k, n in step1.items()}
    if exact_total and out:
        target = _scaled_count(sum(step1.values()), total_frac)
        largest = max(sorted(out), key=lambda k: out[k])
        out[largest] += target - sum(out.values())
    return out


def subsample(
    ds: Dataset,
    benign_frac: float,
    total_frac: float,
    seed: int,
    benign_label: str = "Benign",
    priority: Sequence[str] = (),
    exact_total: bool = False,
) -> Dataset:
    """Class-proportional random subsample (see :func:`subsample_counts`)."""
    if len(ds) == 0:
        raise EmptyDatasetError("cannot subsample an empty dataset")
    targets = subsample_counts(ds.class_counts, benign_frac, total_frac, benign_label, priority, exact_total)
    rng = np.random.default_rng(seed)
    keep = []
    for label in sorted(targets):
        idx = np.flatnonzero(ds.y == label)
        keep.append(np.sort(rng.choice(idx, size=targets[label], replace=False)))
    out = ds.take(np.sort(np.concatenate(keep)))
    out.provenance = {
        **ds.provenance,
        "subsample": {"benign_frac": benign_frac, "total_frac": total_frac, "seed": seed,
                      "priority": sorted(priority)},
    }
    return out


def split(ds: Dataset, train_frac: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified train/test split.

    Each class contributes ``round_half_up(train_frac * n)`` records to the
    training side, clamped so both sides receive at least one.
    """
    if not 0 < train_frac < 1:
        raise ValueError(f"train_frac must be in (0, 1), got {train_frac}")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for label, n in ds.class_counts.items():
        if n < 2:
            raise StratificationError(label, n)
        idx = np.flatnonzero(ds.y == label)
        perm = rng.permutation(idx)
        n_train = min(max(_scaled_count(n, train_frac), 1), n - 1)
        train_idx.append(perm[:n_train])
        test_idx.append(perm[n_train:])
    return (
        ds.take(np.sort(np.concatenate(train_idx))),
        ds.take(np.sort(np.concatenate(test_idx))),
    )


# ---------------------------------------------------------------------------
# Synthetic data


@dataclass(frozen=True)
class ClassSpec:
    """Gaussian profile of one (sub-)population.

    Several specs may share a ``label``; they then act as latent
    sub-clusters of a single family.
    """

    label: str
    means: tuple[float, ...]
    stds: tuple[float, ...]
    n: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "means", tuple(float(m) for m in self.means))
        object.__setattr__(self, "stds", tuple(float(s) for s in self.stds))


@dataclass(frozen=True)
class SyntheticSpec:
    classes: tuple[ClassSpec, ...]
    n_per_class: int
    seed: int
    feature_names: tuple[str, ...] | None = None
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.classes:
            raise ValueError("at least one class is required")
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")
        d = len(self.classes[0].means)
        for c in self.classes:
            if len(c.means) != d or len(c.stds) != d:
                raise ValueError(f"class {c.label!r}: means/stds must all have length {d}")
            if any(not s >= 0 for s in c.stds):
                raise ValueError(f"class {c.label!r}: every stddev must be >= 0")
            if c.n is not None and c.n < 1:
                raise ValueError(f"class {c.label!r}: n must be >= 1")
        if self.feature_names is not None and len(self.feature_names) != d:
            raise ValueError("feature_names length does not match the feature count")

    @property
    def n_features(self) -> int:
        return len(self.classes[0].means)

    def to_dict(self) -> dict:
        return {
            "n_per_class": self.n_per_class,
            "seed": self.seed,
            "feature_names": list(self.feature_names) if self.feature_names else None,
            "classes": [
                {"label": c.label, "means": list(c.means), "stds": list(c.stds), "n": c.n}
                for c in self.classes
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticSpec":
        classes = tuple(
            ClassSpec(c["label"], tuple(c["means"]), tuple(c["stds"]), c.get("n")) for c in d["classes"]
        )
        names = d.get("feature_names")
        return cls(classes, int(d["n_per_class"]), int(d["seed"]), tuple(names) if names else None)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    names = list(spec.feature_names or [f"feat_{i:02d}" for i in range(spec.n_features)])
    blocks, labels = [], []
    for c in spec.classes:
        n = c.n or spec.n_per_class
        blocks.append(rng.normal(c.means, c.stds, size=(n, spec.n_features)))
        labels.extend([c.label] * n)
    X = pd.DataFrame(np.vstack(blocks), columns=names)
    return Dataset(X, labels, {"synthetic_seed": spec.seed})
