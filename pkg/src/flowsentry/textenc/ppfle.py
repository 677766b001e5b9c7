"""Privacy-preserving fixed-length text rendering of flow records.

Every feature becomes exactly one ``token_width``-character token:

* numeric features -> ``f<index>b<bin>`` with zero-padded index and bin,
  using equal-width bins over training min/max (out-of-range values clamp
  into the edge bins);
* features listed in ``hash_token_features`` -> the first ``token_width``
  hex characters of a keyed BLAKE2b digest of the value.

Tokens are joined by single spaces, so for a fixed schema every encoded
string has the same length.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping

from ..exceptions import DataError
from ..flowdata import Dataset, FlowRecord

logger = logging.getLogger(__name__)

HASH_ALGORITHM = "blake2b-128-keyed"


@dataclass(frozen=True)
class PpfleConfig:
    bins_per_feature: int = 32
    token_width: int = 6
    salt: bytes = b""
    hash_token_features: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "hash_token_features", frozenset(self.hash_token_features))
        if isinstance(self.salt, str):
            object.__setattr__(self, "salt", bytes.fromhex(self.salt))
        if self.bins_per_feature < 2:
            raise ValueError("bins_per_feature must be >= 2")
        if self.token_width < 2:
            raise ValueError("token_width must be >= 2")
        if len(self.salt) > 64:
            raise ValueError("salt may be at most 64 bytes")

    @property
    def index_digits(self) -> int:
        return (self.token_width - 2) // 2

    @property
    def bin_digits(self) -> int:
        return self.token_width - 2 - self.index_digits

    def check_schema(self, n_features: int) -> None:
        if len(str(max(n_features - 1, 0))) > self.index_digits:
            raise ValueError(f"token_width={self.token_width} cannot index {n_features} features")
        if len(str(self.bins_per_feature - 1)) > self.bin_digits:
            raise ValueError(f"token_width={self.token_width} cannot hold {self.bins_per_feature} bins")

    def to_dict(self) -> dict:
        return {
            "bins_per_feature": self.bins_per_feature,
            "token_width": self.token_width,
            "salt": self.salt.hex(),
            "hash_token_features": sorted(self.hash_token_features),
            "hash_algorithm": HASH_ALGORITHM,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PpfleConfig":
        algo = d.get("hash_algorithm", HASH_ALGORITHM)
        if algo != HASH_ALGORITHM:
            raise ValueError(f"unsupported hash algorithm {algo!r}")
        return cls(int(d["bins_per_feature"]), int(d["token_width"]), bytes.fromhex(d["salt"]),
                   frozenset(d["hash_token_features"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def fit_stats(ds: Dataset, cfg: PpfleConfig) -> dict[str, tuple[float, float]]:
    """Per-feature (min, max) for every numeric, non-hashed feature."""
    stats = {}
    for name in ds.schema:
        if name in cfg.hash_token_features:
            continue
        if name not in ds.numeric_features:
            raise DataError(f"categorical feature {name!r} must be listed in hash_token_features")
        col = ds.X[name].to_numpy()
        stats[name] = (float(col.min()), float(col.max()))
    return stats


def hash_token(value, cfg: PpfleConfig) -> str:
    text = value if isinstance(value, str) else repr(float(value))
    digest = hashlib.blake2b(text.encode("utf-8"), key=cfg.salt, digest_size=16).hexdigest()
    return digest[: cfg.token_width]


def value_bin(value: float, lo: float, hi: float, bins: int) -> int:
    if not hi > lo:
        return 0
    b = math.floor((float(value) - lo) / (hi - lo) * bins)
    return min(max(b, 0), bins - 1)


def ppfle_encode(rec: FlowRecord, cfg: PpfleConfig, stats: Mapping[str, tuple[float, float]]) -> str:
    cfg.check_schema(len(rec.features))
    tokens = []
    for i, (name, value) in enumerate(rec.features):
        if name in cfg.hash_token_features:
            tokens.append(hash_token(value, cfg))
            continue
        if name not in stats:
            raise DataError(f"feature {name!r} missing from stats")
        lo, hi = stats[name]
        b = value_bin(value, lo, hi, cfg.bins_per_feature)
        tokens.append(f"f{i:0{cfg.index_digits}d}b{b:0{cfg.bin_digits}d}")
    return " ".join(tokens)


def encode_dataset(ds: Dataset, cfg: PpfleConfig, stats: Mapping[str, tuple[float, float]]) -> list[str]:
    """Vectorised :func:`ppfle_encode` over a whole dataset."""
    cfg.check_schema(len(ds.schema))
    columns = []
    for i, name in enumerate(ds.schema):
        col = ds.X[name].to_numpy()
        if name in cfg.hash_token_features:
            cache: dict = {}
            columns.append([cache.setdefault(v, hash_token(v, cfg)) for v in col])
            continue
        if name not in stats:
            raise DataError(f"feature {name!r} missing from stats")
        lo, hi = stats[name]
        prefix = f"f{i:0{cfg.index_digits}d}b"
        columns.append([f"{prefix}{value_bin(v, lo, hi, cfg.bins_per_feature):0{cfg.bin_digits}d}" for v in col])
    return [" ".join(row) for row in zip(*columns)]


def check_hash_collisions(ds: Dataset, cfg: PpfleConfig, limit: int = 10_000) -> list[tuple[str, list]]:
    """Log (never raise) hashed tokens shared by distinct observed values."""
    collisions = []
    for name in sorted(cfg.hash_token_features & set(ds.schema)):
        seen: dict[str, object] = {}
        clashing: dict[str, set] = {}
        for v in list(dict.fromkeys(ds.X[name].tolist()))[:limit]:
            tok = hash_token(v, cfg)
            if tok in seen and seen[tok] != v:
                clashing.setdefault(tok, {seen[tok]}).add(v)
            seen.setdefault(tok, v)
        for tok, values in clashing.items():
            logger.warning("hash collision in %r: token %s shared by %d values", name, tok, len(values))
            collisions.append((name, sorted(map(str, values))))
    return collisions
