"""Flow records -> fixed-length text -> token-id sequences."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..flowdata import Dataset
from .bpe import ByteLevelBPE, train_bpe
from .ppfle import (
    PpfleConfig,
    check_hash_collisions,
    encode_dataset,
    fit_stats,
    ppfle_encode,
)

__all__ = [
    "ByteLevelBPE",
    "EncodedFlow",
    "FlowTextEncoder",
    "PpfleConfig",
    "encode_flow",
    "ppfle_encode",
    "train_bpe",
]


@dataclass(frozen=True)
class EncodedFlow:
    token_ids: tuple[int, ...]
    attention_mask: tuple[int, ...]


def encode_flow(text: str, tok: ByteLevelBPE, max_len: int) -> EncodedFlow:
    """``[CLS] + subwords``, truncated from the tail and padded to ``max_len``."""
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    ids = [tok.cls_id] + tok.encode(text)
    ids = ids[:max_len]
    n = len(ids)
    return EncodedFlow(
        tuple(ids) + (tok.pad_id,) * (max_len - n),
        (1,) * n + (0,) * (max_len - n),
    )


def _as_dataset(X) -> Dataset:
    if isinstance(X, Dataset):
        return X
    if isinstance(X, pd.DataFrame):
        return Dataset(X, ["?"] * len(X))
    raise TypeError(f"expected a Dataset or DataFrame, got {type(X).__name__}")


class FlowTextEncoder(TransformerMixin, BaseEstimator):
    """Learns feature ranges and a BPE vocabulary, then maps flows to
    ``(n_samples, max_len)`` arrays of token ids.

    Parameters
    ----------
    bins_per_feature : int, default=32
    token_width : int, default=6
    salt : str, default=""
        Hex-encoded key for hashed features.
    hash_token_features : tuple of str, default=()
        Features rendered as keyed hashes rather than bins.
    vocab_size : int, default=500
    max_len : int, default=64
        Sequence length including the leading CLS token.

    Attributes
    ----------
    config_ : PpfleConfig
    stats_ : dict of feature -> (min, max)
    tokenizer_ : ByteLevelBPE
    schema_ : tuple of str
    """

    def __init__(self, bins_per_feature=32, token_width=6, salt="", hash_token_features=(),
                 vocab_size=500, max_len=64):
        self.bins_per_feature = bins_per_feature
        self.token_width = token_width
        self.salt = salt
        self.hash_token_features = hash_token_features
        self.vocab_size = vocab_size
        self.max_len = max_len

    def fit(self, X, y=None):
        ds = _as_dataset(X)
        self.config_ = PpfleConfig(self.bins_per_feature, self.token_width, bytes.fromhex(self.salt),
                                   frozenset(self.hash_token_features))
        self.config_.check_schema(len(ds.schema))
        self.schema_ = ds.schema
        self.stats_ = fit_stats(ds, self.config_)
        self.collisions_ = check_hash_collisions(ds, self.config_)
        self.tokenizer_ = train_bpe(encode_dataset(ds, self.config_, self.stats_), self.vocab_size)
        self.n_features_in_ = len(ds.schema)
        return self

    @property
    def pad_id(self) -> int:
        return self.tokenizer_.pad_id

    @property
    def n_tokens(self) -> int:
        """Size of the token-id space a downstream model must embed."""
        return self.tokenizer_.vocab_size

    def to_text(self, X) -> list[str]:
        check_is_fitted(self, "tokenizer_")
        ds = _as_dataset(X)
        if ds.schema != self.schema_:
            raise ValueError("input schema differs from the schema seen in fit")
        return encode_dataset(ds, self.config_, self.stats_)

    def transform(self, X) -> np.ndarray:
        texts = self.to_text(X)
        out = np.full((len(texts), self.max_len), self.tokenizer_.pad_id, dtype=np.int64)
        for i, text in enumerate(texts):
            out[i] = encode_flow(text, self.tokenizer_, self.max_len).token_ids
        return out

    def save(self, directory) -> Path:
        check_is_fitted(self, "tokenizer_")
        directory = Path(directory)
        self.tokenizer_.save(directory / "tokenizer")
        state = {
            "params": self.get_params(),
            "ppfle": self.config_.to_dict(),
            "schema": list(self.schema_),
            "stats": {k: list(v) for k, v in self.stats_.items()},
        }
        state["params"]["hash_token_features"] = list(self.hash_token_features)
        (directory / "ppfle.json").write_text(json.dumps(state, indent=2, sort_keys=True) + "\n")
        return directory

    @classmethod
    def load(cls, directory) -> "FlowTextEncoder":
        directory = Path(directory)
        state = json.loads((directory / "ppfle.json").read_text())
        params = dict(state["params"])
        params["hash_token_features"] = tuple(params["hash_token_features"])
        enc = cls(**params)
        enc.config_ = PpfleConfig.from_dict(state["ppfle"])
        enc.schema_ = tuple(state["schema"])
        enc.stats_ = {k: (float(v[0]), float(v[1])) for k, v in state["stats"].items()}
        enc.tokenizer_ = ByteLevelBPE.load(directory / "tokenizer")
        enc.collisions_ = []
        enc.n_features_in_ = len(enc.schema_)
        return enc
