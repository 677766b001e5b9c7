"""scikit-learn style classifier wrapping the encoder and head."""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .checkpoint import load_checkpoint, save_checkpoint
from .model import ClassifierHead, EncoderConfig, FlowEncoder, softmax
from .train import TrainConfig, inverse_frequency_weights, predict_logits, train
from .train import embed as _embed

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


def build_model(cfg: EncoderConfig, labels, seed: int, dtype: str = "float32"):
    """Seeded construction of an encoder and a fresh head."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = FlowEncoder(cfg)
        head = ClassifierHead(cfg.d_model, labels)
    return model.to(_DTYPES[dtype]), head.to(_DTYPES[dtype])


class TransformerFlowClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Transformer encoder + softmax head over token-id matrices.

    ``X`` is an integer array of shape ``(n_samples, seq_len)`` as produced
    by :class:`~flowsentry.textenc.FlowTextEncoder`; positions equal to
    ``pad_id`` are masked out of attention. ``transform`` returns the
    CLS embeddings.

    Parameters
    ----------
    vocab_size : int, optional
        Token-id space; inferred as ``X.max() + 1`` when omitted.
    pad_id : int, optional
        Padding id. ``None`` means no position is masked.
    labels : sequence of str, optional
        Head row order. Defaults to the sorted unique training labels.
    n_layers, d_model, n_heads, d_ff, dropout
        Encoder shape.
    learning_rate, batch_size, epochs, betas, clip_norm, shuffle
        Optimisation settings (Adam with bias correction).
    class_weight : None, "balanced" or dict
        "balanced" uses inverse class frequency.
    seed : int
        Seeds initialisation, shuffling and dropout.
    dtype : {"float32", "float64"}
    """

    def __init__(self, vocab_size=None, pad_id=None, labels=None, n_layers=4, d_model=64, n_heads=4,
                 d_ff=128, dropout=0.1, learning_rate=1e-3, batch_size=32, epochs=5, betas=(0.9, 0.999),
                 clip_norm=1.0, class_weight=None, shuffle=True, seed=0, dtype="float32"):
        self.vocab_size = vocab_size
        self.pad_id = pad_id
        self.labels = labels
        self.n_layers = n_layers
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_ff = d_ff
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.betas = betas
        self.clip_norm = clip_norm
        self.class_weight = class_weight
        self.shuffle = shuffle
        self.seed = seed
        self.dtype = dtype

    # -- helpers
    def _validate_ids(self, X, reset=False):
        X = check_array(X, dtype=np.int64, ensure_min_samples=0 if not reset else 1)
        if reset:
            self.n_features_in_ = X.shape[1]
        elif X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} positions, expected {self.n_features_in_}")
        return X

    def _mask(self, X):
        if self.pad_id is None:
            return np.ones_like(X, dtype=bool)
        return X != self.pad_id

    def _train_config(self, y_labels, seed=None, **overrides) -> TrainConfig:
        weights = self.class_weight
        if weights == "balanced":
            weights = inverse_frequency_weights(y_labels)
        kw = dict(learning_rate=self.learning_rate, batch_size=self.batch_size, epochs=self.epochs,
                  seed=self.seed if seed is None else seed, betas=tuple(self.betas),
                  clip_norm=self.clip_norm, class_weights=weights, shuffle=self.shuffle)
        kw.update(overrides)
        return TrainConfig(**kw)

    def _encode_labels(self, y):
        index = {c: i for i, c in enumerate(self.classes_)}
        try:
            return np.array([index[str(v)] for v in y], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"label {exc.args[0]!r} is not in the head's label registry") from None

    # -- estimator API
    def fit(self, X, y, init_encoder=None):
        """``init_encoder`` (a fitted encoder module of identical shape)
        warm-starts the encoder weights instead of random initialisation."""
        X = self._validate_ids(X, reset=True)
        y = np.asarray([str(v) for v in y], dtype=object)
        if len(y) != len(X):
            raise ValueError("X and y have different lengths")
        labels = list(self.labels) if self.labels is not None else sorted(set(y))
        if len(labels) < 2:
            raise ValueError("at least two classes are required")
        self.classes_ = np.array(labels, dtype=object)
        y_idx = self._encode_labels(y)
        vocab = self.vocab_size or int(X.max()) + 1
        self.encoder_config_ = EncoderConfig(vocab, X.shape[1], self.n_layers, self.d_model, self.n_heads,
                                             self.d_ff, self.dropout)
        self.model_, self.head_ = build_model(self.encoder_config_, labels, self.seed, self.dtype)
        if init_encoder is not None:
            if init_encoder.config != self.encoder_config_:
                raise ValueError("init_encoder shape does not match this estimator's encoder")
            self.model_.load_state_dict(init_encoder.state_dict())
        self.train_report_ = train(self.model_, self.head_, X, self._mask(X), y_idx, self._train_config(y))
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = self._validate_ids(X)
        logits, _ = predict_logits(self.model_, self.head_, X, self._mask(X))
        return logits

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def transform(self, X) -> np.ndarray:
        """CLS embeddings, shape ``(n_samples, d_model)``."""
        check_is_fitted(self, "model_")
        X = self._validate_ids(X)
        return _embed(self.model_, X, self._mask(X))

    def predict_with_embeddings(self, X):
        check_is_fitted(self, "model_")
        X = self._validate_ids(X)
        logits, emb = predict_logits(self.model_, self.head_, X, self._mask(X))
        return self.classes_[np.argmax(logits, axis=1)], logits, emb

    # -- persistence
    def _checkpoint_extra(self) -> dict:
        params = self.get_params()
        params["betas"] = list(params["betas"])
        params["labels"] = list(self.classes_)
        return {"estimator": type(self).__name__, "params": params, "n_features_in": self.n_features_in_}

    def save(self, path):
        check_is_fitted(self, "model_")
        return save_checkpoint(path, self.model_, self.head_, self._checkpoint_extra())

    @classmethod
    def load(cls, path, expected_config=None):
        model, head, extra = load_checkpoint(path, expected_config)
        params = dict(extra["params"])
        params["betas"] = tuple(params["betas"])
        est = cls(**{k: v for k, v in params.items() if k in cls._get_param_names()})
        est._restore(model, head, extra)
        return est

    def _restore(self, model, head, extra):
        self.model_, self.head_ = model, head
        self.encoder_config_ = model.config
        self.classes_ = np.array(head.labels, dtype=object)
        self.n_features_in_ = extra["n_features_in"]
