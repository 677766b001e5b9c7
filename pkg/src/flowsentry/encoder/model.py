"""BERT-shaped transformer encoder over token-id sequences, and an
append-only linear classification head."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    max_len: int
    n_layers: int = 4
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 128
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if min(self.vocab_size, self.max_len, self.n_layers, self.d_model, self.d_ff) < 1:
            raise ValueError("sizes must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "EncoderConfig":
        return cls(**d)


def softmax(logits, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax (max-subtracted)."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.o = nn.Linear(d_model, d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mask):
        B, L, _ = x.shape

        def heads(t):
            return t.view(B, L, self.n_heads, self.d_head).transpose(1, 2)

        q, k, v = heads(self.q(x)), heads(self.k(x)), heads(self.v(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        ctx = self.drop(attn) @ v
        return self.o(ctx.transpose(1, 2).reshape(B, L, -1)), attn


class EncoderLayer(nn.Module):
    """Post-norm block: LN(x + attn(x)), then LN(x + ffn(x))."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.attn = SelfAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.ff1 = nn.Linear(cfg.d_model, cfg.d_ff)
        self.ff2 = nn.Linear(cfg.d_ff, cfg.d_model)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, mask):
        a, attn = self.attn(x, mask)
        x = self.ln1(x + self.drop(a))
        x = self.ln2(x + self.drop(self.ff2(F.gelu(self.ff1(x)))))
        return x, attn


class FlowEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.config = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos_emb = nn.Embedding(cfg.max_len, cfg.d_model)
        self.emb_ln = nn.LayerNorm(cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_layers))
        self.reset_parameters()

    def reset_parameters(self):
        bound = math.sqrt(3.0 / self.config.d_model)
        nn.init.uniform_(self.tok_emb.weight, -bound, bound)
        nn.init.uniform_(self.pos_emb.weight, -bound, bound)
        for m in self.modules():
            if isinstance(m, nn.Linear):
                nn.init.xavier_uniform_(m.weight)
                nn.init.zeros_(m.bias)

    def forward(self, ids, mask=None, return_attention: bool = False):
        """Hidden states ``(B, L, d_model)`` (and per-layer attention maps)."""
        if ids.dtype not in (torch.int32, torch.int64):
            raise TypeError("token ids must be integer")
        if ids.numel() and (int(ids.max()) >= self.config.vocab_size or int(ids.min()) < 0):
            raise ValueError(f"token id out of range [0, {self.config.vocab_size})")
        if ids.shape[1] > self.config.max_len:
            raise ValueError(f"sequence length {ids.shape[1]} exceeds max_len={self.config.max_len}")
        if mask is None:
            mask = torch.ones_like(ids, dtype=torch.bool)
        mask = mask.bool()
        pos = torch.arange(ids.shape[1], device=ids.device)
        x = self.drop(self.emb_ln(self.tok_emb(ids) + self.pos_emb(pos)[None]))
        maps = []
        for layer in self.layers:
            x, attn = layer(x, mask)
            maps.append(attn)
        return (x, maps) if return_attention else x

    def embed(self, ids, mask=None):
        """CLS-position vector of the final layer."""
        return self(ids, mask)[:, 0]


class ClassifierHead(nn.Module):
    """Linear layer over an ordered label list that can only grow.

    Rows are kept in blocks, one per growth step. Each block's logits are
    computed by its own ``F.linear`` call, so appending a block leaves the
    arithmetic for existing classes (and hence their logits) bit-for-bit
    unchanged.
    """

    def __init__(self, d_model: int, labels, init: str = "xavier"):
        super().__init__()
        labels = list(labels)
        if len(set(labels)) != len(labels):
            raise ValueError("head labels must be unique")
        self.d_model = d_model
        self.labels: list[str] = []
        self.weights = nn.ParameterList()
        self.biases = nn.ParameterList()
        if labels:
            self._append(labels, init)

    def _append(self, labels, init, dtype=None):
        if dtype is None:
            dtype = self.weights[0].dtype if len(self.weights) else torch.get_default_dtype()
        w = torch.zeros(len(labels), self.d_model, dtype=dtype)
        if init == "xavier":
            nn.init.xavier_uniform_(w)
        elif init != "zeros":
            raise ValueError(f"unknown init {init!r}")
        self.weights.append(nn.Parameter(w))
        self.biases.append(nn.Parameter(torch.zeros(len(labels), dtype=dtype)))
        self.labels.extend(labels)

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    @property
    def weight(self) -> torch.Tensor:
        return torch.cat(list(self.weights), dim=0)

    @property
    def bias(self) -> torch.Tensor:
        return torch.cat(list(self.biases), dim=0)

    def expand(self, new_labels) -> None:
        """Append zero-initialised rows for ``new_labels`` in place."""
        new_labels = list(new_labels)
        if not new_labels:
            return
        clash = set(new_labels) & set(self.labels)
        if clash or len(set(new_labels)) != len(new_labels):
            raise ValueError(f"duplicate label(s): {sorted(clash) or new_labels}")
        self._append(new_labels, "zeros")

    def block_sizes(self) -> list[int]:
        return [int(w.shape[0]) for w in self.weights]

    def forward(self, emb):
        return torch.cat([F.linear(emb, w, b) for w, b in zip(self.weights, self.biases)], dim=-1)


def forward(model: FlowEncoder, head: ClassifierHead, ids, mask=None):
    """``(logits, embeddings)`` for a batch."""
    emb = model.embed(ids, mask)
    return head(emb), emb
