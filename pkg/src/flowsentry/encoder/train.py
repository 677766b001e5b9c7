"""Training loop, batched inference and a finite-difference gradient check."""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from ..exceptions import TrainingError
from .model import ClassifierHead, FlowEncoder

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 5
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    clip_norm: float | None = 1.0
    class_weights: dict[str, float] | None = None
    shuffle: bool = True
    encoder_lr_scale: float = 1.0

    def __post_init__(self):
        # 0 is allowed: a zero step must leave parameters untouched.
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainReport:
    loss_curve: list[float]
    steps: int
    final_params: dict[str, torch.Tensor] = field(repr=False)


def inverse_frequency_weights(y) -> dict[str, float]:
    counts = Counter(map(str, y))
    n, k = sum(counts.values()), len(counts)
    return {label: n / (k * c) for label, c in sorted(counts.items())}


def _snapshot(model, head) -> dict[str, torch.Tensor]:
    out = {f"encoder.{k}": v.detach().clone() for k, v in model.state_dict().items()}
    out.update({f"head.{k}": v.detach().clone() for k, v in head.state_dict().items()})
    return out


def train(model: FlowEncoder, head: ClassifierHead, ids, mask, y, cfg: TrainConfig) -> TrainReport:
    """Minimise (optionally class-weighted) mean cross-entropy with Adam.

    ``y`` holds integer class indices into ``head.labels``. Shuffling and
    dropout draw from a private RNG seeded with ``cfg.seed``, so runs are
    reproducible and the global torch RNG is left alone.
    """
    ids = torch.as_tensor(ids, dtype=torch.long)
    mask = torch.as_tensor(mask, dtype=torch.bool)
    y = torch.as_tensor(y, dtype=torch.long)
    n = len(y)
    if n == 0:
        raise ValueError("empty training set")
    if int(y.max()) >= head.n_classes or int(y.min()) < 0:
        raise ValueError("labels outside the head's label registry")

    dtype = head.weights[0].dtype
    weight = None
    if cfg.class_weights:
        weight = torch.tensor([float(cfg.class_weights.get(lbl, 1.0)) for lbl in head.labels], dtype=dtype)

    groups = [{"params": list(head.parameters()), "lr": cfg.learning_rate}]
    enc_params = list(model.parameters())
    if enc_params:
        groups.append({"params": enc_params, "lr": cfg.learning_rate * cfg.encoder_lr_scale})
    opt = torch.optim.Adam(groups, lr=cfg.learning_rate, betas=tuple(cfg.betas), eps=cfg.eps)
    all_params = [p for g in groups for p in g["params"]]

    curve: list[float] = []
    step = 0
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        gen = torch.Generator().manual_seed(cfg.seed)
        model.train()
        head.train()
        for epoch in range(cfg.epochs):
            order = torch.randperm(n, generator=gen) if cfg.shuffle else torch.arange(n)
            total = 0.0
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                logits = head(model.embed(ids[idx], mask[idx]))
                loss = F.cross_entropy(logits, y[idx], weight=weight)
                if not torch.isfinite(loss):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}")
                opt.zero_grad(set_to_none=True)
                loss.backward()
                if cfg.clip_norm:
                    torch.nn.utils.clip_grad_norm_(all_params, cfg.clip_norm)
                opt.step()
                step += 1
                total += float(loss.detach()) * len(idx)
            curve.append(total / n)
            logger.debug("epoch %d loss %.6f", epoch, curve[-1])
    model.eval()
    head.eval()
    for name, p in list(model.named_parameters()) + list(head.named_parameters()):
        if not torch.isfinite(p).all():
            raise TrainingError(f"parameter {name} became non-finite")
    return TrainReport(curve, step, _snapshot(model, head))


@torch.no_grad()
def embed(model: FlowEncoder, ids, mask, batch_size: int = 256) -> np.ndarray:
    """CLS embeddings with dropout disabled."""
    was_training = model.training
    model.eval()
    ids = torch.as_tensor(ids, dtype=torch.long)
    mask = torch.as_tensor(mask, dtype=torch.bool)
    out = [model.embed(ids[i:i + batch_size], mask[i:i + batch_size]) for i in range(0, len(ids), batch_size)]
    model.train(was_training)
    if not out:
        return np.zeros((0, model.config.d_model))
    return torch.cat(out).numpy()


@torch.no_grad()
def predict_logits(model, head, ids, mask, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    emb = torch.as_tensor(embed(model, ids, mask, batch_size))
    was_training = head.training
    head.eval()
    logits = head(emb).numpy() if len(emb) else np.zeros((0, head.n_classes))
    head.train(was_training)
    return logits, emb.numpy()


def _tensor_kind(name: str) -> str:
    return re.sub(r"\.\d+\.", ".", name)


def grad_check(model: FlowEncoder, head: ClassifierHead, ids, mask, y, epsilon: float = 1e-3,
               coords_per_kind: int = 50, seed: int = 0, params=None, abs_floor: float | None = None,
               return_details: bool = False):
    """Maximum relative error between autograd and central differences.

    Up to ``coords_per_kind`` coordinates are sampled from every tensor
    kind (parameters sharing a name once layer indices are dropped, e.g.
    ``layers.attn.q.weight``). Numeric derivatives use the fourth-order
    central stencil ``(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h``,
    evaluated in float64 on a copy of the model whatever the model's own
    dtype, so a float32 model is checked against a double reference.

    Relative error is ``|a - n| / max(|a|, |n|, abs_floor)``. The floor only
    matters for gradients that vanish identically (key-projection biases,
    to which attention softmax is invariant), where a pure ratio would
    compare rounding noise with rounding noise. It defaults to 1e-6 for
    float64 models and 1e-4 for float32. Dropout is disabled.
    """
    import copy

    ids = torch.as_tensor(ids, dtype=torch.long)
    mask = torch.as_tensor(mask, dtype=torch.bool)
    y = torch.as_tensor(y, dtype=torch.long)
    model.eval()
    head.eval()
    if abs_floor is None:
        abs_floor = 1e-6 if head.weights[0].dtype == torch.float64 else 1e-4

    named = {f"encoder.{k}": p for k, p in model.named_parameters()}
    named.update({f"head.{k}": p for k, p in head.named_parameters()})
    for p in named.values():
        p.grad = None
    F.cross_entropy(head(model.embed(ids, mask)), y).backward()
    analytic = {k: p.grad.detach().clone() for k, p in named.items()}

    ref_model = copy.deepcopy(model).double()
    ref_head = copy.deepcopy(head).double()
    ref_named = {f"encoder.{k}": p for k, p in ref_model.named_parameters()}
    ref_named.update({f"head.{k}": p for k, p in ref_head.named_parameters()})

    def loss() -> float:
        with torch.no_grad():
            return float(F.cross_entropy(ref_head(ref_model.embed(ids, mask)), y))

    rng = np.random.default_rng(seed)
    kinds: dict[str, list[tuple[str, int]]] = {}
    for name, p in named.items():
        if params is not None and name not in params:
            continue
        kinds.setdefault(_tensor_kind(name), []).extend((name, i) for i in range(p.numel()))

    details: dict[str, float] = {}
    worst = 0.0
    for kind, coords in sorted(kinds.items()):
        pick = rng.choice(len(coords), size=min(coords_per_kind, len(coords)), replace=False)
        kind_err = 0.0
        for j in pick:
            name, i = coords[j]
            flat = ref_named[name].data.view(-1)
            orig = flat[i].item()
            f = {}
            for step in (-2, -1, 1, 2):
                flat[i] = orig + step * epsilon
                f[step] = loss()
            flat[i] = orig
            numeric = (-f[2] + 8 * f[1] - 8 * f[-1] + f[-2]) / (12 * epsilon)
            a = float(analytic[name].view(-1)[i])
            denom = max(abs(a), abs(numeric), abs_floor)
            err = abs(a - numeric) / denom if denom > 0 else 0.0
            kind_err = max(kind_err, err)
        details[kind] = kind_err
        worst = max(worst, kind_err)
    return (worst, details) if return_details else worst
