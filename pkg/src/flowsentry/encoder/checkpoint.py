"""Versioned single-file checkpoints: encoder config + named tensors + head."""

from __future__ import annotations

from pathlib import Path

import torch

from ..exceptions import CheckpointError
from .model import ClassifierHead, EncoderConfig, FlowEncoder

MAGIC = "flowsentry-checkpoint"
VERSION = 1


def save_checkpoint(path, model: FlowEncoder, head: ClassifierHead | None = None, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "magic": MAGIC,
        "version": VERSION,
        "config": model.config.to_dict(),
        "dtype": str(next(model.parameters()).dtype).replace("torch.", ""),
        "tensors": {k: v.detach().cpu() for k, v in model.state_dict().items()},
        "head": None,
        "extra": extra or {},
    }
    if head is not None:
        payload["head"] = {
            "labels": list(head.labels),
            "blocks": head.block_sizes(),
            "tensors": {k: v.detach().cpu() for k, v in head.state_dict().items()},
        }
    torch.save(payload, path)
    return path


def load_checkpoint(path, expected_config: EncoderConfig | dict | None = None):
    """Returns ``(model, head_or_None, extra)``.

    Raises :class:`CheckpointError` for unknown files/versions or when
    ``expected_config`` differs from the stored config.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # corrupt or foreign file
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("magic") != MAGIC:
        raise CheckpointError(f"{path} is not a flowsentry checkpoint")
    if payload.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')}")
    cfg = EncoderConfig.from_dict(payload["config"])
    if expected_config is not None:
        expected = expected_config.to_dict() if isinstance(expected_config, EncoderConfig) else dict(expected_config)
        if expected != cfg.to_dict():
            diff = sorted(k for k in expected if expected.get(k) != cfg.to_dict().get(k))
            raise CheckpointError(f"checkpoint config mismatch on {diff}")
    dtype = getattr(torch, payload.get("dtype", "float32"))
    model = FlowEncoder(cfg).to(dtype)
    model.load_state_dict(payload["tensors"])
    model.eval()
    head = None
    if payload["head"] is not None:
        h = payload["head"]
        head = ClassifierHead(cfg.d_model, [])
        labels = list(h["labels"])
        start = 0
        for size in h["blocks"]:
            head._append(labels[start:start + size], "zeros", dtype)
            start += size
        head.load_state_dict(h["tensors"])
        head.eval()
    return model, head, payload.get("extra", {})
