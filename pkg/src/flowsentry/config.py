"""Run configuration: defaults, file loading (JSON / TOML), dotted-key
overrides, hashing and named seed streams."""

from __future__ import annotations

import copy
import difflib
import hashlib
import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .benchmark import KNOWN, BenchmarkSpec
from .exceptions import ConfigError

_synthetic = BenchmarkSpec().to_dict()
_synthetic["seed"] = None  # None: derive from the root seed

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "data": {
        "source": "synthetic",
        "synthetic": _synthetic,
        "baseline_path": None,
        "chunk_paths": [],
        "label_column": None,
        "benign_label": "Benign",
        "known_attacks": list(KNOWN),
        "train_frac": 0.8,
    },
    "textenc": {
        "bins_per_feature": 32,
        "token_width": 6,
        "salt": "",
        "hash_token_features": [],
        "vocab_size": 500,
        "max_len": 64,
    },
    "encoder": {
        "n_layers": 4,
        "d_model": 64,
        "n_heads": 4,
        "d_ff": 128,
        "dropout": 0.1,
        "dtype": "float32",
    },
    "detector": {
        "learning_rate": 1e-3,
        "batch_size": 32,
        "epochs": 2,
        "class_weight": None,
        "threshold": None,
    },
    "identifier": {
        "learning_rate": 1e-3,
        "batch_size": 32,
        "epochs": 5,
        "class_weight": None,
        "unknown_threshold": None,
        "share_encoder": False,
    },
    "routing": {"forward_frac": 0.05},
    "incremental": {
        "replay_per_class": 200,
        "retrain_epochs": 5,
        "encoder_lr_scale": 0.1,
        "forgetting_budget": 0.05,
        "mode": "warm",
        "min_pool": 100,
        "holdout_frac": 0.2,
    },
    "clustering": {
        "k_min": 2,
        "k_max": 10,
        "subsample_cap": 2000,
        "n_init": 4,
        "tol": 1e-6,
        "max_iter": 200,
    },
    "report": {"max_embeddings": 2000},
}

_CHOICES = {
    "data.source": ("synthetic", "csv"),
    "encoder.dtype": ("float32", "float64"),
    "incremental.mode": ("warm", "scratch"),
}


def _flatten(d: Mapping, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


VALID_KEYS = tuple(sorted(_flatten(DEFAULTS)))


def suggest(key: str) -> str | None:
    match = difflib.get_close_matches(key, VALID_KEYS, n=1, cutoff=0.5)
    return match[0] if match else None


def _unknown(key: str) -> ConfigError:
    hint = suggest(key)
    return ConfigError(f"unknown config key {key!r}" + (f"; did you mean {hint!r}?" if hint else ""))


def _check_type(key: str, value, default):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, list):
        ok = isinstance(value, (list, tuple))
        value = list(value) if ok else value
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {type(value).__name__} ({value!r})")
    if key in _CHOICES and value not in _CHOICES[key]:
        raise ConfigError(f"{key}: must be one of {_CHOICES[key]}, got {value!r}")
    return value


def set_key(cfg: dict, key: str, value) -> None:
    flat_defaults = _flatten(DEFAULTS)
    if key not in flat_defaults:
        raise _unknown(key)
    value = _check_type(key, value, flat_defaults[key])
    node = cfg
    parts = key.split(".")
    for p in parts[:-1]:
        node = node[p]
    node[parts[-1]] = value


def merge(cfg: dict, overrides: Mapping) -> dict:
    out = copy.deepcopy(cfg)
    for key, value in _flatten(overrides).items():
        set_key(out, key, value)
    return out


def parse_override(text: str) -> tuple[str, Any]:
    """``"a.b=value"``; the value is parsed as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def load_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    text = path.read_bytes()
    try:
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib

            return tomllib.loads(text.decode())
        return json.loads(text)
    except Exception as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def resolve(path=None, overrides=(), seed: int | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        cfg = merge(cfg, load_file(path))
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        set_key(cfg, key, value)
    if seed is not None:
        set_key(cfg, "seed", int(seed))
    validate(cfg)
    return cfg


def validate(cfg: Mapping) -> None:
    for key, value in _flatten(cfg).items():
        if key not in _flatten(DEFAULTS):
            raise _unknown(key)
        _check_type(key, value, _flatten(DEFAULTS)[key])
    if not 0 < cfg["data"]["train_frac"] < 1:
        raise ConfigError("data.train_frac must be in (0, 1)")
    if not 0 <= cfg["routing"]["forward_frac"] <= 1:
        raise ConfigError("routing.forward_frac must be in [0, 1]")
    if not 0 < cfg["incremental"]["holdout_frac"] < 1:
        raise ConfigError("incremental.holdout_frac must be in (0, 1)")
    if cfg["clustering"]["k_min"] < 2 or cfg["clustering"]["k_max"] < cfg["clustering"]["k_min"]:
        raise ConfigError("clustering needs 2 <= k_min <= k_max")
    if cfg["data"]["source"] == "csv" and not cfg["data"]["baseline_path"]:
        raise ConfigError("data.source='csv' needs data.baseline_path")
    if cfg["encoder"]["d_model"] % cfg["encoder"]["n_heads"]:
        raise ConfigError("encoder.d_model must be divisible by encoder.n_heads")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: Mapping) -> str:
    return hashlib.blake2b(canonical_json(cfg).encode(), digest_size=8).hexdigest()


def derive_seed(root: int, name: str) -> int:
    """Independent 32-bit seed for the named stream."""
    h = int.from_bytes(hashlib.blake2b(name.encode(), digest_size=8).digest(), "little")
    return int(np.random.SeedSequence([int(root) & 0xFFFFFFFFFFFFFFFF, h]).generate_state(1)[0])
