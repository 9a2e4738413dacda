"""Run configuration: JSON file, ``PF_`` environment overrides and ``--set key=value``."""
from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path
from typing import Any, Mapping

from salesfc.features import FeatureSpec
from salesfc.panel import SplitSpec

ENV_PREFIX = "PF_"

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "jobs": 1,
    "paths": {
        "data_dir": "data",
        "cache_dir": "cache",
        "output_dir": "output",
        "labels": None,
    },
    "features": FeatureSpec().to_dict(),
    "split": {"train_start": 0, "train_end": 32, "validation_block": 33, "test_block": 34},
    "gbt": {
        "eta": 0.148,
        "max_depth": 6,
        "min_child_weight": 26,
        "lambda": 0.171,
        "alpha": 0.170,
        "n_rounds": 100,
        "gamma": 0.0,
    },
    "arima": {"order": [1, 1, 1], "min_nonzero": 3},
    "seqnet": {
        "hidden_lstm": 32,
        "hidden_static": 16,
        "hidden_merge": 32,
        "l2_lambda": 0.001,
        "batch_size": 512,
        "epochs": 5,
        "learning_rate": 0.001,
        "window": 12,
        "max_train_samples": None,
    },
    "tune": {
        "n_samples": 60,
        "space": {
            "eta": {"low": 0.01, "high": 0.3},
            "max_depth": {"low": 3, "high": 10, "integer": True},
            "min_child_weight": {"low": 1, "high": 50},
            "lambda": {"low": 0.0, "high": 1.0},
            "alpha": {"low": 0.0, "high": 1.0},
            "n_rounds": 200,
        },
    },
}


def derive_seed(seed: int, component: str) -> int:
    """Stable per-component seed from the global seed."""
    digest = hashlib.sha256(f"{int(seed)}:{component}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def _merge(base: dict, override: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict) and k not in ("space",):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_path(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ValueError(f"cannot set '{dotted}': '{k}' is not a section")
    node[keys[-1]] = value


def env_overrides(environ: Mapping[str, str] | None = None) -> list[tuple[str, Any]]:
    """``PF_GBT__ETA=0.1`` -> ``("gbt.eta", 0.1)``."""
    environ = os.environ if environ is None else environ
    out = []
    for name, raw in sorted(environ.items()):
        if name.startswith(ENV_PREFIX) and len(name) > len(ENV_PREFIX):
            out.append((name[len(ENV_PREFIX):].lower().replace("__", "."), parse_value(raw)))
    return out


def load_config(path=None, sets=(), environ=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        cfg = _merge(cfg, json.loads(Path(path).read_text()))
    for key, value in env_overrides(environ):
        set_path(cfg, key, value)
    for item in sets:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        set_path(cfg, key.strip(), parse_value(raw))
    return cfg


def feature_spec(cfg: dict) -> FeatureSpec:
    return FeatureSpec.from_dict(cfg["features"])


def split_spec(cfg: dict) -> SplitSpec:
    s = cfg["split"]
    return SplitSpec(
        range(int(s.get("train_start", 0)), int(s["train_end"]) + 1),
        int(s["validation_block"]),
        int(s["test_block"]),
    )
