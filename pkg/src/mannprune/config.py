"""Run configuration: one JSON document with network/train/prune/data/eval sections."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import jsonschema

from .errors import ConfigError

_num = {"type": "number"}
_int = {"type": "integer"}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "mannprune run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "network": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "h_size": {"type": "integer", "minimum": 1},
                "n_experts": {"type": "integer", "minimum": 1},
                "g_hidden": {"type": "integer", "minimum": 1},
                "dropout_retention": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "gating_indices": {"type": "array", "items": _int},
            },
        },
        "train": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "epochs": {"type": "integer", "minimum": 0},
                "batch_size": {"type": "integer", "minimum": 1},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "weight_decay": {"type": "number", "minimum": 0},
                "beta1": _num, "beta2": _num,
                "eps": {"type": "number", "exclusiveMinimum": 0},
                "restart_period": {"type": "number", "exclusiveMinimum": 0},
                "restart_mult": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "prune": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "target_sparsity": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "scope": {"enum": ["global", "local"]},
                "schedule": {"enum": ["one_shot", "one_cycle"]},
                "ramp_end": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "mask_update_interval": {"type": "integer", "minimum": 1},
                "include_biases": {"type": "boolean"},
                "include_gating": {"type": "boolean"},
            },
        },
        "data": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "gaits": {"type": "array", "items": {"enum": ["walk", "trot", "gallop", "turn", "idle"]}},
                "variants": {"type": "integer", "minimum": 1},
                "duration": {"type": "number", "exclusiveMinimum": 0},
                "n_joints": {"type": "integer", "minimum": 18},
                "rotations": {"type": "boolean"},
                "noise": {"type": "number", "minimum": 0},
                "val_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "clips": {"type": "array", "items": {"type": "object"}},
            },
        },
        "eval": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "threshold_cm": {"type": "number", "exclusiveMinimum": 0},
                "gaits": {"type": "array", "items": {"enum": ["walk", "trot", "gallop", "turn", "idle"]}},
                "duration": {"type": "number", "exclusiveMinimum": 0},
                "bench_reps": {"type": "integer", "minimum": 100},
                "compare_dense_sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}},
            },
        },
    },
}

# Desk-scale defaults; the train section's paper-recipe values live in TrainConfig.
DEFAULT_CONFIG = {
    "seed": 0,
    "network": {"h_size": 128, "n_experts": 4, "g_hidden": 32, "dropout_retention": 0.7},
    "train": {"epochs": 10, "batch_size": 32, "learning_rate": 1e-3, "weight_decay": 2.5e-3,
              "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "restart_period": 10.0,
              "restart_mult": 2.0},
    "prune": {"enabled": False, "target_sparsity": 0.9, "scope": "global",
              "schedule": "one_cycle", "ramp_end": 0.8, "mask_update_interval": 100,
              "include_biases": False, "include_gating": True},
    "data": {"gaits": ["walk", "trot", "gallop", "turn"], "variants": 7, "duration": 12.0,
             "n_joints": 21, "rotations": False, "noise": 0.2, "val_fraction": 0.1},
    "eval": {"threshold_cm": 2.5, "gaits": ["walk", "turn"], "duration": 4.0,
             "bench_reps": 200, "compare_dense_sizes": [64, 32, 16]},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(doc: dict) -> None:
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(map(str, e.absolute_path)) or "<root>"
        raise ConfigError(f"config invalid at {where}: {e.message}") from None


@dataclass
class RunConfig:
    doc: dict

    @property
    def seed(self) -> int:
        return int(self.doc["seed"])

    def section(self, name: str) -> dict:
        return dict(self.doc[name])

    def train_config(self, **over):
        from .training import TrainConfig

        return TrainConfig(**{**self.doc["train"], "seed": self.seed, **over})

    def prune_config(self, **over):
        from .pruning import PruneConfig

        d = {k: v for k, v in self.doc["prune"].items() if k != "enabled"}
        return PruneConfig(**{**d, **over})

    @property
    def prune_enabled(self) -> bool:
        return bool(self.doc["prune"]["enabled"])

    def schema(self):
        from .data import SkeletonSchema

        d = self.doc["data"]
        return SkeletonSchema.quadruped(n_joints=d["n_joints"], rotations=d["rotations"])

    def network_config(self, schema):
        from .pipeline import network_config_for

        return network_config_for(schema, **self.doc["network"])

    def to_json(self) -> str:
        return json.dumps(self.doc, indent=2, sort_keys=True)


def load_config(path: Optional[str] = None, seed: Optional[int] = None,
                overrides: Optional[dict] = None) -> RunConfig:
    """Merge a JSON file and overrides over the defaults, then validate."""
    user = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
    validate(user)
    doc = _merge(DEFAULT_CONFIG, user)
    if overrides:
        doc = _merge(doc, overrides)
    if seed is not None:
        doc["seed"] = int(seed)
    validate(doc)
    return RunConfig(doc)
