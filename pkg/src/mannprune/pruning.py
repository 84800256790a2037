"""Unstructured magnitude pruning with one-shot and one-cycle schedules.

Pruned weights are nullified in place and held at zero: their gradients are
masked and their optimizer moments cleared, so the masked set only grows.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .network import (EXPERT_BIASES, EXPERT_WEIGHTS, GATING_BIASES, GATING_WEIGHTS,
                      PARAM_ORDER, MoENetwork)

SCOPES = ("global", "local")
SCHEDULES = ("one_shot", "one_cycle")


@dataclass
class PruneConfig:
    target_sparsity: float = 0.9
    scope: str = "global"
    schedule: str = "one_cycle"
    ramp_end: float = 0.8
    mask_update_interval: int = 100
    include_biases: bool = False
    include_gating: bool = True

    def __post_init__(self):
        if not 0 <= self.target_sparsity < 1:
            raise ConfigError(f"target_sparsity={self.target_sparsity} must be in [0, 1)")
        if self.scope not in SCOPES:
            raise ConfigError(f"scope must be one of {SCOPES}, got {self.scope!r}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if not 0 < self.ramp_end <= 1:
            raise ConfigError(f"ramp_end={self.ramp_end} must be in (0, 1]")
        if self.mask_update_interval < 1:
            raise ConfigError("mask_update_interval must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "PruneConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown prune config keys: {sorted(unknown)}")
        return cls(**d)

    def prunable_names(self) -> tuple[str, ...]:
        names = set(EXPERT_WEIGHTS)
        if self.include_gating:
            names |= set(GATING_WEIGHTS)
        if self.include_biases:
            names |= set(EXPERT_BIASES)
            if self.include_gating:
                names |= set(GATING_BIASES)
        return tuple(n for n in PARAM_ORDER if n in names)


def sparsity_at(progress: float, cfg: PruneConfig) -> float:
    """Target sparsity after ``progress`` (fraction of training) has elapsed."""
    if not 0 <= progress <= 1:
        raise ValueError(f"progress must be in [0, 1], got {progress}")
    s_f = cfg.target_sparsity
    if cfg.schedule == "one_shot":
        return s_f if progress >= 1 else 0.0
    ramp = min(progress / cfg.ramp_end, 1.0)
    return s_f * (1.0 - math.cos(math.pi * ramp)) / 2.0


def compute_masks(net: MoENetwork, sparsity: float, cfg: PruneConfig,
                  prior: Optional[dict[str, np.ndarray]] = None) -> dict[str, np.ndarray]:
    """Keep-masks (True = kept) removing the smallest-|w| prunable weights.

    Global scope ranks all prunable weights together; local scope ranks each
    tensor separately. Ties on |w| go to the lower (tensor, flat index).
    Weights already removed in ``prior`` rank below everything else, which
    keeps the masked set monotone across events.
    """
    if not 0 <= sparsity < 1:
        raise ValueError(f"sparsity must be in [0, 1), got {sparsity}")
    names = cfg.prunable_names()
    if cfg.scope == "global":
        groups = [names]
    else:
        groups = [(n,) for n in names]
    masks = {}
    for group in groups:
        flat = [np.abs(net.params[n]).ravel() for n in group]
        mags = np.concatenate(flat).astype(np.float64)
        if prior is not None:
            pr = np.concatenate([~prior[n].ravel() for n in group])
            mags[pr] = -1.0
        k = int(math.floor(sparsity * mags.size))
        keep = np.ones(mags.size, dtype=bool)
        if k:
            # stable sort => equal magnitudes ordered by concatenation position
            order = np.argsort(mags, kind="stable")
            keep[order[:k]] = False
        offset = 0
        for n, f in zip(group, flat):
            masks[n] = keep[offset:offset + f.size].reshape(net.params[n].shape)
            offset += f.size
    return masks


@dataclass
class MaskEvent:
    step: int
    target: float
    sparsity: float


@dataclass
class PruneState:
    cfg: PruneConfig
    masks: dict[str, np.ndarray]
    step: int = 0
    history: list[MaskEvent] = field(default_factory=list)

    @classmethod
    def for_network(cls, net: MoENetwork, cfg: PruneConfig) -> "PruneState":
        masks = {n: np.ones(net.params[n].shape, dtype=bool) for n in cfg.prunable_names()}
        return cls(cfg, masks)

    @property
    def total(self) -> int:
        return sum(int(m.size) for m in self.masks.values())

    @property
    def n_masked(self) -> int:
        return sum(int(m.size - np.count_nonzero(m)) for m in self.masks.values())

    @property
    def sparsity(self) -> float:
        total = self.total
        return self.n_masked / total if total else 0.0

    def tensor_sparsity(self) -> dict[str, float]:
        return {n: 1.0 - np.count_nonzero(m) / m.size for n, m in self.masks.items()}

    def mask_gradients(self, grads: dict[str, np.ndarray]) -> None:
        for n, m in self.masks.items():
            grads[n] *= m

    def enforce(self, net: MoENetwork) -> None:
        for n, m in self.masks.items():
            net.params[n] *= m

    def report(self) -> dict:
        return {
            "config": asdict(self.cfg),
            "global_sparsity": self.sparsity,
            "total_prunable": self.total,
            "masked": self.n_masked,
            "tensors": self.tensor_sparsity(),
            "events": [asdict(e) for e in self.history],
        }

    def report_json(self) -> str:
        return json.dumps(self.report(), indent=2, sort_keys=True)


def apply_masks(net: MoENetwork, state: PruneState, optimizer=None) -> None:
    """Zero masked weights, and their optimizer moments when ``optimizer`` is given."""
    for n, m in state.masks.items():
        if m.shape != net.params[n].shape:
            raise ShapeError(f"mask for {n} has shape {m.shape}, tensor is {net.params[n].shape}")
        net.params[n] *= m
        if optimizer is not None:
            optimizer.m[n] *= m
            optimizer.v[n] *= m


def prune_to(net: MoENetwork, sparsity: float, cfg: PruneConfig) -> PruneState:
    """One-shot helper: mask ``net`` at ``sparsity`` and return the state."""
    state = PruneState.for_network(net, cfg)
    state.masks = compute_masks(net, sparsity, cfg)
    apply_masks(net, state)
    state.history.append(MaskEvent(0, sparsity, state.sparsity))
    return state


def is_mask_event(step: int, total_steps: int, interval: int) -> bool:
    return step % interval == 0 or step == total_steps


def on_step(state: PruneState, net: MoENetwork, step: int, total_steps: int,
            optimizer=None) -> None:
    """Per-optimizer-step hook for the training loop (``step`` is 1-based)."""
    state.step = step
    if is_mask_event(step, total_steps, state.cfg.mask_update_interval):
        target = sparsity_at(min(step / total_steps, 1.0), state.cfg)
        state.masks = compute_masks(net, target, state.cfg, prior=state.masks)
        apply_masks(net, state, optimizer)
        state.history.append(MaskEvent(step, target, state.sparsity))
    else:
        state.enforce(net)
