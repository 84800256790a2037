"""Expert ablation and gating-activation profiling."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, NumericError
from .network import MoENetwork


def ablate_expert(net: MoENetwork, index: int, renormalize: bool = False) -> MoENetwork:
    """View of ``net`` whose gate output for expert ``index`` is forced to 0.

    The view shares parameter arrays with ``net``; nothing is copied or modified.
    """
    K = net.n_experts
    if not 0 <= index < K:
        raise IndexError(f"expert index {index} out of range [0, {K})")
    view = MoENetwork.__new__(MoENetwork)
    view.__dict__.update(net.__dict__)
    mask = np.ones(K, dtype=net.dtype) if net.gate_mask is None else net.gate_mask.copy()
    mask[index] = 0
    view.gate_mask = mask
    view.renormalize = renormalize
    return view


def entropy(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


@dataclass
class ActivationTrace:
    omegas: np.ndarray  # (T, K)
    gait: str
    model: str

    @property
    def mean(self) -> np.ndarray:
        return self.omegas.mean(axis=0)

    @property
    def mean_entropy(self) -> float:
        return entropy(self.mean)

    def summary(self) -> dict:
        return {"gait": self.gait, "model": self.model, "frames": len(self.omegas),
                "mean_omega": self.mean.tolist(), "entropy": self.mean_entropy}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        K = self.omegas.shape[1]
        w.writerow(["frame", *[f"omega_{i}" for i in range(K)], "gait", "model"])
        for t, row in enumerate(self.omegas):
            w.writerow([t, *[repr(float(v)) for v in row], self.gait, self.model])
        return buf.getvalue()


def trace_activations(net: MoENetwork, rollouts: Sequence, model: str = "dense") -> list[ActivationTrace]:
    """One trace per gait-labelled rollout (``Rollout`` objects carry their omegas)."""
    return [ActivationTrace(np.asarray(r.omegas, dtype=np.float64), r.clip.gait, model)
            for r in rollouts]


def _resample(omegas: np.ndarray, n: int) -> np.ndarray:
    if len(omegas) == n:
        return omegas
    src = np.linspace(0.0, 1.0, len(omegas))
    dst = np.linspace(0.0, 1.0, n)
    return np.stack([np.interp(dst, src, omegas[:, k]) for k in range(omegas.shape[1])], 1)


def compare_traces(a: ActivationTrace, b: ActivationTrace) -> dict:
    """Per-expert correlation, mean-omega L1 distance and entropy delta (b minus a).

    A positive entropy delta means ``b`` spreads its weight over experts more evenly.
    """
    if a.gait != b.gait:
        raise ConfigError(f"cannot compare traces of different gaits ({a.gait!r} vs {b.gait!r})")
    if a.omegas.shape[1] != b.omegas.shape[1]:
        raise ConfigError("traces have different expert counts")
    n = max(len(a.omegas), len(b.omegas))
    oa, ob = _resample(a.omegas, n), _resample(b.omegas, n)
    corr = []
    for k in range(oa.shape[1]):
        xa, xb = oa[:, k] - oa[:, k].mean(), ob[:, k] - ob[:, k].mean()
        na, nb = np.linalg.norm(xa), np.linalg.norm(xb)
        if na < 1e-12 and nb < 1e-12:
            # two constant series: identical means => perfectly matching profiles
            corr.append(1.0 if abs(oa[0, k] - ob[0, k]) < 1e-12 else 0.0)
        elif na < 1e-12 or nb < 1e-12:
            corr.append(0.0)
        else:
            corr.append(float(np.dot(xa, xb) / (na * nb)))
    return {
        "gait": a.gait,
        "models": [a.model, b.model],
        "correlation": corr,
        "mean_l1": float(np.abs(a.mean - b.mean).sum()),
        "entropy_a": a.mean_entropy,
        "entropy_b": b.mean_entropy,
        "entropy_delta": b.mean_entropy - a.mean_entropy,
    }


@dataclass
class AblationResult:
    expert: int
    rollout: object
    skating_delta: float
    diverged: bool
    velocity_delta: float

    def summary(self) -> dict:
        return {"expert": self.expert, "skating_delta": self.skating_delta,
                "diverged": self.diverged, "velocity_delta": self.velocity_delta}


def _mean_speed(clip) -> float:
    schema = clip.schema
    vel_cols = [c for cols in schema.joint_columns.values() for c in cols[3:6]]
    v = clip.frames[:, vel_cols].reshape(clip.n_frames, -1, 3)
    return float(np.linalg.norm(v, axis=-1).mean())


def ablation_study(net: MoENetwork, clip, renormalize: bool = False,
                   threshold: float = 2.5, n_steps: Optional[int] = None) -> list[AblationResult]:
    """Deactivate each expert in turn and measure proxies against the full model."""
    from .data import rollout_like
    from .evaluation import foot_skate

    base = rollout_like(net, clip, n_steps)
    base_skate = foot_skate(base.clip, threshold).mean
    base_speed = _mean_speed(base.clip)
    results = []
    for i in range(net.n_experts):
        view = ablate_expert(net, i, renormalize)
        try:
            r = rollout_like(view, clip, n_steps)
            diverged = False
            skate = foot_skate(r.clip, threshold).mean
            speed = _mean_speed(r.clip)
        except NumericError:
            r, diverged, skate, speed = None, True, math.inf, math.nan
        results.append(AblationResult(i, r, skate - base_skate, diverged, speed - base_speed))
    return results
