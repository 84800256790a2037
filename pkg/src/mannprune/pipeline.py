"""End-to-end helpers shared by the CLI and the acceptance suite."""
from __future__ import annotations

import logging
import math
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from .data import MotionClip, generate_gait, gait_suite, GaitSpec, rollout_like
from .errors import NumericError
from .evaluation import cost_report, foot_skate
from .network import MoENetwork, NetworkConfig, init_network
from .numeric import make_rng
from .pruning import PruneConfig, PruneState
from .training import TrainConfig, TrainReport, train

log = logging.getLogger(__name__)


def network_config_for(schema, h_size=128, n_experts=4, g_hidden=32, dropout_retention=0.7,
                       gating_indices: Optional[Sequence[int]] = None) -> NetworkConfig:
    return NetworkConfig(
        d_in=schema.d_in, d_out=schema.d_out,
        gating_indices=list(gating_indices) if gating_indices else list(schema.gating_columns),
        h_size=h_size, n_experts=n_experts, g_hidden=g_hidden,
        dropout_retention=dropout_retention,
    )


def train_model(dataset, net_cfg: NetworkConfig, train_cfg: TrainConfig,
                prune_cfg: Optional[PruneConfig] = None
                ) -> tuple[MoENetwork, Optional[PruneState], TrainReport]:
    net = init_network(net_cfg, make_rng(train_cfg.seed, 0))
    net.norm = dataset.normalization()
    state = PruneState.for_network(net, prune_cfg) if prune_cfg is not None else None
    report = train(net, dataset, train_cfg, prune=state)
    return net, state, report


def eval_clips(schema, gaits: Sequence[str] = ("walk", "turn"), seed: int = 12345,
               duration: float = 4.0) -> list[MotionClip]:
    """Held-out reference clips whose control signals drive evaluation rollouts."""
    return [generate_gait(GaitSpec.preset(g, duration=duration, seed=seed + i), schema)
            for i, g in enumerate(gaits)]


def rollout_skating(net: MoENetwork, clips: Sequence[MotionClip],
                    threshold: float = 2.5) -> dict:
    per_clip = {}
    for clip in clips:
        try:
            per_clip[clip.clip_id] = foot_skate(rollout_like(net, clip).clip, threshold).mean
        except NumericError as e:
            log.warning("rollout of %s diverged: %s", clip.clip_id, e)
            per_clip[clip.clip_id] = math.inf
    vals = list(per_clip.values())
    return {"mean": float(np.mean(vals)) if vals else math.nan, "clips": per_clip}


def sweep(dataset, clips, net_cfg: NetworkConfig, train_cfg: TrainConfig,
          prune_cfg: PruneConfig, sparsities: Sequence[float], threshold: float = 2.5) -> list[dict]:
    """Train one pruned model per target sparsity; failures are recorded, not raised."""
    rows = []
    for s in sparsities:
        row = {"sparsity": float(s)}
        try:
            pcfg = replace(prune_cfg, target_sparsity=float(s))
            net, state, rep = train_model(dataset, net_cfg, train_cfg, pcfg)
            cost = cost_report(net, state)
            sk = rollout_skating(net, clips, threshold)
            row.update(achieved_sparsity=cost.sparsity, size_Mb=cost.size_mb, MFLOPs=cost.mflops,
                       nonzero=cost.nonzero_params,
                       val_mse=rep.val_loss[-1] if rep.epochs else math.nan,
                       skating=sk["mean"], status="ok")
        except Exception as e:  # noqa: BLE001 - a failed member must not stop the sweep
            log.error("sweep member s=%s failed: %s", s, e)
            row.update(achieved_sparsity=math.nan, size_Mb=math.nan, MFLOPs=math.nan,
                       nonzero=-1, val_mse=math.nan, skating=math.nan, status=f"error: {e}")
        rows.append(row)
    return rows


def desk_dataset(schema, seed: int = 0, variants: int = 7, duration: float = 12.0):
    from .data import build_dataset

    clips = [generate_gait(s, schema) for s in gait_suite(seed, duration, variants)]
    return build_dataset(clips)
