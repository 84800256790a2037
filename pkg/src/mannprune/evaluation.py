"""Foot skating, size/FLOPs accounting, dense-vs-CSR timing, equal-size comparison."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ConfigError, NumericError
from .network import EXPERT_WEIGHTS, PARAM_ORDER, MoENetwork, NetworkConfig
from .numeric import csr_from_dense, make_rng

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD_CM = 2.5
BITS_PER_PARAM = 32


def rows_to_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


# -- foot skating ------------------------------------------------------------

@dataclass
class SkatingReport:
    per_leg: list[float]
    mean: float
    contact_frames: list[int]
    total_frames: int
    threshold_cm: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_rows(self, feet: Sequence[str]) -> list[dict]:
        rows = [{"leg": f, "skating_cm_per_frame": s, "contact_frames": n}
                for f, s, n in zip(feet, self.per_leg, self.contact_frames)]
        rows.append({"leg": "all", "skating_cm_per_frame": self.mean,
                     "contact_frames": sum(self.contact_frames)})
        return rows


def skating_values(h: np.ndarray, v: np.ndarray, threshold: float) -> np.ndarray:
    """Per-frame skating ``v * (2 - 2**(h / H))``; zero where the foot is not in contact.

    ``v`` is a speed: predicted frames may carry negative values in the speed
    columns, which count by magnitude so a wrong sign cannot hide skating.
    """
    h = np.asarray(h, dtype=np.float64)
    v = np.abs(np.asarray(v, dtype=np.float64))
    contact = h < threshold
    return np.where(contact, v * (2.0 - np.exp2(h / threshold)), 0.0)


def foot_skate_arrays(heights: np.ndarray, speeds: np.ndarray,
                      threshold: float = DEFAULT_THRESHOLD_CM) -> SkatingReport:
    """Skating from (T, n_feet) height and horizontal-speed arrays."""
    if threshold <= 0:
        raise ConfigError("threshold must be > 0")
    heights = np.atleast_2d(np.asarray(heights, dtype=np.float64))
    speeds = np.atleast_2d(np.asarray(speeds, dtype=np.float64))
    contact = heights < threshold
    s = skating_values(heights, speeds, threshold)
    counts = contact.sum(axis=0)
    per_leg = [float(s[:, i].sum() / counts[i]) if counts[i] else 0.0
               for i in range(heights.shape[1])]
    return SkatingReport(per_leg, float(np.mean(per_leg)), [int(c) for c in counts],
                         heights.shape[0], float(threshold))


def foot_skate(clip, threshold: float = DEFAULT_THRESHOLD_CM) -> SkatingReport:
    schema = clip.schema
    if not schema.foot_height_columns or not schema.foot_speed_columns:
        raise ConfigError("schema exposes no foot height/speed columns")
    return foot_skate_arrays(clip.foot_heights, clip.foot_speeds, threshold)


# -- cost accounting -----------------------------------------------------------

@dataclass
class CostReport:
    total_params: int
    nonzero_params: int
    prunable_params: int
    prunable_nonzero: int
    sparsity: float  # over the prunable set
    network_sparsity: float  # over all parameters
    size_bits: int
    size_mb: float  # megabits
    size_mbytes: float
    mflops: float
    mflops_prunable: float
    mflops_fixed: float
    blended_forward_mflops: float

    def to_dict(self) -> dict:
        return asdict(self)

    def table_row(self) -> dict:
        return {"sparsity": round(self.sparsity, 6), "size_Mb": self.size_mb,
                "MFLOPs": self.mflops}


def cost_report(net: MoENetwork, state=None) -> CostReport:
    """Exact parameter/size/FLOPs accounting by tensor enumeration.

    Every stored parameter contributes one multiply-accumulate (2 FLOPs) per
    inference: expert entries when they are blended with their coefficient,
    gating entries in the gating matvecs. Masked entries are skipped. The fixed
    part adds 1 FLOP per ELU/softmax element. The matvecs of the blended
    network itself are reported separately in ``blended_forward_mflops``.
    """
    from .pruning import PruneConfig

    cfg = net.config
    if state is not None:
        masks = state.masks
        prunable = sum(int(m.size) for m in masks.values())
    else:
        masks = {}
        prunable = sum(int(net.params[n].size) for n in PruneConfig().prunable_names())
    total = net.param_count()
    masked = sum(int(m.size - np.count_nonzero(m)) for m in masks.values())
    nonzero = total - masked
    prunable_nz = prunable - masked
    fixed_params = total - prunable
    activations = 2 * cfg.h_size + 2 * cfg.g_hidden + 3 * cfg.n_experts
    flops_prunable = 2 * prunable_nz
    flops_fixed = 2 * fixed_params + activations
    blended_forward = 2 * (cfg.h_size * cfg.d_in + cfg.h_size * cfg.h_size
                           + cfg.d_out * cfg.h_size) + 2 * cfg.h_size + cfg.d_out
    bits = BITS_PER_PARAM * nonzero
    return CostReport(
        total_params=total,
        nonzero_params=nonzero,
        prunable_params=prunable,
        prunable_nonzero=prunable_nz,
        sparsity=masked / prunable if prunable else 0.0,
        network_sparsity=masked / total,
        size_bits=bits,
        size_mb=bits / 1e6,
        size_mbytes=bits / 8 / 1e6,
        mflops=(flops_prunable + flops_fixed) / 1e6,
        mflops_prunable=flops_prunable / 1e6,
        mflops_fixed=flops_fixed / 1e6,
        blended_forward_mflops=blended_forward / 1e6,
    )


def count_nonzero(net: MoENetwork) -> int:
    """Independent count of nonzero stored entries."""
    return sum(int(np.count_nonzero(net.params[n])) for n in PARAM_ORDER)


# -- inference benchmark ---------------------------------------------------------

@dataclass
class LayerTiming:
    layer: str
    shape: tuple
    sparsity: float
    nnz: int
    dense_s: float
    csr_s: float
    speedup: float
    max_abs_diff: float


@dataclass
class BenchReport:
    layers: list[LayerTiming] = field(default_factory=list)
    repetitions: int = 0
    timer_resolution_s: float = 0.0
    backend: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        for row in d["layers"]:
            row["shape"] = list(row["shape"])
        return d

    def to_rows(self) -> list[dict]:
        return [{**asdict(t), "shape": "x".join(map(str, t.shape))} for t in self.layers]


def _median_time(fn, reps: int) -> float:
    times = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        times.append(time.perf_counter_ns() - t0)
    return max(statistics.median(times), 1) / 1e9


def bench_matrix(name: str, m: np.ndarray, reps: int = 200, sparsity: float = float("nan"),
                 rng: Optional[np.random.Generator] = None, tol: float = 1e-5) -> LayerTiming:
    """Time dense vs CSR matvec for one (already masked) matrix."""
    from . import kernels

    if reps < 100:
        raise ValueError("reps must be >= 100")
    rng = rng or make_rng(0, 99)
    m = np.ascontiguousarray(m, dtype=np.float32)
    x = rng.standard_normal(m.shape[1]).astype(np.float32)
    csr = csr_from_dense(m)
    dense_out = m @ x
    csr_out = csr.matvec(x)
    diff = float(np.max(np.abs(dense_out - csr_out))) if dense_out.size else 0.0
    if not diff <= tol:
        raise NumericError(f"{name}: dense and CSR outputs differ by {diff:g} (> {tol:g})")
    out = np.empty(m.shape[0], dtype=np.float32)
    offs, cols, vals = csr.row_offsets, csr.col_indices, csr.values
    for _ in range(10):  # warmup
        m @ x
        kernels.csr_matvec(offs, cols, vals, x, out)
    dense_t = _median_time(lambda: m @ x, reps)
    csr_t = _median_time(lambda: kernels.csr_matvec(offs, cols, vals, x, out), reps)
    if math.isnan(sparsity):
        sparsity = 1.0 - csr.nnz / m.size if m.size else 1.0
    return LayerTiming(name, tuple(m.shape), float(sparsity), csr.nnz, dense_t, csr_t,
                       dense_t / csr_t, diff)


def bench_inference(net: MoENetwork, sparsity_list: Sequence[float], reps: int = 200,
                    prune_cfg=None, expert: int = 0) -> BenchReport:
    """Per-layer dense vs CSR matvec timing of one expert, pruned at each sparsity."""
    from . import kernels
    from .pruning import PruneConfig, compute_masks

    prune_cfg = prune_cfg or PruneConfig()
    report = BenchReport(repetitions=reps, timer_resolution_s=time.get_clock_info(
        "perf_counter").resolution, backend=kernels.BACKEND)
    with threadpool_limits(1):
        for s in sparsity_list:
            masks = compute_masks(net, s, prune_cfg) if s > 0 else None
            for name in EXPERT_WEIGHTS:
                w = net.params[name][expert]
                if masks is not None:
                    w = w * masks[name][expert]
                report.layers.append(bench_matrix(f"{name}[{expert}]", w, reps, s))
    return report


# -- equal-parameter comparison --------------------------------------------------

def matched_sparsity(large: NetworkConfig, small: NetworkConfig, prune_cfg) -> float:
    """Prunable-set sparsity that leaves ``large`` with as many nonzeros as dense ``small``."""
    shapes = large.shapes()
    prunable = sum(int(np.prod(shapes[n])) for n in prune_cfg.prunable_names())
    fixed = large.param_count() - prunable
    target_nonzero = small.param_count()
    keep = target_nonzero - fixed
    if keep <= 0 or keep > prunable:
        raise ConfigError(f"dense h_size={small.h_size} cannot be matched by pruning "
                          f"h_size={large.h_size}")
    return (prunable - keep) / prunable


@dataclass
class ComparisonProtocol:
    dense_sizes: list[int]
    large: NetworkConfig
    train: object  # TrainConfig
    prune: object  # PruneConfig (target_sparsity overridden per pair)
    seeds: list[int] = field(default_factory=lambda: [0])
    threshold_cm: float = DEFAULT_THRESHOLD_CM
    tolerance: float = 0.02

    def pairs(self) -> list[tuple[NetworkConfig, float]]:
        out = []
        for h in self.dense_sizes:
            small = NetworkConfig(**{**self.large.to_dict(), "h_size": int(h)})
            out.append((small, matched_sparsity(self.large, small, self.prune)))
        return out

    def validate(self) -> list[tuple[NetworkConfig, float, int, int]]:
        checked = []
        for small, s in self.pairs():
            dense_nz = small.param_count()
            shapes = self.large.shapes()
            prunable = sum(int(np.prod(shapes[n])) for n in self.prune.prunable_names())
            sparse_nz = self.large.param_count() - int(math.floor(s * prunable))
            if abs(sparse_nz - dense_nz) > self.tolerance * dense_nz:
                raise ConfigError(f"pair h={small.h_size}: nonzeros {sparse_nz} vs {dense_nz} "
                                  f"differ by more than {self.tolerance:.0%}")
            checked.append((small, s, dense_nz, sparse_nz))
        return checked


def compare_equal_params(protocol: ComparisonProtocol, dataset, eval_clips,
                         warn_on_order: bool = True) -> list[dict]:
    """Train dense small models and pruned large models under one epoch budget.

    Returns one row per (pair, model kind, seed).
    """
    import warnings

    from .data import rollout_like
    from .network import init_network
    from .pruning import PruneState
    from .training import train

    checked = protocol.validate()
    rows = []
    for small, s, dense_nz, sparse_nz in checked:
        for seed in protocol.seeds:
            tcfg = replace(protocol.train, seed=seed)
            results = {}
            for kind in ("dense", "sparse"):
                cfg = small if kind == "dense" else protocol.large
                net = init_network(cfg, make_rng(seed, 0))
                net.norm = dataset.normalization()
                state = None
                if kind == "sparse":
                    pcfg = replace(protocol.prune, target_sparsity=s)
                    state = PruneState.for_network(net, pcfg)
                rep = train(net, dataset, tcfg, prune=state)
                skating = _rollout_skating(net, eval_clips, protocol.threshold_cm, rollout_like)
                cost = cost_report(net, state)
                results[kind] = skating
                rows.append({
                    "pair_h": small.h_size, "kind": kind, "seed": seed,
                    "h_size": cfg.h_size, "n_experts": cfg.n_experts,
                    "sparsity": round(cost.sparsity, 6), "nonzero": cost.nonzero_params,
                    "val_mse": rep.val_loss[-1] if rep.epochs else float("nan"),
                    "skating": skating,
                })
            if warn_on_order and not results["sparse"] <= results["dense"]:
                msg = (f"h={small.h_size} seed={seed}: sparse skating {results['sparse']:.4f} "
                       f"> dense {results['dense']:.4f}")
                log.warning(msg)
                warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return rows


def _rollout_skating(net, clips, threshold, rollout_like) -> float:
    vals = []
    for clip in clips:
        try:
            vals.append(foot_skate(rollout_like(net, clip).clip, threshold).mean)
        except NumericError:
            vals.append(float("inf"))
    return float(np.mean(vals)) if vals else float("nan")


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=float)
