"""Mixture-of-experts motion network.

A small gating MLP maps a subset of the input frame to softmax blend
coefficients ``omega``. Those coefficients blend K expert parameter sets into
one three-layer ELU regression network, which predicts the next frame.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .numeric import PARAM_DTYPE, elu, softmax

EXPERT_WEIGHTS = ("W0", "W1", "W2")
EXPERT_BIASES = ("b0", "b1", "b2")
GATING_WEIGHTS = ("G0", "G1", "G2")
GATING_BIASES = ("c0", "c1", "c2")
# Fixed tensor order; used for serialization and pruning tie-breaks.
PARAM_ORDER = ("W0", "W1", "W2", "b0", "b1", "b2", "G0", "c0", "G1", "c1", "G2", "c2")
WEIGHT_NAMES = EXPERT_WEIGHTS + GATING_WEIGHTS


@dataclass
class NetworkConfig:
    d_in: int
    d_out: int
    gating_indices: list[int] = field(default_factory=list)
    h_size: int = 512
    n_experts: int = 8
    g_hidden: int = 32
    dropout_retention: float = 0.7

    def __post_init__(self):
        self.gating_indices = [int(i) for i in self.gating_indices]
        self.validate()

    def validate(self) -> None:
        problems = []
        for name in ("d_in", "d_out", "h_size", "n_experts", "g_hidden"):
            if int(getattr(self, name)) < 1:
                problems.append(f"{name}={getattr(self, name)} must be >= 1")
        if not self.gating_indices:
            problems.append("gating_indices must not be empty")
        bad = [i for i in self.gating_indices if not 0 <= i < self.d_in]
        if bad:
            problems.append(f"gating_indices {bad} outside [0, {self.d_in})")
        if not 0 < self.dropout_retention <= 1:
            problems.append(f"dropout_retention={self.dropout_retention} must be in (0, 1]")
        if problems:
            raise ConfigError("invalid NetworkConfig: " + "; ".join(problems))

    @property
    def n_gate_in(self) -> int:
        return len(self.gating_indices)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        K, h, g = self.n_experts, self.h_size, self.g_hidden
        return {
            "W0": (K, h, self.d_in),
            "W1": (K, h, h),
            "W2": (K, self.d_out, h),
            "b0": (K, h),
            "b1": (K, h),
            "b2": (K, self.d_out),
            "G0": (g, self.n_gate_in),
            "c0": (g,),
            "G1": (g, g),
            "c1": (g,),
            "G2": (K, g),
            "c2": (K,),
        }

    def param_count(self) -> int:
        K, h, g = self.n_experts, self.h_size, self.g_hidden
        experts = K * (h * self.d_in + h * h + self.d_out * h + 2 * h + self.d_out)
        gating = g * self.n_gate_in + g + g * g + g + K * g + K
        return experts + gating

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Normalization:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    STD_FLOOR = 1e-6

    def __post_init__(self):
        self.x_mean = np.asarray(self.x_mean, dtype=PARAM_DTYPE)
        self.y_mean = np.asarray(self.y_mean, dtype=PARAM_DTYPE)
        self.x_std = np.maximum(np.asarray(self.x_std, dtype=PARAM_DTYPE), self.STD_FLOOR)
        self.y_std = np.maximum(np.asarray(self.y_std, dtype=PARAM_DTYPE), self.STD_FLOOR)

    @classmethod
    def identity(cls, d_in: int, d_out: int) -> "Normalization":
        return cls(np.zeros(d_in), np.ones(d_in), np.zeros(d_out), np.ones(d_out))

    def normalize_x(self, x):
        return (x - self.x_mean) / self.x_std

    def normalize_y(self, y):
        return (y - self.y_mean) / self.y_std

    def denormalize_y(self, y):
        return y * self.y_std + self.y_mean


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


class MoENetwork:
    """Gating network + expert bank + blended three-layer regression network.

    ``params`` maps the names in ``PARAM_ORDER`` to arrays; expert tensors are
    stacked along a leading expert axis.

    ``gate_mask``/``renormalize`` are only set on ablation views (see
    :func:`mannprune.analysis.ablate_expert`); such views share ``params``.
    """

    def __init__(self, config: NetworkConfig, params: dict[str, np.ndarray],
                 norm: Optional[Normalization] = None):
        self.config = config
        shapes = config.shapes()
        missing = set(shapes) - set(params)
        if missing:
            raise ShapeError(f"missing parameter tensors: {sorted(missing)}")
        for name, shape in shapes.items():
            if tuple(params[name].shape) != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {params[name].shape}")
        self.params = {name: params[name] for name in PARAM_ORDER}
        self.norm = norm or Normalization.identity(config.d_in, config.d_out)
        self.gate_mask: Optional[np.ndarray] = None
        self.renormalize = False

    @property
    def dtype(self):
        return self.params["W0"].dtype

    @property
    def n_experts(self) -> int:
        return self.config.n_experts

    def copy(self) -> "MoENetwork":
        net = MoENetwork(self.config, {k: v.copy() for k, v in self.params.items()},
                         copy.deepcopy(self.norm))
        net.gate_mask = None if self.gate_mask is None else self.gate_mask.copy()
        net.renormalize = self.renormalize
        return net

    def astype(self, dtype) -> "MoENetwork":
        net = MoENetwork(self.config, {k: v.astype(dtype) for k, v in self.params.items()},
                         copy.deepcopy(self.norm))
        net.gate_mask = self.gate_mask
        net.renormalize = self.renormalize
        return net

    def param_count(self) -> int:
        return sum(int(v.size) for v in self.params.values())

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name in PARAM_ORDER:
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        return h.hexdigest()

    # -- forward pieces -------------------------------------------------

    def _check_frames(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.config.d_in:
            raise ShapeError(f"expected frames of length {self.config.d_in}, got shape {x.shape}")
        return x

    def gate(self, frame_features: np.ndarray) -> np.ndarray:
        """Blend coefficients for one frame (or a batch of frames)."""
        x = np.asarray(frame_features)
        single = x.ndim == 1
        out = self.forward(x, mode="eval")[1]["omega"]
        return out[0] if single else out

    def blend(self, omega: np.ndarray) -> dict[str, np.ndarray]:
        return blend(self.params, omega)

    def predict(self, frame_features: np.ndarray, mode: str = "eval",
                rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Next-frame prediction in normalized output space.

        Input must already be normalized. ``mode="train"`` applies inverted
        dropout to every layer input and requires ``rng``.
        """
        x = np.asarray(frame_features)
        y = self.forward(x, mode=mode, rng=rng)[0]
        return y[0] if x.ndim == 1 else y

    def forward(self, x: np.ndarray, mode: str = "eval",
                rng: Optional[np.random.Generator] = None) -> tuple[np.ndarray, dict]:
        """Batched forward pass; returns the output and a cache for backprop."""
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        x = self._check_frames(x)
        p = self.params
        keep = self.config.dropout_retention
        drop = mode == "train" and keep < 1.0
        if drop and rng is None:
            raise ValueError("train mode with dropout needs an rng")
        cache: dict = {"x": x, "drop": {}}

        def dropout(name, a):
            if not drop:
                return a
            m = (rng.random(a.shape) < keep).astype(a.dtype) / a.dtype.type(keep)
            cache["drop"][name] = m
            return a * m

        # gating network
        g_in = dropout("g0", x[:, self.config.gating_indices])
        gz0 = elu(g_in @ p["G0"].T + p["c0"])
        gz0_in = dropout("g1", gz0)
        gz1 = elu(gz0_in @ p["G1"].T + p["c1"])
        gz1_in = dropout("g2", gz1)
        logits = gz1_in @ p["G2"].T + p["c2"]
        omega = softmax(logits, axis=1)
        if self.gate_mask is not None:
            omega = omega * self.gate_mask
            if self.renormalize:
                omega = omega / np.sum(omega, axis=1, keepdims=True)
        cache.update(g_in=g_in, gz0=gz0, gz0_in=gz0_in, gz1=gz1, gz1_in=gz1_in, omega=omega)

        # blended prediction network: sum_k omega_k (W_k a + b_k)
        a = dropout("p0", x)
        cache["a0"] = a
        for layer in range(3):
            W, b = p[f"W{layer}"], p[f"b{layer}"]
            expert_out = np.tensordot(a, W, axes=([1], [2])) + b[None]  # (B, K, out)
            z = np.einsum("bk,bko->bo", omega, expert_out)
            cache[f"e{layer}"] = expert_out
            if layer < 2:
                z = elu(z)
                cache[f"z{layer}"] = z
                a = dropout(f"p{layer + 1}", z)
                cache[f"a{layer + 1}"] = a
            if not np.all(np.isfinite(z)):
                raise NumericError(f"non-finite activations in prediction layer {layer}")
        return z, cache


def blend(params: dict[str, np.ndarray], omega: np.ndarray) -> dict[str, np.ndarray]:
    """Convex combination of expert tensors: ``sum_i omega_i * expert_i``."""
    omega = np.asarray(omega)
    K = params["W0"].shape[0]
    if omega.shape != (K,):
        raise ShapeError(f"omega must have shape ({K},), got {omega.shape}")
    out = {}
    for name in EXPERT_WEIGHTS + EXPERT_BIASES:
        t = params[name]
        out[name] = np.tensordot(omega.astype(t.dtype), t, axes=(0, 0))
    return out


def predict_with_blended(blended: dict[str, np.ndarray], x: np.ndarray) -> np.ndarray:
    """Run the three-layer regression network on already-blended parameters."""
    h0 = elu(blended["W0"] @ x + blended["b0"])
    h1 = elu(blended["W1"] @ h0 + blended["b1"])
    return blended["W2"] @ h1 + blended["b2"]


def init_network(config: NetworkConfig, rng: np.random.Generator,
                 dtype=PARAM_DTYPE) -> MoENetwork:
    """Glorot-uniform weights per matrix, zero biases."""
    config.validate()
    params = {}
    for name, shape in config.shapes().items():
        if name in WEIGHT_NAMES:
            fan_out, fan_in = shape[-2], shape[-1]
            bound = glorot_bound(fan_in, fan_out)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return MoENetwork(config, params)
