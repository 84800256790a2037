"""MSE training with analytic backprop and Adam with warm restarts (AdamWR)."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .network import PARAM_ORDER, MoENetwork
from .numeric import elu_grad_from_output, make_rng

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 150
    batch_size: int = 32
    learning_rate: float = 1e-4
    weight_decay: float = 2.5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    restart_period: float = 10.0
    restart_mult: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        for name in ("learning_rate", "restart_period", "restart_mult", "eps"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("adam betas must lie in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def forward_backward(net: MoENetwork, batch_x: np.ndarray, batch_y: np.ndarray,
                     rng: Optional[np.random.Generator] = None, mode: str = "train",
                     batch_index: int = 0) -> tuple[float, dict[str, np.ndarray]]:
    """Mean squared error over batch and output dims, with exact gradients.

    Gradients flow into every expert scaled by its blend coefficient and into
    the gating network through the softmax.
    """
    if net.gate_mask is not None:
        raise ValueError("cannot backpropagate through an ablation view")
    batch_y = np.asarray(batch_y, dtype=net.dtype)
    if batch_y.ndim == 1:
        batch_y = batch_y[None, :]
    y, c = net.forward(batch_x, mode=mode, rng=rng)
    if batch_y.shape != y.shape:
        raise ShapeError(f"targets {batch_y.shape} do not match outputs {y.shape}")
    resid = y - batch_y
    loss = float(np.mean(resid.astype(np.float64) ** 2))
    if not math.isfinite(loss):
        raise NumericError(f"non-finite loss on batch {batch_index}")

    p = net.params
    omega = c["omega"]
    drop = c["drop"]
    grads: dict[str, np.ndarray] = {}
    d_omega = np.zeros_like(omega)
    g = (2.0 / resid.size) * resid  # dL/d(layer-2 pre-activation)
    g = g.astype(net.dtype)

    for layer in (2, 1, 0):
        a = c[f"a{layer}"]
        # weight grads: sum_b omega_bk * g_b (outer) a_b
        wg = omega[:, :, None] * g[:, None, :]  # (B, K, out)
        grads[f"W{layer}"] = np.tensordot(wg, a, axes=([0], [0]))
        grads[f"b{layer}"] = omega.T @ g
        d_omega += np.einsum("bko,bo->bk", c[f"e{layer}"], g)
        if layer == 0:
            break
        da = np.tensordot(wg, p[f"W{layer}"], axes=([1, 2], [0, 1]))  # (B, in)
        if f"p{layer}" in drop:
            da = da * drop[f"p{layer}"]
        g = da * elu_grad_from_output(c[f"z{layer - 1}"])

    # softmax backward
    dl = omega * (d_omega - np.sum(d_omega * omega, axis=1, keepdims=True))
    grads["G2"] = dl.T @ c["gz1_in"]
    grads["c2"] = dl.sum(axis=0)
    da = dl @ p["G2"]
    if "g2" in drop:
        da = da * drop["g2"]
    dz = da * elu_grad_from_output(c["gz1"])
    grads["G1"] = dz.T @ c["gz0_in"]
    grads["c1"] = dz.sum(axis=0)
    da = dz @ p["G1"]
    if "g1" in drop:
        da = da * drop["g1"]
    dz = da * elu_grad_from_output(c["gz0"])
    grads["G0"] = dz.T @ c["g_in"]
    grads["c0"] = dz.sum(axis=0)

    for name, gr in grads.items():
        if not np.all(np.isfinite(gr)):
            raise NumericError(f"non-finite gradient for {name} on batch {batch_index}")
    return loss, {name: grads[name].astype(net.dtype, copy=False) for name in PARAM_ORDER}


def annealing_factor(t_cycle: float, cycle_length: float) -> float:
    """Cosine annealing multiplier: 1 at cycle start, 0 at cycle end."""
    return 0.5 * (1.0 + math.cos(math.pi * min(max(t_cycle / cycle_length, 0.0), 1.0)))


def cycle_position(t_epochs: float, period: float, mult: float) -> tuple[float, float]:
    """Position within the current restart cycle and that cycle's length."""
    start, length = 0.0, period
    while t_epochs >= start + length:
        start += length
        length *= mult
    return t_epochs - start, length


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    anneal: float = 1.0

    @classmethod
    def zeros_like(cls, net: MoENetwork) -> "OptimizerState":
        return cls({k: np.zeros_like(a) for k, a in net.params.items()},
                   {k: np.zeros_like(a) for k, a in net.params.items()})


def adamwr_step(state: OptimizerState, net: MoENetwork, grads: dict[str, np.ndarray],
                cfg: TrainConfig, anneal: float = 1.0) -> None:
    """One Adam update with bias correction and decoupled, annealed weight decay."""
    state.step += 1
    state.anneal = anneal
    t = state.step
    lr = cfg.learning_rate * anneal
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    shrink = 1.0 - lr * cfg.weight_decay
    for name, theta in net.params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {theta.shape}")
        m, v = state.m[name], state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        if shrink != 1.0:
            theta *= theta.dtype.type(shrink)
        theta -= (lr * update).astype(theta.dtype, copy=False)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    anneal: float
    sparsity: float
    wall_s: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    steps: int = 0
    seed: int = 0

    @property
    def train_loss(self) -> list[float]:
        return [e.train_loss for e in self.epochs]

    @property
    def val_loss(self) -> list[float]:
        return [e.val_loss for e in self.epochs]

    def to_dict(self, include_wall: bool = True) -> dict:
        rows = [asdict(e) for e in self.epochs]
        if not include_wall:
            for r in rows:
                r.pop("wall_s")
        return {"seed": self.seed, "steps": self.steps, "epochs": rows}

    def to_json(self, include_wall: bool = True) -> str:
        return json.dumps(self.to_dict(include_wall), indent=2, sort_keys=True)


def evaluate_mse(net: MoENetwork, x: np.ndarray, y: np.ndarray, batch: int = 1024) -> float:
    if len(x) == 0:
        return float("nan")
    total = 0.0
    for i in range(0, len(x), batch):
        pred = net.predict(x[i:i + batch], mode="eval")
        total += float(np.sum((pred.astype(np.float64) - y[i:i + batch]) ** 2))
    return total / (len(x) * y.shape[1])


def train(net: MoENetwork, data, cfg: TrainConfig, prune=None,
          hooks: Optional[list[Callable[[EpochRecord], None]]] = None,
          optimizer: Optional[OptimizerState] = None) -> TrainReport:
    """Train ``net`` in place on ``data`` (a :class:`MotionDataset`).

    When ``prune`` (a :class:`PruneState`) is given, its ``on_step`` hook runs
    after every optimizer step.
    """
    from .pruning import on_step  # local import: pruning depends on training's optimizer type

    x_tr, y_tr = data.x_train, data.y_train
    x_va, y_va = data.x_val, data.y_val
    report = TrainReport(seed=cfg.seed)
    if cfg.epochs == 0:
        return report
    n = len(x_tr)
    if n == 0:
        raise ConfigError("training split is empty")
    if cfg.batch_size > n:
        raise ConfigError(f"batch_size {cfg.batch_size} exceeds training pairs {n}")
    x_tr = x_tr.astype(net.dtype, copy=False)
    y_tr = y_tr.astype(net.dtype, copy=False)
    opt = optimizer or OptimizerState.zeros_like(net)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = make_rng(cfg.seed, 1, epoch).permutation(n)
        drop_rng = make_rng(cfg.seed, 2, epoch)
        losses = []
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            loss, grads = forward_backward(net, x_tr[idx], y_tr[idx], drop_rng, "train", step)
            if prune is not None:
                prune.mask_gradients(grads)
            t_cycle, length = cycle_position(step / steps_per_epoch, cfg.restart_period,
                                             cfg.restart_mult)
            anneal = annealing_factor(t_cycle, length)
            adamwr_step(opt, net, grads, cfg, anneal)
            step += 1
            if prune is not None:
                on_step(prune, net, step, total_steps, opt)
            losses.append(loss)
        rec = EpochRecord(
            epoch=epoch + 1,
            train_loss=float(np.mean(losses)),
            val_loss=evaluate_mse(net, x_va, y_va),
            anneal=opt.anneal,
            sparsity=prune.sparsity if prune is not None else 0.0,
            wall_s=time.perf_counter() - t0,
        )
        report.epochs.append(rec)
        log.info("epoch %d train %.5f val %.5f sparsity %.3f", rec.epoch, rec.train_loss,
                 rec.val_loss, rec.sparsity)
        for hook in hooks or ():
            hook(rec)
    report.steps = step
    return report
