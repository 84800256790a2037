"""Versioned binary checkpoint container.

Layout (all integers and floats little-endian)::

    magic        8 bytes   b"MOECKPT\\0"
    version      uint32    FORMAT_VERSION
    header_len   uint32
    header       UTF-8 JSON, sorted keys: network config, metadata, section flags
    norm         float32   x_mean[d_in] x_std[d_in] y_mean[d_out] y_std[d_out]
    tensors      float32   each tensor of PARAM_ORDER, C order, shapes from the config
    masks        bytes     for each name in header["masks"]: keep-bits packed
                           little-endian-bitwise, ceil(size / 8) bytes
    optimizer    float32   (only if header["optimizer"]) first then second moments,
                           each in PARAM_ORDER

The same network, masks and metadata always serialize to the same bytes.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError
from .network import PARAM_ORDER, MoENetwork, NetworkConfig, Normalization

MAGIC = b"MOECKPT\0"
FORMAT_VERSION = 1
_LE_F32 = np.dtype("<f4")


class CheckpointVersionError(ConfigError):
    pass


def _f32(a) -> bytes:
    return np.ascontiguousarray(a, dtype=_LE_F32).tobytes()


def dumps(net: MoENetwork, prune_state=None, optimizer=None, meta: Optional[dict] = None) -> bytes:
    masks = prune_state.masks if prune_state is not None else {}
    mask_names = [n for n in PARAM_ORDER if n in masks]
    header = {
        "network": net.config.to_dict(),
        "meta": meta or {},
        "masks": mask_names,
        "optimizer": optimizer is not None,
    }
    if prune_state is not None:
        header["prune"] = {
            "config": asdict(prune_state.cfg),
            "step": prune_state.step,
            "history": [asdict(e) for e in prune_state.history],
        }
    if optimizer is not None:
        header["optimizer_step"] = optimizer.step
        header["optimizer_anneal"] = optimizer.anneal
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(hdr)), hdr]
    n = net.norm
    parts += [_f32(n.x_mean), _f32(n.x_std), _f32(n.y_mean), _f32(n.y_std)]
    parts += [_f32(net.params[name]) for name in PARAM_ORDER]
    for name in mask_names:
        parts.append(np.packbits(masks[name].ravel().astype(bool), bitorder="little").tobytes())
    if optimizer is not None:
        parts += [_f32(optimizer.m[name]) for name in PARAM_ORDER]
        parts += [_f32(optimizer.v[name]) for name in PARAM_ORDER]
    return b"".join(parts)


def save(path, net: MoENetwork, prune_state=None, optimizer=None, meta: Optional[dict] = None):
    Path(path).write_bytes(dumps(net, prune_state, optimizer, meta))


class Checkpoint:
    """Loaded checkpoint: network plus optional prune state, optimizer and metadata."""

    def __init__(self, net, prune_state, optimizer, meta):
        self.net = net
        self.prune_state = prune_state
        self.optimizer = optimizer
        self.meta = meta


def loads(buf: bytes) -> Checkpoint:
    from .pruning import MaskEvent, PruneConfig, PruneState
    from .training import OptimizerState

    if buf[:8] != MAGIC:
        raise ConfigError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack_from("<II", buf, 8)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version mismatch: expected {FORMAT_VERSION}, found {version}")
    pos = 16
    header = json.loads(buf[pos:pos + hlen].decode())
    pos += hlen
    cfg = NetworkConfig.from_dict(header["network"])

    def take(count):
        nonlocal pos
        a = np.frombuffer(buf, dtype=_LE_F32, count=count, offset=pos).astype(np.float32)
        pos += 4 * count
        return a

    norm = Normalization(take(cfg.d_in), take(cfg.d_in), take(cfg.d_out), take(cfg.d_out))
    shapes = cfg.shapes()
    params = {name: take(int(np.prod(shapes[name]))).reshape(shapes[name]) for name in PARAM_ORDER}
    net = MoENetwork(cfg, params, norm)
    masks = {}
    for name in header["masks"]:
        size = int(np.prod(shapes[name]))
        nbytes = (size + 7) // 8
        bits = np.frombuffer(buf, dtype=np.uint8, count=nbytes, offset=pos)
        masks[name] = np.unpackbits(bits, count=size, bitorder="little").astype(bool) \
            .reshape(shapes[name])
        pos += nbytes
    prune_state = None
    if "prune" in header:
        p = header["prune"]
        prune_state = PruneState(PruneConfig(**p["config"]), masks, p["step"],
                                 [MaskEvent(**e) for e in p["history"]])
    optimizer = None
    if header["optimizer"]:
        m = {name: take(params[name].size).reshape(shapes[name]) for name in PARAM_ORDER}
        v = {name: take(params[name].size).reshape(shapes[name]) for name in PARAM_ORDER}
        optimizer = OptimizerState(m, v, header["optimizer_step"], header["optimizer_anneal"])
    if pos != len(buf):
        raise ConfigError(f"checkpoint has {len(buf) - pos} trailing bytes")
    return Checkpoint(net, prune_state, optimizer, header["meta"])


def load(path) -> Checkpoint:
    return loads(Path(path).read_bytes())
