"""Frame schema, procedural quadruped gaits, datasets and autoregressive rollout.

All lengths are centimetres and all velocities cm/frame. Frames are stored in
the root (heading) frame: x to the right, y up, z forward.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .numeric import make_rng

LEGS = ("LF", "RF", "LH", "RH")
GAITS = ("walk", "trot", "gallop", "turn", "idle")

# leg geometry (cm), root frame
HIP_HEIGHT = 45.0
UPPER_LEN = 26.0
LOWER_LEN = 26.0
HIP_OFFSETS = {"LF": (-10.0, 25.0), "RF": (10.0, 25.0), "LH": (-10.0, -25.0), "RH": (10.0, -25.0)}
TRAJECTORY_STEP = 10  # frames between future trajectory samples
# Fraction of the swing phase, at each end, spent lifting/lowering the foot
# vertically; with the default 8 cm swing height the foot clears 2.5 cm before
# it starts travelling horizontally.
SWING_LIFT = 0.2

# Joint count whose 8x512 network matches the reference 178 Mb model size
# (with per-joint rotations enabled); see SkeletonSchema.dog_scale.
DOG_SCALE_JOINTS = 34


def _body_layout(n_joints: int) -> list[tuple[str, str, tuple[float, float, float]]]:
    """(name, parent, rest offset in root frame) for the procedural skeleton."""
    core = [
        ("root", "", (0.0, 0.0, 0.0)),
        ("spine0", "root", (0.0, 1.0, 8.0)),
        ("spine1", "spine0", (0.0, 2.0, 16.0)),
        ("spine2", "spine1", (0.0, 2.0, 24.0)),
        ("neck", "spine2", (0.0, 10.0, 31.0)),
        ("head", "neck", (0.0, 17.0, 38.0)),
    ]
    legs = []
    for leg in LEGS:
        hx, hz = HIP_OFFSETS[leg]
        legs += [(f"{leg}_upper", "root", (hx, 0.0, hz)),
                 (f"{leg}_lower", f"{leg}_upper", (hx, -UPPER_LEN, hz)),
                 (f"{leg}_foot", f"{leg}_lower", (hx, -HIP_HEIGHT, hz))]
    n_tail = n_joints - len(core) - len(legs)
    if n_tail < 0:
        raise ConfigError(f"a quadruped skeleton needs at least {len(core) + len(legs)} joints")
    tail = []
    parent = "root"
    for i in range(n_tail):
        tail.append((f"tail{i}", parent, (0.0, 2.0 + 1.5 * i, -28.0 - 6.0 * i)))
        parent = f"tail{i}"
    return core + tail + legs


@dataclass
class SkeletonSchema:
    joints: list[str]
    parents: list[str]
    columns: list[str]
    joint_columns: dict[str, list[int]]
    feet: list[str]
    foot_height_columns: list[int]
    foot_speed_columns: list[int]
    foot_velocity_columns: list[int]
    control_columns: list[int]
    gating_columns: list[int]
    frame_rate: float = 60.0
    units: str = "cm"
    rotations: bool = False

    @classmethod
    def quadruped(cls, n_joints: int = 21, rotations: bool = False,
                  trajectory_samples: int = 6, frame_rate: float = 60.0) -> "SkeletonSchema":
        layout = _body_layout(n_joints)
        cols = ["root_vx", "root_vz", "root_yaw"]
        joint_columns = {}
        comps = ["px", "py", "pz", "vx", "vy", "vz"]
        if rotations:
            comps += ["r0", "r1", "r2", "r3", "r4", "r5"]
        for name, _, _ in layout:
            start = len(cols)
            cols += [f"{name}_{c}" for c in comps]
            joint_columns[name] = list(range(start, len(cols)))
        foot_h = []
        for leg in LEGS:
            foot_h.append(len(cols))
            cols.append(f"foot_h_{leg}")
        foot_v = []
        for leg in LEGS:
            foot_v.append(len(cols))
            cols.append(f"foot_v_{leg}")
        control = []
        for i in range(trajectory_samples):
            control += [len(cols), len(cols) + 1]
            cols += [f"traj{i}_x", f"traj{i}_z"]
        foot_vel = []
        for leg in LEGS:
            foot_vel += joint_columns[f"{leg}_foot"][3:6]
        return cls(
            joints=[n for n, _, _ in layout],
            parents=[p for _, p, _ in layout],
            columns=cols,
            joint_columns=joint_columns,
            feet=[f"{leg}_foot" for leg in LEGS],
            foot_height_columns=foot_h,
            foot_speed_columns=foot_v,
            foot_velocity_columns=foot_vel,
            control_columns=control,
            gating_columns=list(foot_vel),
            frame_rate=frame_rate,
            rotations=rotations,
        )

    @classmethod
    def dog_scale(cls) -> "SkeletonSchema":
        """Feature layout sized so an 8-expert, 512-wide network has ~5.56M parameters."""
        return cls.quadruped(n_joints=DOG_SCALE_JOINTS, rotations=True)

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    @property
    def output_columns(self) -> list[int]:
        ctrl = set(self.control_columns)
        return [i for i in range(self.n_columns) if i not in ctrl]

    @property
    def d_in(self) -> int:
        return self.n_columns

    @property
    def d_out(self) -> int:
        return self.n_columns - len(self.control_columns)

    def validate(self) -> None:
        roles = [list(range(3)), self.foot_height_columns, self.foot_speed_columns,
                 self.control_columns, *self.joint_columns.values()]
        seen = sorted(i for r in roles for i in r)
        if seen != list(range(self.n_columns)):
            raise ConfigError("schema column roles must be disjoint and cover every column")
        if len(self.foot_height_columns) != len(self.feet) or \
                len(self.foot_speed_columns) != len(self.feet):
            raise ConfigError("every foot needs a height and a speed column")
        if self.frame_rate <= 0:
            raise ConfigError("frame_rate must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SkeletonSchema":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown schema keys: {sorted(unknown)}")
        s = cls(**d)
        s.validate()
        return s

    @classmethod
    def from_json(cls, text: str) -> "SkeletonSchema":
        return cls.from_dict(json.loads(text))


@dataclass
class MotionClip:
    schema: SkeletonSchema
    frames: np.ndarray
    clip_id: str = "clip"
    contacts: Optional[np.ndarray] = None  # (T, n_feet) ground-truth labels when known
    gait: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != self.schema.n_columns:
            raise ShapeError(f"clip frames must be (T, {self.schema.n_columns}), "
                             f"got {self.frames.shape}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def control(self) -> np.ndarray:
        return self.frames[:, self.schema.control_columns]

    @property
    def foot_heights(self) -> np.ndarray:
        return self.frames[:, self.schema.foot_height_columns]

    @property
    def foot_speeds(self) -> np.ndarray:
        return self.frames[:, self.schema.foot_speed_columns]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.schema.columns)
        for row in self.frames:
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path, schema: SkeletonSchema, clip_id: Optional[str] = None) -> "MotionClip":
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        if not rows or rows[0] != schema.columns:
            raise ConfigError(f"{path}: header does not match schema columns")
        frames = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
        if len(frames) < 2:
            raise ConfigError(f"{path}: a clip needs at least 2 frames")
        if not np.all(np.isfinite(frames)):
            raise ConfigError(f"{path}: non-finite values")
        return cls(schema, frames, clip_id or Path(path).stem)


# -- procedural gaits ------------------------------------------------------

GAIT_PRESETS = {
    # duty factor, phase offsets (LF, RF, LH, RH), speed cm/s, stride cm, turn deg/s
    "walk": (0.7, (0.25, 0.75, 0.0, 0.5), 80.0, 60.0, 0.0),
    "trot": (0.5, (0.0, 0.5, 0.5, 0.0), 150.0, 80.0, 0.0),
    "gallop": (0.35, (0.6, 0.5, 0.0, 0.1), 300.0, 150.0, 0.0),
    "turn": (0.7, (0.25, 0.75, 0.0, 0.5), 70.0, 55.0, 60.0),
    "idle": (0.7, (0.25, 0.75, 0.0, 0.5), 0.0, 60.0, 0.0),
}


@dataclass
class GaitSpec:
    gait: str = "walk"
    duty_factor: float = 0.7
    phase_offsets: list[float] = field(default_factory=lambda: [0.25, 0.75, 0.0, 0.5])
    stride_length: float = 60.0
    speed: float = 80.0
    turn_rate: float = 0.0
    noise: float = 0.2
    duration: float = 4.0
    seed: int = 0
    swing_height: float = 8.0
    heading: float = 0.0

    def __post_init__(self):
        self.phase_offsets = [float(p) for p in self.phase_offsets]
        self.validate()

    def validate(self) -> None:
        if self.gait not in GAITS:
            raise ConfigError(f"gait must be one of {GAITS}, got {self.gait!r}")
        if not 0 < self.duty_factor < 1:
            raise ConfigError(f"duty_factor={self.duty_factor} must be in (0, 1)")
        if len(self.phase_offsets) != len(LEGS) or \
                any(not 0 <= p < 1 for p in self.phase_offsets):
            raise ConfigError("phase_offsets must be 4 values in [0, 1)")
        if self.stride_length <= 0:
            raise ConfigError("stride_length must be > 0")
        if self.speed < 0 or self.noise < 0 or self.swing_height < 0:
            raise ConfigError("speed, noise and swing_height must be >= 0")
        if self.duration <= 0:
            raise ConfigError("duration must be > 0")

    @classmethod
    def preset(cls, gait: str, **overrides) -> "GaitSpec":
        if gait not in GAIT_PRESETS:
            raise ConfigError(f"no preset for gait {gait!r}")
        duty, offsets, speed, stride, turn = GAIT_PRESETS[gait]
        kw = dict(gait=gait, duty_factor=duty, phase_offsets=list(offsets), speed=speed,
                  stride_length=stride, turn_rate=turn)
        kw.update(overrides)
        return cls(**kw)

    @property
    def cadence(self) -> float:
        """Gait cycles per second."""
        if self.speed > 0:
            return self.speed / self.stride_length
        return 1.0 if self.turn_rate != 0 else 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GaitSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown gait spec keys: {sorted(unknown)}")
        return cls(**d)


class _Kinematics:
    """Analytic world-space trajectories for root and feet at arbitrary times."""

    def __init__(self, spec: GaitSpec):
        self.spec = spec
        self.v = spec.speed
        self.w = math.radians(spec.turn_rate)
        self.f = spec.cadence

    def heading(self, t):
        return self.spec.heading + self.w * t

    def root_xz(self, t):
        t = np.asarray(t, dtype=np.float64)
        th0 = self.spec.heading
        th = self.heading(t)
        if abs(self.w) < 1e-12:
            return np.stack([self.v * t * math.sin(th0), self.v * t * math.cos(th0)], -1)
        r = self.v / self.w
        return np.stack([r * (math.cos(th0) - np.cos(th)), r * (np.sin(th) - math.sin(th0))], -1)

    def to_world(self, t, local_xz):
        th = self.heading(np.asarray(t, dtype=np.float64))
        lx, lz = local_xz
        c, s = np.cos(th), np.sin(th)
        # local x = right = (cos, -sin), local z = forward = (sin, cos)
        return self.root_xz(t) + np.stack([lx * c + lz * s, -lx * s + lz * c], -1)

    def phase(self, t, leg_idx):
        return np.mod(self.f * np.asarray(t) + self.spec.phase_offsets[leg_idx], 1.0)

    def foot(self, t, leg_idx):
        """(xz world, height) of one foot at times ``t``."""
        t = np.asarray(t, dtype=np.float64)
        leg = LEGS[leg_idx]
        hip = HIP_OFFSETS[leg]
        if self.f == 0:
            plant = self.to_world(np.zeros_like(t), hip)
            return plant, np.zeros_like(t)
        duty = self.spec.duty_factor
        off = self.spec.phase_offsets[leg_idx]
        cyc = np.floor(self.f * t + off)
        phase = self.f * t + off - cyc
        t_mid = (cyc + duty / 2 - off) / self.f
        t_next = (cyc + 1 + duty / 2 - off) / self.f
        p0 = self.to_world(t_mid, hip)
        p1 = self.to_world(t_next, hip)
        swing = phase >= duty
        u = np.where(swing, (phase - duty) / (1 - duty), 0.0)
        uh = np.clip((u - SWING_LIFT) / (1 - 2 * SWING_LIFT), 0.0, 1.0)
        blend = uh - np.sin(2 * np.pi * uh) / (2 * np.pi)
        xz = np.where(swing[..., None], p0 + (p1 - p0) * blend[..., None], p0)
        h = np.where(swing, self.spec.swing_height * (1 - np.cos(2 * np.pi * u)) / 2, 0.0)
        return xz, h


def contact_schedule(spec: GaitSpec, n_frames: int, frame_rate: float) -> np.ndarray:
    """Boolean (T, 4) stance labels implied by the phase offsets and duty factor."""
    kin = _Kinematics(spec)
    t = np.arange(n_frames) / frame_rate
    if kin.f == 0:
        return np.ones((n_frames, len(LEGS)), dtype=bool)
    return np.stack([kin.phase(t, i) < spec.duty_factor for i in range(len(LEGS))], 1)


def _two_bone_knee(hip, foot, forward, bend_sign):
    d_vec = foot - hip
    d = np.linalg.norm(d_vec, axis=-1, keepdims=True)
    d = np.clip(d, 1e-6, None)
    u = d_vec / d
    dc = np.minimum(d, UPPER_LEN + LOWER_LEN - 1e-3)
    a = (UPPER_LEN ** 2 - LOWER_LEN ** 2 + dc ** 2) / (2 * dc)
    b = np.sqrt(np.clip(UPPER_LEN ** 2 - a ** 2, 0.0, None))
    n = forward - np.sum(forward * u, axis=-1, keepdims=True) * u
    n = n / np.clip(np.linalg.norm(n, axis=-1, keepdims=True), 1e-9, None)
    return hip + a * u + bend_sign * b * n


def _world_skeleton(kin: _Kinematics, schema: SkeletonSchema, t: np.ndarray) -> np.ndarray:
    """World joint positions (n_t, J, 3) at times ``t`` (seconds)."""
    layout = {name: rest for name, _, rest in _body_layout(len(schema.joints))}
    th = kin.heading(t)
    bob = 1.0 * np.sin(2 * np.pi * 2 * kin.f * t)
    forward = np.stack([np.sin(th), np.zeros_like(th), np.cos(th)], -1)
    out = np.zeros((len(t), len(schema.joints), 3))
    feet = {leg: kin.foot(t, i) for i, leg in enumerate(LEGS)}
    for j, name in enumerate(schema.joints):
        rest = layout[name]
        if name.endswith("_foot"):
            xz, h = feet[name[:2]]
            out[:, j] = np.stack([xz[:, 0], h, xz[:, 1]], -1)
        elif name.endswith("_lower"):
            continue  # filled once hips and feet are known
        else:
            xz = kin.to_world(t, (rest[0], rest[2]))
            out[:, j] = np.stack([xz[:, 0], HIP_HEIGHT + rest[1] + bob, xz[:, 1]], -1)
    idx = {n: i for i, n in enumerate(schema.joints)}
    for leg in LEGS:
        hip = out[:, idx[f"{leg}_upper"]]
        foot = out[:, idx[f"{leg}_foot"]]
        sign = -1.0 if leg.endswith("F") else 1.0
        out[:, idx[f"{leg}_lower"]] = _two_bone_knee(hip, foot, forward, sign)
    return out


def _to_local(vec_xz_y: np.ndarray, th: np.ndarray) -> np.ndarray:
    """Rotate world vectors (..., 3) into the root frame with heading ``th``."""
    extra = (1,) * (vec_xz_y.ndim - 2)
    c, s = np.cos(th).reshape(th.shape + extra), np.sin(th).reshape(th.shape + extra)
    x, y, z = vec_xz_y[..., 0], vec_xz_y[..., 1], vec_xz_y[..., 2]
    return np.stack([x * c - z * s, y, x * s + z * c], -1)


def generate_gait(spec: GaitSpec, schema: SkeletonSchema) -> MotionClip:
    """Kinematically consistent clip; stance feet are planted exactly."""
    spec.validate()
    schema.validate()
    fps = schema.frame_rate
    n = max(int(round(spec.duration * fps)), 2)
    kin = _Kinematics(spec)
    t = np.arange(n) / fps
    dt = 1e-3 / fps  # central-difference half-step, in seconds
    th = kin.heading(t)
    pos = _world_skeleton(kin, schema, t)
    vel = (_world_skeleton(kin, schema, t + dt) - _world_skeleton(kin, schema, t - dt)) / (2e-3)
    root_xz = kin.root_xz(t)
    root3 = np.stack([root_xz[:, 0], np.zeros(n), root_xz[:, 1]], -1)

    frames = np.zeros((n, schema.n_columns))
    root_v = (kin.root_xz(t + dt) - kin.root_xz(t - dt)) / 2e-3
    rv = _to_local(np.stack([root_v[:, 0], np.zeros(n), root_v[:, 1]], -1), th)
    frames[:, 0] = rv[:, 0]
    frames[:, 1] = rv[:, 2]
    frames[:, 2] = kin.w / fps
    local_pos = _to_local(pos - root3[:, None, :], th)
    local_vel = _to_local(vel, th)
    idx = {n_: i for i, n_ in enumerate(schema.joints)}
    parent_of = dict(zip(schema.joints, schema.parents))
    children = {}
    for name, par in parent_of.items():
        children.setdefault(par, name)
    for name, cols in schema.joint_columns.items():
        j = idx[name]
        frames[:, cols[0:3]] = local_pos[:, j]
        frames[:, cols[3:6]] = local_vel[:, j]
        if schema.rotations:
            other = children.get(name) or parent_of[name] or name
            bone = local_pos[:, idx[other]] - local_pos[:, j]
            if other == parent_of[name]:
                bone = -bone
            y_ax = bone / np.clip(np.linalg.norm(bone, axis=-1, keepdims=True), 1e-9, None)
            y_ax[np.linalg.norm(bone, axis=-1) < 1e-9] = (0.0, 1.0, 0.0)
            x_ax = np.array([1.0, 0.0, 0.0]) - y_ax[:, :1] * y_ax
            x_ax /= np.clip(np.linalg.norm(x_ax, axis=-1, keepdims=True), 1e-9, None)
            frames[:, cols[6:9]] = x_ax
            frames[:, cols[9:12]] = y_ax

    contacts = contact_schedule(spec, n, fps)
    for i, leg in enumerate(LEGS):
        j = idx[f"{leg}_foot"]
        frames[:, schema.foot_height_columns[i]] = pos[:, j, 1]
        frames[:, schema.foot_speed_columns[i]] = np.hypot(vel[:, j, 0], vel[:, j, 2])

    n_samples = len(schema.control_columns) // 2
    for k in range(n_samples):
        fut = kin.root_xz(t + (k + 1) * TRAJECTORY_STEP / fps) - root_xz
        loc = _to_local(np.stack([fut[:, 0], np.zeros(n), fut[:, 1]], -1), th)
        frames[:, schema.control_columns[2 * k]] = loc[:, 0]
        frames[:, schema.control_columns[2 * k + 1]] = loc[:, 2]

    if spec.noise > 0:
        rng = make_rng(spec.seed, 7)
        leg_joints = {f"{leg}_{part}" for leg in LEGS for part in ("upper", "lower", "foot")}
        noisy = [c for name, cols in schema.joint_columns.items()
                 if name not in leg_joints for c in cols[0:3]]
        frames[:, noisy] += spec.noise * rng.standard_normal((n, len(noisy)))
    return MotionClip(schema, frames, clip_id=f"{spec.gait}_{spec.seed}", contacts=contacts,
                      gait=spec.gait)


def gait_suite(seed: int = 0, duration: float = 6.0, variants: int = 1,
               gaits: Sequence[str] = ("walk", "trot", "gallop", "turn")) -> list[GaitSpec]:
    """Preset specs, with speed/turn variants per gait, all seeded from ``seed``."""
    rng = make_rng(seed, 11)
    specs = []
    for v in range(variants):
        for g in gaits:
            over = dict(duration=duration, seed=seed * 1000 + len(specs))
            if v > 0:
                base = GAIT_PRESETS[g]
                over["speed"] = float(base[2] * rng.uniform(0.8, 1.2))
                if g == "turn":
                    over["turn_rate"] = float(base[4] * rng.choice([-1.0, 1.0])
                                              * rng.uniform(0.7, 1.3))
            specs.append(GaitSpec.preset(g, **over))
    return specs


# -- datasets ---------------------------------------------------------------

@dataclass
class MotionDataset:
    schema: SkeletonSchema
    clips: list[MotionClip]
    x: np.ndarray  # raw (n_pairs, d_in)
    y: np.ndarray  # raw (n_pairs, d_out)
    clip_index: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    @property
    def n_pairs(self) -> int:
        return len(self.x)

    def _nx(self, idx):
        return ((self.x[idx] - self.x_mean) / self.x_std).astype(np.float32)

    def _ny(self, idx):
        return ((self.y[idx] - self.y_mean) / self.y_std).astype(np.float32)

    @property
    def x_train(self):
        return self._nx(self.train_idx)

    @property
    def y_train(self):
        return self._ny(self.train_idx)

    @property
    def x_val(self):
        return self._nx(self.val_idx)

    @property
    def y_val(self):
        return self._ny(self.val_idx)

    def normalization(self):
        from .network import Normalization

        return Normalization(self.x_mean, self.x_std, self.y_mean, self.y_std)


STD_FLOOR = 1e-6


def build_dataset(clips: Sequence[MotionClip], val_fraction: float = 0.1) -> MotionDataset:
    """Consecutive-frame pairs; the last ``val_fraction`` of each clip is held out.

    Normalization statistics come from the training pairs only.
    """
    if not clips:
        raise ConfigError("build_dataset needs at least one clip")
    schema = clips[0].schema
    for c in clips[1:]:
        if c.schema.columns != schema.columns:
            raise ConfigError(f"clip {c.clip_id} does not share the dataset schema")
    out_cols = schema.output_columns
    xs, ys, cid, tr, va = [], [], [], [], []
    offset = 0
    for i, c in enumerate(clips):
        if c.n_frames < 2:
            raise ConfigError(f"clip {c.clip_id} has fewer than 2 frames")
        n = c.n_frames - 1
        xs.append(c.frames[:-1])
        ys.append(c.frames[1:, out_cols])
        cid.append(np.full(n, i))
        n_val = int(math.ceil(val_fraction * n)) if n >= 2 and val_fraction > 0 else 0
        tr.append(np.arange(offset, offset + n - n_val))
        va.append(np.arange(offset + n - n_val, offset + n))
        offset += n
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    train_idx = np.concatenate(tr)
    val_idx = np.concatenate(va)
    xt, yt = x[train_idx], y[train_idx]
    return MotionDataset(
        schema=schema, clips=list(clips), x=x, y=y, clip_index=np.concatenate(cid),
        train_idx=train_idx, val_idx=val_idx,
        x_mean=xt.mean(0), x_std=np.maximum(xt.std(0), STD_FLOOR),
        y_mean=yt.mean(0), y_std=np.maximum(yt.std(0), STD_FLOOR),
    )


# -- rollout ----------------------------------------------------------------

@dataclass
class Rollout:
    clip: MotionClip
    omegas: np.ndarray  # (T, K): blend coefficients that produced frames 1..T


def rollout(net, schema: SkeletonSchema, seed_frame: np.ndarray, control: np.ndarray,
            n_steps: int, clip_id: str = "rollout", gait: str = "") -> Rollout:
    """Generate ``n_steps`` frames autoregressively from ``seed_frame``.

    ``control[k]`` overwrites the control columns of generated frame ``k + 1``.
    """
    seed_frame = np.asarray(seed_frame, dtype=np.float64)
    if seed_frame.shape != (schema.n_columns,):
        raise ShapeError(f"seed frame must have {schema.n_columns} values, got {seed_frame.shape}")
    control = np.asarray(control, dtype=np.float64).reshape(-1, len(schema.control_columns))
    if len(control) < n_steps:
        raise ShapeError(f"control series has {len(control)} rows, need {n_steps}")
    out_cols = schema.output_columns
    ctrl_cols = schema.control_columns
    frames = np.empty((n_steps + 1, schema.n_columns))
    frames[0] = seed_frame
    omegas = np.empty((n_steps, net.n_experts))
    norm = net.norm
    cur = seed_frame
    for k in range(n_steps):
        x = norm.normalize_x(cur.astype(np.float32))
        try:
            y, cache = net.forward(x[None, :], mode="eval")
        except NumericError as e:
            raise NumericError(f"rollout diverged at frame {k + 1}: {e}") from e
        nxt = np.empty(schema.n_columns)
        nxt[out_cols] = norm.denormalize_y(y[0])
        nxt[ctrl_cols] = control[k]
        if not np.all(np.isfinite(nxt)):
            raise NumericError(f"rollout produced a non-finite frame at index {k + 1}")
        frames[k + 1] = nxt
        omegas[k] = cache["omega"][0]
        cur = nxt
    return Rollout(MotionClip(schema, frames, clip_id, gait=gait), omegas)


def rollout_like(net, clip: MotionClip, n_steps: Optional[int] = None) -> Rollout:
    """Roll out from a reference clip's first frame, replaying its control signal."""
    n = clip.n_frames - 1 if n_steps is None else n_steps
    return rollout(net, clip.schema, clip.frames[0], clip.control[1:n + 1], n,
                   clip_id=f"rollout_{clip.clip_id}", gait=clip.gait)
