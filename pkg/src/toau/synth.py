"""Parametric generators for five labeled action classes.

Each generator drives the skeleton template with analytic joint-angle
trajectories; legs are placed with two-link IK onto analytic ankle targets so
that planted feet are exactly stationary. Ground truth (stance intervals,
root speed, yaw rate) comes straight from the trajectory definitions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .motion import JointSequence, yaw_rotate
from .motion_io import write_j3d
from .skeleton import Skeleton, default_skeleton

CLASSES = ("walk", "turn-in-place", "wave", "squat", "jump")

CAPTIONS = {
    "walk": "a person walks forward in a straight line",
    "turn-in-place": "a person turns around on the spot",
    "wave": "a person raises the right hand and waves",
    "squat": "a person squats down and stands back up",
    "jump": "a person jumps up in place",
}

# name -> (low, high) inclusive; periods and frame counts are integers
PARAM_RANGES = {
    "walk": {"stride": (0.2, 1.5), "period": (10, 60), "arm_swing_deg": (0.0, 45.0), "lift": (0.02, 0.2)},
    "turn-in-place": {"rate_deg": (-10.0, 10.0)},
    "wave": {"amplitude_deg": (5.0, 60.0), "period": (6, 40)},
    "squat": {"depth": (0.05, 0.45), "period": (16, 80)},
    "jump": {"height": (0.05, 0.5), "period": (16, 60)},
}

DEFAULT_PARAMS = {
    "walk": {"stride": 1.0, "period": 24, "arm_swing_deg": 20.0, "lift": 0.08},
    "turn-in-place": {"rate_deg": 2.0},
    "wave": {"amplitude_deg": 30.0, "period": 14},
    "squat": {"depth": 0.3, "period": 40},
    "jump": {"height": 0.25, "period": 30},
}

_INT_PARAMS = {"period"}
# whole cycles per corpus clip; with the sampled periods every length is a multiple of 4
CORPUS_CYCLES = {"walk": 6, "wave": 10, "squat": 4, "jump": 5}
_STANCE_FRACTION = 0.6
_STAND_PELVIS = 0.91
_ANKLE_HEIGHT = 0.05
_REACH = 0.97
DEFAULT_NOISE = 0.002


@dataclass(frozen=True)
class MotionClass:
    name: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    heading: float = 0.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.name not in CLASSES:
            raise InvalidInputError(f"unknown motion class {self.name!r}")
        merged = dict(DEFAULT_PARAMS[self.name])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise InvalidInputError(f"unknown parameters for {self.name}: {sorted(unknown)}")
        merged.update(self.params)
        for key, (lo, hi) in PARAM_RANGES[self.name].items():
            value = merged[key]
            if not lo <= value <= hi:
                raise InvalidInputError(f"{self.name}.{key}={value} outside [{lo}, {hi}]")
            if key in _INT_PARAMS and int(value) != value:
                raise InvalidInputError(f"{self.name}.{key} must be an integer")
        if self.name == "turn-in-place" and merged["rate_deg"] == 0.0:
            raise InvalidInputError("turn rate must be nonzero")
        object.__setattr__(self, "params", merged)

    @classmethod
    def sample(cls, name: str, rng: np.random.Generator, seed: int | None = None) -> "MotionClass":
        """Draw plausible parameters, a random start heading and a random start position."""
        if name == "walk":
            params = {"stride": rng.uniform(0.8, 1.3), "period": int(2 * rng.integers(10, 16)),
                      "arm_swing_deg": rng.uniform(10, 30), "lift": rng.uniform(0.05, 0.12)}
        elif name == "turn-in-place":
            params = {"rate_deg": float(rng.choice([-1, 1]) * rng.uniform(1.5, 4.0))}
        elif name == "wave":
            params = {"amplitude_deg": rng.uniform(20, 45), "period": int(2 * rng.integers(5, 11))}
        elif name == "squat":
            params = {"depth": rng.uniform(0.2, 0.4), "period": int(rng.integers(30, 51))}
        elif name == "jump":
            params = {"height": rng.uniform(0.15, 0.3), "period": int(4 * rng.integers(6, 10))}
        else:
            raise InvalidInputError(f"unknown motion class {name!r}")
        return cls(name, params,
                   seed=int(rng.integers(2**31)) if seed is None else seed,
                   heading=float(rng.uniform(-math.pi, math.pi)),
                   origin=(float(rng.uniform(-2, 2)), float(rng.uniform(-2, 2))))


@dataclass(frozen=True)
class Annotations:
    label: str
    stance: np.ndarray       # F x 4, foot planted over [t, t+1]; order of Skeleton.foot_joints
    root_speed: np.ndarray   # F, meters per frame along the heading
    yaw_rate: np.ndarray     # F, radians per frame
    params: dict


# -- kinematics helpers ----------------------------------------------------

def _rx(a):
    a = np.asarray(a, dtype=np.float64)
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 0, 0] = 1
    R[..., 1, 1] = c
    R[..., 1, 2] = -s
    R[..., 2, 1] = s
    R[..., 2, 2] = c
    return R


def _ry(a):
    a = np.asarray(a, dtype=np.float64)
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 0, 0] = c
    R[..., 0, 2] = s
    R[..., 1, 1] = 1
    R[..., 2, 0] = -s
    R[..., 2, 2] = c
    return R


def _rz(a):
    a = np.asarray(a, dtype=np.float64)
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 0, 0] = c
    R[..., 0, 1] = -s
    R[..., 1, 0] = s
    R[..., 1, 1] = c
    R[..., 2, 2] = 1
    return R


def forward_kinematics(skeleton: Skeleton, local: np.ndarray, root: np.ndarray) -> np.ndarray:
    """local: F x 22 x 3 x 3 joint rotations (joint j turns the bones of its children)."""
    F = root.shape[0]
    glob = np.empty_like(local)
    pos = np.empty((F, skeleton.joint_count, 3))
    glob[:, 0] = local[:, 0]
    pos[:, 0] = root
    for j in range(1, skeleton.joint_count):
        p = skeleton.parents[j]
        glob[:, j] = glob[:, p] @ local[:, j]
        pos[:, j] = pos[:, p] + glob[:, p] @ skeleton.offsets[j]
    return pos


def _two_link_ik(hip, ankle, thigh, shin, bend_dir):
    """Knee and reachable ankle positions for a planar two-bone chain."""
    d = ankle - hip
    dist = np.linalg.norm(d, axis=-1, keepdims=True)
    dn = d / dist
    L = np.clip(dist, abs(thigh - shin) + 1e-6, (thigh + shin) * 0.9999)
    along = (thigh**2 - shin**2 + L**2) / (2 * L)
    up = np.sqrt(np.maximum(thigh**2 - along**2, 0.0))
    perp = bend_dir - np.sum(bend_dir * dn, axis=-1, keepdims=True) * dn
    perp /= np.linalg.norm(perp, axis=-1, keepdims=True)
    knee = hip + along * dn + up * perp
    return knee, hip + L * dn


def _neutral_local(F: int, sk: Skeleton) -> np.ndarray:
    local = np.broadcast_to(np.eye(3), (F, sk.joint_count, 3, 3)).copy()
    local[:, sk.index("left_shoulder")] = _rz(np.full(F, -math.radians(80)))
    local[:, sk.index("right_shoulder")] = _rz(np.full(F, math.radians(80)))
    return local


class _Body:
    """Per-frame body state in the body's own heading frame (origin at start)."""

    def __init__(self, F: int, sk: Skeleton):
        self.sk = sk
        self.local = _neutral_local(F, sk)
        self.root = np.zeros((F, 3))
        self.root[:, 1] = _STAND_PELVIS
        self.yaw = np.zeros(F)
        hip_x = abs(sk.offsets[sk.index("left_hip"), 0])
        self.ankle = np.zeros((F, 2, 3))      # left, right
        self.ankle[:, 0] = (hip_x, _ANKLE_HEIGHT, 0.0)
        self.ankle[:, 1] = (-hip_x, _ANKLE_HEIGHT, 0.0)

    def solve(self) -> np.ndarray:
        sk = self.sk
        local = self.local.copy()
        local[:, 0] = _ry(self.yaw) @ local[:, 0]
        pos = forward_kinematics(sk, local, self.root)
        fwd = np.stack([np.sin(self.yaw), np.zeros_like(self.yaw), np.cos(self.yaw)], axis=-1)
        # ankle targets live in the start frame and turn with the body about the origin
        ankles = yaw_rotate(self.ankle, self.yaw[:, None])
        chains = [("left_hip", "left_knee", "left_ankle", "left_foot"),
                  ("right_hip", "right_knee", "right_ankle", "right_foot")]
        for side, (h, k, a, f) in enumerate(chains):
            hi, ki, ai, fi = (sk.index(n) for n in (h, k, a, f))
            thigh = np.linalg.norm(sk.offsets[ki])
            shin = np.linalg.norm(sk.offsets[ai])
            knee, ankle = _two_link_ik(pos[:, hi], ankles[:, side], thigh, shin, fwd)
            pos[:, ki] = knee
            pos[:, ai] = ankle
            pos[:, fi] = ankle + yaw_rotate(sk.offsets[fi], self.yaw)
        return pos


def _world(pos: np.ndarray, heading: float, origin) -> np.ndarray:
    out = yaw_rotate(pos, heading)
    out[..., 0] += origin[0]
    out[..., 2] += origin[1]
    return out


def _walk(mc: MotionClass, F: int, body: _Body):
    p = mc.params
    P = int(p["period"])
    stride = p["stride"]
    speed = stride / P
    S = int(round(_STANCE_FRACTION * P))
    t = np.arange(F, dtype=np.float64)
    phase0 = mc.seed % P
    offsets = (phase0, phase0 + P // 2)

    reach = _REACH * 0.78
    half = 0.5 * S / P * stride
    pelvis = min(_STAND_PELVIS, math.sqrt(reach**2 - half**2) + _ANKLE_HEIGHT + 0.09)
    body.root[:, 2] = speed * t
    cyc = 2 * np.pi * t / P
    body.root[:, 1] = pelvis - 0.015 * (0.5 - 0.5 * np.cos(2 * cyc))

    stance = np.zeros((F, 2))
    for side, o in enumerate(offsets):
        tau_abs = t + o
        c = np.floor(tau_abs / P)
        tau = tau_abs - c * P
        planted = stride * (c - o / P + S / (2 * P))
        u = np.clip((tau - S) / (P - S), 0.0, 1.0)
        body.ankle[:, side, 2] = planted + stride * u
        body.ankle[:, side, 1] = _ANKLE_HEIGHT + p["lift"] * np.sin(np.pi * u)
        stance[:, side] = tau <= S - 1

    swing = math.radians(p["arm_swing_deg"]) * np.sin(cyc + 2 * np.pi * phase0 / P)
    sk = body.sk
    body.local[:, sk.index("left_shoulder")] = _rx(swing) @ body.local[:, sk.index("left_shoulder")]
    body.local[:, sk.index("right_shoulder")] = _rx(-swing) @ body.local[:, sk.index("right_shoulder")]
    return stance, np.full(F, speed), np.zeros(F)


def _turn(mc: MotionClass, F: int, body: _Body):
    rate = math.radians(mc.params["rate_deg"])
    body.yaw = rate * np.arange(F, dtype=np.float64)
    return np.ones((F, 2)), np.zeros(F), np.full(F, rate)


def _wave(mc: MotionClass, F: int, body: _Body):
    p = mc.params
    sk = body.sk
    t = np.arange(F, dtype=np.float64)
    osc = math.radians(p["amplitude_deg"]) * np.sin(2 * np.pi * t / p["period"])
    body.local[:, sk.index("right_shoulder")] = _rz(np.full(F, math.radians(-60)))
    body.local[:, sk.index("right_elbow")] = _rz(math.radians(-30) + osc)
    return np.ones((F, 2)), np.zeros(F), np.zeros(F)


def _squat(mc: MotionClass, F: int, body: _Body):
    p = mc.params
    sk = body.sk
    t = np.arange(F, dtype=np.float64)
    bend = 0.5 - 0.5 * np.cos(2 * np.pi * t / p["period"])
    body.root[:, 1] = _STAND_PELVIS - p["depth"] * bend
    body.root[:, 2] = -0.25 * p["depth"] * bend
    lean = 1.2 * p["depth"] * bend
    body.local[:, 0] = _rx(lean)
    # keep the chest upright-ish and reach the arms forward
    body.local[:, sk.index("spine1")] = _rx(-0.5 * lean)
    raise_arm = _rx(-1.2 * bend)
    body.local[:, sk.index("left_shoulder")] = raise_arm @ body.local[:, sk.index("left_shoulder")]
    body.local[:, sk.index("right_shoulder")] = raise_arm @ body.local[:, sk.index("right_shoulder")]
    return np.ones((F, 2)), np.zeros(F), np.zeros(F)


def _jump(mc: MotionClass, F: int, body: _Body):
    p = mc.params
    sk = body.sk
    P = int(p["period"])
    crouch = int(round(0.35 * P))
    flight = int(round(0.4 * P))
    land = P - crouch - flight
    t = np.arange(F)
    tau = t % P
    dip = np.zeros(F)
    lift = np.zeros(F)
    m = tau < crouch
    dip[m] = 0.12 * np.sin(np.pi * tau[m] / crouch)
    m = (tau >= crouch) & (tau <= crouch + flight)
    u = (tau[m] - crouch) / flight
    lift[m] = 4 * p["height"] * u * (1 - u)
    m = tau > crouch + flight
    dip[m] = 0.12 * np.sin(np.pi * (tau[m] - crouch - flight) / land)
    body.root[:, 1] = _STAND_PELVIS - dip + lift
    body.ankle[:, :, 1] = _ANKLE_HEIGHT + lift[:, None]
    arms = _rx(-2.0 * lift / max(p["height"], 1e-9))
    body.local[:, sk.index("left_shoulder")] = arms @ body.local[:, sk.index("left_shoulder")]
    body.local[:, sk.index("right_shoulder")] = arms @ body.local[:, sk.index("right_shoulder")]
    # planted over [t, t+1] when neither endpoint is airborne
    ground = (tau < crouch) | (tau >= crouch + flight)
    nxt = ((t + 1) % P < crouch) | ((t + 1) % P >= crouch + flight)
    planted = (ground & nxt).astype(np.float64)
    return np.stack([planted, planted], axis=-1), np.zeros(F), np.zeros(F)


_GENERATORS = {"walk": _walk, "turn-in-place": _turn, "wave": _wave, "squat": _squat, "jump": _jump}


def generate(mc: MotionClass, frames: int, fps: int = 20, noise: float = DEFAULT_NOISE,
             skeleton: Skeleton | None = None) -> tuple[JointSequence, Annotations]:
    """Synthesize one clip. ``noise`` is the per-coordinate Gaussian sigma in meters."""
    if frames < 2:
        raise InvalidInputError("frames must be >= 2")
    if fps <= 0:
        raise InvalidInputError("fps must be positive")
    if noise < 0:
        raise InvalidInputError("noise must be nonnegative")
    sk = skeleton or default_skeleton()
    body = _Body(frames, sk)
    stance2, speed, yaw_rate = _GENERATORS[mc.name](mc, frames, body)
    pos = _world(body.solve(), mc.heading, mc.origin)
    if noise > 0:
        rng = np.random.default_rng(mc.seed)
        pos = pos + rng.normal(0.0, noise, size=pos.shape)
    # last frame has no successor; mirror the contact-detector convention
    stance2[-1] = stance2[-2]
    stance = np.repeat(stance2, 2, axis=1).astype(np.float64)   # (ankle, foot) per side
    ann = Annotations(mc.name, stance, speed, yaw_rate, dict(mc.params))
    return JointSequence(pos, fps), ann


# -- corpus ----------------------------------------------------------------

def corpus_length(mc: MotionClass, rng: np.random.Generator,
                  frames: tuple[int, int] = (120, 240)) -> int:
    """Clip length for corpus generation.

    Periodic classes span CORPUS_CYCLES whole cycles so that uniformly
    resampled clips line up in phase; turning clips take a random multiple of 8.
    """
    if mc.name in CORPUS_CYCLES:
        return int(CORPUS_CYCLES[mc.name] * mc.params["period"])
    lo, hi = (frames[0] + 7) // 8, frames[1] // 8
    return 8 * int(rng.integers(lo, hi + 1))


def build_corpus(out_dir: str | Path, per_class: int | dict = 20, seed: int = 1,
                 fps: int = 20, test_fraction: float = 0.2,
                 noise: float = DEFAULT_NOISE) -> list[dict]:
    """Write labeled .j3d clips, manifest.json and gallery.json under ``out_dir``.

    The split is stratified: each class with more than one clip contributes
    round(count * test_fraction) test clips, at least one.
    """
    counts = per_class if isinstance(per_class, dict) else {c: per_class for c in CLASSES}
    for name, n in counts.items():
        if name not in CLASSES:
            raise InvalidInputError(f"unknown class {name!r}")
        if n < 1:
            raise InvalidInputError("per-class counts must be >= 1")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InvalidInputError(f"cannot create {out}: {exc}") from exc
    rng = np.random.default_rng(seed)
    manifest = []
    for name in CLASSES:
        n = counts.get(name, 0)
        if n == 0:
            continue
        n_test = max(1, int(round(n * test_fraction))) if n > 1 else 0
        test_ids = set(rng.permutation(n)[:n_test].tolist())
        for i in range(n):
            mc = MotionClass.sample(name, rng)
            F = corpus_length(mc, rng)
            seq, _ = generate(mc, F, fps, noise=noise)
            clip_id = f"{name}_{i:03d}"
            write_j3d(out / f"{clip_id}.j3d", seq)
            manifest.append({"id": clip_id, "path": f"{clip_id}.j3d", "label": name,
                             "split": "test" if i in test_ids else "train", "frames": F})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    gallery = [{"path": m["path"], "label": m["label"], "caption": CAPTIONS[m["label"]]}
               for m in manifest if m["split"] == "train"]
    (out / "gallery.json").write_text(json.dumps(gallery, indent=1) + "\n")
    return manifest
