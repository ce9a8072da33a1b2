"""Joint sequences and the 263-dimensional kinematic feature transform.

Per-frame feature layout::

    [0:4)     root: yaw velocity, x velocity, z velocity (heading frame), height
    [4:67)    root-relative joint positions, 21 non-root joints, heading frame
    [67:193)  6D bone rotations, 21 non-root joints, heading frame
    [193:259) joint velocities, all 22 joints, heading frame
    [259:263) foot contacts (left ankle, left foot, right ankle, right foot)

Velocities are forward differences; the last frame repeats the previous one.
Angles are radians. Headings follow ``atan2(forward_x, forward_z)`` so that a
positive yaw velocity is a counter-clockwise turn seen from above (+Y).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    CanonicalizationError,
    InvalidInputError,
    RotationUndefinedError,
    ShapeMismatchError,
)
from .skeleton import JOINT_COUNT, Skeleton

FEATURE_DIM = 263
ROOT = slice(0, 4)
RIC = slice(4, 67)
ROT6D = slice(67, 193)
VEL = slice(193, 259)
CONTACT = slice(259, 263)
FEATURE_SLICES = {
    "root": ROOT,
    "ric_positions": RIC,
    "rotations": ROT6D,
    "velocities": VEL,
    "foot_contacts": CONTACT,
}

DEFAULT_CONTACT_THRESHOLD = 0.002
_EPS_FACING = 1e-9
_EPS_BONE = 1e-9


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class JointSequence:
    """F x 22 x 3 world-space joint positions in meters (Y up)."""

    positions: np.ndarray
    fps: int = 20

    def __post_init__(self):
        pos = _readonly(self.positions)
        if pos.ndim != 3 or pos.shape[1:] != (JOINT_COUNT, 3):
            raise InvalidInputError(f"expected F x {JOINT_COUNT} x 3 positions, got {pos.shape}")
        if pos.shape[0] < 1:
            raise InvalidInputError("joint sequence needs at least one frame")
        if not np.all(np.isfinite(pos)):
            raise InvalidInputError("non-finite joint coordinates")
        if int(self.fps) != self.fps or self.fps <= 0:
            raise InvalidInputError(f"fps must be a positive integer, got {self.fps}")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "fps", int(self.fps))

    @property
    def frames(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True, eq=False)
class KinematicFeatureSequence:
    values: np.ndarray
    fps: int = 20

    def __post_init__(self):
        v = _readonly(self.values)
        if v.ndim != 2 or v.shape[1] != FEATURE_DIM:
            raise InvalidInputError(f"expected F x {FEATURE_DIM} features, got {v.shape}")
        if v.shape[0] < 1:
            raise InvalidInputError("feature sequence needs at least one frame")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("non-finite feature values")
        c = v[:, CONTACT]
        if not np.all((c == 0.0) | (c == 1.0)):
            raise InvalidInputError("foot-contact entries must be exactly 0 or 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "fps", int(self.fps))

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> int:
        return FEATURE_DIM

    def slice(self, name: str) -> np.ndarray:
        return self.values[:, FEATURE_SLICES[name]]


# -- geometry helpers ------------------------------------------------------

def yaw_rotate(v: np.ndarray, angle) -> np.ndarray:
    """Rotate 3-vectors about +Y by ``angle`` (broadcast over leading axes)."""
    v = np.asarray(v, dtype=np.float64)
    c = np.cos(angle)
    s = np.sin(angle)
    shape = np.broadcast_shapes(v.shape[:-1], np.shape(c)) + (3,)
    out = np.array(np.broadcast_to(v, shape))
    x = out[..., 0].copy()
    z = out[..., 2].copy()
    out[..., 0] = c * x + s * z
    out[..., 2] = -s * x + c * z
    return out


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


def headings(positions: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    """Per-frame heading angle from the hip and shoulder pairs.

    Raises CanonicalizationError naming the first frame whose facing vector
    has no horizontal component.
    """
    r_hip, l_hip, r_sh, l_sh = skeleton.facing_joints
    across = (positions[:, r_hip] - positions[:, l_hip]) + (positions[:, r_sh] - positions[:, l_sh])
    # forward = up x across
    fx = across[:, 2]
    fz = -across[:, 0]
    norm = np.hypot(fx, fz)
    bad = np.flatnonzero(norm < _EPS_FACING)
    if bad.size:
        raise CanonicalizationError(int(bad[0]))
    return np.arctan2(fx, fz)


# -- operations ------------------------------------------------------------

def apply_global_translation(seq: JointSequence, t) -> JointSequence:
    t = np.asarray(t, dtype=np.float64)
    if t.shape != (3,) or not np.all(np.isfinite(t)):
        raise InvalidInputError("translation must be 3 finite values")
    return JointSequence(seq.positions + t, seq.fps)


def canonicalize(seq: JointSequence, skeleton: Skeleton) -> JointSequence:
    """Put the floor at y=0, the first root at the XZ origin, first facing +Z."""
    if seq.frames < 2:
        raise InvalidInputError("canonicalize needs at least 2 frames")
    p = np.array(seq.positions)
    theta = headings(p, skeleton)
    p[..., 1] -= p[:, list(skeleton.foot_joints), 1].min()
    p[..., 0] -= p[0, 0, 0]
    p[..., 2] -= p[0, 0, 2]
    if theta[0] != 0.0:
        p = yaw_rotate(p, -theta[0])
    return JointSequence(p, seq.fps)


def _cross_matrix(k: np.ndarray) -> np.ndarray:
    kx = np.zeros(k.shape[:-1] + (3, 3))
    kx[..., 0, 1] = -k[..., 2]
    kx[..., 0, 2] = k[..., 1]
    kx[..., 1, 0] = k[..., 2]
    kx[..., 1, 2] = -k[..., 0]
    kx[..., 2, 0] = -k[..., 1]
    kx[..., 2, 1] = k[..., 0]
    return kx


def _acute_arc(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    # Rodrigues form, well conditioned while u . v > 0
    kx = _cross_matrix(np.cross(u, v))
    c = np.einsum("...i,...i->...", u, v)
    return np.eye(3) + kx + (kx @ kx) / (1.0 + c)[..., None, None]


def _shortest_arc(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotation matrices taking unit vectors u onto unit vectors v, shape (..., 3, 3).

    Obtuse pairs are handled as a half turn onto -u followed by the acute
    arc from -u to v, which avoids dividing by 1 + u.v near zero.
    """
    u, v = np.broadcast_arrays(u, v)
    c = np.einsum("...i,...i->...", u, v)
    R = np.empty(u.shape[:-1] + (3, 3))
    acute = c >= 0.0
    R[acute] = _acute_arc(u[acute], v[acute])
    if not np.all(acute):
        uo, vo = u[~acute], v[~acute]
        pick = np.eye(3)[np.argmin(np.abs(uo), axis=-1)]
        a = np.cross(uo, pick)
        a /= np.linalg.norm(a, axis=-1, keepdims=True)
        half = 2.0 * a[..., :, None] * a[..., None, :] - np.eye(3)
        R[~acute] = _acute_arc(-uo, vo) @ half
    return R


def rotation_to_6d(R: np.ndarray) -> np.ndarray:
    """First two columns of each rotation matrix, column-major: (r00, r10, r20, r01, r11, r21)."""
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def rotation_from_6d(d6: np.ndarray) -> np.ndarray:
    a = d6[..., :3]
    b = d6[..., 3:]
    c = np.cross(a, b)
    return np.stack([a, b, c], axis=-1)


def compute_local_rotations(seq: JointSequence, skeleton: Skeleton) -> np.ndarray:
    """F x 21 x 6 bone rotations in the root heading frame.

    Entry j-1 is the shortest-arc rotation taking the template offset of
    joint j onto the observed vector from its parent to j.
    """
    p = seq.positions
    theta = headings(p, skeleton)
    local = yaw_rotate(p, -theta[:, None])
    parents = skeleton.parents[1:]
    bones = local[:, 1:] - local[:, parents]
    length = np.linalg.norm(bones, axis=-1)
    bad = np.argwhere(length < _EPS_BONE)
    if bad.size:
        frame, j = bad[0]
        raise RotationUndefinedError(joint=int(j) + 1, frame=int(frame))
    v = bones / length[..., None]
    off = skeleton.offsets[1:]
    u = off / np.linalg.norm(off, axis=-1, keepdims=True)
    R = _shortest_arc(np.broadcast_to(u, v.shape), v)
    return rotation_to_6d(R)


def detect_foot_contacts(seq: JointSequence, skeleton: Skeleton,
                         velocity_threshold: float = DEFAULT_CONTACT_THRESHOLD) -> np.ndarray:
    """F x 4 binary contacts: squared per-frame displacement below the threshold."""
    if seq.frames < 2:
        raise InvalidInputError("contact detection needs at least 2 frames")
    feet = seq.positions[:, list(skeleton.foot_joints)]
    sq = np.sum((feet[1:] - feet[:-1]) ** 2, axis=-1)
    contacts = (sq < velocity_threshold).astype(np.float64)
    return np.concatenate([contacts, contacts[-1:]], axis=0)


def _pad_last(a: np.ndarray) -> np.ndarray:
    return np.concatenate([a, a[-1:]], axis=0)


def extract_features(seq: JointSequence, skeleton: Skeleton,
                     contact_threshold: float = DEFAULT_CONTACT_THRESHOLD) -> KinematicFeatureSequence:
    """Map a canonicalized joint sequence to F x 263 kinematic features."""
    if seq.frames < 2:
        raise InvalidInputError("feature extraction needs at least 2 frames")
    p = seq.positions
    F = seq.frames
    theta = headings(p, skeleton)
    root = p[:, 0]

    out = np.empty((F, FEATURE_DIM))
    out[:, 0] = _pad_last(wrap_angle(np.diff(theta)))
    root_vel = yaw_rotate(root[1:] - root[:-1], -theta[:-1])
    out[:, 1] = _pad_last(root_vel[:, 0])
    out[:, 2] = _pad_last(root_vel[:, 2])
    out[:, 3] = root[:, 1]

    ric = yaw_rotate(p[:, 1:] - root[:, None], -theta[:, None])
    out[:, RIC] = ric.reshape(F, -1)
    out[:, ROT6D] = compute_local_rotations(seq, skeleton).reshape(F, -1)
    vel = yaw_rotate(p[1:] - p[:-1], -theta[:-1, None])
    out[:, VEL] = _pad_last(vel.reshape(F - 1, -1))
    out[:, CONTACT] = detect_foot_contacts(seq, skeleton, contact_threshold)
    return KinematicFeatureSequence(out, seq.fps)


def recover_joints(feat: KinematicFeatureSequence, skeleton: Skeleton | None = None) -> JointSequence:
    """Integrate root motion from the origin with zero yaw and place joints from RIC positions.

    Only the root and RIC slices are used. ``skeleton`` is accepted for API
    symmetry with extract_features.
    """
    X = feat.values
    F = X.shape[0]
    theta = np.zeros(F)
    theta[1:] = np.cumsum(X[:-1, 0])
    step = np.zeros((F - 1, 3))
    step[:, 0] = X[:-1, 1]
    step[:, 2] = X[:-1, 2]
    root = np.zeros((F, 3))
    root[1:] = np.cumsum(yaw_rotate(step, theta[:-1]), axis=0)
    root[:, 1] = X[:, 3]

    ric = X[:, RIC].reshape(F, JOINT_COUNT - 1, 3)
    joints = np.empty((F, JOINT_COUNT, 3))
    joints[:, 0] = root
    joints[:, 1:] = root[:, None] + yaw_rotate(ric, theta[:, None])
    return JointSequence(joints, feat.fps)


def mpjpe(a: JointSequence, b: JointSequence) -> float:
    """Mean per-joint position error in meters."""
    if a.positions.shape != b.positions.shape:
        raise ShapeMismatchError(f"shape mismatch: {a.positions.shape} vs {b.positions.shape}")
    return float(np.mean(np.linalg.norm(a.positions - b.positions, axis=-1)))
