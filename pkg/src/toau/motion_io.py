"""Little-endian storage formats for joint (.j3d) and feature (.hml) sequences."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FileFormatError
from .motion import FEATURE_DIM, JointSequence, KinematicFeatureSequence
from .skeleton import JOINT_COUNT

_HEADER = struct.Struct("<4sIIHH")
J3D_MAGIC = b"J3D1"
HML_MAGIC = b"HML1"


def _dump(magic: bytes, values: np.ndarray, width: int, fps: int) -> bytes:
    frames = values.shape[0]
    head = _HEADER.pack(magic, frames, width, fps, 0)
    return head + np.ascontiguousarray(values, dtype="<f4").tobytes()


def _load(data: bytes, magic: bytes, width: int, inner: tuple[int, ...]):
    if len(data) < _HEADER.size:
        raise FileFormatError("file shorter than header")
    got, frames, w, fps, reserved = _HEADER.unpack_from(data)
    if got != magic:
        raise FileFormatError(f"bad magic {got!r}, expected {magic!r}")
    if w != width:
        raise FileFormatError(f"width field {w}, expected {width}")
    if reserved != 0:
        raise FileFormatError("reserved header field must be zero")
    count = frames * int(np.prod(inner))
    body = data[_HEADER.size:]
    if len(body) != 4 * count:
        raise FileFormatError(f"expected {4 * count} data bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape((frames,) + inner)
    return arr, fps


def joints_to_bytes(seq: JointSequence) -> bytes:
    return _dump(J3D_MAGIC, seq.positions.reshape(seq.frames, -1), JOINT_COUNT, seq.fps)


def joints_from_bytes(data: bytes) -> JointSequence:
    arr, fps = _load(data, J3D_MAGIC, JOINT_COUNT, (JOINT_COUNT, 3))
    return JointSequence(arr, fps)


def features_to_bytes(feat: KinematicFeatureSequence) -> bytes:
    return _dump(HML_MAGIC, feat.values, FEATURE_DIM, feat.fps)


def features_from_bytes(data: bytes) -> KinematicFeatureSequence:
    arr, fps = _load(data, HML_MAGIC, FEATURE_DIM, (FEATURE_DIM,))
    return KinematicFeatureSequence(arr, fps)


def write_j3d(path: str | Path, seq: JointSequence) -> None:
    Path(path).write_bytes(joints_to_bytes(seq))


def read_j3d(path: str | Path) -> JointSequence:
    return joints_from_bytes(Path(path).read_bytes())


def write_hml(path: str | Path, feat: KinematicFeatureSequence) -> None:
    Path(path).write_bytes(features_to_bytes(feat))


def read_hml(path: str | Path) -> KinematicFeatureSequence:
    return features_from_bytes(Path(path).read_bytes())
