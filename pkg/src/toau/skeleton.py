"""22-joint body skeleton template."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InvalidInputError

JOINT_COUNT = 22


def _frozen(a, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Kinematic tree with rest-pose bone offsets (meters, Y up, facing +Z).

    ``foot_joints`` is (left ankle, left foot, right ankle, right foot) and
    ``facing_joints`` is (right hip, left hip, right shoulder, left shoulder).
    """

    names: tuple[str, ...]
    parents: np.ndarray
    offsets: np.ndarray
    foot_joints: tuple[int, int, int, int]
    facing_joints: tuple[int, int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "parents", _frozen(self.parents, np.int64))
        object.__setattr__(self, "offsets", _frozen(self.offsets, np.float64))
        n = len(self.names)
        if n != JOINT_COUNT:
            raise InvalidInputError(f"skeleton must have {JOINT_COUNT} joints, got {n}")
        if self.parents.shape != (n,) or self.offsets.shape != (n, 3):
            raise InvalidInputError("parents/offsets shape does not match joint count")
        if self.parents[0] != -1:
            raise InvalidInputError("joint 0 must be the root (parent -1)")
        for i in range(1, n):
            if not 0 <= self.parents[i] < i:
                raise InvalidInputError(f"parent of joint {i} must precede it")
            if np.linalg.norm(self.offsets[i]) == 0.0:
                raise InvalidInputError(f"joint {i} has a zero-length offset")
        if not np.all(np.isfinite(self.offsets)):
            raise InvalidInputError("non-finite offsets")
        for idx in (*self.foot_joints, *self.facing_joints):
            if not 0 <= idx < n:
                raise InvalidInputError(f"joint index {idx} out of range")

    @property
    def joint_count(self) -> int:
        return len(self.names)

    def rest_pose(self) -> np.ndarray:
        """World positions of the template with the root at the origin."""
        pos = np.zeros((self.joint_count, 3))
        for j in range(1, self.joint_count):
            pos[j] = pos[self.parents[j]] + self.offsets[j]
        return pos

    def index(self, name: str) -> int:
        return self.names.index(name)


def load_skeleton(path: str | Path) -> Skeleton:
    with open(path) as fh:
        return _from_dict(json.load(fh))


def _from_dict(doc: dict) -> Skeleton:
    joints = doc["joints"]
    facing = doc["facing_joints"]
    return Skeleton(
        names=tuple(j["name"] for j in joints),
        parents=[j["parent"] for j in joints],
        offsets=[j["offset"] for j in joints],
        foot_joints=tuple(doc["foot_joints"]),
        facing_joints=(facing["right_hip"], facing["left_hip"],
                       facing["right_shoulder"], facing["left_shoulder"]),
    )


@lru_cache(maxsize=None)
def default_skeleton() -> Skeleton:
    text = resources.files("toau").joinpath("data/skeleton22.json").read_text()
    return _from_dict(json.loads(text))
