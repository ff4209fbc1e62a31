"""Pose-magnitude gates: map head-pose angles to a correction strength.

The effective angle of a pose is recovered from the infinity norm of the
per-axis sines, so every gate kind consumes one scalar angle in [0, pi/2].
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import so3
from .errors import AngleOutOfRangeError

_HALF_PI = math.pi / 2.0


class GateKind(enum.Enum):
    IDENTITY = "identity"
    LINEAR = "linear"
    SIGMOID = "sigmoid"
    ABS_SIN = "abs_sin"


@dataclass(frozen=True)
class PoseAngles:
    """Head pose as pitch/yaw/roll in radians, each within [-pi/2, pi/2]."""

    pitch: float
    yaw: float
    roll: float

    @classmethod
    def zero(cls) -> "PoseAngles":
        return cls(0.0, 0.0, 0.0)

    def as_tuple(self) -> tuple:
        return (self.pitch, self.yaw, self.roll)


def mirror_pose(p: PoseAngles) -> PoseAngles:
    """Pose of the horizontally flipped view: yaw and roll change sign."""
    return PoseAngles(p.pitch, -p.yaw, -p.roll)


def _validate(p: PoseAngles) -> None:
    for name, a in (("pitch", p.pitch), ("yaw", p.yaw), ("roll", p.roll)):
        if not math.isfinite(a) or abs(a) > _HALF_PI:
            raise AngleOutOfRangeError(
                f"{name} = {a!r} outside the supported range [-pi/2, pi/2]"
            )


def effective_angle(p: PoseAngles) -> float:
    """Scalar pose magnitude ``arcsin(max(|sin pitch|, |sin yaw|, |sin roll|))``.

    Computed from absolute angles so mirrored poses give bit-identical results.
    """
    _validate(p)
    s = max(math.sin(abs(p.pitch)), math.sin(abs(p.yaw)), math.sin(abs(p.roll)))
    return math.asin(min(s, 1.0))


def gate(kind: GateKind, p: PoseAngles) -> float:
    """Gate value for a pose.

    Identity is constantly 1; Linear is ``2 theta / pi``; Sigmoid is the
    logistic of ``4 theta / pi - 1`` (kept exactly as defined, so its range is
    (0.269, 0.731)); AbsSin is ``|sin theta|``, which is 0 at the frontal pose
    and 1 when any component saturates at +-pi/2.
    """
    theta = effective_angle(p)
    if kind is GateKind.IDENTITY:
        return 1.0
    if kind is GateKind.LINEAR:
        return 2.0 * theta / math.pi
    if kind is GateKind.SIGMOID:
        return 1.0 / (1.0 + math.exp(1.0 - 4.0 * theta / math.pi))
    if kind is GateKind.ABS_SIN:
        return abs(math.sin(theta))
    raise ValueError(f"unknown gate kind {kind!r}")


def pose_to_rotation(p: PoseAngles) -> np.ndarray:
    """Rotation matrix of a pose, composing yaw-pitch-roll in Z*Y*X order."""
    rz = so3.exp_map(np.array([0.0, 0.0, p.yaw]))
    ry = so3.exp_map(np.array([0.0, p.pitch, 0.0]))
    rx = so3.exp_map(np.array([p.roll, 0.0, 0.0]))
    return rz @ ry @ rx


def pose_to_phi(p: PoseAngles) -> np.ndarray:
    """Rotation vector of a pose: the log map of :func:`pose_to_rotation`."""
    return so3.log_map(pose_to_rotation(p))
