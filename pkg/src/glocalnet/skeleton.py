"""Skeleton topology shared by metrics, data and rendering."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np


@dataclass(frozen=True)
class SkeletonSpec:
    """Joint count ``J``, spatial dims ``D`` and bone list.

    Joint 0 is the root. Poses are flat vectors ordered joint-major:
    ``[x0, y0, (z0), x1, y1, ...]``.
    """

    J: int
    D: int
    bones: Tuple[Tuple[int, int], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.J < 1:
            raise ValueError(f"skeleton needs at least one joint, got J={self.J}")
        if self.D not in (2, 3):
            raise ValueError(f"skeleton dims must be 2 or 3, got D={self.D}")
        bones = tuple((int(a), int(b)) for a, b in self.bones)
        for a, b in bones:
            if not (0 <= a < self.J and 0 <= b < self.J):
                raise ValueError(f"bone ({a}, {b}) references a joint outside [0, {self.J})")
            if a == b:
                raise ValueError(f"bone ({a}, {b}) is a self-loop")
        object.__setattr__(self, "bones", bones)

    @property
    def pose_dim(self) -> int:
        return self.J * self.D

    def joints(self, frames: np.ndarray) -> np.ndarray:
        """Reshape ``(n, J*D)`` frames to ``(n, J, D)``."""
        frames = np.asarray(frames, dtype=np.float64)
        if frames.shape[-1] != self.pose_dim:
            raise ValueError(
                f"pose width {frames.shape[-1]} does not match skeleton J*D={self.pose_dim}"
            )
        return frames.reshape(frames.shape[:-1] + (self.J, self.D))

    def to_dict(self) -> dict:
        return {"joints": self.J, "dims": self.D, "bones": [list(b) for b in self.bones]}

    @classmethod
    def from_dict(cls, d: dict) -> "SkeletonSpec":
        return cls(int(d["joints"]), int(d["dims"]), tuple(tuple(b) for b in d.get("bones", [])))


def stick_figure(D: int = 2) -> SkeletonSpec:
    """An 8-joint figure: pelvis, neck, head, two hands, two feet, chest."""
    #   0 pelvis, 1 chest, 2 neck, 3 head, 4 l-hand, 5 r-hand, 6 l-foot, 7 r-foot
    bones = ((0, 1), (1, 2), (2, 3), (2, 4), (2, 5), (0, 6), (0, 7))
    return SkeletonSpec(8, D, bones)


def arm(D: int = 2) -> SkeletonSpec:
    """Shoulder, elbow, wrist chain."""
    return SkeletonSpec(3, D, ((0, 1), (1, 2)))


STICK_REST_2D = np.array(
    [
        [0.0, 0.0],
        [0.0, 0.5],
        [0.0, 1.0],
        [0.0, 1.3],
        [-0.6, 0.7],
        [0.6, 0.7],
        [-0.3, -1.0],
        [0.3, -1.0],
    ]
)


def rest_pose(spec: SkeletonSpec) -> np.ndarray:
    """Neutral ``(J, D)`` pose for the built-in skeletons; a line of joints otherwise."""
    if spec.J == 8:
        rest = STICK_REST_2D
    else:
        rest = np.stack([np.zeros(spec.J), np.linspace(0.0, 1.0, spec.J)], axis=1)
    if spec.D == 3:
        rest = np.concatenate([rest, np.zeros((spec.J, 1))], axis=1)
    return rest.copy()

