"""Skeleton, pose and shape types plus forward kinematics.

Joint j (j >= 1) owns the bone segment from its parent's rest position to its
own; its axis-angle rotation articulates that bone about the parent's rest
position. The root's rotation pivots about the root itself and, together with
the root translation, moves the whole body. At the identity pose every joint
transform is the identity, for any shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import RigidTransform, as_vec3, axis_angle_to_matrix


@dataclass(frozen=True)
class Skeleton:
    """Joint tree with per-joint rest offsets (from the parent, unscaled)."""

    parents: np.ndarray  # (K,) int, parents[0] == -1
    offsets: np.ndarray  # (K, 3) rest offset from parent; root offset is absolute
    length_slot: np.ndarray  # (K,) int index into Shape length multipliers, -1 for none

    def __post_init__(self):
        par = np.asarray(self.parents, dtype=np.intp)
        off = np.asarray(self.offsets, dtype=np.float64).reshape(-1, 3)
        slot = np.asarray(self.length_slot, dtype=np.intp)
        k = par.shape[0]
        if k < 1 or off.shape[0] != k or slot.shape[0] != k:
            raise ValueError("inconsistent skeleton arrays")
        if par[0] != -1 or np.any(par[1:] >= np.arange(1, k)) or np.any(par[1:] < 0):
            raise ValueError("parents must form a tree rooted at joint 0 with parent < child")
        object.__setattr__(self, "parents", par)
        object.__setattr__(self, "offsets", off)
        object.__setattr__(self, "length_slot", slot)

    @property
    def joint_count(self) -> int:
        return int(self.parents.shape[0])

    def rest_positions(self, shape: "Shape") -> np.ndarray:
        """Rest joint positions (K, 3) with shape length multipliers applied."""
        scale = shape.length_multiplier(self.length_slot)
        pos = np.empty_like(self.offsets)
        pos[0] = self.offsets[0] * scale[0]
        for j in range(1, self.joint_count):
            pos[j] = pos[self.parents[j]] + self.offsets[j] * scale[j]
        return pos


@dataclass(frozen=True)
class Pose:
    """Per-joint axis-angle rotations plus a root translation."""

    axis_angle: np.ndarray  # (K, 3)
    root_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        aa = np.asarray(self.axis_angle, dtype=np.float64).reshape(-1, 3)
        rt = as_vec3(self.root_translation)
        if not np.all(np.isfinite(aa)):
            raise ValueError("pose contains non-finite values")
        object.__setattr__(self, "axis_angle", aa)
        object.__setattr__(self, "root_translation", rt)

    @property
    def joint_count(self) -> int:
        return int(self.axis_angle.shape[0])

    @staticmethod
    def identity(joint_count: int) -> "Pose":
        return Pose(np.zeros((joint_count, 3)))

    def flatten(self) -> np.ndarray:
        """Axis-angles then root translation, as one vector of length 3K + 3."""
        return np.concatenate([self.axis_angle.ravel(), self.root_translation])


# length multiplier slots: 0 spine, 1 arms, 2 legs; index 3 scales all radii
SHAPE_DIM = 4


@dataclass(frozen=True)
class Shape:
    """Limb length / radius multipliers, all positive."""

    values: np.ndarray = field(default_factory=lambda: np.ones(SHAPE_DIM))

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if v.size != SHAPE_DIM:
            raise ValueError(f"shape needs {SHAPE_DIM} multipliers, got {v.size}")
        if not np.all(v > 0):
            raise ValueError("shape multipliers must be positive")
        object.__setattr__(self, "values", v)

    @property
    def radius_multiplier(self) -> float:
        return float(self.values[3])

    def length_multiplier(self, slots: np.ndarray) -> np.ndarray:
        """Per-joint length multiplier given the joints' slot indices."""
        out = np.ones(slots.shape[0])
        valid = slots >= 0
        out[valid] = self.values[slots[valid]]
        return out


class JointTransforms:
    """Per-joint observation-from-canonical rigid transforms (Eq-style R, t)."""

    def __init__(self, rotations: np.ndarray, translations: np.ndarray):
        self.rotations = np.asarray(rotations, dtype=np.float64).reshape(-1, 3, 3)
        self.translations = np.asarray(translations, dtype=np.float64).reshape(-1, 3)
        if self.rotations.shape[0] != self.translations.shape[0]:
            raise ValueError("rotation/translation count mismatch")

    @property
    def joint_count(self) -> int:
        return int(self.rotations.shape[0])

    def rigid(self, j: int) -> RigidTransform:
        return RigidTransform(self.rotations[j], self.translations[j])


def forward_kinematics(skeleton: Skeleton, pose: Pose, shape: Shape) -> JointTransforms:
    """Joint transforms mapping canonical-space points attached to each bone
    into observation space."""
    k = skeleton.joint_count
    if pose.joint_count != k:
        raise ValueError(f"pose has {pose.joint_count} joints, skeleton has {k}")
    rest = skeleton.rest_positions(shape)
    rot = np.empty((k, 3, 3))
    trn = np.empty((k, 3))
    for j in range(k):
        r_local = axis_angle_to_matrix(pose.axis_angle[j])
        pivot = rest[j] if j == 0 else rest[skeleton.parents[j]]
        # rotation about the pivot point
        t_local = pivot - r_local @ pivot
        if j == 0:
            rot[j] = r_local
            trn[j] = t_local + pose.root_translation
        else:
            p = skeleton.parents[j]
            rot[j] = rot[p] @ r_local
            trn[j] = rot[p] @ t_local + trn[p]
    return JointTransforms(rot, trn)


def validate_weights(weights: np.ndarray, joint_count: int, tol: float = 1e-6) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape[-1] != joint_count:
        raise ValueError(f"weights have {w.shape[-1]} entries, expected {joint_count}")
    if np.any(w < -1e-12):
        raise ValueError("skinning weights must be nonnegative")
    if np.max(np.abs(w.sum(axis=-1) - 1.0)) > tol:
        raise ValueError("skinning weights must sum to 1")
    return w


def blend_transforms(transforms: JointTransforms, weights: np.ndarray):
    """Linearly blended per-point transforms.

    weights: (N, K). Returns (rot (N, 3, 3), trans (N, 3)); rows need not be
    rigid -- that is the nature of linear blend skinning.
    """
    w = np.asarray(weights, dtype=np.float64)
    rot = np.einsum("nk,kab->nab", w, transforms.rotations)
    trn = w @ transforms.translations
    return rot, trn


def apply_lbs(transforms: JointTransforms, weights: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Blend G = sum_j w_j G_j, then apply to each point. points: (N, 3)."""
    rot, trn = blend_transforms(transforms, weights)
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return np.einsum("nab,nb->na", rot, p) + trn
