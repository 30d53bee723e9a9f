"""Deterministic math primitives shared by every module.

Conventions (fixed once, used everywhere):
  - right-handed world frame, y up
  - camera frame: x right, y down, z forward; the camera looks down +z
  - camera extrinsics are world-from-camera
  - all reals are float64 end to end
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-6
UNIT_TOL = 1e-9


def as_vec3(v) -> np.ndarray:
    """Coerce to a finite float64 (3,) vector."""
    a = np.asarray(v, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite vector: {a}")
    return a


def axis_angle_to_matrix(axis_angle) -> np.ndarray:
    """Rodrigues rotation matrix for an axis-angle vector (angle = |v|).

    Returns the identity for the zero vector.
    """
    v = as_vec3(axis_angle)
    theta = float(np.linalg.norm(v))
    if theta < 1e-12:
        return np.eye(3)
    k = v / theta
    kx = np.array([
        [0.0, -k[2], k[1]],
        [k[2], 0.0, -k[0]],
        [-k[1], k[0], 0.0],
    ])
    return np.eye(3) + np.sin(theta) * kx + (1.0 - np.cos(theta)) * (kx @ kx)


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (3x3, orthonormal, det +1) plus translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = as_vec3(self.translation)
        if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_axis_angle(axis_angle, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return RigidTransform(axis_angle_to_matrix(axis_angle), as_vec3(translation))

    @staticmethod
    def rotation_about(axis_angle, pivot) -> "RigidTransform":
        """Rotation about an arbitrary pivot point."""
        r = axis_angle_to_matrix(axis_angle)
        p = as_vec3(pivot)
        return RigidTransform(r, p - r @ p)

    def apply(self, points) -> np.ndarray:
        """Apply to one (3,) point or a batch (N, 3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def apply_vector(self, vectors) -> np.ndarray:
        """Rotate direction vectors (no translation)."""
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self @ other)(x) = self(other(x))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def as_matrix34(self) -> np.ndarray:
        m = np.empty((3, 4))
        m[:, :3] = self.rotation
        m[:, 3] = self.translation
        return m


def compose(*transforms: RigidTransform) -> RigidTransform:
    """compose(a, b, c)(x) = a(b(c(x)))."""
    out = RigidTransform.identity()
    for t in transforms:
        out = out.compose(t)
    return out


def invert(t: RigidTransform) -> RigidTransform:
    return t.inverse()


@dataclass(frozen=True)
class Ray:
    """Ray with unit direction and a valid [t_near, t_far] interval."""

    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        o = as_vec3(self.origin)
        d = as_vec3(self.direction)
        if abs(np.linalg.norm(d) - 1.0) > UNIT_TOL:
            raise ValueError("ray direction must be unit length")
        if not self.t_near < self.t_far:
            raise ValueError(f"empty ray interval [{self.t_near}, {self.t_far}]")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t) -> np.ndarray:
        return self.origin + np.multiply.outer(np.asarray(t, dtype=np.float64), self.direction)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera. `extrinsic` maps camera-frame points to world."""

    extrinsic: RigidTransform
    focal: float
    principal: tuple = (0.0, 0.0)
    image_size: tuple = (64, 64)  # (width, height)

    def __post_init__(self):
        if not self.focal > 0:
            raise ValueError("focal must be positive")
        w, h = self.image_size
        if int(w) < 1 or int(h) < 1:
            raise ValueError("image size must be at least 1x1")
        object.__setattr__(self, "focal", float(self.focal))
        object.__setattr__(self, "principal", (float(self.principal[0]), float(self.principal[1])))
        object.__setattr__(self, "image_size", (int(w), int(h)))

    @property
    def position(self) -> np.ndarray:
        return self.extrinsic.translation

    def pixel_directions(self, pixels: np.ndarray) -> np.ndarray:
        """World-frame unit directions through continuous pixel coords (N, 2)."""
        px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
        cx, cy = self.principal
        d = np.empty((px.shape[0], 3))
        d[:, 0] = (px[:, 0] - cx) / self.focal
        d[:, 1] = (px[:, 1] - cy) / self.focal
        d[:, 2] = 1.0
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return self.extrinsic.apply_vector(d)

    def project(self, points: np.ndarray) -> np.ndarray:
        """World points (N, 3) to continuous pixel coords (N, 2); z<=0 gives nan."""
        p_cam = self.extrinsic.inverse().apply(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        z = p_cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(z > 0, self.focal * p_cam[:, 0] / z + self.principal[0], np.nan)
            v = np.where(z > 0, self.focal * p_cam[:, 1] / z + self.principal[1], np.nan)
        return np.stack([u, v], axis=1)


def pixel_to_ray(camera: Camera, pixel, t_near=1e-3, t_far=1e3) -> Ray:
    """Ray through a continuous pixel coordinate, in the world frame.

    Integer pixel (i, j) has its center at (i + 0.5, j + 0.5).
    """
    px, py = float(pixel[0]), float(pixel[1])
    w, h = camera.image_size
    if not (0.0 <= px <= w and 0.0 <= py <= h):
        raise ValueError(f"pixel ({px}, {py}) outside image bounds {w}x{h}")
    d = camera.pixel_directions(np.array([[px, py]]))[0]
    return Ray(camera.position, d, t_near, t_far)


def look_at_camera(eye, target, focal, image_size, up=(0.0, 1.0, 0.0)) -> Camera:
    """Camera at `eye` looking toward `target`, principal point at image center."""
    eye = as_vec3(eye)
    fwd = as_vec3(target) - eye
    fwd = fwd / np.linalg.norm(fwd)
    upv = as_vec3(up)
    right = np.cross(fwd, upv)
    nr = np.linalg.norm(right)
    if nr < 1e-9:  # looking along up: pick any perpendicular
        right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
        nr = np.linalg.norm(right)
    right /= nr
    down = np.cross(fwd, right)  # camera y points down in a y-up world
    rot = np.stack([right, down, fwd], axis=1)
    w, h = image_size
    return Camera(
        extrinsic=RigidTransform(rot, eye),
        focal=focal,
        principal=(w / 2.0, h / 2.0),
        image_size=(w, h),
    )


def ray_box_range(origins, directions, box_lo, box_hi):
    """Slab intersection of rays with an AABB.

    origins, directions: (N, 3). Returns (t0, t1, hit) with t0 clamped to >= 1e-6;
    hit is False where the ray misses the box.
    """
    o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    lo = np.asarray(box_lo, dtype=np.float64)
    hi = np.asarray(box_hi, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        ta = (lo - o) * inv
        tb = (hi - o) * inv
    # parallel-axis rays: +-inf propagates correctly through min/max unless origin
    # sits exactly on a slab plane (0 * inf = nan); treat nan slabs as non-binding
    tmin = np.nanmax(np.minimum(ta, tb), axis=1)
    tmax = np.nanmin(np.maximum(ta, tb), axis=1)
    t0 = np.maximum(tmin, 1e-6)
    hit = (tmax > t0) & np.isfinite(tmin) & np.isfinite(tmax)
    return t0, tmax, hit
