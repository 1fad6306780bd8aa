"""Cameras, rays, rigid poses and oriented 3D boxes.

Conventions used everywhere in this package:

* world frame: right-handed, z up
* camera frame: x right, y down, z forward
* object-local frame: x forward, y left, z up; yaw rotates about z and the
  symmetry plane of symmetric objects is y = 0

All types are immutable values and every function is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from shapely.geometry import Polygon


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


def yaw_matrix(yaw: float) -> np.ndarray:
    """Rotation about the world/local z axis."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera with a rigid world-from-camera pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray  # (3, 3) world-from-camera
    translation: np.ndarray  # (3,) camera center in world

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")
        R = np.asarray(self.rotation, dtype=float)
        if R.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or np.linalg.det(R) < 0:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @property
    def pose_matrix(self) -> np.ndarray:
        """4x4 world-from-camera matrix (row-major)."""
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    @classmethod
    def from_pose_matrix(cls, fx, fy, cx, cy, width, height, pose: np.ndarray) -> "CameraModel":
        pose = np.asarray(pose, dtype=float).reshape(4, 4)
        return cls(fx, fy, cx, cy, width, height, pose[:3, :3], pose[:3, 3])


@dataclass(frozen=True)
class Ray:
    """Ray r(t) = origin + t * direction, parameterized by metric distance."""

    origin: np.ndarray
    direction: np.ndarray
    t_near: float = 0.0
    t_far: float = math.inf
    frame: str = "world"

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=float).reshape(3)
        d = np.asarray(self.direction, dtype=float).reshape(3)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"ray direction must be unit length, got norm {n}")
        if not (0 <= self.t_near < self.t_far):
            raise ValueError("need 0 <= t_near < t_far")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t) -> np.ndarray:
        return self.origin + np.multiply.outer(np.asarray(t), self.direction)


@dataclass(frozen=True)
class Box3D:
    """Oriented (yaw-only) 3D box.

    size is (length, width, height) along the local x, y, z axes.
    """

    center: np.ndarray
    size: np.ndarray
    yaw: float
    frame: str = "world"

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(3)
        s = np.asarray(self.size, dtype=float).reshape(3)
        if np.any(s <= 0):
            raise ValueError("box sizes must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", s)
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def volume(self) -> float:
        return float(np.prod(self.size))

    def corners(self) -> np.ndarray:
        """(8, 3) world-frame corners."""
        l, w, h = self.size
        sx = np.array([1, 1, 1, 1, -1, -1, -1, -1]) * (l / 2)
        sy = np.array([1, 1, -1, -1, 1, 1, -1, -1]) * (w / 2)
        sz = np.array([1, -1, 1, -1, 1, -1, 1, -1]) * (h / 2)
        local = np.stack([sx, sy, sz], axis=1)
        return local @ yaw_matrix(self.yaw).T + self.center

    def footprint(self) -> np.ndarray:
        """(4, 2) BEV footprint corners, counter-clockwise."""
        l, w = self.size[0] / 2, self.size[1] / 2
        pts = np.array([[l, w], [-l, w], [-l, -w], [l, -w]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        R = np.array([[c, -s], [s, c]])
        return pts @ R.T + self.center[:2]

    def z_interval(self) -> tuple[float, float]:
        return (self.center[2] - self.size[2] / 2, self.center[2] + self.size[2] / 2)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Boolean mask of which points lie inside the box."""
        pts = np.atleast_2d(pts) - self.center
        local = pts @ yaw_matrix(self.yaw)  # R^T applied from the right
        return np.all(np.abs(local) <= self.size / 2 + 1e-12, axis=1)


@dataclass(frozen=True)
class RigidPlacement:
    """Translation + yaw placing an object-local frame into the world."""

    translation: np.ndarray
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def rotation(self) -> np.ndarray:
        return yaw_matrix(self.yaw)

    def to_world(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts) @ self.rotation.T + self.translation

    def to_local(self, pts: np.ndarray) -> np.ndarray:
        return (np.asarray(pts) - self.translation) @ self.rotation

    def place_box(self, box: Box3D) -> Box3D:
        """World-frame box of a box given in the placement's local frame."""
        center = self.to_world(box.center.reshape(1, 3))[0]
        return Box3D(center, box.size, box.yaw + self.yaw, frame="world")


def look_at_rotation(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-from-camera rotation with camera z toward target, y down."""
    eye = np.asarray(eye, dtype=float)
    fwd = np.asarray(target, dtype=float) - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.asarray(up, dtype=float)
    right = np.cross(fwd, up)
    nr = np.linalg.norm(right)
    if nr < 1e-9:  # looking straight along up; pick an arbitrary right
        right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
        nr = np.linalg.norm(right)
    right /= nr
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd], axis=1)


def generate_ray(camera: CameraModel, pixel: tuple[float, float],
                 t_near: float = 0.0, t_far: float = math.inf) -> Ray:
    """Back-project a (sub)pixel through the intrinsics into a world ray."""
    u, v = pixel
    if not (0 <= u < camera.width and 0 <= v < camera.height):
        raise ValueError(f"pixel ({u}, {v}) outside {camera.width}x{camera.height} image")
    d_cam = np.array([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0])
    d_world = camera.rotation @ d_cam
    d_world /= np.linalg.norm(d_world)
    return Ray(camera.translation, d_world, t_near, t_far)


def generate_rays(camera: CameraModel, pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ray generation: (N, 2) pixels -> origins (N, 3), unit dirs (N, 3)."""
    pixels = np.atleast_2d(pixels)
    d_cam = np.stack([
        (pixels[:, 0] - camera.cx) / camera.fx,
        (pixels[:, 1] - camera.cy) / camera.fy,
        np.ones(len(pixels)),
    ], axis=1)
    d = d_cam @ camera.rotation.T
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.broadcast_to(camera.translation, d.shape).copy()
    return o, d


def ray_aabb_intersect(ray: Ray, bounds_min, bounds_max) -> tuple[float, float] | None:
    """Slab intersection of a ray with an axis-aligned box, clipped to the ray bounds."""
    ta, tb = ray_aabb_intersect_batch(
        ray.origin[None], ray.direction[None], bounds_min, bounds_max,
        ray.t_near, ray.t_far)
    if ta[0] >= tb[0]:
        return None
    return float(ta[0]), float(tb[0])


def ray_aabb_intersect_batch(origins, directions, bounds_min, bounds_max,
                             t_near=0.0, t_far=math.inf):
    """Vectorized slab test. Returns (t_a, t_b); a miss has t_a >= t_b."""
    bounds_min = np.asarray(bounds_min, dtype=float)
    bounds_max = np.asarray(bounds_max, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / directions
        t0 = (bounds_min - origins) * inv
        t1 = (bounds_max - origins) * inv
    lo = np.minimum(t0, t1)
    hi = np.maximum(t0, t1)
    # parallel-axis rays: the slab is all of t when the origin lies inside it,
    # empty otherwise (substituted after min/max so the empty case survives)
    par = directions == 0.0
    if np.any(par):
        inside = (origins >= bounds_min) & (origins <= bounds_max)
        lo = np.where(par, np.where(inside, -np.inf, np.inf), lo)
        hi = np.where(par, np.where(inside, np.inf, -np.inf), hi)
    ta = np.maximum(lo.max(axis=-1), t_near)
    tb = np.minimum(hi.min(axis=-1), t_far)
    return ta, tb


def box3d_iou(a: Box3D, b: Box3D) -> float:
    """IoU of two yaw-oriented boxes: 2D footprint polygon overlap x z-interval overlap."""
    pa = Polygon(a.footprint())
    pb = Polygon(b.footprint())
    inter_2d = pa.intersection(pb).area
    if inter_2d <= 0.0:
        return 0.0
    za0, za1 = a.z_interval()
    zb0, zb1 = b.z_interval()
    dz = min(za1, zb1) - max(za0, zb0)
    if dz <= 0.0:
        return 0.0
    inter = inter_2d * dz
    union = a.volume + b.volume - inter
    return float(inter / union)


def transform_ray(ray: Ray, placement: RigidPlacement, direction: str) -> Ray:
    """Map a ray through a rigid placement; 'world_to_local' or 'local_to_world'.

    Rigid transforms preserve parameter length, so the t bounds carry over.
    """
    if direction == "world_to_local":
        o = placement.to_local(ray.origin.reshape(1, 3))[0]
        d = ray.direction @ placement.rotation
        frame = "local"
    elif direction == "local_to_world":
        o = placement.to_world(ray.origin.reshape(1, 3))[0]
        d = placement.rotation @ ray.direction
        frame = "world"
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return replace(ray, origin=o, direction=d, frame=frame)
