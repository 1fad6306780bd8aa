"""Analytic test scenes and the brute-force reference renderer.

Scenes are unions of constant-extinction primitives (sphere, oriented box,
z slab) with an optional smooth falloff band at the boundary. Density at a
point is the sum over containing primitives and color the density-weighted
average, so everything has a closed form the quadrature renderer can be
checked against. `bake` turns a scene into a voxel field, `generate_dataset`
renders a posed image/depth/mask manifest from it.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .field import DIRECT, VoxelField, softplus_inv
from .geometry import Box3D, CameraModel, generate_rays, look_at_rotation, ray_aabb_intersect_batch, yaw_matrix
from .images import write_depth_pgm, write_ppm
from .manifest import Frame, InstanceMask, SceneManifest
from .render import RenderResult, composite

RAW_MIN = -20.0  # softplus(-20 + bias) ~ 0
RAW_MAX = 200.0
LOGIT_CLIP = 1e-5


@dataclass(frozen=True)
class Primitive:
    """One constant-density shape; `softness` widens the boundary smoothly."""

    kind: str  # sphere | box | slab
    sigma: float
    color: tuple
    params: dict = dc_field(default_factory=dict)
    softness: float = 0.0
    object_id: str | None = None

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        if self.kind == "sphere":
            c = np.asarray(self.params["center"], dtype=float)
            return np.linalg.norm(pts - c, axis=1) - self.params["radius"]
        if self.kind == "box":
            c = np.asarray(self.params["center"], dtype=float)
            half = np.asarray(self.params["size"], dtype=float) / 2
            local = (pts - c) @ yaw_matrix(self.params.get("yaw", 0.0))
            q = np.abs(local) - half
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            inside = np.minimum(q.max(axis=1), 0.0)
            return outside + inside
        if self.kind == "slab":
            z = pts[:, 2]
            return np.maximum(self.params["z_min"] - z, z - self.params["z_max"])
        raise ValueError(f"unknown primitive kind {self.kind!r}")

    def density(self, pts: np.ndarray) -> np.ndarray:
        sd = self.signed_distance(pts)
        if self.softness <= 0.0:
            ind = (sd < 0.0).astype(float)
        else:
            u = np.clip(0.5 - sd / self.softness, 0.0, 1.0)
            ind = u * u * (3.0 - 2.0 * u)  # smoothstep across the boundary
        return self.sigma * ind

    def to_json(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma, "color": list(self.color),
                "params": {k: (list(v) if isinstance(v, (list, tuple, np.ndarray)) else v)
                           for k, v in self.params.items()},
                "softness": self.softness, "object_id": self.object_id}

    @classmethod
    def from_json(cls, d: dict) -> "Primitive":
        return cls(d["kind"], d["sigma"], tuple(d["color"]), d.get("params", {}),
                   d.get("softness", 0.0), d.get("object_id"))


@dataclass
class AnalyticScene:
    """Closed-form density/color field over an axis-aligned working volume."""

    primitives: list
    bounds_min: np.ndarray
    bounds_max: np.ndarray
    ground_height: float = 0.0
    object_boxes: list = dc_field(default_factory=list)  # (object_id, Box3D)

    def __post_init__(self):
        self.bounds_min = np.asarray(self.bounds_min, dtype=float)
        self.bounds_max = np.asarray(self.bounds_max, dtype=float)
        for p in self.primitives:
            if p.sigma < 0:
                raise ValueError("primitive extinction must be >= 0")
            if min(p.color) < 0 or max(p.color) > 1:
                raise ValueError("primitive colors must lie in [0,1]")

    def eval(self, pts: np.ndarray, dirs=None, only_object=None, exclude_object=None):
        """(sigma, rgb) at points: density sum, density-weighted mean color."""
        pts = np.atleast_2d(pts)
        sigma = np.zeros(len(pts))
        accum = np.zeros((len(pts), 3))
        for p in self.primitives:
            if only_object is not None and p.object_id != only_object:
                continue
            if exclude_object is not None and p.object_id == exclude_object:
                continue
            d = p.density(pts)
            sigma += d
            accum += d[:, None] * np.asarray(p.color)
        rgb = np.zeros((len(pts), 3))
        nz = sigma > 0
        rgb[nz] = accum[nz] / sigma[nz, None]
        return sigma, rgb

    def to_json(self) -> dict:
        return {"primitives": [p.to_json() for p in self.primitives],
                "bounds_min": self.bounds_min.tolist(),
                "bounds_max": self.bounds_max.tolist(),
                "ground_height": self.ground_height,
                "object_boxes": [{"object_id": oid, "center": b.center.tolist(),
                                  "size": b.size.tolist(), "yaw": b.yaw}
                                 for oid, b in self.object_boxes]}

    @classmethod
    def from_json(cls, d: dict) -> "AnalyticScene":
        return cls([Primitive.from_json(p) for p in d["primitives"]],
                   np.array(d["bounds_min"]), np.array(d["bounds_max"]),
                   d.get("ground_height", 0.0),
                   [(ob["object_id"], Box3D(np.array(ob["center"]),
                                            np.array(ob["size"]), ob["yaw"]))
                    for ob in d.get("object_boxes", [])])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "AnalyticScene":
        return cls.from_json(json.loads(Path(path).read_text()))


def _source_eval(source, pts, dirs):
    """Uniform (sigma, rgb) evaluation for AnalyticScene or VoxelField."""
    if isinstance(source, VoxelField):
        return source.query_density(pts), source.query_color(pts, dirs)
    return source.eval(pts, dirs)


def oracle_render_batch(source, origins, dirs, ta, tb, n: int,
                        background_color=(0.0, 0.0, 0.0), only_object=None):
    """Midpoint-rule reference rendering at n steps per ray."""
    n_rays = len(origins)
    hit = ta < tb
    ta = np.where(hit, ta, 0.0)
    tb = np.where(hit, tb, 0.0)
    span = tb - ta
    offsets = ((np.arange(n) + 0.5) / n)[None, :]
    t = ta[:, None] + offsets * span[:, None]
    pts = (origins[:, None, :] + t[:, :, None] * dirs[:, None, :]).reshape(-1, 3)
    dirs_flat = np.repeat(dirs, n, axis=0)
    if only_object is not None:
        sigma, rgb = source.eval(pts, dirs_flat, only_object=only_object)
    else:
        sigma, rgb = _source_eval(source, pts, dirs_flat)
    sigma = sigma.reshape(n_rays, n)
    rgb = rgb.reshape(n_rays, n, 3)
    s = sigma * (span / n)[:, None]
    return composite(s, rgb, t, background_color)


def oracle_render(source, ray, step: float,
                  background_color=(0.0, 0.0, 0.0)) -> RenderResult:
    """Reference render of one ray at a fixed metric step size."""
    if step <= 0:
        raise ValueError("step must be positive")
    if isinstance(source, VoxelField):
        bmin, bmax = source.bounds_min, source.bounds_max
    else:
        bmin, bmax = source.bounds_min, source.bounds_max
    ta, tb = ray_aabb_intersect_batch(ray.origin[None], ray.direction[None],
                                      bmin, bmax, ray.t_near, ray.t_far)
    if ta[0] >= tb[0]:
        bg = np.asarray(background_color, dtype=float)
        return RenderResult(bg, 0.0, 0.0, False)
    n = max(int(math.ceil((tb[0] - ta[0]) / step)), 1)
    out = oracle_render_batch(source, ray.origin[None], ray.direction[None],
                              ta, tb, n, background_color)
    return RenderResult(out["color"][0], float(out["depth"][0]),
                        float(out["opacity"][0]), bool(out["depth_valid"][0]))


def bake(scene: AnalyticScene, voxel_size: float,
         bounds_min=None, bounds_max=None) -> VoxelField:
    """Sample the analytic scene at grid nodes into a direct-color field."""
    bmin = scene.bounds_min if bounds_min is None else np.asarray(bounds_min, float)
    bmax = scene.bounds_max if bounds_max is None else np.asarray(bounds_max, float)
    fld = VoxelField.create(bmin, bmax, voxel_size, color_mode=DIRECT)
    pts = fld.grid_points()
    sigma, rgb = scene.eval(pts)
    raw = np.full(len(pts), RAW_MIN)
    nz = sigma > 0
    raw[nz] = softplus_inv(sigma[nz]) - fld.density_bias
    if np.any(raw > RAW_MAX):
        warnings.warn("density too large for the activation inversion; clamping")
        raw = np.minimum(raw, RAW_MAX)
    logits = np.log(np.clip(rgb, LOGIT_CLIP, 1 - LOGIT_CLIP)) \
        - np.log1p(-np.clip(rgb, LOGIT_CLIP, 1 - LOGIT_CLIP))
    res = fld.resolution
    fld.density_grid = raw.reshape(res).astype(fld.density_grid.dtype)
    fld.color_grid = logits.reshape(*res, 3).astype(fld.color_grid.dtype)
    return fld


def oracle_render_image(scene, camera: CameraModel, step: float = 0.05,
                        background_color=(0.0, 0.0, 0.0), only_object=None,
                        chunk: int = 4096):
    """Full-image reference render: (H, W, 3) color, (H, W) depth, valid mask."""
    h, w = camera.height, camera.width
    us, vs = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    pixels = np.stack([us.ravel(), vs.ravel()], axis=1)
    origins, dirs = generate_rays(camera, pixels)
    colors = np.zeros((h * w, 3))
    depths = np.zeros(h * w)
    valid = np.zeros(h * w, dtype=bool)
    opac = np.zeros(h * w)
    for lo in range(0, h * w, chunk):
        hi = min(lo + chunk, h * w)
        ta, tb = ray_aabb_intersect_batch(origins[lo:hi], dirs[lo:hi],
                                          scene.bounds_min, scene.bounds_max)
        span = float(np.max(np.maximum(tb - ta, 0.0)))
        n = max(int(math.ceil(span / step)), 1)
        out = oracle_render_batch(scene, origins[lo:hi], dirs[lo:hi], ta, tb, n,
                                  background_color, only_object=only_object)
        colors[lo:hi] = out["color"]
        depths[lo:hi] = out["depth"]
        valid[lo:hi] = out["depth_valid"]
        opac[lo:hi] = out["opacity"]
    return (colors.reshape(h, w, 3), depths.reshape(h, w),
            valid.reshape(h, w), opac.reshape(h, w))


@dataclass
class MaskNoiseConfig:
    """Per-frame independent random dilation/erosion of the exact silhouettes."""

    amplitude_px: int = 0
    seed: int = 0


def corrupt_mask(mask: np.ndarray, amplitude_px: int, rng: np.random.Generator):
    from scipy import ndimage

    if amplitude_px <= 0:
        return mask
    r = int(rng.integers(1, amplitude_px + 1))
    if rng.random() < 0.5:
        return ndimage.binary_dilation(mask, iterations=r)
    return ndimage.binary_erosion(mask, iterations=r)


def ring_of_cameras(target, radius: float, height: float, n_views: int,
                    width: int, height_px: int | None = None, fov_deg: float = 60.0,
                    azimuth_range=(0.0, 2.0 * math.pi)) -> list:
    """Cameras on a circular arc looking at a target point."""
    height_px = height_px or width
    f = width / (2.0 * math.tan(math.radians(fov_deg) / 2.0))
    cams = []
    target = np.asarray(target, dtype=float)
    a0, a1 = azimuth_range
    for k in range(n_views):
        az = a0 + (a1 - a0) * (k / max(n_views, 1))
        eye = target + np.array([radius * math.cos(az), radius * math.sin(az), height])
        R = look_at_rotation(eye, target)
        cams.append(CameraModel(f, f, width / 2, height_px / 2, width, height_px, R, eye))
    return cams


def generate_dataset(scene: AnalyticScene, cameras: list, out_dir,
                     noise: MaskNoiseConfig | None = None, step: float = 0.05,
                     background_color=(0.0, 0.0, 0.0),
                     scene_id: str = "synthetic") -> SceneManifest:
    """Render a posed dataset from the analytic scene and write a manifest.

    Images go out as PPM, depths as millimeter PGM, masks as exact object
    silhouettes (optionally corrupted per frame by random morphology).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    noise = noise or MaskNoiseConfig()
    rng = np.random.default_rng(noise.seed)
    frames = []
    for i, cam in enumerate(cameras):
        color, depth, valid, _ = oracle_render_image(scene, cam, step,
                                                     background_color)
        img_name = f"frame_{i:04d}.ppm"
        depth_name = f"frame_{i:04d}_depth.pgm"
        write_ppm(out_dir / img_name, color)
        write_depth_pgm(out_dir / depth_name, depth, valid)
        masks = []
        boxes = []
        for oid, box in scene.object_boxes:
            boxes.append((box, oid))
            _, _, _, opac = oracle_render_image(scene, cam, step,
                                                only_object=oid)
            m = opac > 0.5
            m = corrupt_mask(m, noise.amplitude_px, rng)
            masks.append(InstanceMask.from_array(oid, m))
        frames.append(Frame(cam, img_name, depth_name, boxes, masks,
                            timestamp=float(i), root=out_dir))
    manifest = SceneManifest(scene_id, frames)
    manifest.save(out_dir / "manifest.json")
    return manifest


# -- canonical test scenes ---------------------------------------------------


def car_primitives(center, yaw: float = 0.0, object_id: str = "car",
                   two_tone: bool = False, sigma: float = 40.0,
                   softness: float = 0.15) -> list:
    """Mirror-symmetric two-box vehicle: body + cabin.

    With two_tone, the +y and -y halves get different colors, which breaks
    the appearance symmetry on purpose (for tests that need to tell the two
    sides apart). Geometry stays symmetric either way.
    """
    center = np.asarray(center, dtype=float)
    R = yaw_matrix(yaw)
    body_c = center + R @ np.array([0.0, 0.0, 0.55])
    cabin_c = center + R @ np.array([-0.3, 0.0, 1.25])
    prims = []
    if two_tone:
        for side, col in ((1.0, (0.85, 0.15, 0.1)), (-1.0, (0.1, 0.2, 0.85))):
            prims.append(Primitive("box", sigma, col,
                                   {"center": (center + R @ np.array([0.0, side * 0.45, 0.55])).tolist(),
                                    "size": [4.2, 0.9, 1.1], "yaw": yaw},
                                   softness, object_id))
            prims.append(Primitive("box", sigma, col,
                                   {"center": (center + R @ np.array([-0.3, side * 0.35, 1.25])).tolist(),
                                    "size": [2.0, 0.7, 0.8], "yaw": yaw},
                                   softness, object_id))
    else:
        prims.append(Primitive("box", sigma, (0.85, 0.15, 0.1),
                               {"center": body_c.tolist(), "size": [4.2, 1.8, 1.1],
                                "yaw": yaw}, softness, object_id))
        prims.append(Primitive("box", sigma, (0.9, 0.85, 0.8),
                               {"center": cabin_c.tolist(), "size": [2.0, 1.4, 0.8],
                                "yaw": yaw}, softness, object_id))
    return prims


def car_box(center, yaw: float = 0.0) -> Box3D:
    """Annotation box enclosing the canonical car (4.4 x 2.0 x 1.8 m)."""
    center = np.asarray(center, dtype=float)
    return Box3D(center + np.array([0.0, 0.0, 0.9]), np.array([4.4, 2.0, 1.8]), yaw)


def street_scene(with_car: bool = True, car_center=(2.0, 1.0, 0.0),
                 car_yaw: float = 0.3) -> AnalyticScene:
    """Ground slab + two walls (+ optionally one parked car)."""
    prims = [
        Primitive("slab", 30.0, (0.45, 0.42, 0.4),
                  {"z_min": -1.0, "z_max": 0.0}, softness=0.2),
        Primitive("box", 30.0, (0.7, 0.6, 0.5),
                  {"center": [0.0, 9.0, 2.0], "size": [36.0, 1.0, 4.0], "yaw": 0.0},
                  softness=0.2),
        Primitive("box", 30.0, (0.5, 0.55, 0.7),
                  {"center": [0.0, -9.0, 2.0], "size": [36.0, 1.0, 4.0], "yaw": 0.0},
                  softness=0.2),
    ]
    boxes = []
    if with_car:
        prims += car_primitives(car_center, car_yaw)
        boxes.append(("car", car_box(car_center, car_yaw)))
    return AnalyticScene(prims, np.array([-20.0, -10.5, -1.0]),
                         np.array([20.0, 10.5, 6.0]), 0.0, boxes)


def sphere_scene() -> AnalyticScene:
    """A few smooth spheres over a ground slab; the renderer-accuracy scene."""
    prims = [
        Primitive("slab", 2.0, (0.3, 0.5, 0.3), {"z_min": -1.0, "z_max": 0.0},
                  softness=0.4),
        Primitive("sphere", 1.5, (0.8, 0.2, 0.2),
                  {"center": [0.0, 0.0, 1.2], "radius": 1.0}, softness=0.6),
        Primitive("sphere", 2.5, (0.2, 0.3, 0.9),
                  {"center": [1.5, 1.2, 0.8], "radius": 0.7}, softness=0.5),
        Primitive("sphere", 1.0, (0.9, 0.8, 0.2),
                  {"center": [-1.4, 0.8, 0.6], "radius": 0.5}, softness=0.4),
    ]
    return AnalyticScene(prims, np.array([-4.0, -4.0, -1.0]),
                         np.array([4.0, 4.0, 4.0]))
