"""Valid-region identification and physically valid object placement.

BEV pillars collect activated density statistics from the background grid;
a cell is placeable when max(Z_p) < delta1 and mean(Z_p) < delta2 (paper
defaults 30 / 15 at 2 m x 2 m cells) and it is not hidden behind a
high-density cell as seen from the ego position. Placements are jittered
around base poses and rejected on any 3D box overlap.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import ObjectAsset, VoxelField, softplus
from .geometry import Box3D, RigidPlacement, box3d_iou, wrap_angle
from .scenegraph import AnnotatedBox, SceneGraph

STATE_INVALID = 0
STATE_VALID = 1
STATE_OCCLUDED = 2


@dataclass(frozen=True)
class PillarConfig:
    cell_size: tuple = (2.0, 2.0)
    height_band: tuple = (0.2, 3.0)  # meters above the estimated ground
    delta1: float = 30.0
    delta2: float = 15.0

    def __post_init__(self):
        if min(self.cell_size) <= 0:
            raise ValueError("cell size must be positive")
        if not (self.delta1 >= self.delta2 >= 0):
            raise ValueError("need delta1 >= delta2 >= 0")


@dataclass(frozen=True)
class JitterConfig:
    t_x: float = 20.0
    t_y: float = 5.0
    t_theta: float = math.radians(30.0)
    seed: int = 0

    def __post_init__(self):
        if min(self.t_x, self.t_y, self.t_theta) < 0:
            raise ValueError("jitter limits must be >= 0")

    def to_json(self) -> dict:
        return {"t_x": self.t_x, "t_y": self.t_y, "t_theta": self.t_theta,
                "seed": self.seed}


@dataclass
class ValidRegionMap:
    origin: np.ndarray  # (2,) BEV min corner
    cell_size: tuple
    max_density: np.ndarray  # (ncx, ncy)
    mean_density: np.ndarray
    state: np.ndarray | None = None  # filled by classify_valid
    ground_height: float = 0.0

    @property
    def shape(self):
        return self.max_density.shape

    def cell_of(self, xy) -> tuple[int, int]:
        i = int(math.floor((xy[0] - self.origin[0]) / self.cell_size[0]))
        j = int(math.floor((xy[1] - self.origin[1]) / self.cell_size[1]))
        return i, j

    def cell_center(self, i: int, j: int) -> np.ndarray:
        return self.origin + (np.array([i, j]) + 0.5) * np.array(self.cell_size)

    def in_bounds(self, i: int, j: int) -> bool:
        return 0 <= i < self.shape[0] and 0 <= j < self.shape[1]

    def is_valid_cell(self, xy) -> bool:
        i, j = self.cell_of(xy)
        return self.in_bounds(i, j) and self.state[i, j] == STATE_VALID

    def to_json(self) -> dict:
        return {"origin": self.origin.tolist(), "cell_size": list(self.cell_size),
                "max_density": self.max_density.tolist(),
                "mean_density": self.mean_density.tolist(),
                "state": None if self.state is None else self.state.tolist(),
                "ground_height": self.ground_height}

    @classmethod
    def from_json(cls, d: dict) -> "ValidRegionMap":
        return cls(np.array(d["origin"]), tuple(d["cell_size"]),
                   np.array(d["max_density"]), np.array(d["mean_density"]),
                   None if d["state"] is None else np.array(d["state"]),
                   d.get("ground_height", 0.0))


def estimate_ground_height(field: VoxelField, occupancy_sigma: float = 1.0,
                           occupancy_fraction: float = 0.25) -> float:
    """Ground estimate: top of the lowest densely occupied run of z-slabs.

    The lowest occupied slab marks the ground body; the surface objects rest
    on is the top of that contiguous run, not its bottom.
    """
    sigma = softplus(np.asarray(field.density_grid, dtype=float)
                     + field.density_bias)
    frac = (sigma > occupancy_sigma).mean(axis=(0, 1))
    zs = np.linspace(field.bounds_min[2], field.bounds_max[2],
                     field.resolution[2])
    occupied = np.flatnonzero(frac >= occupancy_fraction)
    if len(occupied) == 0:
        return float(field.bounds_min[2])
    k = occupied[0]
    while k + 1 < len(frac) and frac[k + 1] >= occupancy_fraction:
        k += 1
    return float(zs[k])


def pillar_stats(field: VoxelField, config: PillarConfig) -> ValidRegionMap:
    """Max/mean activated density per BEV cell over the pillar height band."""
    ground = estimate_ground_height(field)
    z_lo = ground + config.height_band[0]
    z_hi = ground + config.height_band[1]
    nx, ny, nz = field.resolution
    zs = np.linspace(field.bounds_min[2], field.bounds_max[2], nz)
    z_sel = (zs >= z_lo) & (zs <= z_hi)
    if not z_sel.any():
        # solid-to-the-top grids push the ground estimate past the last
        # slab; fall back to the topmost slab so full columns stay invalid
        z_sel[-1] = True
    sigma = softplus(np.asarray(field.density_grid, dtype=float)
                     + field.density_bias)[:, :, z_sel]

    origin = field.bounds_min[:2].copy()
    extent = field.bounds_max[:2] - origin
    ncx = max(int(math.ceil(extent[0] / config.cell_size[0] - 1e-9)), 1)
    ncy = max(int(math.ceil(extent[1] / config.cell_size[1] - 1e-9)), 1)

    xs = np.linspace(field.bounds_min[0], field.bounds_max[0], nx)
    ys = np.linspace(field.bounds_min[1], field.bounds_max[1], ny)
    ci = np.minimum(((xs - origin[0]) / config.cell_size[0]).astype(int), ncx - 1)
    cj = np.minimum(((ys - origin[1]) / config.cell_size[1]).astype(int), ncy - 1)

    max_d = np.zeros((ncx, ncy))
    sum_d = np.zeros((ncx, ncy))
    cnt = np.zeros((ncx, ncy))
    if sigma.shape[2] > 0:
        cell = (ci[:, None] * ncy + cj[None, :]).ravel()
        col_max = sigma.max(axis=2).ravel()
        col_sum = sigma.sum(axis=2).ravel()
        np.maximum.at(max_d.reshape(-1), cell, col_max)
        np.add.at(sum_d.reshape(-1), cell, col_sum)
        np.add.at(cnt.reshape(-1), cell, sigma.shape[2])
    mean_d = np.divide(sum_d, cnt, out=np.zeros_like(sum_d), where=cnt > 0)
    return ValidRegionMap(origin, config.cell_size, max_d, mean_d,
                          ground_height=ground)


def classify_valid(region: ValidRegionMap, delta1: float,
                   delta2: float) -> ValidRegionMap:
    """Apply the low-density constraints: valid iff max < delta1, mean < delta2."""
    state = np.where((region.max_density < delta1)
                     & (region.mean_density < delta2),
                     STATE_VALID, STATE_INVALID)
    return ValidRegionMap(region.origin.copy(), region.cell_size,
                          region.max_density.copy(), region.mean_density.copy(),
                          state, region.ground_height)


def occlusion_filter(region: ValidRegionMap, ego, delta1: float) -> ValidRegionMap:
    """Mark valid cells hidden behind a high-density cell (seen from ego).

    Walks the exact sequence of BEV cells crossed by the segment from ego
    to each cell center (grid traversal stepping both axes on corner ties,
    so corner-grazing does not block); the first blocking cell
    (max >= delta1) shadows everything farther along.
    """
    if region.state is None:
        raise ValueError("classify_valid must run before occlusion_filter")
    ego = np.asarray(ego, dtype=float)[:2]
    ncx, ncy = region.shape
    lo = region.origin
    hi = region.origin + np.array(region.cell_size) * np.array([ncx, ncy])
    if np.any(ego < lo) or np.any(ego > hi):
        raise ValueError("ego position outside the BEV map")
    blocking = region.max_density >= delta1
    state = region.state.copy()
    ei, ej = region.cell_of(ego)
    for i in range(ncx):
        for j in range(ncy):
            if state[i, j] != STATE_VALID or (i, j) == (ei, ej):
                continue
            for ci, cj in _cells_on_segment(ego, region.cell_center(i, j),
                                            region):
                if (ci, cj) == (i, j):
                    break
                if blocking[ci, cj]:
                    state[i, j] = STATE_OCCLUDED
                    break
    return ValidRegionMap(region.origin.copy(), region.cell_size,
                          region.max_density.copy(), region.mean_density.copy(),
                          state, region.ground_height)


def _cells_on_segment(start, end, region: ValidRegionMap):
    """Cells crossed by a BEV segment, in order, via 2D grid traversal.

    Exact corner hits advance both axes at once (the diagonal neighbors the
    segment merely grazes are not reported).
    """
    ncx, ncy = region.shape
    csx, csy = region.cell_size
    i, j = region.cell_of(start)
    i = min(max(i, 0), ncx - 1)
    j = min(max(j, 0), ncy - 1)
    dx, dy = end[0] - start[0], end[1] - start[1]
    step_i = 1 if dx > 0 else -1
    step_j = 1 if dy > 0 else -1
    # parameter t at which the segment leaves the current cell along each axis
    def _t_next(pos, origin, cell, idx, step, d):
        if d == 0.0:
            return math.inf
        edge = origin + (idx + (1 if step > 0 else 0)) * cell
        return (edge - pos) / d
    t = 0.0
    tx = _t_next(start[0], region.origin[0], csx, i, step_i, dx)
    ty = _t_next(start[1], region.origin[1], csy, j, step_j, dy)
    dtx = abs(csx / dx) if dx != 0.0 else math.inf
    dty = abs(csy / dy) if dy != 0.0 else math.inf
    while t <= 1.0:
        yield i, j
        if tx > 1.0 and ty > 1.0:
            return
        if abs(tx - ty) < 1e-12:  # exact corner: advance both axes
            i += step_i
            j += step_j
            t = tx
            tx += dtx
            ty += dty
        elif tx < ty:
            i += step_i
            t = tx
            tx += dtx
        else:
            j += step_j
            t = ty
            ty += dty
        if not (0 <= i < ncx and 0 <= j < ncy):
            return


def compute_valid_region(field: VoxelField, config: PillarConfig,
                         ego=None) -> ValidRegionMap:
    region = classify_valid(pillar_stats(field, config),
                            config.delta1, config.delta2)
    if ego is not None:
        region = occlusion_filter(region, ego, config.delta1)
    return region


def sample_placement(base: Box3D, jitter: JitterConfig,
                     rng: np.random.Generator) -> RigidPlacement:
    """Uniform translation/yaw jitter around a base box pose."""
    dx = rng.uniform(-jitter.t_x, jitter.t_x) if jitter.t_x > 0 else 0.0
    dy = rng.uniform(-jitter.t_y, jitter.t_y) if jitter.t_y > 0 else 0.0
    dyaw = rng.uniform(-jitter.t_theta, jitter.t_theta) if jitter.t_theta > 0 else 0.0
    return RigidPlacement(base.center + np.array([dx, dy, 0.0]),
                          wrap_angle(base.yaw + dyaw))


@dataclass
class Rejection:
    reason: str  # invalid-region | collision | out-of-bounds

    def __bool__(self):
        return False


def try_place(scene: SceneGraph, asset: ObjectAsset, placement: RigidPlacement,
              region: ValidRegionMap, asset_id: str = "asset"):
    """Accept a placement iff its cell is valid, it collides with nothing,
    and the box stays inside the background bounds. Mutates the scene on
    accept; returns True or a Rejection."""
    # rest the object on the estimated ground at its (x, y)
    c_local = asset.canonical_box.center
    tz = region.ground_height + asset.canonical_box.size[2] / 2 - c_local[2]
    placement = RigidPlacement(
        np.array([placement.translation[0], placement.translation[1], tz]),
        placement.yaw)
    box = placement.place_box(asset.canonical_box)
    if not region.is_valid_cell(box.center[:2]):
        return Rejection("invalid-region")
    bg = scene.background
    lo = box.corners().min(axis=0)
    hi = box.corners().max(axis=0)
    if np.any(lo < bg.bounds_min - 1e-9) or np.any(hi > bg.bounds_max + 1e-9):
        return Rejection("out-of-bounds")
    for existing in scene.boxes:
        if box3d_iou(box, existing.box) > 0.0:
            return Rejection("collision")
    scene.placements.append((asset, placement))
    scene.placement_ids.append(asset_id)
    scene.boxes.append(AnnotatedBox(box, "placed", asset_id))
    return True


def generate_batch(background: VoxelField, background_id: str, asset_pool: list,
                   count: int, jitter: JitterConfig, region: ValidRegionMap,
                   base_boxes: list | None = None, cameras: list | None = None,
                   objects_per_scene: tuple = (1, 2),
                   max_attempts: int = 50, seed: int | None = None) -> list:
    """Create `count` scene graphs, each with 1-2 collision-free placements.

    asset_pool: list of (asset_id, ObjectAsset). Base poses default to the
    scene's original annotations; without any, bases are drawn uniformly
    over valid cells. Deterministic under `seed`.
    """
    if not asset_pool:
        raise ValueError("asset pool is empty")
    seed = jitter.seed if seed is None else seed
    if region.state is None or not np.any(region.state == STATE_VALID):
        warnings.warn("no valid placement cell in the background; "
                      "returning no scenes")
        return []
    valid_cells = np.argwhere(region.state == STATE_VALID)
    original = [AnnotatedBox(b, "original") for b in (base_boxes or [])]
    scenes = []
    for k in range(count):
        rng = np.random.default_rng((seed, k))
        scene = SceneGraph(background, background_id, [], [],
                           [AnnotatedBox(b.box, b.source, b.asset_id)
                            for b in original],
                           list(cameras or []), seed=seed,
                           jitter_config=jitter.to_json())
        n_objects = int(rng.integers(objects_per_scene[0],
                                     objects_per_scene[1] + 1))
        for _ in range(n_objects):
            aid, asset = asset_pool[int(rng.integers(0, len(asset_pool)))]
            for _attempt in range(max_attempts):
                base = _pick_base(base_boxes, valid_cells, region, asset, rng)
                placement = sample_placement(base, jitter, rng)
                if try_place(scene, asset, placement, region, aid) is True:
                    break
        scenes.append(scene)
    return scenes


def _pick_base(base_boxes, valid_cells, region: ValidRegionMap,
               asset: ObjectAsset, rng: np.random.Generator) -> Box3D:
    if base_boxes:
        return base_boxes[int(rng.integers(0, len(base_boxes)))]
    cell = valid_cells[int(rng.integers(0, len(valid_cells)))]
    xy = region.cell_center(int(cell[0]), int(cell[1]))
    size = asset.canonical_box.size
    center = np.array([xy[0], xy[1], region.ground_height + size[2] / 2])
    yaw = rng.uniform(-math.pi, math.pi)
    return Box3D(center, size, yaw)
