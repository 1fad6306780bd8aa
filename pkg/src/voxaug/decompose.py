"""Turn a scene manifest into training ray sets.

Matches instance masks to projected 3D boxes, links observations into
object tracks, flags intact (fully visible) tracks, and carves the frames
into background rays (moving objects removed) and object-local rays.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from matplotlib.path import Path as MplPath
from scipy import ndimage

from .geometry import Box3D, CameraModel, RigidPlacement, generate_rays
from .manifest import InstanceMask, SceneManifest
from .train import TrainingBatch

MATCH_IOU_FLOOR = 0.3
TRACK_IOU_FLOOR = 0.5
INTACT_FILL_RATIO = 0.6
MOVING_THRESHOLD_M = 0.5
MOVING_MASK_DILATION_PX = 2
BACKGROUND_BAND_PX = 8


def project_points(camera: CameraModel, pts: np.ndarray):
    """World points -> (pixels (N, 2), in-front-of-camera mask)."""
    pc = (np.atleast_2d(pts) - camera.translation) @ camera.rotation
    z = pc[:, 2]
    ok = z > 1e-6
    zs = np.where(ok, z, 1.0)
    u = camera.fx * pc[:, 0] / zs + camera.cx
    v = camera.fy * pc[:, 1] / zs + camera.cy
    return np.stack([u, v], axis=1), ok


def _convex_hull(pts: np.ndarray) -> np.ndarray:
    """Andrew monotone chain; (N, 2) -> hull vertices counter-clockwise."""
    pts = np.unique(np.asarray(pts, dtype=float), axis=0)
    if len(pts) < 3:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    cross = lambda o, a, b: ((a[0] - o[0]) * (b[1] - o[1])
                             - (a[1] - o[1]) * (b[0] - o[0]))
    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def projected_box_hull_mask(camera: CameraModel, box: Box3D) -> np.ndarray | None:
    """Rasterized convex hull of the box's 8 projected corners; None if behind."""
    pix, ok = project_points(camera, box.corners())
    if not np.all(ok):
        return None
    hull = _convex_hull(pix)
    if len(hull) < 3:
        return None
    h, w = camera.height, camera.width
    path = MplPath(hull)
    us, vs = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    inside = path.contains_points(np.stack([us.ravel(), vs.ravel()], axis=1))
    return inside.reshape(h, w)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.logical_and(a, b).sum()
    if inter == 0:
        return 0.0
    return float(inter / np.logical_or(a, b).sum())


def match_mask_to_box(masks: list, boxes: list, camera: CameraModel,
                      iou_floor: float = MATCH_IOU_FLOOR) -> dict:
    """Greedy best-first mask->box assignment by 2D IoU against box hulls.

    masks: list of (mask_id, bool array); boxes: list of (box_id, Box3D).
    Returns {mask_id: (box_id, iou)}.
    """
    hulls = {}
    for bid, box in boxes:
        hm = projected_box_hull_mask(camera, box)
        if hm is not None:
            hulls[bid] = hm
    pairs = []
    for mid, m in masks:
        for bid, hm in hulls.items():
            iou = mask_iou(m, hm)
            if iou >= iou_floor:
                pairs.append((iou, mid, bid))
    pairs.sort(key=lambda p: (-p[0], str(p[1]), str(p[2])))
    assigned, used_m, used_b = {}, set(), set()
    for iou, mid, bid in pairs:
        if mid in used_m or bid in used_b:
            continue
        assigned[mid] = (bid, iou)
        used_m.add(mid)
        used_b.add(bid)
    return assigned


@dataclass
class Observation:
    frame_index: int
    mask: InstanceMask
    box: Box3D
    camera: CameraModel
    match_iou: float
    hull_fill: float
    touches_border: bool
    overlaps_other: bool


@dataclass
class ObjectTrack:
    track_id: str
    observations: list = dc_field(default_factory=list)

    def __post_init__(self):
        if not self.observations:
            return
        # all observations must belong to consecutive frames
        idxs = [o.frame_index for o in self.observations]
        if idxs != list(range(idxs[0], idxs[0] + len(idxs))):
            raise ValueError("track observations must be consecutive frames")

    def canonical_size(self) -> np.ndarray:
        return np.max([o.box.size for o in self.observations], axis=0)


def _frame_matches(manifest: SceneManifest):
    """Per-frame decoded masks and mask->box matches."""
    per_frame = []
    for fi, fr in enumerate(manifest.frames):
        decoded = [(m.instance_id, m.decode()) for m in fr.masks]
        boxes = [(tid, box) for box, tid in fr.boxes]
        matches = match_mask_to_box(decoded, boxes, fr.camera)
        per_frame.append({"decoded": dict(decoded), "matches": matches,
                          "masks": {m.instance_id: m for m in fr.masks}})
    return per_frame


def build_tracks(manifest: SceneManifest) -> list:
    """Link matched masks across consecutive frames into ObjectTracks.

    Linking uses the box track id when the mask matched a box; a one-frame
    gap ends the track (no bridging).
    """
    per_frame = _frame_matches(manifest)
    open_tracks = {}  # box track id -> (list[Observation], last mask array)
    done = []
    for fi, fr in enumerate(manifest.frames):
        info = per_frame[fi]
        current = []
        for mid, (bid, iou) in info["matches"].items():
            mask_arr = info["decoded"][mid]
            box = dict((tid, b) for b, tid in fr.boxes)[bid]
            hull = projected_box_hull_mask(fr.camera, box)
            fill = mask_iou_fill(mask_arr, hull)
            others = [info["decoded"][m2] for m2 in info["decoded"] if m2 != mid]
            overlaps = any(np.any(mask_arr & o) for o in others)
            obs = Observation(fi, info["masks"][mid], box, fr.camera, iou, fill,
                              _touches_border(mask_arr), overlaps)
            current.append((bid, obs, mask_arr))
        # extend open tracks: box track id first, mask IoU as fallback
        extended = set()
        next_open = {}
        for bid, obs, mask_arr in current:
            if bid in open_tracks and bid not in extended:
                obs_list, _ = open_tracks[bid]
                obs_list.append(obs)
                next_open[bid] = (obs_list, mask_arr)
                extended.add(bid)
        for bid, obs, mask_arr in current:
            if bid in next_open:
                continue
            linked = None
            for key, (obs_list, last_mask) in open_tracks.items():
                if key in extended or key in next_open:
                    continue
                if mask_iou(mask_arr, last_mask) >= TRACK_IOU_FLOOR:
                    linked = key
                    break
            if linked is not None:
                obs_list, _ = open_tracks[linked]
                obs_list.append(obs)
                next_open[bid] = (obs_list, mask_arr)
                extended.add(linked)
            else:
                next_open[bid] = ([obs], mask_arr)
        # anything not continued is closed (no gap bridging)
        for key, (obs_list, _) in open_tracks.items():
            if key not in extended and not any(
                    obs_list is v[0] for v in next_open.values()):
                done.append(obs_list)
        open_tracks = next_open
    done.extend(v[0] for v in open_tracks.values())
    tracks = []
    counts = {}
    for obs_list in done:
        base = str(_track_base_id(obs_list))
        k = counts.get(base, 0)
        counts[base] = k + 1
        tid = base if k == 0 else f"{base}@{k}"
        tracks.append(ObjectTrack(tid, obs_list))
    return tracks


def _track_base_id(obs_list) -> str:
    return obs_list[0].mask.instance_id


def _touches_border(mask: np.ndarray) -> bool:
    return bool(mask[0].any() or mask[-1].any() or mask[:, 0].any()
                or mask[:, -1].any())


def mask_iou_fill(mask: np.ndarray, hull: np.ndarray | None) -> float:
    if hull is None or hull.sum() == 0:
        return 0.0
    return float(np.logical_and(mask, hull).sum() / hull.sum())


def select_intact(track: ObjectTrack,
                  fill_ratio: float = INTACT_FILL_RATIO) -> bool:
    """Intact iff every observation is border-free, overlap-free and fills
    enough of its projected-box hull."""
    for o in track.observations:
        if o.touches_border or o.overlaps_other or o.hull_fill < fill_ratio:
            return False
    return len(track.observations) > 0


def moving_track_ids(manifest: SceneManifest,
                     threshold_m: float = MOVING_THRESHOLD_M) -> set:
    """Box track ids whose world center moves more than the threshold."""
    centers = {}
    for fr in manifest.frames:
        for box, tid in fr.boxes:
            centers.setdefault(tid, []).append(box.center)
    moving = set()
    for tid, cs in centers.items():
        cs = np.array(cs)
        span = np.linalg.norm(cs.max(axis=0) - cs.min(axis=0))
        if span > threshold_m:
            moving.add(tid)
    return moving


def background_rays(manifest: SceneManifest,
                    dilation_px: int = MOVING_MASK_DILATION_PX) -> TrainingBatch:
    """Per-pixel world rays with color/depth targets, moving objects cut out."""
    moving = moving_track_ids(manifest)
    per_frame = _frame_matches(manifest)
    all_o, all_d, all_c, all_z, all_v = [], [], [], [], []
    for fi, fr in enumerate(manifest.frames):
        if fr.camera is None:
            raise ValueError(f"frame {fi} has no pose")
        img = fr.load_image()
        depth, dvalid = fr.load_depth()
        h, w = fr.camera.height, fr.camera.width
        excluded = np.zeros((h, w), dtype=bool)
        for mid, (bid, _) in per_frame[fi]["matches"].items():
            if bid in moving:
                m = per_frame[fi]["decoded"][mid]
                if dilation_px > 0:
                    m = ndimage.binary_dilation(m, iterations=dilation_px)
                excluded |= m
        keep = ~excluded.ravel()
        if not np.any(keep):
            continue
        us, vs = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
        pixels = np.stack([us.ravel(), vs.ravel()], axis=1)[keep]
        o, d = generate_rays(fr.camera, pixels)
        all_o.append(o)
        all_d.append(d)
        all_c.append(img.reshape(-1, 3)[keep])
        if depth is None:
            all_z.append(np.zeros(keep.sum()))
            all_v.append(np.zeros(keep.sum(), dtype=bool))
        else:
            all_z.append(depth.ravel()[keep])
            all_v.append(dvalid.ravel()[keep])
    if not all_o:
        return TrainingBatch(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)),
                             np.zeros(0), np.zeros(0, dtype=bool))
    return TrainingBatch(np.concatenate(all_o), np.concatenate(all_d),
                         np.concatenate(all_c), np.concatenate(all_z),
                         np.concatenate(all_v))


def excluded_pixels(manifest: SceneManifest, frame_index: int,
                    dilation_px: int = MOVING_MASK_DILATION_PX) -> np.ndarray:
    """Boolean (H, W) mask of pixels removed from background training."""
    moving = moving_track_ids(manifest)
    per_frame = _frame_matches(manifest)
    fr = manifest.frames[frame_index]
    h, w = fr.camera.height, fr.camera.width
    excluded = np.zeros((h, w), dtype=bool)
    for mid, (bid, _) in per_frame[frame_index]["matches"].items():
        if bid in moving:
            m = per_frame[frame_index]["decoded"][mid]
            if dilation_px > 0:
                m = ndimage.binary_dilation(m, iterations=dilation_px)
            excluded |= m
    return excluded


def object_rays(track: ObjectTrack, manifest: SceneManifest,
                band_px: int = BACKGROUND_BAND_PX) -> TrainingBatch:
    """Box-local rays for an object track.

    Foreground pixels carry image color and depth targets; a dilated band
    around the mask contributes background rays with black color targets.
    """
    all_o, all_d, all_c, all_z, all_v, all_l = [], [], [], [], [], []
    for obs in track.observations:
        fr = manifest.frames[obs.frame_index]
        img = fr.load_image()
        depth, dvalid = fr.load_depth()
        mask = obs.mask.decode()
        if not mask.any():
            continue
        band = ndimage.binary_dilation(mask, iterations=band_px) & ~mask
        sel = mask | band
        h, w = obs.camera.height, obs.camera.width
        us, vs = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
        flat = sel.ravel()
        pixels = np.stack([us.ravel(), vs.ravel()], axis=1)[flat]
        o, d = generate_rays(obs.camera, pixels)
        fg = mask.ravel()[flat]
        colors = np.where(fg[:, None], img.reshape(-1, 3)[flat], 0.0)
        if depth is None:
            z = np.zeros(flat.sum())
            zv = np.zeros(flat.sum(), dtype=bool)
        else:
            z = depth.ravel()[flat]
            zv = dvalid.ravel()[flat] & fg
        placement = RigidPlacement(obs.box.center, obs.box.yaw)
        o_loc = placement.to_local(o)
        d_loc = d @ placement.rotation
        all_o.append(o_loc)
        all_d.append(d_loc)
        all_c.append(colors)
        all_z.append(z)
        all_v.append(zv)
        all_l.append(fg)
    if not all_o:
        return TrainingBatch(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)),
                             np.zeros(0), np.zeros(0, dtype=bool),
                             np.zeros(0, dtype=bool), frame="local")
    return TrainingBatch(np.concatenate(all_o), np.concatenate(all_d),
                         np.concatenate(all_c), np.concatenate(all_z),
                         np.concatenate(all_v), np.concatenate(all_l),
                         frame="local")
