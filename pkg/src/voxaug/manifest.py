"""Scene manifests: the generic per-scene input format.

One JSON document per scene lists frames with image/depth paths, pinhole
intrinsics, 4x4 row-major world-from-camera poses, 3D boxes with track ids,
and per-instance run-length-encoded binary masks. File paths are relative to
the manifest's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .geometry import Box3D, CameraModel
from .images import read_depth_pgm, read_ppm


def rle_encode(mask: np.ndarray) -> list[int]:
    """Row-major RLE: alternating run lengths, starting with a zeros run."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    changes = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_decode(runs: list[int], shape: tuple[int, int]) -> np.ndarray:
    total = int(np.sum(runs))
    if total != shape[0] * shape[1]:
        raise ValueError("RLE length does not match mask shape")
    flat = np.zeros(total, dtype=bool)
    pos, val = 0, False
    for r in runs:
        if val:
            flat[pos:pos + r] = True
        pos += r
        val = not val
    return flat.reshape(shape)


@dataclass
class InstanceMask:
    instance_id: str
    shape: tuple[int, int]
    rle: list[int]

    def decode(self) -> np.ndarray:
        return rle_decode(self.rle, self.shape)

    @classmethod
    def from_array(cls, instance_id: str, mask: np.ndarray) -> "InstanceMask":
        return cls(instance_id, mask.shape, rle_encode(mask))


@dataclass
class Frame:
    camera: CameraModel
    image_path: str
    depth_path: str | None
    boxes: list  # list of (Box3D, track_id)
    masks: list  # list of InstanceMask
    timestamp: float = 0.0
    root: Path = Path(".")

    def load_image(self) -> np.ndarray:
        return read_ppm(self.root / self.image_path)

    def load_depth(self):
        if self.depth_path is None:
            return None, None
        return read_depth_pgm(self.root / self.depth_path)


@dataclass
class SceneManifest:
    scene_id: str
    frames: list  # list of Frame

    def __post_init__(self):
        for fr in self.frames:
            tids = [tid for _, tid in fr.boxes]
            if len(tids) != len(set(tids)):
                raise ValueError("box track ids must be unique within a frame")

    def save(self, path) -> None:
        path = Path(path)
        doc = {"scene_id": self.scene_id, "frames": []}
        for fr in self.frames:
            doc["frames"].append({
                "timestamp": fr.timestamp,
                "image": fr.image_path,
                "depth": fr.depth_path,
                "camera": {
                    "fx": fr.camera.fx, "fy": fr.camera.fy,
                    "cx": fr.camera.cx, "cy": fr.camera.cy,
                    "width": fr.camera.width, "height": fr.camera.height,
                    "pose_world_from_camera": fr.camera.pose_matrix.tolist(),
                },
                "boxes": [{
                    "center": box.center.tolist(), "size": box.size.tolist(),
                    "yaw": box.yaw, "track_id": tid,
                } for box, tid in fr.boxes],
                "masks": [{
                    "instance_id": m.instance_id, "size": list(m.shape),
                    "rle": m.rle,
                } for m in fr.masks],
            })
        path.write_text(json.dumps(doc, indent=1))

    @classmethod
    def load(cls, path) -> "SceneManifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ValueError(f"cannot parse manifest {path}: {e}") from e
        frames = []
        for fd in doc.get("frames", []):
            cd = fd["camera"]
            cam = CameraModel.from_pose_matrix(
                cd["fx"], cd["fy"], cd["cx"], cd["cy"],
                cd["width"], cd["height"],
                np.array(cd["pose_world_from_camera"]))
            boxes = [(Box3D(np.array(b["center"]), np.array(b["size"]), b["yaw"]),
                      b["track_id"]) for b in fd.get("boxes", [])]
            masks = [InstanceMask(m["instance_id"], tuple(m["size"]), m["rle"])
                     for m in fd.get("masks", [])]
            frames.append(Frame(cam, fd["image"], fd.get("depth"), boxes, masks,
                                fd.get("timestamp", 0.0), root=path.parent))
        return cls(doc.get("scene_id", path.stem), frames)
