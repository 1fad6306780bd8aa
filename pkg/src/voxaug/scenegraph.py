"""Composed scenes: one background field plus placed object assets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .field import ObjectAsset, VoxelField
from .geometry import Box3D, CameraModel, RigidPlacement, box3d_iou


@dataclass
class AnnotatedBox:
    box: Box3D
    source: str  # "original" | "placed"
    asset_id: str | None = None

    def to_json(self) -> dict:
        return {"center": self.box.center.tolist(), "size": self.box.size.tolist(),
                "yaw": self.box.yaw, "source": self.source, "asset_id": self.asset_id}

    @classmethod
    def from_json(cls, d: dict) -> "AnnotatedBox":
        return cls(Box3D(np.array(d["center"]), np.array(d["size"]), d["yaw"]),
                   d["source"], d.get("asset_id"))


@dataclass
class SceneGraph:
    background: VoxelField
    background_id: str
    placements: list = dc_field(default_factory=list)  # (ObjectAsset, RigidPlacement)
    placement_ids: list = dc_field(default_factory=list)  # asset id per placement
    boxes: list = dc_field(default_factory=list)  # AnnotatedBox
    cameras: list = dc_field(default_factory=list)
    seed: int | None = None
    jitter_config: dict | None = None

    def placed_world_box(self, i: int) -> Box3D:
        asset, placement = self.placements[i]
        return placement.place_box(asset.canonical_box)

    def check_no_collisions(self) -> bool:
        bs = [b.box for b in self.boxes]
        for i in range(len(bs)):
            for j in range(i + 1, len(bs)):
                if box3d_iou(bs[i], bs[j]) > 0.0:
                    return False
        return True

    def to_json(self) -> dict:
        return {
            "background": {"asset": self.background_id},
            "placements": [{
                "asset": aid,
                "translation": p.translation.tolist(),
                "yaw": p.yaw,
            } for (a, p), aid in zip(self.placements, self.placement_ids)],
            "boxes": [b.to_json() for b in self.boxes],
            "cameras": [{
                "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
                "width": c.width, "height": c.height,
                "pose_world_from_camera": c.pose_matrix.tolist(),
            } for c in self.cameras],
            "seed": self.seed,
            "jitter": self.jitter_config,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def from_json(cls, doc: dict, asset_resolver) -> "SceneGraph":
        """asset_resolver(asset_id) -> loaded VoxelField or ObjectAsset."""
        background = asset_resolver(doc["background"]["asset"])
        placements, ids = [], []
        for p in doc.get("placements", []):
            asset = asset_resolver(p["asset"])
            placements.append((asset, RigidPlacement(np.array(p["translation"]),
                                                     p["yaw"])))
            ids.append(p["asset"])
        boxes = [AnnotatedBox.from_json(b) for b in doc.get("boxes", [])]
        cams = [CameraModel.from_pose_matrix(
                    c["fx"], c["fy"], c["cx"], c["cy"], c["width"], c["height"],
                    np.array(c["pose_world_from_camera"]))
                for c in doc.get("cameras", [])]
        return cls(background, doc["background"]["asset"], placements, ids,
                   boxes, cams, doc.get("seed"), doc.get("jitter"))

    @classmethod
    def load(cls, path, asset_resolver) -> "SceneGraph":
        return cls.from_json(json.loads(Path(path).read_text()), asset_resolver)
