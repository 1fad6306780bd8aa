"""voxaug: voxel radiance-field reconstruction and scene augmentation.

Reconstructs background and object voxel fields from posed images with depth
and instance masks, then composes and renders augmented scenes with
physically valid, collision-free object placement.
"""

from .assets import content_hash, load_asset, save_asset
from .compose import (JitterConfig, PillarConfig, ValidRegionMap,
                      compute_valid_region, generate_batch, try_place)
from .field import DIRECT, FEATURE_MLP, MLP, ObjectAsset, VoxelField
from .geometry import (Box3D, CameraModel, Ray, RigidPlacement, box3d_iou,
                       generate_ray, generate_rays, ray_aabb_intersect,
                       transform_ray)
from .manifest import Frame, InstanceMask, SceneManifest
from .render import (RenderResult, render, render_batch, render_composed,
                     render_field_image, render_object_probability,
                     render_scene_image)
from .scenegraph import AnnotatedBox, SceneGraph
from .synth import AnalyticScene, Primitive, bake, generate_dataset, oracle_render
from .train import TrainConfig, TrainingBatch, TrainingDiverged, train_field

__version__ = "0.1.0"

__all__ = [
    "AnalyticScene", "AnnotatedBox", "Box3D", "CameraModel", "DIRECT",
    "FEATURE_MLP", "Frame", "InstanceMask", "JitterConfig", "MLP",
    "ObjectAsset", "PillarConfig", "Primitive", "Ray", "RenderResult",
    "RigidPlacement", "SceneGraph", "SceneManifest", "TrainConfig",
    "TrainingBatch", "TrainingDiverged", "ValidRegionMap", "VoxelField",
    "bake", "box3d_iou", "compute_valid_region", "content_hash",
    "generate_batch", "generate_dataset", "generate_ray", "generate_rays",
    "load_asset", "oracle_render", "ray_aabb_intersect", "render",
    "render_batch", "render_composed", "render_field_image",
    "render_object_probability", "render_scene_image", "save_asset",
    "train_field", "transform_ray", "try_place", "__version__",
]
