"""Shared fixtures: small baked fields and synthetic datasets."""

import numpy as np
import pytest

from voxaug.field import VoxelField, DIRECT
from voxaug.geometry import Box3D, CameraModel, look_at_rotation
from voxaug.synth import (AnalyticScene, Primitive, bake, generate_dataset,
                          ring_of_cameras, sphere_scene, street_scene)


def mc_box_iou(a: Box3D, b: Box3D, n: int = 1_000_000, seed: int = 0) -> float:
    """Monte Carlo IoU oracle: hit-counting in the overlap of the two AABBs."""
    rng = np.random.default_rng(seed)
    lo = np.maximum(a.corners().min(axis=0), b.corners().min(axis=0))
    hi = np.minimum(a.corners().max(axis=0), b.corners().max(axis=0))
    va, vb = a.volume, b.volume
    if np.any(hi <= lo):
        return 0.0
    pts = rng.uniform(lo, hi, size=(n, 3))
    inter = float(np.mean(a.contains(pts) & b.contains(pts))) * np.prod(hi - lo)
    return inter / (va + vb - inter)


@pytest.fixture(scope="session")
def spheres():
    return sphere_scene()


@pytest.fixture(scope="session")
def baked_spheres(spheres):
    return bake(spheres, voxel_size=0.125)


@pytest.fixture(scope="session")
def small_camera():
    eye = np.array([6.0, 0.0, 2.0])
    R = look_at_rotation(eye, np.array([0.0, 0.0, 0.8]))
    return CameraModel(40.0, 40.0, 16.0, 16.0, 32, 32, R, eye)


@pytest.fixture(scope="session")
def tiny_street_dataset(tmp_path_factory):
    """Low-res street dataset (car + walls + ground) for pipeline tests."""
    scene = street_scene()
    center = (scene.bounds_min + scene.bounds_max) / 2
    cams = ring_of_cameras(np.array([center[0], center[1], 1.0]),
                           radius=10.0, height=2.5, n_views=8, width=48,
                           fov_deg=70.0)
    out = tmp_path_factory.mktemp("street_ds")
    manifest = generate_dataset(scene, cams, out, step=0.25)
    return scene, manifest


@pytest.fixture(scope="session")
def wall_scene_field():
    """A single long wall in an otherwise empty box, baked densely."""
    prims = [Primitive("box", 50.0, (0.6, 0.6, 0.6),
                       {"center": [4.0, 0.0, 1.5], "size": [2.0, 12.0, 3.0],
                        "yaw": 0.0})]
    scene = AnalyticScene(prims, np.array([-10.0, -10.0, 0.0]),
                          np.array([10.0, 10.0, 4.0]))
    return scene, bake(scene, voxel_size=0.25)
