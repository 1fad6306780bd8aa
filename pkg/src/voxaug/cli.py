"""Command-line pipeline: synth -> train -> compose -> render.

Each subcommand prints a JSON summary on standard output and writes its
artifacts under --output. Configuration comes from an optional YAML file
(--config) with flag overrides taking precedence. Exit codes: 2 manifest
parse failure, 3 training divergence, 4 non-intact track, 5 no valid
placement region, 6 missing asset.
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from . import compose as compose_mod
from . import decompose, reports, synth
from .assets import AssetChecksumError, AssetFormatError, content_hash, load_asset, save_asset
from .compose import JitterConfig, PillarConfig, compute_valid_region, generate_batch
from .field import DIRECT, FEATURE_MLP, ObjectAsset, VoxelField, softplus
from .images import write_depth_pgm, write_ppm
from .manifest import SceneManifest
from .render import render_scene_image
from .scenegraph import SceneGraph
from .synth import AnalyticScene, MaskNoiseConfig, generate_dataset, ring_of_cameras
from .train import TrainConfig, TrainingDiverged, train_field, write_loss_trace

EXIT_MANIFEST = 2
EXIT_DIVERGED = 3
EXIT_NOT_INTACT = 4
EXIT_NO_VALID_REGION = 5
EXIT_MISSING_ASSET = 6


def _fail(code: int, message: str):
    click.echo(json.dumps({"error": message}), err=True)
    sys.exit(code)


def _emit(summary: dict):
    click.echo(json.dumps(summary, indent=1, sort_keys=True))


def common_options(fn):
    fn = click.option("--seed", type=int, default=None,
                      help="Global random seed (default 0).")(fn)
    fn = click.option("--threads", type=int, default=1, show_default=True,
                      help="Internal parallelism cap; never changes results.")(fn)
    fn = click.option("--output", type=click.Path(), default=".",
                      show_default=True, help="Output directory.")(fn)
    fn = click.option("--config", "config_path", type=click.Path(exists=True),
                      default=None, help="YAML config file; flags override it.")(fn)
    return fn


def _load_config(path) -> dict:
    if path is None:
        return {}
    doc = yaml.safe_load(Path(path).read_text())
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise click.UsageError("config file must hold a YAML mapping")
    return doc


def _pick(flag, cfg: dict, key: str, default):
    """Flag value if given, else config value, else default."""
    if flag is not None:
        return flag
    if key in cfg:
        return cfg[key]
    return default


def _out_dir(output) -> Path:
    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- asset store ---------------------------------------------------------------


def _store_dir(output, asset_store) -> Path:
    store = Path(asset_store) if asset_store else Path(output) / "assets"
    store.mkdir(parents=True, exist_ok=True)
    return store


def store_asset(obj, store: Path):
    """Persist into the content-addressed store; returns (asset_id, path)."""
    tmp = store / "incoming.vxsa.tmp"
    save_asset(obj, tmp)
    digest = content_hash(tmp)
    final = store / f"{digest}.vxsa"
    tmp.replace(final)
    return digest, final


def resolve_asset(ref: str, store: Path):
    """Load an asset by path or by store id; exits 6 when unresolvable."""
    candidates = [Path(ref), store / ref, store / f"{ref}.vxsa"]
    for p in candidates:
        if p.is_file():
            try:
                return load_asset(p)
            except (AssetFormatError, AssetChecksumError) as e:
                _fail(EXIT_MISSING_ASSET, f"asset {p} unreadable: {e}")
    _fail(EXIT_MISSING_ASSET, f"asset {ref!r} not found (store: {store})")


# -- training helpers ----------------------------------------------------------


def _train_config(cfg: dict, seed, iterations, batch_size, voxel_size,
                  color_mode, w_depth, w_gc, samples_per_ray, bounds,
                  symmetric=False) -> TrainConfig:
    tc = cfg.get("train", {})
    bounds_min = bounds_max = None
    bounds = _pick(bounds, tc, "bounds", None)
    if bounds is not None:
        if isinstance(bounds, str):
            vals = [float(v) for v in bounds.split(",")]
        else:
            vals = [float(v) for v in bounds]
        if len(vals) != 6:
            raise click.UsageError("--bounds needs 6 comma-separated numbers")
        bounds_min, bounds_max = tuple(vals[:3]), tuple(vals[3:])
    return TrainConfig(
        iterations=int(_pick(iterations, tc, "iterations", 3000)),
        batch_size=int(_pick(batch_size, tc, "batch_size", 4096)),
        lr_grid=float(tc.get("lr_grid", 0.1)),
        lr_mlp=float(tc.get("lr_mlp", 1e-3)),
        w_color=float(tc.get("w_color", 1.0)),
        w_depth=float(_pick(w_depth, tc, "w_depth", 0.1)),
        w_gc=float(_pick(w_gc, tc, "w_gc", 0.01)),
        symmetric=bool(symmetric or tc.get("symmetric", False)),
        seed=int(_pick(seed, tc, "seed", 0)),
        samples_per_ray=int(_pick(samples_per_ray, tc, "samples_per_ray", 160)),
        prob_samples=int(tc.get("prob_samples", 64)),
        color_mode=_pick(color_mode, tc, "color_mode", DIRECT),
        voxel_size=float(_pick(voxel_size, tc, "voxel_size", 0.25)),
        bounds_min=bounds_min, bounds_max=bounds_max,
        background_color=tuple(tc.get("background_color", (0.0, 0.0, 0.0))),
    )


def _load_manifest_or_exit(path) -> SceneManifest:
    try:
        manifest = SceneManifest.load(path)
    except ValueError as e:
        _fail(EXIT_MANIFEST, str(e))
    if not manifest.frames:
        _fail(EXIT_MANIFEST, f"manifest {path} has no frames")
    return manifest


def _loss_summary(trace) -> dict:
    if not trace:
        return {"total": None, "color": None, "depth": None, "gc": None}
    _, total, color, depth, gc = trace[-1]
    return {"total": total, "color": color, "depth": depth, "gc": gc}


def _write_training_artifacts(out: Path, stem: str, trace) -> dict:
    files = {}
    if trace:
        csv_path = out / f"{stem}_loss.csv"
        png_path = out / f"{stem}_loss.png"
        write_loss_trace(trace, csv_path)
        reports.plot_loss_curve(trace, png_path)
        files = {"loss_csv": str(csv_path), "loss_png": str(png_path)}
    return files


def _density_audit(asset: ObjectAsset) -> dict:
    """Mean activated density inside vs outside the canonical box."""
    fld = asset.field
    pts = fld.grid_points()
    sigma = softplus(np.asarray(fld.density_grid, dtype=float).ravel()
                     + fld.density_bias)
    inside = asset.canonical_box.contains(pts)
    return {
        "mean_density_inside_box": float(sigma[inside].mean()) if inside.any() else 0.0,
        "mean_density_outside_box": float(sigma[~inside].mean()) if (~inside).any() else 0.0,
    }


# -- CLI -------------------------------------------------------------------


@click.group()
def main():
    """Voxel-field scene reconstruction and augmentation pipeline."""


train_flags = [
    click.option("--iterations", type=int, default=None),
    click.option("--batch-size", type=int, default=None),
    click.option("--voxel-size", type=float, default=None),
    click.option("--color-mode", type=click.Choice([DIRECT, FEATURE_MLP]),
                 default=None),
    click.option("--w-depth", type=float, default=None),
    click.option("--w-gc", type=float, default=None),
    click.option("--samples-per-ray", type=int, default=None),
    click.option("--bounds", type=str, default=None,
                 help="xmin,ymin,zmin,xmax,ymax,zmax field bounds."),
    click.option("--asset-store", type=click.Path(), default=None,
                 help="Content-addressed asset directory (default OUTPUT/assets)."),
    click.option("--log-every", type=int, default=0),
]


def add_options(opts):
    def wrap(fn):
        for opt in reversed(opts):
            fn = opt(fn)
        return fn
    return wrap


@main.command("train-background")
@click.argument("manifest_path", type=click.Path())
@add_options(train_flags)
@common_options
def cmd_train_background(manifest_path, iterations, batch_size, voxel_size,
                         color_mode, w_depth, w_gc, samples_per_ray, bounds,
                         asset_store, log_every, seed, threads, output,
                         config_path):
    """Reconstruct the static background field from a scene manifest."""
    cfg = _load_config(config_path)
    out = _out_dir(output)
    store = _store_dir(output, asset_store or cfg.get("paths", {}).get("asset_store"))
    manifest = _load_manifest_or_exit(manifest_path)
    tconf = _train_config(cfg, seed, iterations, batch_size, voxel_size,
                          color_mode, w_depth, w_gc, samples_per_ray, bounds)
    try:
        field, trace = train_field(manifest, "background", tconf,
                                   log_every=log_every,
                                   log_fn=lambda m: click.echo(m, err=True))
    except TrainingDiverged as e:
        _fail(EXIT_DIVERGED, str(e))
    except ValueError as e:
        _fail(EXIT_MANIFEST, str(e))
    asset_id, path = store_asset(field, store)
    files = _write_training_artifacts(out, "background", trace)
    batch = decompose.background_rays(manifest)
    _emit({
        "command": "train-background",
        "scene_id": manifest.scene_id,
        "asset_id": asset_id,
        "asset_path": str(path),
        "iterations": tconf.iterations,
        "ray_count": len(batch),
        "final_losses": _loss_summary(trace),
        "bounds_min": field.bounds_min.tolist(),
        "bounds_max": field.bounds_max.tolist(),
        "resolution": list(field.resolution),
        "files": files,
        "threads": threads,
    })


@main.command("train-object")
@click.argument("manifest_path", type=click.Path())
@click.argument("track_id")
@click.option("--symmetric/--no-symmetric", default=False,
              help="Mirror training rays across the object's y=0 plane.")
@add_options(train_flags)
@common_options
def cmd_train_object(manifest_path, track_id, symmetric, iterations,
                     batch_size, voxel_size, color_mode, w_depth, w_gc,
                     samples_per_ray, bounds, asset_store, log_every, seed,
                     threads, output, config_path):
    """Reconstruct one tracked foreground object as a reusable asset."""
    cfg = _load_config(config_path)
    out = _out_dir(output)
    store = _store_dir(output, asset_store or cfg.get("paths", {}).get("asset_store"))
    manifest = _load_manifest_or_exit(manifest_path)
    tracks = decompose.build_tracks(manifest)
    track = next((t for t in tracks if t.track_id == track_id), None)
    if track is None:
        _fail(EXIT_NOT_INTACT,
              f"track {track_id!r} not found; available: "
              f"{sorted(t.track_id for t in tracks)}")
    if not decompose.select_intact(track):
        reasons = []
        for o in track.observations:
            if o.touches_border:
                reasons.append(f"frame {o.frame_index}: mask touches image border")
            if o.overlaps_other:
                reasons.append(f"frame {o.frame_index}: mask overlaps another instance")
            if o.hull_fill < decompose.INTACT_FILL_RATIO:
                reasons.append(f"frame {o.frame_index}: hull fill "
                               f"{o.hull_fill:.2f} < {decompose.INTACT_FILL_RATIO}")
        _fail(EXIT_NOT_INTACT,
              f"track {track_id!r} is not intact: " + "; ".join(reasons[:5]))
    tconf = _train_config(cfg, seed, iterations, batch_size, voxel_size,
                          color_mode, w_depth, w_gc, samples_per_ray, bounds,
                          symmetric=symmetric)
    if voxel_size is None and "voxel_size" not in cfg.get("train", {}):
        # object grids default finer than street-scale backgrounds
        tconf.voxel_size = 0.1
    try:
        asset, trace = train_field(track, "object", tconf, manifest=manifest,
                                   log_every=log_every,
                                   log_fn=lambda m: click.echo(m, err=True))
    except TrainingDiverged as e:
        _fail(EXIT_DIVERGED, str(e))
    except ValueError as e:
        _fail(EXIT_MANIFEST, str(e))
    asset_id, path = store_asset(asset, store)
    files = _write_training_artifacts(out, f"object_{track_id}", trace)
    batch = decompose.object_rays(track, manifest)
    _emit({
        "command": "train-object",
        "scene_id": manifest.scene_id,
        "track_id": track_id,
        "asset_id": asset_id,
        "asset_path": str(path),
        "symmetric": tconf.symmetric,
        "iterations": tconf.iterations,
        "ray_count": len(batch),
        "final_losses": _loss_summary(trace),
        "canonical_size": asset.canonical_box.size.tolist(),
        "density_audit": _density_audit(asset),
        "files": files,
        "threads": threads,
    })


def _pillar_config(cfg: dict, delta1, delta2, cell_size) -> PillarConfig:
    pc = cfg.get("pillar", {})
    cs = _pick(cell_size, pc, "cell_size", 2.0)
    if isinstance(cs, (int, float)):
        cs = (float(cs), float(cs))
    return PillarConfig(cell_size=tuple(cs),
                        height_band=tuple(pc.get("height_band", (0.2, 3.0))),
                        delta1=float(_pick(delta1, pc, "delta1", 30.0)),
                        delta2=float(_pick(delta2, pc, "delta2", 15.0)))


def _parse_ego(ego, cfg: dict):
    ego = _pick(ego, cfg.get("pillar", {}), "ego", None)
    if ego is None:
        return None
    if isinstance(ego, str):
        return tuple(float(v) for v in ego.split(","))
    return tuple(float(v) for v in ego)


@main.command("compose")
@click.argument("background_ref")
@click.argument("object_refs", nargs=-1, required=True)
@click.option("--count", type=int, default=None, help="Scene graphs to emit.")
@click.option("--manifest", "manifest_path", type=click.Path(), default=None,
              help="Source manifest supplying cameras and base boxes.")
@click.option("--tx", type=float, default=None, help="Longitudinal jitter [m].")
@click.option("--ty", type=float, default=None, help="Lateral jitter [m].")
@click.option("--ttheta-deg", type=float, default=None, help="Yaw jitter [deg].")
@click.option("--delta1", type=float, default=None)
@click.option("--delta2", type=float, default=None)
@click.option("--cell-size", type=float, default=None)
@click.option("--ego", type=str, default=None,
              help="x,y ego position for BEV occlusion filtering.")
@click.option("--objects-per-scene", type=str, default=None,
              help="min,max placed objects per scene (default 1,2).")
@click.option("--asset-store", type=click.Path(), default=None)
@common_options
def cmd_compose(background_ref, object_refs, count, manifest_path, tx, ty,
                ttheta_deg, delta1, delta2, cell_size, ego, objects_per_scene,
                asset_store, seed, threads, output, config_path):
    """Place object assets into a background at jittered, collision-free poses."""
    cfg = _load_config(config_path)
    out = _out_dir(output)
    store = _store_dir(output, asset_store or cfg.get("paths", {}).get("asset_store"))
    background = resolve_asset(background_ref, store)
    if isinstance(background, ObjectAsset):
        _fail(EXIT_MISSING_ASSET,
              f"{background_ref!r} is an object asset, not a background")
    pool = []
    for ref in object_refs:
        asset = resolve_asset(ref, store)
        if not isinstance(asset, ObjectAsset):
            _fail(EXIT_MISSING_ASSET, f"{ref!r} is not an object asset")
        pool.append((Path(ref).stem, asset))

    jc = cfg.get("jitter", {})
    jitter = JitterConfig(
        t_x=float(_pick(tx, jc, "t_x", 20.0)),
        t_y=float(_pick(ty, jc, "t_y", 5.0)),
        t_theta=math.radians(float(_pick(ttheta_deg, jc, "t_theta_deg", 30.0))),
        seed=int(_pick(seed, cfg, "seed", 0)))
    pillar = _pillar_config(cfg, delta1, delta2, cell_size)
    region = compute_valid_region(background, pillar, ego=_parse_ego(ego, cfg))

    base_boxes, cameras = [], []
    if manifest_path is not None:
        manifest = _load_manifest_or_exit(manifest_path)
        moving = decompose.moving_track_ids(manifest)
        base_boxes = [box for box, tid in manifest.frames[0].boxes
                      if tid not in moving]
        cameras = [manifest.frames[0].camera]

    count = int(_pick(count, cfg, "count", 12))
    ops = _pick(objects_per_scene, cfg, "objects_per_scene", "1,2")
    if isinstance(ops, str):
        ops = tuple(int(v) for v in ops.split(","))
    scenes = generate_batch(background, background_ref, pool, count, jitter,
                            region, base_boxes=base_boxes, cameras=cameras,
                            objects_per_scene=tuple(ops), seed=jitter.seed)
    if not scenes:
        _fail(EXIT_NO_VALID_REGION,
              "no valid placement cell in the background field")
    paths = []
    placed = 0
    for k, scene in enumerate(scenes):
        p = out / f"scene_{k:04d}.json"
        scene.save(p)
        paths.append(str(p))
        placed += len(scene.placements)
    _emit({
        "command": "compose",
        "background": background_ref,
        "objects": list(object_refs),
        "count": len(scenes),
        "placed_objects": placed,
        "seed": jitter.seed,
        "valid_cells": int((region.state == compose_mod.STATE_VALID).sum()),
        "scene_graphs": paths,
        "threads": threads,
    })


@main.command("render")
@click.argument("scenegraph_path", type=click.Path(exists=True))
@click.option("--camera-index", type=int, default=0, show_default=True)
@click.option("--samples", type=int, default=None,
              help="Quadrature samples per field per ray (default 256).")
@click.option("--background-color", type=str, default=None, help="r,g,b in [0,1].")
@click.option("--asset-store", type=click.Path(), default=None)
@common_options
def cmd_render(scenegraph_path, camera_index, samples, background_color,
               asset_store, seed, threads, output, config_path):
    """Render a composed scene graph to image, depth and box annotations."""
    cfg = _load_config(config_path)
    out = _out_dir(output)
    store = _store_dir(output, asset_store or cfg.get("paths", {}).get("asset_store"))
    scene = SceneGraph.load(scenegraph_path, lambda ref: resolve_asset(ref, store))
    if not scene.cameras:
        raise click.UsageError("scene graph carries no cameras to render from")
    if not (0 <= camera_index < len(scene.cameras)):
        raise click.UsageError(f"camera index {camera_index} out of range "
                               f"(scene has {len(scene.cameras)})")
    rc = cfg.get("render", {})
    n = int(_pick(samples, rc, "samples", 256))
    bg = _pick(background_color, rc, "background_color", (0.0, 0.0, 0.0))
    if isinstance(bg, str):
        bg = tuple(float(v) for v in bg.split(","))
    camera = scene.cameras[camera_index]
    color, depth, valid = render_scene_image(scene, camera, n,
                                             background_color=tuple(bg))
    stem = Path(scenegraph_path).stem
    img_path = out / f"{stem}_cam{camera_index}.ppm"
    depth_path = out / f"{stem}_cam{camera_index}_depth.pgm"
    ann_path = out / f"{stem}_cam{camera_index}_annotations.json"
    write_ppm(img_path, color)
    write_depth_pgm(depth_path, depth, valid)
    ann = {
        "image": img_path.name,
        "depth": depth_path.name,
        "camera": {"fx": camera.fx, "fy": camera.fy, "cx": camera.cx,
                   "cy": camera.cy, "width": camera.width,
                   "height": camera.height,
                   "pose_world_from_camera": camera.pose_matrix.tolist()},
        "boxes": [b.to_json() for b in scene.boxes],
    }
    ann_path.write_text(json.dumps(ann, indent=1))
    _emit({
        "command": "render",
        "scene_graph": str(scenegraph_path),
        "camera_index": camera_index,
        "samples": n,
        "image": str(img_path),
        "depth": str(depth_path),
        "annotations": str(ann_path),
        "boxes": len(scene.boxes),
        "threads": threads,
    })


@main.command("validregion")
@click.argument("background_ref")
@click.option("--delta1", type=float, default=None)
@click.option("--delta2", type=float, default=None)
@click.option("--cell-size", type=float, default=None)
@click.option("--ego", type=str, default=None,
              help="x,y ego position for BEV occlusion filtering.")
@click.option("--asset-store", type=click.Path(), default=None)
@common_options
def cmd_validregion(background_ref, delta1, delta2, cell_size, ego,
                    asset_store, seed, threads, output, config_path):
    """Map where objects may be placed in a background field (BEV cells)."""
    cfg = _load_config(config_path)
    out = _out_dir(output)
    store = _store_dir(output, asset_store or cfg.get("paths", {}).get("asset_store"))
    background = resolve_asset(background_ref, store)
    if isinstance(background, ObjectAsset):
        _fail(EXIT_MISSING_ASSET,
              f"{background_ref!r} is an object asset, not a background")
    pillar = _pillar_config(cfg, delta1, delta2, cell_size)
    region = compute_valid_region(background, pillar, ego=_parse_ego(ego, cfg))
    json_path = out / "validregion.json"
    csv_path = out / "validregion.csv"
    ppm_path = out / "validregion.ppm"
    png_path = out / "validregion.png"
    json_path.write_text(json.dumps(region.to_json(), indent=1))
    reports.valid_region_csv(region, csv_path)
    reports.valid_region_ppm(region, ppm_path)
    reports.plot_valid_region(region, png_path)
    state = region.state
    _emit({
        "command": "validregion",
        "background": background_ref,
        "delta1": pillar.delta1,
        "delta2": pillar.delta2,
        "cell_size": list(pillar.cell_size),
        "ground_height": region.ground_height,
        "cells": {
            "total": int(state.size),
            "valid": int((state == compose_mod.STATE_VALID).sum()),
            "invalid": int((state == compose_mod.STATE_INVALID).sum()),
            "occluded": int((state == compose_mod.STATE_OCCLUDED).sum()),
        },
        "files": {"map": str(json_path), "csv": str(csv_path),
                  "ppm": str(ppm_path), "png": str(png_path)},
        "threads": threads,
    })


@main.command("synth")
@click.argument("scene_spec")
@click.option("--views", type=int, default=None, help="Camera count (default 20).")
@click.option("--width", type=int, default=None, help="Image width px (default 96).")
@click.option("--height-px", type=int, default=None, help="Image height px.")
@click.option("--radius", type=float, default=None, help="Camera ring radius [m].")
@click.option("--cam-height", type=float, default=None, help="Camera height [m].")
@click.option("--fov", type=float, default=None, help="Horizontal FOV [deg].")
@click.option("--step", type=float, default=None,
              help="Reference-render step size [m] (default 0.05).")
@click.option("--noise-amplitude", type=int, default=None,
              help="Mask corruption amplitude in px (default 0 = exact).")
@common_options
def cmd_synth(scene_spec, views, width, height_px, radius, cam_height, fov,
              step, noise_amplitude, seed, threads, output, config_path):
    """Generate a posed synthetic dataset (images, depth, masks, manifest).

    SCENE_SPEC is a preset name (street, street-nocar, spheres) or a path to
    an analytic-scene JSON file.
    """
    cfg = _load_config(config_path)
    sc = cfg.get("synth", {})
    out = _out_dir(output)
    presets = {
        "street": lambda: synth.street_scene(),
        "street-nocar": lambda: synth.street_scene(with_car=False),
        "spheres": synth.sphere_scene,
    }
    if scene_spec in presets:
        scene = presets[scene_spec]()
        scene_id = scene_spec
    elif Path(scene_spec).is_file():
        scene = AnalyticScene.load(scene_spec)
        scene_id = Path(scene_spec).stem
    else:
        raise click.UsageError(
            f"unknown scene {scene_spec!r}: expected a preset "
            f"({', '.join(presets)}) or a scene JSON path")
    views = int(_pick(views, sc, "views", 20))
    width = int(_pick(width, sc, "width", 96))
    height_px = _pick(height_px, sc, "height_px", None)
    radius = _pick(radius, sc, "radius", None)
    cam_height = float(_pick(cam_height, sc, "cam_height", 2.5))
    fov = float(_pick(fov, sc, "fov", 70.0))
    step = float(_pick(step, sc, "step", 0.05))
    noise_amplitude = int(_pick(noise_amplitude, sc, "noise_amplitude", 0))
    seed = int(_pick(seed, cfg, "seed", 0))

    center = (scene.bounds_min + scene.bounds_max) / 2.0
    target = np.array([center[0], center[1], scene.ground_height + 1.0])
    if radius is None:
        radius = 0.45 * float(np.min(scene.bounds_max[:2] - scene.bounds_min[:2]))
    cameras = ring_of_cameras(target, float(radius), cam_height, views, width,
                              height_px=height_px, fov_deg=fov)
    scene.save(out / "scene.json")
    manifest = generate_dataset(scene, cameras, out,
                                noise=MaskNoiseConfig(noise_amplitude, seed),
                                step=step, scene_id=scene_id)
    _emit({
        "command": "synth",
        "scene": scene_id,
        "scene_spec": str(out / "scene.json"),
        "manifest": str(out / "manifest.json"),
        "frames": len(manifest.frames),
        "objects": [oid for oid, _ in scene.object_boxes],
        "views": views,
        "image_size": [width, height_px or width],
        "noise_amplitude": noise_amplitude,
        "seed": seed,
        "threads": threads,
    })


if __name__ == "__main__":
    main()
