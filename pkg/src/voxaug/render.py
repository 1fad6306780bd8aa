"""Differentiable quadrature rendering of color, depth and object probability.

Compositing follows the standard emission-absorption model: alpha_i =
1 - exp(-sigma_i * delta_i), transmittance T_i = prod_{j<i}(1 - alpha_j),
pixel color = sum_i T_i alpha_i c_i + T_final * background. Depth is the
opacity-normalized expected termination distance; rays with opacity below
DEPTH_OPACITY_EPS carry an invalid-depth flag.

`render_batch` returns the intermediate quantities the trainer needs for
analytic gradients; plain callers use `render` / `render_composed`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .field import DIRECT, PE_FREQS_D, PE_FREQS_X, VoxelField, positional_encoding, sigmoid, softplus
from .geometry import Ray, ray_aabb_intersect_batch, transform_ray

DEPTH_OPACITY_EPS = 1e-4
EARLY_TERMINATION_T = 1e-4


@dataclass(frozen=True)
class RenderResult:
    color: np.ndarray  # (3,)
    depth: float
    opacity: float
    depth_valid: bool
    object_prob: float | None = None


def sample_along_ray(ray: Ray, n: int, jitter: bool = False,
                     rng: np.random.Generator | None = None):
    """Stratified sample positions over [t_near, t_far]: (t values, delta)."""
    if n < 1:
        raise ValueError("need at least one sample")
    if not math.isfinite(ray.t_far):
        raise ValueError("cannot sample an unbounded ray")
    span = ray.t_far - ray.t_near
    delta = span / n
    if jitter:
        if rng is None:
            raise ValueError("jitter requires an rng")
        offsets = (np.arange(n) + rng.random(n)) / n
    else:
        offsets = (np.arange(n) + 0.5) / n
    return ray.t_near + offsets * span, delta


def _sample_ts(ta, tb, n, jitter=False, rng=None):
    """(N,) bounds -> t (N, n) midpoint/stratified samples and delta (N,)."""
    span = np.maximum(tb - ta, 0.0)
    if jitter:
        offsets = (np.arange(n)[None, :] + rng.random((len(ta), n))) / n
    else:
        offsets = ((np.arange(n) + 0.5) / n)[None, :]
    t = ta[:, None] + offsets * span[:, None]
    return t, span / n


def field_forward(field: VoxelField, pts: np.ndarray, dirs: np.ndarray,
                  want_cache: bool = False, want_color: bool = True):
    """sigma and rgb at flat points, with an optional cache for backprop."""
    n_pts = len(pts)
    sigma = np.zeros(n_pts)
    rgb = np.zeros((n_pts, 3))
    inside = field.inside(pts)
    cache = {"inside": inside}
    if np.any(inside):
        dtype = field.density_grid.dtype
        pts = np.ascontiguousarray(pts, dtype=dtype)
        idx, w = field._corner_weights(pts[inside])
        raw = field.interp_raw(field.density_grid, None, idx=idx, w=w)
        sigma[inside] = softplus(raw + field.density_bias)
        if not want_color:
            if want_cache:
                cache.update(idx=idx, w=w, raw=raw)
            return sigma, rgb, cache if want_cache else None
        if field.color_mode == DIRECT:
            logits = field.interp_raw(field.color_grid, None, idx=idx, w=w)
            mlp_cache = None
        else:
            feat = field.interp_raw(field.color_grid, None, idx=idx, w=w)
            dirs_in = np.ascontiguousarray(dirs, dtype=dtype)[inside]
            x_in = np.concatenate([
                feat,
                positional_encoding(pts[inside], PE_FREQS_X),
                positional_encoding(dirs_in, PE_FREQS_D),
            ], axis=1)
            mlp_cache = []
            logits = field.mlp.forward(x_in, cache=mlp_cache)
        rgb[inside] = sigmoid(logits)
        if want_cache:
            cache.update(idx=idx, w=w, raw=raw, logits=logits, mlp_cache=mlp_cache)
    return sigma, rgb, cache if want_cache else None


def composite(s: np.ndarray, rgb: np.ndarray, t: np.ndarray,
              background_color, early_termination: bool = False):
    """Quadrature compositing of per-sample optical depths s = sigma * delta.

    s, t are (N, n); rgb is (N, n, 3). Returns a dict of per-ray outputs and
    the per-sample weights needed by the backward pass.
    """
    bg = np.asarray(background_color, dtype=float).reshape(3)
    trans_seg = np.exp(-s)  # per-segment transmittance
    T = np.cumprod(np.concatenate([np.ones((len(s), 1)), trans_seg], axis=1), axis=1)
    if early_termination:
        dead = T[:, :-1] < EARLY_TERMINATION_T
        s = np.where(dead, 0.0, s)
        trans_seg = np.exp(-s)
        T = np.cumprod(np.concatenate([np.ones((len(s), 1)), trans_seg], axis=1), axis=1)
    alpha = -np.expm1(-s)
    weights = T[:, :-1] * alpha
    T_final = T[:, -1]
    color = np.einsum("nk,nkc->nc", weights, rgb) + T_final[:, None] * bg
    opacity = 1.0 - T_final
    acc_t = (weights * t).sum(axis=1)
    depth_valid = opacity >= DEPTH_OPACITY_EPS
    depth = acc_t / np.maximum(opacity, DEPTH_OPACITY_EPS)
    return {
        "color": color, "depth": depth, "opacity": opacity,
        "depth_valid": depth_valid, "weights": weights, "T": T,
        "T_final": T_final, "alpha": alpha, "acc_t": acc_t, "bg": bg,
    }


def render_batch(field: VoxelField, origins: np.ndarray, dirs: np.ndarray,
                 t_near, t_far, n: int, background_color=(0.0, 0.0, 0.0),
                 jitter: bool = False, rng: np.random.Generator | None = None,
                 want_cache: bool = False, early_termination: bool = False):
    """Render many rays against one field. Returns compositing dict (+ caches)."""
    n_rays = len(origins)
    ta, tb = ray_aabb_intersect_batch(origins, dirs, field.bounds_min,
                                      field.bounds_max, 0.0, math.inf)
    ta = np.maximum(ta, np.broadcast_to(np.asarray(t_near, dtype=float), (n_rays,)))
    tb = np.minimum(tb, np.broadcast_to(np.asarray(t_far, dtype=float), (n_rays,)))
    hit = ta < tb
    ta = np.where(hit, ta, 0.0)
    tb = np.where(hit, tb, 0.0)
    t, delta = _sample_ts(ta, tb, n, jitter, rng)
    pts = origins[:, None, :] + t[:, :, None] * dirs[:, None, :]
    dirs_flat = None if field.color_mode == DIRECT else np.repeat(dirs, n, axis=0)
    sigma, rgb, cache = field_forward(field, pts.reshape(-1, 3), dirs_flat,
                                      want_cache=want_cache)
    sigma = sigma.reshape(n_rays, n)
    rgb = rgb.reshape(n_rays, n, 3)
    s = sigma * delta[:, None]
    out = composite(s, rgb, t, background_color, early_termination)
    out.update(t=t, delta=delta, sigma=sigma, rgb=rgb, hit=hit, ta=ta, tb=tb)
    if want_cache:
        out["field_cache"] = cache
    return out


def render(field: VoxelField, ray: Ray, n: int = 256,
           background_color=(0.0, 0.0, 0.0)) -> RenderResult:
    """Render a single ray."""
    if not (ray.t_near < ray.t_far):
        raise ValueError("degenerate ray: t_near >= t_far")
    out = render_batch(field, ray.origin[None], ray.direction[None],
                       ray.t_near, ray.t_far, n, background_color)
    return RenderResult(out["color"][0], float(out["depth"][0]),
                        float(out["opacity"][0]), bool(out["depth_valid"][0]))


def object_probability_batch(field: VoxelField, origins, dirs, ta, tb, n: int,
                             want_cache: bool = False):
    """P = 1 - exp(-sum sigma_i delta_i) over [ta, tb] per ray."""
    n_rays = len(origins)
    hit = ta < tb
    ta = np.where(hit, ta, 0.0)
    tb = np.where(hit, tb, 0.0)
    t, delta = _sample_ts(ta, tb, n)
    pts = origins[:, None, :] + t[:, :, None] * dirs[:, None, :]
    sigma, _, cache = field_forward(field, pts.reshape(-1, 3), None,
                                    want_cache=want_cache, want_color=False)
    sigma = sigma.reshape(n_rays, n)
    s = sigma * delta[:, None]
    total = s.sum(axis=1)
    prob = -np.expm1(-total)
    out = {"prob": prob, "s_total": total, "t": t, "delta": delta,
           "sigma": sigma, "hit": hit}
    if want_cache:
        out["field_cache"] = cache
    return out


def render_object_probability(field: VoxelField, ray: Ray,
                              bounds: tuple[float, float] | None, n: int = 128) -> float:
    """Rendered probability that the ray hits the object within its box span."""
    if bounds is None:
        return 0.0
    ta, tb = bounds
    out = object_probability_batch(field, ray.origin[None], ray.direction[None],
                                   np.array([ta]), np.array([tb]), n)
    return float(out["prob"][0])


def render_composed_batch(scene, origins: np.ndarray, dirs: np.ndarray,
                          t_near, t_far, n_per_field: int,
                          background_color=(0.0, 0.0, 0.0)):
    """Jointly render a background plus placed objects along many rays.

    Each field is sampled on its own ray-AABB span; all samples are merged in
    ascending world t (stable sort, so ties keep source-list order) and
    composited once.
    """
    n_rays = len(origins)
    bg_field = scene.background
    t_near = np.broadcast_to(np.asarray(t_near, dtype=float), (n_rays,))
    t_far = np.broadcast_to(np.asarray(t_far, dtype=float), (n_rays,))

    all_t, all_s, all_rgb = [], [], []

    def add_field_samples(field, o, d, world_ta, world_tb):
        hit = world_ta < world_tb
        ta = np.where(hit, world_ta, 0.0)
        tb = np.where(hit, world_tb, 0.0)
        t, delta = _sample_ts(ta, tb, n_per_field)
        pts = o[:, None, :] + t[:, :, None] * d[:, None, :]
        dirs_flat = None if field.color_mode == DIRECT             else np.repeat(d, n_per_field, axis=0)
        sigma, rgb, _ = field_forward(field, pts.reshape(-1, 3), dirs_flat)
        sigma = sigma.reshape(n_rays, n_per_field)
        rgb = rgb.reshape(n_rays, n_per_field, 3)
        all_t.append(t)
        all_s.append(sigma * delta[:, None])
        all_rgb.append(rgb)

    ta, tb = ray_aabb_intersect_batch(origins, dirs, bg_field.bounds_min,
                                      bg_field.bounds_max, 0.0, math.inf)
    add_field_samples(bg_field, origins, dirs,
                      np.maximum(ta, t_near), np.minimum(tb, t_far))

    for asset, placement in scene.placements:
        o_loc = placement.to_local(origins)
        d_loc = dirs @ placement.rotation
        ta, tb = ray_aabb_intersect_batch(o_loc, d_loc, asset.field.bounds_min,
                                          asset.field.bounds_max, 0.0, math.inf)
        add_field_samples(asset.field, o_loc, d_loc,
                          np.maximum(ta, t_near), np.minimum(tb, t_far))

    t = np.concatenate(all_t, axis=1)
    s = np.concatenate(all_s, axis=1)
    rgb = np.concatenate(all_rgb, axis=1)
    order = np.argsort(t, axis=1, kind="stable")
    rows = np.arange(n_rays)[:, None]
    t = t[rows, order]
    s = s[rows, order]
    rgb = rgb[rows, order]
    return composite(s, rgb, t, background_color)


def render_composed(scene, ray: Ray, n_per_field: int = 256,
                    background_color=(0.0, 0.0, 0.0)) -> RenderResult:
    out = render_composed_batch(scene, ray.origin[None], ray.direction[None],
                                ray.t_near, ray.t_far, n_per_field,
                                background_color)
    return RenderResult(out["color"][0], float(out["depth"][0]),
                        float(out["opacity"][0]), bool(out["depth_valid"][0]))


def render_image(render_fn, camera, n: int, background_color=(0, 0, 0),
                 t_near: float = 0.0, t_far: float = math.inf,
                 chunk: int = 8192):
    """Render a full camera image with a batched ray renderer.

    render_fn(origins, dirs, t_near, t_far) -> compositing dict; returns
    (H, W, 3) color, (H, W) depth, (H, W) depth-valid mask.
    """
    from .geometry import generate_rays

    h, w = camera.height, camera.width
    us, vs = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    pixels = np.stack([us.ravel(), vs.ravel()], axis=1)
    origins, dirs = generate_rays(camera, pixels)
    colors = np.zeros((h * w, 3))
    depths = np.zeros(h * w)
    valid = np.zeros(h * w, dtype=bool)
    for lo in range(0, h * w, chunk):
        hi = min(lo + chunk, h * w)
        out = render_fn(origins[lo:hi], dirs[lo:hi], t_near, t_far)
        colors[lo:hi] = out["color"]
        depths[lo:hi] = out["depth"]
        valid[lo:hi] = out["depth_valid"]
    return colors.reshape(h, w, 3), depths.reshape(h, w), valid.reshape(h, w)


def render_field_image(field: VoxelField, camera, n: int = 256,
                       background_color=(0, 0, 0), **kw):
    return render_image(
        lambda o, d, tn, tf: render_batch(field, o, d, tn, tf, n, background_color),
        camera, n, background_color, **kw)


def render_scene_image(scene, camera, n_per_field: int = 256,
                       background_color=(0, 0, 0), **kw):
    return render_image(
        lambda o, d, tn, tf: render_composed_batch(scene, o, d, tn, tf,
                                                   n_per_field, background_color),
        camera, n_per_field, background_color, **kw)
