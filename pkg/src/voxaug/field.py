"""Explicit voxel radiance fields.

A field stores a raw density grid and either a direct RGB-logit grid or a
feature grid decoded by a shallow MLP. Queries are trilinear interpolations;
density goes through softplus(raw + bias) so sigma >= 0, colors through a
sigmoid. Points outside the bounds read as empty space (sigma 0, black).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .geometry import Box3D

DIRECT = "direct"
FEATURE_MLP = "feature_mlp"

FEATURE_DIM = 12
HIDDEN_DIM = 64
PE_FREQS_X = 4
PE_FREQS_D = 4

# softplus(RAW_INIT + DENSITY_BIAS) == SIGMA_INIT
RAW_INIT = -4.0
SIGMA_INIT = 1e-3
DENSITY_BIAS = float(np.log(np.expm1(SIGMA_INIT)) - RAW_INIT)


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_grad(x):
    # d/dx log(1 + e^x) = sigmoid(x)
    return sigmoid(x)


def softplus_inv(y):
    # inverse of softplus for y > 0
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


def sigmoid(x):
    x = np.asarray(x)
    if x.dtype.kind != "f":
        x = x.astype(float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def positional_encoding(x: np.ndarray, n_freqs: int) -> np.ndarray:
    """[x, sin(2^k x), cos(2^k x) for k < n_freqs], concatenated per channel."""
    outs = [x]
    for k in range(n_freqs):
        outs.append(np.sin((2.0 ** k) * x))
        outs.append(np.cos((2.0 ** k) * x))
    return np.concatenate(outs, axis=-1)


def pe_dim(channels: int, n_freqs: int) -> int:
    return channels * (1 + 2 * n_freqs)


@dataclass
class MLP:
    """Shallow fully connected net: (feature, pe(x), pe(d)) -> rgb logits."""

    weights: list  # list of (out, in) arrays
    biases: list  # list of (out,) arrays

    @classmethod
    def create(cls, in_dim: int, hidden: int = HIDDEN_DIM, out_dim: int = 3,
               rng: np.random.Generator | None = None, dtype=np.float32) -> "MLP":
        rng = rng or np.random.default_rng(0)
        dims = [in_dim, hidden, out_dim]
        ws, bs = [], []
        for i in range(len(dims) - 1):
            scale = math.sqrt(2.0 / dims[i])
            ws.append((rng.standard_normal((dims[i + 1], dims[i])) * scale).astype(dtype))
            bs.append(np.zeros(dims[i + 1], dtype=dtype))
        return cls(ws, bs)

    def forward(self, x: np.ndarray, cache: list | None = None) -> np.ndarray:
        """Linear -> ReLU for hidden layers, linear output. x is (N, in_dim)."""
        h = x
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if cache is not None:
                cache.append(h)
            h = h @ W.T + b
            if i < len(self.weights) - 1:
                h = np.maximum(h, 0.0)
        return h

    def backward(self, cache: list, d_out: np.ndarray):
        """Gradients wrt weights, biases and the input, given d(loss)/d(output)."""
        dWs = [None] * len(self.weights)
        dbs = [None] * len(self.biases)
        g = d_out
        for i in reversed(range(len(self.weights))):
            h_in = cache[i]
            dWs[i] = g.T @ h_in
            dbs[i] = g.sum(axis=0)
            g = g @ self.weights[i]
            if i > 0:
                pre_prev = cache[i - 1] @ self.weights[i - 1].T + self.biases[i - 1]
                g = g * (pre_prev > 0)
        return dWs, dbs, g

    def copy(self) -> "MLP":
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class VoxelField:
    """Density + color voxel grid over an axis-aligned box."""

    bounds_min: np.ndarray  # (3,)
    bounds_max: np.ndarray  # (3,)
    resolution: tuple  # (nx, ny, nz) grid points
    voxel_size: float
    density_grid: np.ndarray  # (nx, ny, nz) raw values, pre-softplus
    color_mode: str
    color_grid: np.ndarray  # (nx, ny, nz, 3) logits or (nx, ny, nz, F) features
    mlp: MLP | None = None
    density_bias: float = DENSITY_BIAS

    def __post_init__(self):
        self.bounds_min = np.asarray(self.bounds_min, dtype=float).reshape(3)
        self.bounds_max = np.asarray(self.bounds_max, dtype=float).reshape(3)
        nx, ny, nz = self.resolution
        if min(nx, ny, nz) < 2:
            raise ValueError("resolution components must be >= 2")
        if self.density_grid.shape != (nx, ny, nz):
            raise ValueError("density grid shape does not match resolution")
        if self.color_grid.shape[:3] != (nx, ny, nz):
            raise ValueError("color grid shape does not match resolution")
        spacing = (self.bounds_max - self.bounds_min) / (np.array(self.resolution) - 1)
        if np.any(np.abs(spacing - self.voxel_size) > 1e-6):
            raise ValueError("voxel_size inconsistent with bounds/resolution")
        if self.color_mode == FEATURE_MLP and self.mlp is None:
            raise ValueError("feature_mlp mode requires an MLP")

    @classmethod
    def create(cls, bounds_min, bounds_max, voxel_size: float,
               color_mode: str = DIRECT, rng: np.random.Generator | None = None,
               dtype=np.float32) -> "VoxelField":
        """Build an initialized field; bounds_max is expanded to a whole grid."""
        bounds_min = np.asarray(bounds_min, dtype=float)
        bounds_max = np.asarray(bounds_max, dtype=float)
        extent = bounds_max - bounds_min
        res = np.maximum(np.ceil(extent / voxel_size - 1e-9).astype(int) + 1, 2)
        bounds_max = bounds_min + (res - 1) * voxel_size
        nx, ny, nz = (int(r) for r in res)
        density = np.full((nx, ny, nz), RAW_INIT, dtype=dtype)
        if color_mode == DIRECT:
            color = np.zeros((nx, ny, nz, 3), dtype=dtype)
            mlp = None
        elif color_mode == FEATURE_MLP:
            color = np.zeros((nx, ny, nz, FEATURE_DIM), dtype=dtype)
            in_dim = FEATURE_DIM + pe_dim(3, PE_FREQS_X) + pe_dim(3, PE_FREQS_D)
            mlp = MLP.create(in_dim, rng=rng, dtype=dtype)
        else:
            raise ValueError(f"unknown color mode {color_mode!r}")
        return cls(bounds_min, bounds_max, (nx, ny, nz), voxel_size,
                   density, color_mode, color, mlp)

    # -- interpolation machinery ---------------------------------------------

    def _corner_weights(self, pts: np.ndarray):
        """Trilinear corner flat-indices (N, 8) and weights (N, 8).

        Points are assumed inside the bounds; callers mask out-of-bounds first.
        """
        dtype = self.density_grid.dtype
        res = np.array(self.resolution)
        g = ((pts - self.bounds_min) / self.voxel_size).astype(dtype)
        g = np.clip(g, 0.0, (res - 1).astype(dtype))
        i0 = np.minimum(g.astype(int), res - 2)
        f = g - i0.astype(dtype)
        nx, ny, nz = self.resolution
        base = (i0[:, 0] * ny + i0[:, 1]) * nz + i0[:, 2]
        offs = np.array([(dx * ny + dy) * nz + dz
                         for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)])
        idx = base[:, None] + offs[None, :]
        wx = np.stack([1 - f[:, 0], f[:, 0]], axis=1)
        wy = np.stack([1 - f[:, 1], f[:, 1]], axis=1)
        wz = np.stack([1 - f[:, 2], f[:, 2]], axis=1)
        w = (wx[:, :, None, None] * wy[:, None, :, None] * wz[:, None, None, :])
        return idx, w.reshape(len(pts), 8)

    def inside(self, pts: np.ndarray) -> np.ndarray:
        return np.all((pts >= self.bounds_min) & (pts <= self.bounds_max), axis=-1)

    def interp_raw(self, grid: np.ndarray, pts: np.ndarray, idx=None, w=None):
        """Trilinear interpolation of any grid co-shaped with the field."""
        if idx is None:
            idx, w = self._corner_weights(pts)
        flat = grid.reshape(-1, *grid.shape[3:])
        vals = flat[idx]  # (N, 8, ...) gather
        if vals.ndim == 2:
            return np.einsum("nk,nk->n", vals, w)
        return np.einsum("nkc,nk->nc", vals, w)

    def query_density(self, pts: np.ndarray) -> np.ndarray:
        """Activated extinction sigma at points; 0 outside the bounds."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.zeros(len(pts))
        m = self.inside(pts)
        if np.any(m):
            raw = self.interp_raw(self.density_grid, pts[m])
            out[m] = softplus(raw + self.density_bias)
        return out

    def query_color(self, pts: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """RGB in [0,1]^3 at points; black outside the bounds."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        dirs = np.broadcast_to(np.atleast_2d(np.asarray(dirs, dtype=float)), pts.shape)
        out = np.zeros((len(pts), 3))
        m = self.inside(pts)
        if not np.any(m):
            return out
        if self.color_mode == DIRECT:
            logits = self.interp_raw(self.color_grid, pts[m])
        else:
            feat = self.interp_raw(self.color_grid, pts[m])
            x_in = np.concatenate([
                feat,
                positional_encoding(pts[m], PE_FREQS_X),
                positional_encoding(dirs[m], PE_FREQS_D),
            ], axis=1)
            logits = self.mlp.forward(x_in)
        out[m] = sigmoid(logits)
        return out

    def copy(self) -> "VoxelField":
        return VoxelField(
            self.bounds_min.copy(), self.bounds_max.copy(), self.resolution,
            self.voxel_size, self.density_grid.copy(), self.color_mode,
            self.color_grid.copy(), self.mlp.copy() if self.mlp else None,
            self.density_bias)

    def grid_points(self) -> np.ndarray:
        """(nx*ny*nz, 3) world coordinates of all grid nodes."""
        axes = [np.linspace(self.bounds_min[i], self.bounds_max[i], self.resolution[i])
                for i in range(3)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)


@dataclass
class ObjectAsset:
    """A trained object field in its box-local frame, plus its canonical box."""

    field: VoxelField
    canonical_box: Box3D  # local frame, center ~ origin
    symmetric: bool = False

    def __post_init__(self):
        lo = self.canonical_box.center - self.canonical_box.size / 2
        hi = self.canonical_box.center + self.canonical_box.size / 2
        if np.any(self.field.bounds_min > lo + 1e-9) or np.any(self.field.bounds_max < hi - 1e-9):
            raise ValueError("field bounds must enclose the canonical box")
