"""Binary asset files for trained fields ("digital driving assets").

Layout (little-endian), checksummed with a trailing CRC32 over everything
before it:

    magic "VXSA" | u32 version | u8 kind (0 background, 1 object)
    bounds 6 x f64 | resolution 3 x u32 | voxel_size f64 | color mode u8
    density_bias f64
    density grid f32[nx*ny*nz]
    color/feature grid f32[nx*ny*nz*C] | u32 channel count
    u32 mlp layer count, per layer: u32 out, u32 in, f32 weights, f32 biases
    objects only: canonical box center/size 6 x f64, yaw f64, u8 symmetric
    u32 crc32
"""

from __future__ import annotations

import hashlib
import io
import struct
import zlib
from pathlib import Path

import numpy as np

from .field import DIRECT, FEATURE_MLP, MLP, ObjectAsset, VoxelField
from .geometry import Box3D

MAGIC = b"VXSA"
VERSION = 1

KIND_BACKGROUND = 0
KIND_OBJECT = 1

_COLOR_MODES = {DIRECT: 0, FEATURE_MLP: 1}
_COLOR_MODES_INV = {v: k for k, v in _COLOR_MODES.items()}


class AssetFormatError(ValueError):
    """Bad magic, version, or structure in an asset file."""


class AssetChecksumError(ValueError):
    """CRC mismatch, usually a truncated or corrupted file."""


def _pack_field(buf: io.BytesIO, field: VoxelField) -> None:
    buf.write(struct.pack("<6d", *field.bounds_min, *field.bounds_max))
    buf.write(struct.pack("<3I", *field.resolution))
    buf.write(struct.pack("<d", field.voxel_size))
    buf.write(struct.pack("<B", _COLOR_MODES[field.color_mode]))
    buf.write(struct.pack("<d", field.density_bias))
    buf.write(np.ascontiguousarray(field.density_grid, dtype="<f4").tobytes())
    buf.write(struct.pack("<I", field.color_grid.shape[3]))
    buf.write(np.ascontiguousarray(field.color_grid, dtype="<f4").tobytes())
    if field.mlp is None:
        buf.write(struct.pack("<I", 0))
    else:
        buf.write(struct.pack("<I", len(field.mlp.weights)))
        for W, b in zip(field.mlp.weights, field.mlp.biases):
            buf.write(struct.pack("<2I", W.shape[0], W.shape[1]))
            buf.write(np.ascontiguousarray(W, dtype="<f4").tobytes())
            buf.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def _unpack_field(buf: io.BytesIO) -> VoxelField:
    bmin = struct.unpack("<3d", buf.read(24))
    bmax = struct.unpack("<3d", buf.read(24))
    res = struct.unpack("<3I", buf.read(12))
    (voxel_size,) = struct.unpack("<d", buf.read(8))
    (mode_code,) = struct.unpack("<B", buf.read(1))
    (density_bias,) = struct.unpack("<d", buf.read(8))
    if mode_code not in _COLOR_MODES_INV:
        raise AssetFormatError(f"unknown color mode code {mode_code}")
    n = res[0] * res[1] * res[2]
    density = np.frombuffer(buf.read(4 * n), dtype="<f4").reshape(res).copy()
    (channels,) = struct.unpack("<I", buf.read(4))
    color = np.frombuffer(buf.read(4 * n * channels), dtype="<f4")
    color = color.reshape(*res, channels).copy()
    (n_layers,) = struct.unpack("<I", buf.read(4))
    mlp = None
    if n_layers:
        ws, bs = [], []
        for _ in range(n_layers):
            out_d, in_d = struct.unpack("<2I", buf.read(8))
            ws.append(np.frombuffer(buf.read(4 * out_d * in_d), dtype="<f4")
                      .reshape(out_d, in_d).copy())
            bs.append(np.frombuffer(buf.read(4 * out_d), dtype="<f4").copy())
        mlp = MLP(ws, bs)
    return VoxelField(np.array(bmin), np.array(bmax), tuple(int(r) for r in res),
                      voxel_size, density, _COLOR_MODES_INV[mode_code], color,
                      mlp, density_bias)


def save_asset(obj: VoxelField | ObjectAsset, path) -> None:
    """Serialize a background field or object asset to `path`."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    if isinstance(obj, ObjectAsset):
        buf.write(struct.pack("<B", KIND_OBJECT))
        _pack_field(buf, obj.field)
        box = obj.canonical_box
        buf.write(struct.pack("<7d", *box.center, *box.size, box.yaw))
        buf.write(struct.pack("<B", int(obj.symmetric)))
    else:
        buf.write(struct.pack("<B", KIND_BACKGROUND))
        _pack_field(buf, obj)
    payload = buf.getvalue()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    Path(path).write_bytes(payload + struct.pack("<I", crc))


def load_asset(path) -> VoxelField | ObjectAsset:
    """Read an asset file; raises on bad magic/version/CRC."""
    raw = Path(path).read_bytes()
    if len(raw) < 13:
        raise AssetFormatError(f"{path}: too short to be an asset file")
    if raw[:4] != MAGIC:
        raise AssetFormatError(f"{path}: bad magic {raw[:4]!r}")
    payload, crc_bytes = raw[:-4], raw[-4:]
    (crc_stored,) = struct.unpack("<I", crc_bytes)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc_stored:
        raise AssetChecksumError(f"{path}: checksum mismatch (truncated or corrupt)")
    buf = io.BytesIO(payload)
    buf.read(4)
    (version,) = struct.unpack("<I", buf.read(4))
    if version != VERSION:
        raise AssetFormatError(f"{path}: unsupported version {version}")
    (kind,) = struct.unpack("<B", buf.read(1))
    field = _unpack_field(buf)
    if kind == KIND_BACKGROUND:
        return field
    if kind == KIND_OBJECT:
        vals = struct.unpack("<7d", buf.read(56))
        (sym,) = struct.unpack("<B", buf.read(1))
        box = Box3D(np.array(vals[:3]), np.array(vals[3:6]), vals[6], frame="local")
        return ObjectAsset(field, box, bool(sym))
    raise AssetFormatError(f"{path}: unknown asset kind {kind}")


def content_hash(path) -> str:
    """Short content hash used to key the asset store."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]
