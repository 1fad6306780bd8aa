"""Netpbm image IO: 8-bit P6 PPM for color, 16-bit P5 PGM for depth.

Depth maps store millimeters as big-endian uint16 (the Netpbm byte order);
0 marks an invalid pixel.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

DEPTH_SCALE_MM = 1000.0
MAX_DEPTH_MM = 65535


def write_ppm(path, image: np.ndarray) -> None:
    """Write an (H, W, 3) float image in [0, 1] as binary PPM."""
    data = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM into an (H, W, 3) float image in [0, 1]."""
    w, h, maxval, data = _read_pnm(path, b"P6")
    arr = np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)
    return arr.astype(float) / maxval


def write_depth_pgm(path, depth_m: np.ndarray, valid: np.ndarray | None = None) -> None:
    """Write a depth map in meters as 16-bit millimeter PGM; invalid -> 0."""
    mm = np.round(np.asarray(depth_m) * DEPTH_SCALE_MM)
    mm = np.clip(mm, 1, MAX_DEPTH_MM).astype(np.uint16)
    if valid is not None:
        mm = np.where(valid, mm, 0).astype(np.uint16)
    h, w = mm.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{MAX_DEPTH_MM}\n".encode())
        f.write(mm.astype(">u2").tobytes())


def read_depth_pgm(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a 16-bit PGM depth map: (depth in meters, validity mask)."""
    w, h, maxval, data = _read_pnm(path, b"P5")
    if maxval <= 255:
        raise ValueError(f"{path}: expected a 16-bit depth PGM")
    mm = np.frombuffer(data, dtype=">u2").reshape(h, w)
    valid = mm > 0
    return mm.astype(float) / DEPTH_SCALE_MM, valid


def _read_pnm(path, magic: bytes):
    raw = Path(path).read_bytes()
    if not raw.startswith(magic):
        raise ValueError(f"{path}: not a {magic.decode()} file")
    # header: magic, width, height, maxval, single whitespace, then raster
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1
    w, h, maxval = fields
    return w, h, maxval, raw[pos:]
