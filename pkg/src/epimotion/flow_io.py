"""Readers and writers for dense flow fields, float rasters and binary masks.

Formats:
  * ``.flo``  -- little-endian: float32 magic 202021.25, int32 width, int32
    height, then height*width interleaved (u, v) float32 pairs, row-major.
  * ``.pfm``  -- ``Pf`` (1 channel) / ``PF`` (3 channels), rows stored
    bottom-up.  Files are always written little-endian (negative scale);
    big-endian input is accepted and converted.
  * ``.png``  -- 8-bit binary masks; any non-zero pixel reads as 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ArgError, DataError, FormatError

FLO_MAGIC = 202021.25


@dataclass
class FlowField:
    """A dense per-pixel displacement field (pixel units)."""

    width: int
    height: int
    u: np.ndarray  # (height, width) float32
    v: np.ndarray  # (height, width) float32

    def __post_init__(self):
        self.u = np.ascontiguousarray(self.u, dtype=np.float32)
        self.v = np.ascontiguousarray(self.v, dtype=np.float32)
        if self.u.shape != (self.height, self.width) or self.v.shape != self.u.shape:
            raise ArgError(
                f"flow shape mismatch: dims ({self.height},{self.width}), "
                f"u {self.u.shape}, v {self.v.shape}"
            )

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u.astype(np.float64), self.v.astype(np.float64))


def read_flo(path) -> FlowField:
    """Read a Middlebury ``.flo`` file."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic = np.frombuffer(raw, "<f4", count=1)[0]
    if magic != FLO_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {FLO_MAGIC}")
    w, h = (int(x) for x in np.frombuffer(raw, "<i4", count=2, offset=4))
    if w <= 0 or h <= 0:
        raise FormatError(f"{path}: non-positive dimensions {w}x{h}")
    expected = 12 + 8 * w * h
    if len(raw) < expected:
        raise FormatError(f"{path}: payload truncated ({len(raw)} < {expected} bytes)")
    data = np.frombuffer(raw, "<f4", count=2 * w * h, offset=12).reshape(h, w, 2)
    if not np.isfinite(data).all():
        raise DataError(f"{path}: non-finite flow values")
    return FlowField(w, h, data[:, :, 0].copy(), data[:, :, 1].copy())


def write_flo(path, flow: FlowField) -> None:
    """Write a ``.flo`` file; ``read_flo(write_flo(x)) == x`` bit-for-bit."""
    if not (np.isfinite(flow.u).all() and np.isfinite(flow.v).all()):
        raise DataError("refusing to write non-finite flow values")
    header = np.array([FLO_MAGIC], "<f4").tobytes()
    header += np.array([flow.width, flow.height], "<i4").tobytes()
    data = np.stack([flow.u, flow.v], axis=-1).astype("<f4")
    Path(path).write_bytes(header + data.tobytes())


def _pfm_tokens(raw: bytes, n: int):
    """Yield the first n whitespace-separated header tokens and the offset
    of the byte just past the single whitespace that ends the last one."""
    tokens = []
    pos = 0
    for _ in range(n):
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PFM header")
        tokens.append(raw[start:pos])
        pos += 1  # exactly one whitespace terminates the token
    return tokens, pos


def read_pfm(path) -> np.ndarray:
    """Read a PFM raster as float32, shape (h, w) or (h, w, 3), top-down."""
    raw = Path(path).read_bytes()
    try:
        (kind, ws, hs, scale_s), offset = _pfm_tokens(raw, 4)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if kind not in (b"PF", b"Pf"):
        raise FormatError(f"{path}: bad PFM type {kind!r}")
    channels = 3 if kind == b"PF" else 1
    try:
        w, h, scale = int(ws), int(hs), float(scale_s)
    except ValueError:
        raise FormatError(f"{path}: unparsable PFM header") from None
    if w <= 0 or h <= 0 or scale == 0:
        raise FormatError(f"{path}: invalid PFM dimensions/scale")
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * channels
    if len(raw) - offset < 4 * count:
        raise FormatError(f"{path}: PFM payload truncated")
    data = np.frombuffer(raw, dtype, count=count, offset=offset)
    data = data.astype(np.float32).reshape(h, w, channels)[::-1]  # bottom-up
    if not np.isfinite(data).all():
        raise DataError(f"{path}: non-finite PFM values")
    return data[:, :, 0].copy() if channels == 1 else data.copy()


def write_pfm(path, values: np.ndarray) -> None:
    """Write a float raster as little-endian PFM (scale -1.0)."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim == 2:
        kind, payload = b"Pf", arr[:, :, None]
    elif arr.ndim == 3 and arr.shape[2] == 3:
        kind, payload = b"PF", arr
    else:
        raise ArgError(f"PFM rasters must be (h,w) or (h,w,3), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise DataError("refusing to write non-finite PFM values")
    h, w = arr.shape[:2]
    header = kind + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n"
    Path(path).write_bytes(header + payload[::-1].astype("<f4").tobytes())


def read_mask(path) -> np.ndarray:
    """Read an 8-bit mask image; returns uint8 array of {0, 1}."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return (arr != 0).astype(np.uint8)


def write_mask(path, mask: np.ndarray) -> None:
    """Write a binary mask as an 8-bit PNG (1 -> 255)."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ArgError(f"masks must be 2-d, got shape {arr.shape}")
    img = Image.fromarray(((arr != 0) * np.uint8(255)), mode="L")
    img.save(path, format="PNG")


def flow_to_color(flow: FlowField) -> np.ndarray:
    """Visualize a flow field as uint8 RGB.

    Hue encodes direction, saturation encodes magnitude relative to the
    largest displacement in the field.  Zero flow is white; negating the
    field rotates every hue by 180 degrees.
    """
    u = flow.u.astype(np.float64)
    v = flow.v.astype(np.float64)
    mag = np.hypot(u, v)
    peak = mag.max()
    sat = mag / peak if peak > 0 else np.zeros_like(mag)
    hue = (np.arctan2(-v, -u) / (2 * np.pi) + 0.5)  # [0,1), 180-deg flip on negation
    # vectorized HSV -> RGB with value fixed at 1
    k = (hue * 6.0) % 6.0
    f = k - np.floor(k)
    p = 1.0 - sat
    q = 1.0 - sat * f
    t = 1.0 - sat * (1.0 - f)
    i = np.floor(k).astype(int) % 6
    ones = np.ones_like(sat)
    lut_r = np.stack([ones, q, p, p, t, ones])
    lut_g = np.stack([t, ones, ones, q, p, p])
    lut_b = np.stack([p, p, t, ones, ones, q])
    rows = np.arange(i.shape[0])[:, None]
    cols = np.arange(i.shape[1])[None, :]
    rgb = np.stack([lut_r[i, rows, cols], lut_g[i, rows, cols], lut_b[i, rows, cols]], axis=-1)
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
