"""Shared raster types, bilinear sampling, and the FMAP / PGM / PPM file formats.

Pixel-center convention used everywhere: pixel (i, j) of an HxW raster sits at
normalized coordinates x = (j + 0.5) / W, y = (i + 0.5) / H. Out-of-range
sample coordinates clamp to the valid range instead of erroring, because warp
fields legitimately reach image borders.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError, ShapeError, ValidationError

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1
MESH_MAGIC = b"MESH"


class FloatMap2D:
    """Immutable HxWxC float32 raster; carrier for coordinate, angle and warp maps."""

    def __init__(self, data: np.ndarray):
        arr = np.asarray(data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ShapeError(f"FloatMap2D needs an HxWxC array, got shape {arr.shape}")
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        if not np.all(np.isfinite(arr)):
            raise ValidationError("FloatMap2D rejects NaN/Inf values")
        arr.flags.writeable = False
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other):
        return (
            isinstance(other, FloatMap2D)
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    def __repr__(self):
        return f"FloatMap2D({self.height}x{self.width}x{self.channels})"


class BinaryMask:
    """Immutable HxW raster of {0, 1} values."""

    def __init__(self, bits: np.ndarray):
        arr = np.asarray(bits)
        if arr.ndim != 2 or min(arr.shape) < 1:
            raise ShapeError(f"BinaryMask needs an HxW array, got shape {arr.shape}")
        if arr.dtype == bool:
            arr = arr.astype(np.uint8)
        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        if not np.all((arr == 0) | (arr == 1)):
            raise ValidationError("BinaryMask values must be exactly 0 or 1")
        arr.flags.writeable = False
        self.bits = arr

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def as_bool(self) -> np.ndarray:
        return self.bits.astype(bool)

    def count(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other):
        return (
            isinstance(other, BinaryMask)
            and self.bits.shape == other.bits.shape
            and bool(np.array_equal(self.bits, other.bits))
        )


class Image:
    """Immutable 8-bit image, 1 (gray) or 3 (RGB) channels."""

    def __init__(self, data: np.ndarray):
        arr = np.asarray(data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3) or min(arr.shape[:2]) < 1:
            raise ShapeError(f"Image needs HxWx{{1,3}} samples, got shape {arr.shape}")
        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        arr.flags.writeable = False
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def gray(self) -> np.ndarray:
        """Float64 luma in [0, 255] (ITU-R 601 weights for RGB)."""
        a = self.data.astype(np.float64)
        if self.channels == 1:
            return a[:, :, 0]
        return 0.299 * a[:, :, 0] + 0.587 * a[:, :, 1] + 0.114 * a[:, :, 2]

    def __eq__(self, other):
        return (
            isinstance(other, Image)
            and self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
        )


# ---------------------------------------------------------------------------
# FMAP binary format: magic 'FMAP', LE u32 version=1/height/width/channels,
# then H*W*C IEEE-754 binary32, row-major, channel-interleaved.
# ---------------------------------------------------------------------------

def fmap_bytes(m: FloatMap2D) -> bytes:
    header = FMAP_MAGIC + struct.pack(
        "<IIII", FMAP_VERSION, m.height, m.width, m.channels
    )
    payload = m.data.astype("<f4").tobytes()
    return header + payload


def write_fmap(m: FloatMap2D, path) -> None:
    with open(path, "wb") as f:
        f.write(fmap_bytes(m))


def fmap_from_bytes(raw: bytes) -> FloatMap2D:
    if len(raw) < 20:
        raise FormatError(f"FMAP truncated: {len(raw)} bytes, header needs 20")
    if raw[:4] != FMAP_MAGIC:
        raise FormatError(f"bad FMAP magic {raw[:4]!r}")
    version, h, w, c = struct.unpack("<IIII", raw[4:20])
    if version != FMAP_VERSION:
        raise FormatError(f"unsupported FMAP version {version}")
    if h < 1 or w < 1 or c < 1 or h * w * c > 1 << 31:
        raise FormatError(f"FMAP dimensions out of range: {h}x{w}x{c}")
    expect = 20 + 4 * h * w * c
    if len(raw) != expect:
        raise FormatError(f"FMAP payload is {len(raw)} bytes, expected {expect}")
    data = np.frombuffer(raw, dtype="<f4", offset=20).reshape(h, w, c)
    if not np.all(np.isfinite(data)):
        raise FormatError("FMAP payload contains non-finite values")
    return FloatMap2D(data)


def read_fmap(path) -> FloatMap2D:
    with open(path, "rb") as f:
        return fmap_from_bytes(f.read())


# ---------------------------------------------------------------------------
# Binary PGM (P5) / PPM (P6), maxval 255.
# ---------------------------------------------------------------------------

def write_image(img: Image, path) -> None:
    magic = b"P5" if img.channels == 1 else b"P6"
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (img.width, img.height))
        f.write(img.data.tobytes())


def read_image(path) -> Image:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] not in (b"P5", b"P6"):
        raise FormatError(f"not a binary PGM/PPM file: magic {raw[:2]!r}")
    channels = 1 if raw[:2] == b"P5" else 3
    pos, fields = 2, []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM/PPM header")
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"only maxval 255 supported, got {maxval}")
    expect = w * h * channels
    payload = raw[pos : pos + expect]
    if len(payload) != expect:
        raise FormatError(f"PGM/PPM payload is {len(payload)} bytes, expected {expect}")
    return Image(np.frombuffer(payload, dtype=np.uint8).reshape(h, w, channels))


# ---------------------------------------------------------------------------
# Bilinear sampling.
# ---------------------------------------------------------------------------

def sample_many(m: FloatMap2D, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear samples at normalized coordinates; shape (*xs.shape, C).

    Exact at pixel centers; coordinates outside [0, 1] clamp to the border.
    """
    h, w = m.height, m.width
    fx = np.clip(np.asarray(xs, dtype=np.float64), 0.0, 1.0) * w - 0.5
    fy = np.clip(np.asarray(ys, dtype=np.float64), 0.0, 1.0) * h - 0.5
    # snap to the lattice so exact pixel centers return stored values exactly
    fx = np.where(np.abs(fx - np.rint(fx)) < 1e-9, np.rint(fx), fx)
    fy = np.where(np.abs(fy - np.rint(fy)) < 1e-9, np.rint(fy), fy)
    fx = np.clip(fx, 0.0, w - 1.0)
    fy = np.clip(fy, 0.0, h - 1.0)
    j0 = np.floor(fx).astype(np.intp)
    i0 = np.floor(fy).astype(np.intp)
    j0 = np.minimum(j0, w - 2) if w > 1 else np.zeros_like(j0)
    i0 = np.minimum(i0, h - 2) if h > 1 else np.zeros_like(i0)
    j1 = np.minimum(j0 + 1, w - 1)
    i1 = np.minimum(i0 + 1, h - 1)
    tx = (fx - j0)[..., None]
    ty = (fy - i0)[..., None]
    d = m.data.astype(np.float64)
    top = d[i0, j0] * (1.0 - tx) + d[i0, j1] * tx
    bot = d[i1, j0] * (1.0 - tx) + d[i1, j1] * tx
    return top * (1.0 - ty) + bot * ty


def bilinear_sample(m: FloatMap2D, x: float, y: float) -> np.ndarray:
    """Channel vector sampled at one normalized coordinate."""
    return sample_many(m, np.float64(x), np.float64(y))


def pixel_centers(h: int, w: int):
    """Normalized center coordinate grids (xs, ys), each HxW."""
    xs = (np.arange(w, dtype=np.float64) + 0.5) / w
    ys = (np.arange(h, dtype=np.float64) + 0.5) / h
    return np.tile(xs, (h, 1)), np.tile(ys[:, None], (1, w))
