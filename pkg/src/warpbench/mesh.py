"""Grid meshes, umbrella-operator mean curvature, and curvature masks.

Curvature per vertex is the unnormalized umbrella sum

    H_i = || sum_{j in N_i} (v_i - v_j) ||_2

over the 4-neighborhood implied by the grid. It vanishes on flat interiors
and spikes along creases, but is nonzero on flat boundaries purely because
boundary umbrellas are asymmetric; masks therefore exclude the 1-ring
boundary band.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError, ShapeError
from .raster import BinaryMask, MESH_MAGIC


class Mesh:
    """Grid-structured 3D vertex set with canonical flat-sheet uv coordinates."""

    def __init__(self, rows: int, cols: int, vertices: np.ndarray):
        verts = np.asarray(vertices, dtype=np.float64)
        if rows < 2 or cols < 2:
            raise ShapeError(f"mesh needs rows, cols >= 2, got {rows}x{cols}")
        if verts.shape != (rows * cols, 3):
            raise ShapeError(
                f"expected {rows * cols}x3 vertices for a {rows}x{cols} grid, "
                f"got shape {verts.shape}"
            )
        self.rows = rows
        self.cols = cols
        self.vertices = verts.copy()
        self.vertices.flags.writeable = False

    @property
    def grid(self) -> np.ndarray:
        return self.vertices.reshape(self.rows, self.cols, 3)

    def uv(self) -> np.ndarray:
        """Flat-sheet coordinates: vertex (r, c) at ((c+0.5)/cols, (r+0.5)/rows)."""
        us = (np.arange(self.cols) + 0.5) / self.cols
        vs = (np.arange(self.rows) + 0.5) / self.rows
        uu, vv = np.meshgrid(us, vs)
        return np.stack([uu, vv], axis=-1)

    def degrees(self) -> np.ndarray:
        deg = np.full((self.rows, self.cols), 4, dtype=np.int32)
        deg[0, :] -= 1
        deg[-1, :] -= 1
        deg[:, 0] -= 1
        deg[:, -1] -= 1
        return deg

    def edge_count(self) -> int:
        return self.rows * (self.cols - 1) + self.cols * (self.rows - 1)


def flat_grid_mesh(rows: int, cols: int) -> Mesh:
    """Planar unit sheet at z = 0 with vertices on the canonical uv lattice."""
    uv = Mesh(rows, cols, np.zeros((rows * cols, 3))).uv()
    verts = np.concatenate([uv.reshape(-1, 2), np.zeros((rows * cols, 1))], axis=1)
    return Mesh(rows, cols, verts)


def build_grid_mesh(rows: int, cols: int, positions) -> Mesh:
    return Mesh(rows, cols, np.asarray(positions, dtype=np.float64))


def mean_curvature(m: Mesh) -> np.ndarray:
    """Umbrella-sum curvature for every vertex, boundary included; shape (rows, cols).

    Values below 1e-12 snap to exactly zero so that flat lattices (whose
    umbrella sums cancel only up to float rounding) report zero curvature.
    """
    g = m.grid
    acc = np.zeros_like(g)
    cnt = np.zeros((m.rows, m.cols, 1))
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        src_i = slice(max(0, di), m.rows - max(0, -di))
        dst_i = slice(max(0, -di), m.rows - max(0, di))
        src_j = slice(max(0, dj), m.cols - max(0, -dj))
        dst_j = slice(max(0, -dj), m.cols - max(0, dj))
        acc[dst_i, dst_j] += g[src_i, src_j]
        cnt[dst_i, dst_j] += 1
    diff = g * cnt - acc
    h = np.sqrt((diff ** 2).sum(axis=-1))
    h[h < 1e-12] = 0.0
    return h


def default_curvature_threshold(h: np.ndarray) -> float:
    """3x the median interior curvature: separates crease response from the
    smooth-bend floor without a resolution-dependent constant."""
    interior = h[1:-1, 1:-1]
    return 3.0 * float(np.median(interior)) if interior.size else 0.0


def curvature_mask(h: np.ndarray, m: Mesh, threshold: float | None,
                   out_h: int, out_w: int) -> BinaryMask:
    """Rasterize thresholded curvature to a binary crease mask.

    A vertex is flagged iff H > threshold and it is outside the 1-ring
    boundary band; flags are splatted at the vertex uv positions and dilated
    by one pixel (4-neighborhood). `threshold=None` uses the data-driven
    default above.
    """
    if h.shape != (m.rows, m.cols):
        raise ShapeError(f"curvature field {h.shape} does not fit mesh "
                         f"{m.rows}x{m.cols}")
    if threshold is None:
        threshold = default_curvature_threshold(h)
    if threshold < 0:
        raise ShapeError(f"threshold must be >= 0, got {threshold}")
    flagged = h > threshold
    flagged[0, :] = flagged[-1, :] = False
    flagged[:, 0] = flagged[:, -1] = False

    out = np.zeros((out_h, out_w), dtype=bool)
    if flagged.any():
        uv = m.uv()[flagged]
        js = np.clip((uv[:, 0] * out_w).astype(np.intp), 0, out_w - 1)
        is_ = np.clip((uv[:, 1] * out_h).astype(np.intp), 0, out_h - 1)
        out[is_, js] = True
        dil = out.copy()
        dil[1:, :] |= out[:-1, :]
        dil[:-1, :] |= out[1:, :]
        dil[:, 1:] |= out[:, :-1]
        dil[:, :-1] |= out[:, 1:]
        out = dil
    return BinaryMask(out)


def write_mesh(m: Mesh, path) -> None:
    """Magic 'MESH', LE u32 version=1/rows/cols, then rows*cols f32 triples."""
    with open(path, "wb") as f:
        f.write(MESH_MAGIC + struct.pack("<III", 1, m.rows, m.cols))
        f.write(m.vertices.astype("<f4").tobytes())


def read_mesh(path) -> Mesh:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16:
        raise FormatError(f"mesh file truncated: {len(raw)} bytes")
    if raw[:4] != MESH_MAGIC:
        raise FormatError(f"bad mesh magic {raw[:4]!r}")
    version, rows, cols = struct.unpack("<III", raw[4:16])
    if version != 1:
        raise FormatError(f"unsupported mesh version {version}")
    expect = 16 + rows * cols * 12
    if len(raw) != expect:
        raise FormatError(f"mesh payload is {len(raw)} bytes, expected {expect}")
    verts = np.frombuffer(raw, dtype="<f4", offset=16).astype(np.float64)
    return Mesh(rows, cols, verts.reshape(-1, 3))
