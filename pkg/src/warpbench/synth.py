"""Procedural crumpled-document generator.

Replaces a render-farm pipeline with a deterministic desk-scale one: a flat
page of glyph-block "words" is folded as a piecewise-planar surface (dihedral
folds about straight lines, plus an optional low-frequency smooth bend),
projected by an orthographic or pinhole camera, and emitted as a SampleBundle
carrying every supervision signal: warped/flat images, 3D coordinate map,
forward/backward warp fields, angle ground truth, crease mask, text mask and
word boxes.

All randomness flows from SplitRng (counter-based SplitMix64, see rng.py), so
a seed pins every byte of the bundle, including file serializations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, ProjectionError
from .mesh import Mesh, curvature_mask, default_curvature_threshold, flat_grid_mesh, \
    mean_curvature, read_mesh, write_mesh
from .raster import BinaryMask, FloatMap2D, Image, pixel_centers, read_fmap, \
    read_image, write_fmap, write_image
from .rng import SplitRng
from .version import TOOLKIT_VERSION
from .warpfield import AngleMap, BackwardMap, ForwardMap, angle_from_backward_map, \
    apply_backward_map, load_backward_map, load_forward_map, roundtrip_residual_px, \
    save_field

WARPED_FILL = 60  # desk gray behind the projected page


@dataclass(frozen=True)
class GenConfig:
    resolution: int = 256
    mesh_rows: int | None = None       # None: 4*resolution + 1 (quarter-pixel steps,
    mesh_cols: int | None = None       # keeps crease flags within 2 px of the line)
    fold_count: int = 2
    fold_angle_range: tuple = (0.45, 0.8)
    bend_amplitude: float = 0.02
    camera: str = "orthographic"       # "orthographic" | "perspective"
    fov_deg: float = 35.0
    frame_margin: float = 0.05
    word_count_range: tuple = (24, 40)
    font_height_range: tuple = (0.035, 0.055)
    margin: float = 0.07
    seed: int = 0

    def rows(self) -> int:
        return self.mesh_rows if self.mesh_rows is not None else 4 * self.resolution + 1

    def cols(self) -> int:
        return self.mesh_cols if self.mesh_cols is not None else 4 * self.resolution + 1

    def validate(self) -> "GenConfig":
        if self.resolution < 64:
            raise ConfigError(f"resolution must be >= 64, got {self.resolution}")
        if self.rows() < 2 or self.cols() < 2:
            raise ConfigError("mesh needs at least 2x2 vertices")
        if self.fold_count < 0:
            raise ConfigError("fold count must be >= 0")
        lo, hi = self.fold_angle_range
        if not (0.0 < lo <= hi <= np.pi / 2 + 1e-12):
            raise ConfigError(f"fold angles must lie in (0, pi/2], got {self.fold_angle_range}")
        if self.bend_amplitude < 0:
            raise ConfigError("bend amplitude must be >= 0")
        if self.camera not in ("orthographic", "perspective"):
            raise ConfigError(f"unknown camera mode {self.camera!r}")
        if not (0.0 <= self.margin < 0.5):
            raise ConfigError(f"margin must be in [0, 0.5), got {self.margin}")
        wlo, whi = self.word_count_range
        if not (1 <= wlo <= whi):
            raise ConfigError(f"word count range must be >= 1, got {self.word_count_range}")
        flo, fhi = self.font_height_range
        if not (0 < flo <= fhi):
            raise ConfigError("font height range must be positive")
        if 1.0 - 2.0 * self.margin <= fhi:
            raise ConfigError("margins leave no room for a single text line")
        return self


@dataclass
class WordBox:
    quad: np.ndarray      # 4x2, normalized, cyclic order
    text: str

    def __post_init__(self):
        self.quad = np.asarray(self.quad, dtype=np.float64).reshape(4, 2)
        if not self.text:
            raise ConfigError("word text must be non-empty")

    def to_jsonable(self):
        return {"quad": [[float(x), float(y)] for x, y in self.quad], "text": self.text}

    @staticmethod
    def from_jsonable(d) -> "WordBox":
        return WordBox(np.asarray(d["quad"], dtype=np.float64), d["text"])


@dataclass
class SampleBundle:
    config: GenConfig
    flat_image: Image
    warped_image: Image
    coord3d: FloatMap2D
    forward: ForwardMap
    backward: BackwardMap
    angle_gt: AngleMap
    curvature: BinaryMask
    text_mask: BinaryMask
    words: list
    mesh: Mesh
    crease_lines: list
    meta: dict = field(default_factory=dict)


_CHARSET = "abcdefghijklmnopqrstuvwxyz0123456789"


def render_text_layout(cfg: GenConfig, seed: int):
    """Flat page image, word boxes and text mask; deterministic in seed.

    Words are solid glyph blocks (per-character cells with 1-px striping for
    texture) laid out left-to-right in lines that are spread evenly over the
    full text area, so folds anywhere on the page cross content. Boxes are
    pairwise disjoint by construction.
    """
    cfg.validate()
    rng = SplitRng(seed)
    res = cfg.resolution
    m_px = int(round(cfg.margin * res))
    usable_h = res - 2 * m_px

    # plan lines greedily at minimal pitch
    target = rng.randint(*cfg.word_count_range)
    lines = []
    planned_h = 0
    count = 0
    while count < target:
        fh = max(4, int(round(rng.uniform(*cfg.font_height_range) * res)))
        if planned_h + fh + (2 if lines else 0) > usable_h:
            break
        cw = max(3, int(round(0.55 * fh)))
        gap = max(2, int(round(0.6 * fh)))
        x = m_px
        line_words = []
        while count < target:
            n_chars = rng.randint(3, 8)
            w_px = n_chars * cw
            if x + w_px > res - m_px:
                break
            text = "".join(rng.choice(_CHARSET) for _ in range(n_chars))
            ink = rng.randint(10, 70)
            line_words.append((x, w_px, n_chars, text, ink))
            count += 1
            x += w_px + gap
        if not line_words:
            break
        lines.append({"fh": fh, "cw": cw, "words": line_words})
        planned_h += fh + (2 if len(lines) > 1 else 0)

    if not lines:
        raise ConfigError("layout admits zero words; loosen margins or shrink fonts")

    # spread the planned lines over the full text area
    total_fh = sum(ln["fh"] for ln in lines)
    n_gaps = max(len(lines) - 1, 1)
    slack = max(usable_h - total_fh, 2 * n_gaps)
    img = np.full((res, res, 3), 255, dtype=np.uint8)
    mask = np.zeros((res, res), dtype=np.uint8)
    words: list[WordBox] = []
    y = m_px
    for i, ln in enumerate(lines):
        fh, cw = ln["fh"], ln["cw"]
        for x, w_px, n_chars, text, ink in ln["words"]:
            _paint_word(img, x, y, w_px, fh, cw, ink)
            mask[y : y + fh, x : x + w_px] = 1
            quad = np.array(
                [[x, y], [x + w_px, y], [x + w_px, y + fh], [x, y + fh]],
                dtype=np.float64,
            ) / res
            words.append(WordBox(quad, text))
        if len(lines) > 1:
            y += fh + (slack * (i + 1)) // n_gaps - (slack * i) // n_gaps
        else:
            y += fh

    return Image(img), words, BinaryMask(mask)


def _paint_word(img, x, y, w_px, fh, cw, ink):
    img[y : y + fh, x : x + w_px] = ink
    # 1-px striping: light gaps between character cells and a mid-height line
    for cx in range(x + cw - 1, x + w_px - 1, cw):
        img[y : y + fh, cx] = 235
    img[y + fh // 2, x : x + w_px] = 220


# ---------------------------------------------------------------------------
# Folding.
# ---------------------------------------------------------------------------

def _rotation_matrix(direction, angle) -> np.ndarray:
    """Rodrigues rotation matrix about a unit-normalized axis direction."""
    u = np.asarray(direction, dtype=np.float64)
    u = u / np.linalg.norm(u)
    c, s = np.cos(angle), np.sin(angle)
    ux, uy, uz = u
    skew = np.array([[0, -uz, uy], [uz, 0, -ux], [-uy, ux, 0]])
    return c * np.eye(3) + s * skew + (1 - c) * np.outer(u, u)


def _rotate_about_axis(points, origin, direction, angle):
    """Rigid rotation of Nx3 points about the line (origin, direction)."""
    r = _rotation_matrix(direction, angle)
    return (points - origin) @ r.T + origin


def _track_points(uv_pts, folds):
    """Exact 3D positions of uv points under a fold sequence (flat sheet start)."""
    pts = np.concatenate([uv_pts, np.zeros((len(uv_pts), 1))], axis=1)
    for f in folds:
        side = _side_of_line(uv_pts, f["p0"], f["dir"])
        sel = side > 0
        if sel.any():
            pts[sel] = _rotate_about_axis(pts[sel], f["axis_point"], f["axis_dir"], f["angle"])
    return pts


def _side_of_line(uv_pts, p0, d):
    rel = uv_pts - p0
    return d[0] * rel[:, 1] - d[1] * rel[:, 0]


def _clip_line_to_unit_square(p0, d):
    ts = []
    for axis in (0, 1):
        if abs(d[axis]) > 1e-15:
            for bound in (0.0, 1.0):
                t = (bound - p0[axis]) / d[axis]
                pt = p0 + t * d
                other = 1 - axis
                if -1e-9 <= pt[other] <= 1.0 + 1e-9:
                    ts.append(t)
    if len(ts) < 2:
        raise ConfigError("fold line does not cross the unit square")
    t0, t1 = min(ts), max(ts)
    return np.clip(p0 + t0 * d, 0, 1), np.clip(p0 + t1 * d, 0, 1)


def _segment_distance(a0, a1, b0, b1):
    """Min distance between two 2D segments."""
    def pt_seg(p, s0, s1):
        v = s1 - s0
        den = float(v @ v)
        t = 0.0 if den == 0 else float(np.clip((p - s0) @ v / den, 0.0, 1.0))
        return float(np.linalg.norm(p - (s0 + t * v)))

    def ccw(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    if (ccw(a0, a1, b0) * ccw(a0, a1, b1) < 0) and (ccw(b0, b1, a0) * ccw(b0, b1, a1) < 0):
        return 0.0
    return min(pt_seg(b0, a0, a1), pt_seg(b1, a0, a1),
               pt_seg(a0, b0, b1), pt_seg(a1, b0, b1))


def sample_folds(cfg: GenConfig, seed: int):
    """Draw fold records and bend parameters; independent of any mesh resolution.

    Each record pins the uv fold line, the rotation axis (the line's exact 3D
    embedding under the folds so far), and the signed dihedral angle oriented
    to lift the moving flap toward the camera. Fold lines are rejection
    sampled away from earlier creases, which keeps each embedded axis straight
    and the sheet tear-free.
    """
    rng = SplitRng(seed)
    folds = []
    creases = []
    for k in range(cfg.fold_count):
        frng = rng.split("fold", k)
        p0 = d = seg = None
        for _ in range(200):
            cand_p0 = np.array([frng.uniform(0.3, 0.7), frng.uniform(0.3, 0.7)])
            psi = frng.uniform(0.0, np.pi)
            cand_d = np.array([np.cos(psi), np.sin(psi)])
            cand_seg = _clip_line_to_unit_square(cand_p0, cand_d)
            if all(_segment_distance(cand_seg[0], cand_seg[1], s0, s1) >= 0.08
                   for s0, s1 in creases):
                p0, d, seg = cand_p0, cand_d, cand_seg
                break
        if p0 is None:
            # a crossing fold would tear the sheet; prefer one fold fewer
            continue

        # folds go either way, as in real crumpling; mixed signs also keep the
        # cumulative tilt from marching past vertical and self-occluding
        angle = frng.uniform(*cfg.fold_angle_range) * frng.choice((1.0, -1.0))
        probes = np.stack([p0 + 0.01 * d, p0 - 0.01 * d])
        tracked = _track_points(probes, folds)
        folds.append({"p0": p0, "dir": d, "axis_point": tracked[0],
                      "axis_dir": tracked[0] - tracked[1], "angle": angle})
        creases.append(seg)

    bend = None
    if cfg.bend_amplitude > 0:
        brng = rng.split("bend")
        bend = {"amplitude": cfg.bend_amplitude,
                "psi": brng.uniform(0.0, np.pi),
                "freq": brng.uniform(0.6, 1.4),
                "phase": brng.uniform(0.0, 2.0 * np.pi)}
    return folds, creases, bend


def apply_folds(m: Mesh, folds, bend=None) -> Mesh:
    """Fold the canonical flat sheet of m's grid through recorded folds + bend."""
    uv = m.uv().reshape(-1, 2)
    verts = _track_points(uv, folds)
    if bend is not None:
        t = np.cos(bend["psi"]) * uv[:, 0] + np.sin(bend["psi"]) * uv[:, 1]
        verts[:, 2] += bend["amplitude"] * np.sin(
            2.0 * np.pi * bend["freq"] * t + bend["phase"]
        )
    return Mesh(m.rows, m.cols, verts)


def fold_mesh(m: Mesh, cfg: GenConfig, seed: int):
    """Apply fold_count dihedral folds plus the smooth bend; returns (mesh, creases).

    Folds start from the canonical flat sheet of m's grid; each fold is a
    rigid motion of the half-sheet on the positive side of its uv line, so
    intra-half pairwise distances are preserved exactly.
    """
    cfg.validate()
    folds, creases, bend = sample_folds(cfg, seed)
    return apply_folds(m, folds, bend), creases


# ---------------------------------------------------------------------------
# Projection.
# ---------------------------------------------------------------------------

def project_mesh(m: Mesh, resolution: int, camera: str = "orthographic",
                 fov_deg: float = 35.0, frame_margin: float = 0.05,
                 supersample: int = 3):
    """Project a folded sheet to the image; returns (forward, backward, coord3d, meta).

    The forward map comes from rasterizing a dense uv supersampling of the
    surface with a z-buffer (occluded and background pixels invalid); the
    backward map interpolates projected vertex positions on the uv grid; the
    coordinate map rasterizes surface positions normalized to [0,1]^3 over
    the sheet's bounding box.
    """
    verts = m.vertices
    vmin = verts.min(axis=0)
    vmax = verts.max(axis=0)
    if camera == "orthographic":
        ext = float(max(vmax[0] - vmin[0], vmax[1] - vmin[1]))
        if ext < 1e-9:
            raise ProjectionError("surface projects to a point")
        scale = (1.0 - 2.0 * frame_margin) / ext
        center = (vmin[:2] + vmax[:2]) / 2.0

        def project(p):
            return 0.5 + scale * (p[:, :2] - center.astype(p.dtype))

        meta_cam = {"mode": "orthographic", "scale": scale,
                    "center": [float(center[0]), float(center[1])]}
    elif camera == "perspective":
        half = np.tan(np.radians(fov_deg) / 2.0)
        center = (vmin[:2] + vmax[:2]) / 2.0
        span = np.abs(verts[:, :2] - center).max(axis=1)
        need = verts[:, 2] + span / (half * (1.0 - 2.0 * frame_margin))
        z_cam = float(need.max()) + 1e-6

        def project(p):
            depth = z_cam - p[:, 2].astype(np.float64)
            if depth.min() <= 1e-9:
                raise ProjectionError("surface reaches the camera plane")
            return (0.5 + (p[:, :2] - center) / (depth[:, None] * half) * 0.5)

        meta_cam = {"mode": "perspective", "fov_deg": fov_deg, "z_cam": z_cam,
                    "center": [float(center[0]), float(center[1])]}
    else:
        raise ConfigError(f"unknown camera mode {camera!r}")

    # dense surface sampling for the forward map (float32: quantization is far
    # below the pixel-scale tolerances this map feeds)
    s = supersample * resolution
    q = ((np.arange(s, dtype=np.float32) + np.float32(0.5)) / np.float32(s))
    qu, qv = np.meshgrid(q, q)
    samples_uv = np.stack([qu.ravel(), qv.ravel()], axis=-1)
    pos = _surface_positions(m, samples_uv)
    img_xy = np.asarray(project(pos), dtype=np.float32)

    jj = np.floor(img_xy[:, 0] * resolution).astype(np.intp)
    ii = np.floor(img_xy[:, 1] * resolution).astype(np.intp)
    keep = (ii >= 0) & (ii < resolution) & (jj >= 0) & (jj < resolution)
    lin = ii[keep] * resolution + jj[keep]
    closeness = pos[keep, 2]

    # pass 1: z-buffer (topmost surface layer per pixel)
    order = np.lexsort((-closeness, lin))
    lin_sorted = lin[order]
    first = np.ones(len(lin_sorted), dtype=bool)
    first[1:] = lin_sorted[1:] != lin_sorted[:-1]
    zmax = np.zeros(resolution * resolution, dtype=np.float32)
    zmax[lin_sorted[first]] = closeness[order[first]]

    # pass 2: within the top layer, take the sample nearest the pixel center,
    # which keeps forward values consistent with the pixel-center convention
    layer_tol = np.float32(4.0 * float(max(vmax[0] - vmin[0], vmax[1] - vmin[1]))
                           / resolution)
    top = closeness >= zmax[lin] - layer_tol
    cx = ((jj[keep] + 0.5) / resolution).astype(np.float32)
    cy = ((ii[keep] + 0.5) / resolution).astype(np.float32)
    dist2 = (img_xy[keep, 0] - cx) ** 2 + (img_xy[keep, 1] - cy) ** 2
    lin_top = lin[top]
    order2 = np.lexsort((dist2[top], lin_top))
    lt_sorted = lin_top[order2]
    first2 = np.ones(len(lt_sorted), dtype=bool)
    first2[1:] = lt_sorted[1:] != lt_sorted[:-1]
    win_lin = lt_sorted[first2]
    win_idx = np.flatnonzero(keep)[np.flatnonzero(top)[order2[first2]]]

    if len(win_lin) < 3:
        raise ProjectionError("surface is edge-on to the camera: no usable coverage")
    pix_ij = np.stack([win_lin // resolution, win_lin % resolution], axis=-1).astype(np.float64)
    centered = pix_ij - pix_ij.mean(axis=0)
    spread = np.linalg.eigvalsh(centered.T @ centered / len(pix_ij))
    if spread[0] < 1.0:
        raise ProjectionError("surface is edge-on to the camera: coverage is collinear")

    fwd_vals = np.zeros((resolution * resolution, 2), dtype=np.float32)
    fwd_vals[win_lin] = samples_uv[win_idx]
    fwd_ok = np.zeros(resolution * resolution, dtype=bool)
    fwd_ok[win_lin] = True

    vext = np.maximum(vmax - vmin, 1e-9)
    coords = np.zeros((resolution * resolution, 3), dtype=np.float32)
    coords[win_lin] = (pos[win_idx].astype(np.float64) - vmin) / vext

    # partially covered rim pixels are not reliable document pixels; erode 1 px
    ok2d = fwd_ok.reshape(resolution, resolution)
    er = ok2d.copy()
    er[1:, :] &= ok2d[:-1, :]
    er[:-1, :] &= ok2d[1:, :]
    er[:, 1:] &= ok2d[:, :-1]
    er[:, :-1] &= ok2d[:, 1:]
    fwd_vals.reshape(resolution, resolution, 2)[~er] = 0.0
    coords.reshape(resolution, resolution, 3)[~er] = 0.0

    fwd = ForwardMap(
        FloatMap2D(fwd_vals.reshape(resolution, resolution, 2).astype(np.float32)),
        BinaryMask(er),
    )
    coord3d = FloatMap2D(coords.reshape(resolution, resolution, 3).astype(np.float32))

    # backward map: interpolate projected vertex positions over the uv grid
    vp = project(verts).reshape(m.rows, m.cols, 2)
    xs, ys = pixel_centers(resolution, resolution)
    bvals = _interp_grid(vp, m.rows, m.cols, xs, ys)
    bwd = BackwardMap(
        FloatMap2D(np.clip(bvals, 0.0, 1.0).astype(np.float32)),
        BinaryMask(np.ones((resolution, resolution), dtype=np.uint8)),
    )

    meta = {"camera": meta_cam,
            "coord_norm_min": [float(v) for v in vmin],
            "coord_norm_ext": [float(v) for v in vext]}
    return fwd, bwd, coord3d, meta


def _surface_positions(m: Mesh, uv_pts: np.ndarray) -> np.ndarray:
    """Bilinear surface positions at uv points (piecewise-bilinear sheet model).

    Works in the dtype of uv_pts; the dense float32 path keeps the projection
    rasterization cheap.
    """
    g = m.grid.astype(uv_pts.dtype)
    gc = np.clip(uv_pts[:, 0] * m.cols - uv_pts.dtype.type(0.5), 0.0, m.cols - 1.0)
    gr = np.clip(uv_pts[:, 1] * m.rows - uv_pts.dtype.type(0.5), 0.0, m.rows - 1.0)
    j0 = np.minimum(gc.astype(np.intp), m.cols - 2)
    i0 = np.minimum(gr.astype(np.intp), m.rows - 2)
    tx = (gc - j0)[:, None]
    ty = (gr - i0)[:, None]
    top = g[i0, j0] * (1 - tx) + g[i0, j0 + 1] * tx
    bot = g[i0 + 1, j0] * (1 - tx) + g[i0 + 1, j0 + 1] * tx
    return top * (1 - ty) + bot * ty


def _interp_grid(grid_vals: np.ndarray, rows: int, cols: int, us, vs) -> np.ndarray:
    """Bilinear interpolation on the vertex-uv lattice, extrapolating at the
    half-cell border band so backward maps cover the full unit square."""
    gc = us * cols - 0.5
    gr = vs * rows - 0.5
    j0 = np.clip(np.floor(gc).astype(np.intp), 0, cols - 2)
    i0 = np.clip(np.floor(gr).astype(np.intp), 0, rows - 2)
    tx = (gc - j0)[..., None]
    ty = (gr - i0)[..., None]
    top = grid_vals[i0, j0] * (1 - tx) + grid_vals[i0, j0 + 1] * tx
    bot = grid_vals[i0 + 1, j0] * (1 - tx) + grid_vals[i0 + 1, j0 + 1] * tx
    return top * (1 - ty) + bot * ty


# ---------------------------------------------------------------------------
# Bundle assembly and disk layout.
# ---------------------------------------------------------------------------

def _fold_quality(fwd: ForwardMap, bwd: BackwardMap, grid: int = 48):
    """(uv coverage fraction, max composition residual px) for a fold candidate.

    Self-occluding fold sets lose forward coverage of the occluded uv region,
    which shows up as empty cells in a coarse occupancy histogram.
    """
    ok = fwd.valid.as_bool()
    uv = fwd.values.data.astype(np.float64)[ok]
    cells = np.minimum((uv * grid).astype(np.intp), grid - 1)
    occupied = np.zeros(grid * grid, dtype=bool)
    occupied[cells[:, 1] * grid + cells[:, 0]] = True
    res, usable = roundtrip_residual_px(fwd, bwd)
    compose = float(res[usable].max()) if usable.any() else np.inf
    return float(occupied.mean()), compose


_FLAT_MESH_CACHE: dict = {}


def _flat_mesh(rows: int, cols: int) -> Mesh:
    key = (rows, cols)
    if key not in _FLAT_MESH_CACHE:
        _FLAT_MESH_CACHE.clear()
        _FLAT_MESH_CACHE[key] = flat_grid_mesh(rows, cols)
    return _FLAT_MESH_CACHE[key]


def generate_sample(cfg: GenConfig) -> SampleBundle:
    """Generate one fully self-consistent sample; deterministic in cfg.seed.

    Fold sets whose projection self-occludes (losing coverage of part of the
    sheet) are redrawn from successive substreams; candidates are screened on
    a coarse proxy mesh, so only the accepted fold set pays the full-mesh
    pipeline. Output is a pure function of the seed.
    """
    cfg.validate()
    rng = SplitRng(cfg.seed)
    flat_img, words, text_mask = render_text_layout(cfg, rng.split("layout").seed)

    coarse = _flat_mesh(129, 129)
    best = None
    for attempt in range(40):
        folds, creases, bend = sample_folds(cfg, rng.split("folds", attempt).seed)
        cf, cb, _, _ = project_mesh(
            apply_folds(coarse, folds, bend), 128, camera=cfg.camera,
            fov_deg=cfg.fov_deg, frame_margin=cfg.frame_margin, supersample=2,
        )
        coverage, compose = _fold_quality(cf, cb)
        if best is None or coverage > best[0]:
            best = (coverage, folds, creases, bend, attempt)
        if coverage >= 0.998 and compose < 1.2:
            best = (coverage, folds, creases, bend, attempt)
            break
    _, folds, creases, bend, attempt = best

    folded = apply_folds(_flat_mesh(cfg.rows(), cfg.cols()), folds, bend)
    fwd, bwd, coord3d, proj_meta = project_mesh(
        folded, cfg.resolution, camera=cfg.camera, fov_deg=cfg.fov_deg,
        frame_margin=cfg.frame_margin,
    )
    warped_img = apply_backward_map(flat_img, fwd, fill=WARPED_FILL)
    angle_gt = angle_from_backward_map(bwd)
    hfield = mean_curvature(folded)
    threshold = default_curvature_threshold(hfield)
    curv = curvature_mask(hfield, folded, threshold, cfg.resolution, cfg.resolution)
    meta = dict(proj_meta)
    meta["curvature_threshold"] = threshold
    meta["fold_attempt"] = attempt
    meta["seed"] = cfg.seed
    meta["toolkit_version"] = TOOLKIT_VERSION
    return SampleBundle(
        config=cfg, flat_image=flat_img, warped_image=warped_img, coord3d=coord3d,
        forward=fwd, backward=bwd, angle_gt=angle_gt, curvature=curv,
        text_mask=text_mask, words=words, mesh=folded,
        crease_lines=[(s0.tolist(), s1.tolist()) for s0, s1 in creases], meta=meta,
    )


def mask_to_fmap(mask: BinaryMask) -> FloatMap2D:
    return FloatMap2D(mask.bits.astype(np.float32))


def fmap_to_mask(fm: FloatMap2D) -> BinaryMask:
    return BinaryMask(fm.data[:, :, 0] > 0.5)


def save_bundle(bundle: SampleBundle, dirpath) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    write_image(bundle.flat_image, d / "flat.ppm")
    write_image(bundle.warped_image, d / "warped.ppm")
    write_fmap(bundle.coord3d, d / "coord3d.fmap")
    save_field(bundle.forward, d / "forward.fmap", d / "forward.mask.fmap")
    save_field(bundle.backward, d / "backward.fmap", d / "backward.mask.fmap")
    write_fmap(bundle.angle_gt.values, d / "angles.fmap")
    write_fmap(mask_to_fmap(bundle.angle_gt.valid), d / "angles.mask.fmap")
    write_fmap(mask_to_fmap(bundle.curvature), d / "curvature.fmap")
    write_fmap(mask_to_fmap(bundle.text_mask), d / "textmask.fmap")
    write_mesh(bundle.mesh, d / "mesh.bin")
    _dump_json([w.to_jsonable() for w in bundle.words], d / "words.json")
    meta = dict(bundle.meta)
    meta["config"] = _config_jsonable(bundle.config)
    meta["crease_lines"] = bundle.crease_lines
    _dump_json(meta, d / "meta.json")


def load_bundle(dirpath) -> SampleBundle:
    d = Path(dirpath)
    with open(d / "meta.json") as f:
        meta = json.load(f)
    cfg = config_from_jsonable(meta.pop("config"))
    creases = meta.pop("crease_lines")
    return SampleBundle(
        config=cfg,
        flat_image=read_image(d / "flat.ppm"),
        warped_image=read_image(d / "warped.ppm"),
        coord3d=read_fmap(d / "coord3d.fmap"),
        forward=load_forward_map(d / "forward.fmap", d / "forward.mask.fmap"),
        backward=load_backward_map(d / "backward.fmap", d / "backward.mask.fmap"),
        angle_gt=AngleMap(read_fmap(d / "angles.fmap"),
                          fmap_to_mask(read_fmap(d / "angles.mask.fmap"))),
        curvature=fmap_to_mask(read_fmap(d / "curvature.fmap")),
        text_mask=fmap_to_mask(read_fmap(d / "textmask.fmap")),
        words=[WordBox.from_jsonable(w) for w in _load_json(d / "words.json")],
        mesh=read_mesh(d / "mesh.bin"),
        crease_lines=creases,
        meta=meta,
    )


def _config_jsonable(cfg: GenConfig) -> dict:
    out = asdict(cfg)
    for k, v in out.items():
        if isinstance(v, tuple):
            out[k] = list(v)
    return out


def config_from_jsonable(d: dict) -> GenConfig:
    kwargs = dict(d)
    for k in ("fold_angle_range", "word_count_range", "font_height_range"):
        if k in kwargs and kwargs[k] is not None:
            kwargs[k] = tuple(kwargs[k])
    return GenConfig(**kwargs)


def _dump_json(obj, path) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def _load_json(path):
    with open(path) as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# Self-consistency checks.
# ---------------------------------------------------------------------------

def crease_distance_px(mask: BinaryMask, crease_lines, resolution: int) -> float:
    """Max distance (pixels) from any flagged pixel center to the crease set.

    Returns 0 for an empty mask and +inf when pixels are flagged with no
    creases recorded.
    """
    ii, jj = np.nonzero(mask.as_bool())
    if len(ii) == 0:
        return 0.0
    if not crease_lines:
        return float("inf")
    px = np.stack([(jj + 0.5), (ii + 0.5)], axis=-1)
    best = np.full(len(px), np.inf)
    for s0, s1 in crease_lines:
        a = np.asarray(s0, dtype=np.float64) * resolution
        b = np.asarray(s1, dtype=np.float64) * resolution
        v = b - a
        den = max(float(v @ v), 1e-18)
        t = np.clip((px - a) @ v / den, 0.0, 1.0)
        proj = a + t[:, None] * v
        best = np.minimum(best, np.linalg.norm(px - proj, axis=1))
    return float(best.max())


def bundle_self_check(bundle: SampleBundle) -> dict:
    """Recompute the derived signals and report consistency diagnostics."""
    from .evaluation import ms_ssim_auto  # local import to avoid a module cycle

    recomputed = angle_from_backward_map(bundle.backward)
    angle_bitwise = (
        recomputed.values.data.tobytes() == bundle.angle_gt.values.data.tobytes()
        and np.array_equal(recomputed.valid.bits, bundle.angle_gt.valid.bits)
    )
    res, usable = roundtrip_residual_px(bundle.forward, bundle.backward)
    compose_max = float(res[usable].max()) if usable.any() else 0.0
    crease_px = crease_distance_px(
        bundle.curvature,
        [(np.asarray(a), np.asarray(b)) for a, b in bundle.crease_lines],
        bundle.config.resolution,
    )
    rectified = apply_backward_map(bundle.warped_image, bundle.backward, fill=255)
    ssim = ms_ssim_auto(bundle.flat_image, rectified)
    return {
        "angle_bitwise": bool(angle_bitwise),
        "compose_max_px": compose_max,
        "crease_max_dist_px": crease_px,
        "ssim_roundtrip": float(ssim),
    }


def mean_text_angular_deformation(bundle: SampleBundle) -> float:
    """Mean |theta| magnitude of the GT angles over text pixels (difficulty proxy)."""
    from .angles import angular_distance

    sel = bundle.text_mask.as_bool() & bundle.angle_gt.valid.as_bool()
    if not sel.any():
        return 0.0
    dx = angular_distance(bundle.angle_gt.theta_x, 0.0)
    dy = angular_distance(bundle.angle_gt.theta_y, 0.0)
    return float((dx[sel] + dy[sel]).mean() / 2.0)
