"""Forward/backward warp fields: inversion, resampling, angle extraction, polygon warp.

A BackwardMap lives on the rectified grid and stores, per output pixel, the
normalized source location in the warped input. A ForwardMap lives on the
warped-input grid and stores each document pixel's destination in the
rectified domain. Both carry a validity mask.

Angle conventions: angles are measured as drawn on screen (counterclockwise
positive with the raster's y axis pointing down), so for Jacobian columns
Jx, Jy of the map

    theta_x = atan2(-Jx_y, Jx_x)        theta_y = atan2(Jy_x, Jy_y)

which gives theta_x = theta_y = alpha for a global rotation by alpha and
theta_y = atan(s) for the shear (x, y) -> (x + s*y, y). rho is the column
norm with rho = 1 meaning locally isometric (scale lives here, not in theta).
"""

from __future__ import annotations

import numpy as np

from .errors import InversionError, ShapeError, ValidationError
from .raster import BinaryMask, FloatMap2D, Image, pixel_centers, read_fmap, sample_many, write_fmap


class _WarpField:
    def __init__(self, values: FloatMap2D, valid: BinaryMask):
        if values.channels != 2:
            raise ShapeError(f"warp field needs 2 channels, got {values.channels}")
        if (values.height, values.width) != (valid.height, valid.width):
            raise ShapeError(
                f"warp field {values.height}x{values.width} does not match "
                f"mask {valid.height}x{valid.width}"
            )
        v = values.data[valid.as_bool()]
        if v.size and (v.min() < -1e-6 or v.max() > 1.0 + 1e-6):
            raise ValidationError("valid warp-field values must lie in [0, 1]^2")
        self.values = values
        self.valid = valid

    @property
    def height(self) -> int:
        return self.values.height

    @property
    def width(self) -> int:
        return self.values.width

    def __eq__(self, other):
        return (
            type(self) is type(other)
            and self.values == other.values
            and self.valid == other.valid
        )


class BackwardMap(_WarpField):
    """Rectified-grid field: output pixel -> source location in the warped input."""


class ForwardMap(_WarpField):
    """Input-grid field: document pixel -> destination in the rectified domain."""


class AngleMap:
    """Per-pixel warp angles (theta_x, theta_y) and confidences (rho_x, rho_y)."""

    def __init__(self, values: FloatMap2D, valid: BinaryMask):
        if values.channels != 4:
            raise ShapeError(f"AngleMap needs 4 channels, got {values.channels}")
        if (values.height, values.width) != (valid.height, valid.width):
            raise ShapeError("AngleMap values and mask dimensions differ")
        self.values = values
        self.valid = valid

    @property
    def height(self) -> int:
        return self.values.height

    @property
    def width(self) -> int:
        return self.values.width

    @property
    def theta_x(self) -> np.ndarray:
        return self.values.data[:, :, 0].astype(np.float64)

    @property
    def theta_y(self) -> np.ndarray:
        return self.values.data[:, :, 1].astype(np.float64)

    @property
    def rho_x(self) -> np.ndarray:
        return self.values.data[:, :, 2].astype(np.float64)

    @property
    def rho_y(self) -> np.ndarray:
        return self.values.data[:, :, 3].astype(np.float64)

    def __eq__(self, other):
        return (
            isinstance(other, AngleMap)
            and self.values == other.values
            and self.valid == other.valid
        )


def full_mask(h: int, w: int) -> BinaryMask:
    return BinaryMask(np.ones((h, w), dtype=np.uint8))


def identity_backward_map(h: int, w: int) -> BackwardMap:
    """Each rectified pixel maps to its own normalized coordinate."""
    xs, ys = pixel_centers(h, w)
    return BackwardMap(FloatMap2D(np.stack([xs, ys], axis=-1)), full_mask(h, w))


def apply_backward_map(img, bmap: BackwardMap, fill=0):
    """Resample an Image or FloatMap2D through a warp field.

    Output has the field's grid dimensions; each valid output pixel is the
    bilinear sample of `img` at the field value; invalid pixels get `fill`.
    """
    if bmap.valid.count() == 0:
        raise ValidationError("warp field has an empty validity mask")
    vals = bmap.values.data.astype(np.float64)
    ok = bmap.valid.as_bool()
    if isinstance(img, Image):
        src = FloatMap2D(img.data.astype(np.float32))
        out = sample_many(src, vals[:, :, 0], vals[:, :, 1])
        out[~ok] = fill
        return Image(np.clip(np.rint(out), 0, 255).astype(np.uint8))
    out = sample_many(img, vals[:, :, 0], vals[:, :, 1])
    out[~ok] = fill
    return FloatMap2D(out.astype(np.float32))


def invert_forward_map(fwd: ForwardMap, out_h: int, out_w: int,
                       fill_passes: int = 32) -> BackwardMap:
    """Scattered-data inversion of a forward map by splat-and-fill.

    Every valid input pixel contributes the sample (fwd(p) -> p): source
    coordinates are bilinearly splatted onto the output grid with their
    weights, then holes are filled by iterative 4-neighborhood averaging
    (at most `fill_passes` Jacobi passes). Never-filled pixels are invalid.
    Noise sensitivity is inherent to this construction.
    """
    ok = fwd.valid.as_bool()
    n_valid = int(ok.sum())
    if n_valid < 3:
        raise InversionError(f"need >= 3 valid forward samples, got {n_valid}")
    xs, ys = pixel_centers(fwd.height, fwd.width)
    src = np.stack([xs[ok], ys[ok]], axis=-1)
    dst = fwd.values.data.astype(np.float64)[ok]

    centered = dst - dst.mean(axis=0)
    eigvals = np.linalg.eigvalsh(centered.T @ centered / len(dst))
    if eigvals[0] < 1e-12:
        raise InversionError("forward samples are collinear; inversion is degenerate")

    gx = dst[:, 0] * out_w - 0.5
    gy = dst[:, 1] * out_h - 0.5
    j0 = np.floor(gx).astype(np.intp)
    i0 = np.floor(gy).astype(np.intp)
    tx = gx - j0
    ty = gy - i0

    acc_w = np.zeros(out_h * out_w, dtype=np.float64)
    acc_x = np.zeros(out_h * out_w, dtype=np.float64)
    acc_y = np.zeros(out_h * out_w, dtype=np.float64)
    for di, dj, wgt in (
        (0, 0, (1 - tx) * (1 - ty)),
        (0, 1, tx * (1 - ty)),
        (1, 0, (1 - tx) * ty),
        (1, 1, tx * ty),
    ):
        ii = i0 + di
        jj = j0 + dj
        keep = (ii >= 0) & (ii < out_h) & (jj >= 0) & (jj < out_w) & (wgt > 0)
        lin = ii[keep] * out_w + jj[keep]
        acc_w += np.bincount(lin, weights=wgt[keep], minlength=out_h * out_w)
        acc_x += np.bincount(lin, weights=(wgt * src[:, 0])[keep], minlength=out_h * out_w)
        acc_y += np.bincount(lin, weights=(wgt * src[:, 1])[keep], minlength=out_h * out_w)

    filled = (acc_w > 1e-12).reshape(out_h, out_w)
    bx = np.zeros((out_h, out_w))
    by = np.zeros((out_h, out_w))
    nz = filled.reshape(-1)
    bx.reshape(-1)[nz] = acc_x[nz] / acc_w[nz]
    by.reshape(-1)[nz] = acc_y[nz] / acc_w[nz]

    for _ in range(fill_passes):
        holes = ~filled
        if not holes.any():
            break
        cnt = np.zeros((out_h, out_w))
        sx = np.zeros((out_h, out_w))
        sy = np.zeros((out_h, out_w))
        for shift in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            f = _shift2d(filled.astype(np.float64), shift)
            cnt += f
            sx += _shift2d(bx * filled, shift)
            sy += _shift2d(by * filled, shift)
        grow = holes & (cnt > 0)
        if not grow.any():
            break
        bx[grow] = sx[grow] / cnt[grow]
        by[grow] = sy[grow] / cnt[grow]
        filled = filled | grow

    vals = np.stack([np.clip(bx, 0.0, 1.0), np.clip(by, 0.0, 1.0)], axis=-1)
    vals[~filled] = 0.0
    return BackwardMap(FloatMap2D(vals.astype(np.float32)), BinaryMask(filled))


def _shift2d(a: np.ndarray, shift) -> np.ndarray:
    di, dj = shift
    out = np.zeros_like(a)
    src_i = slice(max(0, -di), a.shape[0] - max(0, di))
    dst_i = slice(max(0, di), a.shape[0] - max(0, -di))
    src_j = slice(max(0, -dj), a.shape[1] - max(0, dj))
    dst_j = slice(max(0, dj), a.shape[1] - max(0, -dj))
    out[dst_i, dst_j] = a[src_i, src_j]
    return out


def _axis_stencil(valid: np.ndarray, axis: int):
    """Finite-difference neighbor choice along one axis.

    Returns (plus, minus, coef, ok): per-pixel index (along `axis`) of the
    plus/minus source and the difference scale, central where both neighbors
    are valid, one-sided at borders and beside invalid pixels.
    """
    h, w = valid.shape
    n = valid.shape[axis]
    if axis == 1:
        idx = np.tile(np.arange(n, dtype=np.intp), (h, 1))
    else:
        idx = np.tile(np.arange(n, dtype=np.intp)[:, None], (1, w))

    def nb_ok(offset):
        shifted = np.zeros_like(valid)
        if axis == 1:
            if offset == 1:
                shifted[:, :-1] = valid[:, 1:]
            else:
                shifted[:, 1:] = valid[:, :-1]
        else:
            if offset == 1:
                shifted[:-1, :] = valid[1:, :]
            else:
                shifted[1:, :] = valid[:-1, :]
        return shifted

    plus_ok = nb_ok(1)
    minus_ok = nb_ok(-1)
    plus = np.where(plus_ok, idx + 1, idx)
    minus = np.where(minus_ok, idx - 1, idx)
    coef = np.where(plus_ok & minus_ok, n / 2.0, float(n))
    ok = valid & (plus_ok | minus_ok)
    return plus, minus, coef, ok


def _jacobian_from_values(vals: np.ndarray, valid: np.ndarray):
    """Per-pixel Jacobian columns of a 2-channel field in normalized units.

    Returns (Jx, Jy, ok_x, ok_y, stencils) where stencils carry the index
    and coefficient arrays needed by the analytic loss adjoint.
    """
    h, w = valid.shape
    px, mx, cx, okx = _axis_stencil(valid, axis=1)
    py, my, cy, oky = _axis_stencil(valid, axis=0)
    rows = np.tile(np.arange(h, dtype=np.intp)[:, None], (1, w))
    cols = np.tile(np.arange(w, dtype=np.intp), (h, 1))
    jx = (vals[rows, px] - vals[rows, mx]) * cx[:, :, None]
    jy = (vals[py, cols] - vals[my, cols]) * cy[:, :, None]
    stencils = {"x": (px, mx, cx), "y": (py, my, cy), "rows": rows, "cols": cols}
    return jx, jy, okx, oky, stencils


def angles_from_values(vals: np.ndarray, valid: np.ndarray):
    """Angle extraction on raw float arrays; returns (theta_x, theta_y, rho_x,
    rho_y, ok). Double-precision path shared by the loss module."""
    jx, jy, okx, oky, _ = _jacobian_from_values(vals, valid)
    theta_x = np.arctan2(-jx[:, :, 1], jx[:, :, 0])
    theta_y = np.arctan2(jy[:, :, 0], jy[:, :, 1])
    rho_x = np.sqrt(jx[:, :, 0] ** 2 + jx[:, :, 1] ** 2)
    rho_y = np.sqrt(jy[:, :, 0] ** 2 + jy[:, :, 1] ** 2)
    return theta_x, theta_y, rho_x, rho_y, valid & okx & oky


def angle_from_backward_map(b: BackwardMap) -> AngleMap:
    """Extract per-pixel warp angles from a backward map.

    One-pixel central differences realize the infinitesimal axis vectors,
    one-sided at borders and beside invalid pixels; pixels with no valid
    neighbor along an axis become invalid in the output.
    """
    vals = b.values.data.astype(np.float64)
    valid = b.valid.as_bool()
    theta_x, theta_y, rho_x, rho_y, ok = angles_from_values(vals, valid)
    out = np.stack([theta_x, theta_y, rho_x, rho_y], axis=-1)
    out[~ok] = 0.0
    return AngleMap(FloatMap2D(out.astype(np.float32)), BinaryMask(ok))


def warp_polygon(points, field) -> tuple[np.ndarray, bool]:
    """Warp polygon vertices through a field; returns (vertices, valid).

    Each vertex is replaced by the bilinear sample of the field at that
    vertex (order preserved). The polygon is flagged invalid when any vertex
    falls on an invalid field region.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
        raise ShapeError(f"polygon needs >= 3 points of dim 2, got shape {pts.shape}")
    warped = sample_many(field.values, pts[:, 0], pts[:, 1])
    mask_map = FloatMap2D(field.valid.bits.astype(np.float32))
    cover = sample_many(mask_map, pts[:, 0], pts[:, 1])[:, 0]
    return warped, bool(np.all(cover > 1.0 - 1e-9))


def roundtrip_residual_px(fwd: ForwardMap, bwd: BackwardMap):
    """Composition error of (backward o forward) against the identity.

    For every valid input pixel p the backward map is sampled at fwd(p); the
    result should be p again. Returns (residual_px, usable) where residual is
    measured in input-raster pixels and `usable` marks pixels whose lookup
    stayed fully inside the backward map's valid region.
    """
    ok = fwd.valid.as_bool()
    xs, ys = pixel_centers(fwd.height, fwd.width)
    q = fwd.values.data.astype(np.float64)
    back = sample_many(bwd.values, q[:, :, 0], q[:, :, 1])
    mask_map = FloatMap2D(bwd.valid.bits.astype(np.float32))
    cover = sample_many(mask_map, q[:, :, 0], q[:, :, 1])[:, 0]
    usable = ok & (cover > 1.0 - 1e-9)
    dx = (back[:, :, 0] - xs) * fwd.width
    dy = (back[:, :, 1] - ys) * fwd.height
    res = np.sqrt(dx * dx + dy * dy)
    res[~usable] = 0.0
    return res, usable


def save_field(field, values_path, mask_path) -> None:
    write_fmap(field.values, values_path)
    write_fmap(FloatMap2D(field.valid.bits.astype(np.float32)), mask_path)


def _load_field(cls, values_path, mask_path):
    values = read_fmap(values_path)
    mask = read_fmap(mask_path)
    return cls(values, BinaryMask(mask.data[:, :, 0] > 0.5))


def load_backward_map(values_path, mask_path) -> BackwardMap:
    return _load_field(BackwardMap, values_path, mask_path)


def load_forward_map(values_path, mask_path) -> ForwardMap:
    return _load_field(ForwardMap, values_path, mask_path)
