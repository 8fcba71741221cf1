"""Composite training objectives as pure scalar functions with analytic gradients.

All terms are means over contributing pixels (not sums), so magnitudes are
resolution independent; pixels invalid in either operand are excluded. Every
prediction component may arrive as a FloatMap2D / BackwardMap or as a plain
float array: computation always runs in double precision regardless of the
storage precision, which also lets gradient probes avoid float32 quantization.
Reductions use numpy's pairwise summation, independent of thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .angles import angular_distance, wrap_angle
from .errors import ProbeError, ShapeError, ValidationError
from .raster import FloatMap2D
from .rng import SplitRng
from .synth import SampleBundle
from .warpfield import BackwardMap, _jacobian_from_values, angles_from_values

TERM_NAMES = ("coord_l1", "angle_masked", "curvature_l2", "backward_l1", "backward_angle")


@dataclass
class PredictionSet:
    """Model outputs entering the losses; aux channels and backward map optional.

    Rasters may be FloatMap2D or float arrays; the backward map may be a
    BackwardMap or a (values, valid) pair.
    """

    coord3d: object
    curvature: object
    aux_angles: object = None
    backward: object = None


@dataclass
class LossBreakdown:
    total: float
    terms: dict

    def to_jsonable(self) -> dict:
        return {"total": self.total, "terms": dict(self.terms)}

    @staticmethod
    def from_jsonable(d) -> "LossBreakdown":
        return LossBreakdown(float(d["total"]), {k: float(v) for k, v in d["terms"].items()})


def _as_raster(x, channels: int | None = None) -> np.ndarray:
    a = x.data if isinstance(x, FloatMap2D) else x
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise ShapeError(f"raster must be HxWxC, got shape {a.shape}")
    if channels is not None and a.shape[2] != channels:
        raise ShapeError(f"raster needs {channels} channels, got {a.shape[2]}")
    return a


def _as_field(x):
    """Normalize a backward-map operand to (values HxWx2 float64, valid bool)."""
    if isinstance(x, BackwardMap):
        return x.values.data.astype(np.float64), x.valid.as_bool()
    if isinstance(x, tuple) and len(x) == 2:
        vals = np.asarray(x[0], dtype=np.float64)
        valid = np.asarray(x[1], dtype=bool)
    else:
        vals = np.asarray(x, dtype=np.float64)
        valid = np.ones(vals.shape[:2], dtype=bool)
    if vals.ndim != 3 or vals.shape[2] != 2 or vals.shape[:2] != valid.shape:
        raise ShapeError(f"warp field needs HxWx2 values with an HxW mask, "
                         f"got {vals.shape}")
    return vals, valid


def _require_shape(name, got, want):
    if got != want:
        raise ShapeError(f"{name} is {got[0]}x{got[1]}, ground truth is {want[0]}x{want[1]}")


def _term_weights(weights):
    w = {k: 1.0 for k in TERM_NAMES}
    if weights:
        unknown = set(weights) - set(TERM_NAMES)
        if unknown:
            raise ValidationError(f"unknown loss terms {sorted(unknown)}")
        w.update({k: float(v) for k, v in weights.items()})
    return w


# ---------------------------------------------------------------------------
# Individual terms (double precision, mean-normalized).
# ---------------------------------------------------------------------------

def _coord_l1(pred: np.ndarray, gt: SampleBundle):
    sel = gt.forward.valid.as_bool()
    diff = pred - gt.coord3d.data.astype(np.float64)
    n = int(sel.sum()) * diff.shape[2]
    value = float(np.abs(diff[sel]).sum() / n) if n else 0.0
    return value, sel, n


def _angle_masked(phi: np.ndarray, gt: SampleBundle):
    mask = gt.text_mask.as_bool() & gt.angle_gt.valid.as_bool()
    n = int(mask.sum())
    if n == 0:
        return 0.0, mask, 0
    total = 0.0
    refs = (gt.angle_gt.theta_x, gt.angle_gt.theta_y)
    for axis in (0, 1):
        p1 = phi[:, :, 2 * axis]
        p2 = phi[:, :, 2 * axis + 1]
        rho = np.hypot(p1, p2)
        theta = np.arctan2(p2, p1)
        total += float((rho * angular_distance(refs[axis], theta))[mask].sum())
    return total / n, mask, n


def _curvature_l2(pred: np.ndarray, gt: SampleBundle):
    diff = pred[:, :, 0] - gt.curvature.bits.astype(np.float64)
    return float(np.sqrt(np.mean(diff ** 2))), diff


def _backward_l1(pred_vals, pred_valid, gt: SampleBundle):
    sel = pred_valid & gt.backward.valid.as_bool()
    diff = pred_vals - gt.backward.values.data.astype(np.float64)
    n = int(sel.sum()) * 2
    value = float(np.abs(diff[sel]).sum() / n) if n else 0.0
    return value, sel, n


def _backward_angle(pred_vals, pred_valid, gt: SampleBundle):
    gt_vals = gt.backward.values.data.astype(np.float64)
    gtx, gty, _, _, gt_ok = angles_from_values(gt_vals, gt.backward.valid.as_bool())
    px_, py_, _, _, pd_ok = angles_from_values(pred_vals, pred_valid)
    m = gt_ok & pd_ok
    n = int(m.sum())
    if n == 0:
        return 0.0, m, 0
    per = angular_distance(gtx, px_) + angular_distance(gty, py_)
    return float(per[m].sum() / n), m, n


# ---------------------------------------------------------------------------
# Public losses.
# ---------------------------------------------------------------------------

def loss_3d(pred: PredictionSet, gt: SampleBundle, weights=None) -> LossBreakdown:
    """Coordinate L1 + text-masked angle loss + curvature RMSE.

    The angle term weights per-pixel distances by the prediction's own polar
    magnitudes and contributes 0 when no aux channels are given or the text
    mask is empty.
    """
    w = _term_weights(weights)
    res = gt.config.resolution
    coord = _as_raster(pred.coord3d, 3)
    curv = _as_raster(pred.curvature)
    _require_shape("coord3d", coord.shape[:2], (res, res))
    _require_shape("curvature", curv.shape[:2], (res, res))
    terms = {"coord_l1": w["coord_l1"] * _coord_l1(coord, gt)[0]}
    if pred.aux_angles is not None:
        phi = _as_raster(pred.aux_angles, 4)
        _require_shape("aux angles", phi.shape[:2], (res, res))
        terms["angle_masked"] = w["angle_masked"] * _angle_masked(phi, gt)[0]
    terms["curvature_l2"] = w["curvature_l2"] * _curvature_l2(curv, gt)[0]
    return LossBreakdown(float(sum(terms.values())), terms)


def loss_combined(pred: PredictionSet, gt: SampleBundle, weights=None) -> LossBreakdown:
    """loss_3d plus backward-map L1 and the backward-map angle loss.

    Backward angles are compared with confidence pinned to 1 and no text
    mask, since they are derived rather than predicted.
    """
    if pred.backward is None:
        raise ValidationError("combined loss needs a predicted backward map")
    w = _term_weights(weights)
    res = gt.config.resolution
    vals, valid = _as_field(pred.backward)
    _require_shape("backward map", vals.shape[:2], (res, res))
    out = loss_3d(pred, gt, weights)
    terms = dict(out.terms)
    terms["backward_l1"] = w["backward_l1"] * _backward_l1(vals, valid, gt)[0]
    terms["backward_angle"] = w["backward_angle"] * _backward_angle(vals, valid, gt)[0]
    return LossBreakdown(float(sum(terms.values())), terms)


# ---------------------------------------------------------------------------
# Analytic gradients (verified by the finite-difference oracle).
# ---------------------------------------------------------------------------

def loss_3d_value_and_grad(pred: PredictionSet, gt: SampleBundle, wrt: str,
                           weights=None):
    """Total loss_3d and its gradient wrt one component ('coord3d' |
    'aux_angles' | 'curvature'). Valid away from the non-differentiable loci
    (zero L1/RMSE residuals, wrapped angle differences of 0 or pi)."""
    w = _term_weights(weights)
    total = loss_3d(pred, gt, weights).total

    if wrt == "coord3d":
        coord = _as_raster(pred.coord3d, 3)
        _, sel, n = _coord_l1(coord, gt)
        diff = coord - gt.coord3d.data.astype(np.float64)
        grad = np.where(sel[:, :, None], np.sign(diff) / max(n, 1), 0.0)
        return total, w["coord_l1"] * grad

    if wrt == "aux_angles":
        if pred.aux_angles is None:
            raise ValidationError("no aux channels in the prediction set")
        phi = _as_raster(pred.aux_angles, 4)
        mask = gt.text_mask.as_bool() & gt.angle_gt.valid.as_bool()
        n = max(int(mask.sum()), 1)
        grad = np.zeros_like(phi)
        refs = (gt.angle_gt.theta_x, gt.angle_gt.theta_y)
        for axis in (0, 1):
            p1 = phi[:, :, 2 * axis]
            p2 = phi[:, :, 2 * axis + 1]
            rho = np.maximum(np.hypot(p1, p2), 1e-12)
            theta = np.arctan2(p2, p1)
            dist = angular_distance(refs[axis], theta)
            s = np.sign(wrap_angle(theta - refs[axis]))
            grad[:, :, 2 * axis] = np.where(mask, ((p1 / rho) * dist - s * p2 / rho) / n, 0.0)
            grad[:, :, 2 * axis + 1] = np.where(mask, ((p2 / rho) * dist + s * p1 / rho) / n, 0.0)
        return total, w["angle_masked"] * grad

    if wrt == "curvature":
        curv = _as_raster(pred.curvature)
        value, diff = _curvature_l2(curv, gt)
        if value <= 0:
            raise ProbeError("curvature RMSE gradient undefined at zero residual")
        grad = (diff / (diff.size * value))[:, :, None]
        return total, w["curvature_l2"] * grad

    raise ValidationError(f"unknown gradient target {wrt!r}")


def loss_combined_value_and_grad(pred: PredictionSet, gt: SampleBundle,
                                 weights=None):
    """Total combined loss and its gradient wrt the predicted backward values."""
    if pred.backward is None:
        raise ValidationError("combined loss needs a predicted backward map")
    w = _term_weights(weights)
    total = loss_combined(pred, gt, weights).total

    vals, valid = _as_field(pred.backward)
    grad = np.zeros_like(vals)

    _, sel, n = _backward_l1(vals, valid, gt)
    diff = vals - gt.backward.values.data.astype(np.float64)
    grad += np.where(sel[:, :, None], np.sign(diff) / max(n, 1), 0.0) * w["backward_l1"]

    grad += _backward_angle_grad(vals, valid, gt) * w["backward_angle"]
    grad[~valid] = 0.0
    return total, grad


def _backward_angle_grad(vals, valid, gt: SampleBundle) -> np.ndarray:
    """Adjoint of the backward-angle term through the finite-difference Jacobian."""
    gt_vals = gt.backward.values.data.astype(np.float64)
    gtx, gty, _, _, gt_ok = angles_from_values(gt_vals, gt.backward.valid.as_bool())

    jx, jy, okx, oky, st = _jacobian_from_values(vals, valid)
    m = valid & okx & oky & gt_ok
    n = max(int(m.sum()), 1)

    theta_x = np.arctan2(-jx[:, :, 1], jx[:, :, 0])
    theta_y = np.arctan2(jy[:, :, 0], jy[:, :, 1])
    g_tx = np.where(m, np.sign(wrap_angle(theta_x - gtx)) / n, 0.0)
    g_ty = np.where(m, np.sign(wrap_angle(theta_y - gty)) / n, 0.0)

    rx2 = np.maximum(jx[:, :, 0] ** 2 + jx[:, :, 1] ** 2, 1e-300)
    ry2 = np.maximum(jy[:, :, 0] ** 2 + jy[:, :, 1] ** 2, 1e-300)
    # theta_x = atan2(-Jx_y, Jx_x)  ->  dtheta/dJx = ( Jx_y, -Jx_x) / |Jx|^2
    g_jx = np.stack([g_tx * jx[:, :, 1] / rx2, g_tx * (-jx[:, :, 0]) / rx2], axis=-1)
    # theta_y = atan2(Jy_x, Jy_y)   ->  dtheta/dJy = ( Jy_y, -Jy_x) / |Jy|^2
    g_jy = np.stack([g_ty * jy[:, :, 1] / ry2, g_ty * (-jy[:, :, 0]) / ry2], axis=-1)

    grad = np.zeros_like(vals)
    rows, cols = st["rows"], st["cols"]
    px, mx, cx = st["x"]
    np.add.at(grad, (rows, px), g_jx * cx[:, :, None])
    np.add.at(grad, (rows, mx), -g_jx * cx[:, :, None])
    py, my, cy = st["y"]
    np.add.at(grad, (py, cols), g_jy * cy[:, :, None])
    np.add.at(grad, (my, cols), -g_jy * cy[:, :, None])
    return grad


def finite_diff_check(fn, x0: np.ndarray, eps: float = 1e-5,
                      min_probes: int = 256, seed: int = 0,
                      value_fn=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    `fn` maps an array shaped like x0 to (scalar value, gradient array). A
    random subset of at least min_probes coordinates is probed via central
    differences; the relative error denominator is max(|analytic|, 1e-8).
    `value_fn`, when given, is a cheaper value-only evaluator used for the
    probes. Raises ProbeError on non-finite loss values.
    """
    if eps <= 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    x0 = np.asarray(x0, dtype=np.float64)
    value, grad = fn(x0)
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise ProbeError("loss or gradient non-finite at the probe point")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != x0.shape:
        raise ShapeError(f"gradient shape {grad.shape} != point shape {x0.shape}")
    probe = value_fn if value_fn is not None else (lambda x: fn(x)[0])

    flat = x0.ravel()
    n = flat.size
    k = min(n, max(min_probes, 1))
    keys = SplitRng(seed).random_array(n)
    idx = np.argsort(keys, kind="stable")[:k]

    worst = 0.0
    g = grad.ravel()
    for i in idx:
        xp = flat.copy()
        xp[i] += eps
        fp = probe(xp.reshape(x0.shape))
        xm = flat.copy()
        xm[i] -= eps
        fm = probe(xm.reshape(x0.shape))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ProbeError("loss non-finite at a finite-difference probe")
        fd = (fp - fm) / (2.0 * eps)
        rel = abs(fd - g[i]) / max(abs(g[i]), 1e-8)
        worst = max(worst, rel)
    return worst
