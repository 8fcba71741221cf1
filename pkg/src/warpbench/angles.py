"""Polar conversion of auxiliary channels and the confidence-weighted angle loss.

The loss penalizes the smallest angle modulo 2*pi between corresponding
angles, weighted per pixel by the candidate's confidence rho, and averages
over masked pixels so magnitudes are resolution independent. The per-pixel
term is non-differentiable where the wrapped difference hits 0 or pi;
gradient checks must exclude that locus.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .raster import BinaryMask, FloatMap2D
from .warpfield import AngleMap


def polar_from_channels(phi: FloatMap2D) -> AngleMap:
    """Convert 4 auxiliary channels (phi_xx, phi_xy, phi_yx, phi_yy) to angles.

    Per axis i: rho_i is the pair's Euclidean norm and theta_i the
    four-quadrant arctangent with the second stored channel as the sine-like
    argument. rho = 0 yields theta = 0.
    """
    if phi.channels != 4:
        raise ShapeError(f"aux channels need 4 channels, got {phi.channels}")
    d = phi.data.astype(np.float64)
    theta_x = np.arctan2(d[:, :, 1], d[:, :, 0])
    theta_y = np.arctan2(d[:, :, 3], d[:, :, 2])
    rho_x = np.hypot(d[:, :, 0], d[:, :, 1])
    rho_y = np.hypot(d[:, :, 2], d[:, :, 3])
    out = np.stack([theta_x, theta_y, rho_x, rho_y], axis=-1)
    ones = BinaryMask(np.ones(d.shape[:2], dtype=np.uint8))
    return AngleMap(FloatMap2D(out.astype(np.float32)), ones)


def channels_from_polar(theta_x, theta_y, rho_x, rho_y) -> FloatMap2D:
    """Inverse of polar_from_channels: (rho*cos, rho*sin) per axis."""
    out = np.stack(
        [
            rho_x * np.cos(theta_x),
            rho_x * np.sin(theta_x),
            rho_y * np.cos(theta_y),
            rho_y * np.sin(theta_y),
        ],
        axis=-1,
    )
    return FloatMap2D(out.astype(np.float32))


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    a = np.asarray(a, dtype=np.float64)
    out = np.mod(-a + np.pi, 2.0 * np.pi)
    return -(out - np.pi)


def angular_distance(theta, theta_hat):
    """Smallest angle modulo 2*pi between two angles, in [0, pi]."""
    d = np.mod(np.abs(np.asarray(theta, np.float64) - np.asarray(theta_hat, np.float64)),
               2.0 * np.pi)
    return np.pi - np.abs(d - np.pi)


@dataclass
class AngleLossResult:
    scalar: float
    per_pixel: FloatMap2D


def _coerce_angles(side):
    """Accept an AngleMap or raw arrays (theta_x, theta_y[, rho_x, rho_y]).

    Raw float64 arrays keep gradient probes clear of the float32 raster
    storage. Returns (theta_x, theta_y, rho_x, rho_y, valid).
    """
    if isinstance(side, AngleMap):
        return side.theta_x, side.theta_y, side.rho_x, side.rho_y, side.valid.as_bool()
    parts = [np.asarray(p, dtype=np.float64) for p in side]
    tx, ty = parts[0], parts[1]
    rx = parts[2] if len(parts) > 2 else np.ones_like(tx)
    ry = parts[3] if len(parts) > 3 else np.ones_like(tx)
    return tx, ty, rx, ry, np.ones(tx.shape, dtype=bool)


def _loss_inputs(reference, candidate, mask):
    ref = _coerce_angles(reference)
    cand = _coerce_angles(candidate)
    if ref[0].shape != cand[0].shape:
        raise ShapeError(f"angle maps differ: {ref[0].shape} vs {cand[0].shape}")
    agg = ref[4] & cand[4]
    if mask is not None:
        if (mask.height, mask.width) != ref[0].shape:
            raise ShapeError(
                f"mask {mask.height}x{mask.width} does not match angle maps "
                f"{ref[0].shape[0]}x{ref[0].shape[1]}"
            )
        agg &= mask.as_bool()
    return ref, cand, agg


def angle_loss(reference, candidate, mask: BinaryMask | None = None,
               rho_override: np.ndarray | None = None) -> AngleLossResult:
    """Confidence-weighted circular distance between two angle maps.

    Per pixel: sum over axes of rho_hat * angular_distance; the scalar is the
    mean of those contributions over masked (and jointly valid) pixels, zero
    when the mask selects nothing. Confidences come from `candidate` unless
    `rho_override` pins them (e.g. to 1 for backward-map angles). Either side
    may be an AngleMap or raw (theta_x, theta_y[, rho_x, rho_y]) arrays.
    """
    ref, cand, agg = _loss_inputs(reference, candidate, mask)
    rho_x = cand[2] if rho_override is None else rho_override
    rho_y = cand[3] if rho_override is None else rho_override
    per = rho_x * angular_distance(ref[0], cand[0]) \
        + rho_y * angular_distance(ref[1], cand[1])
    per = np.where(agg, per, 0.0)
    n = int(agg.sum())
    scalar = float(per.sum() / n) if n else 0.0
    return AngleLossResult(scalar, FloatMap2D(per.astype(np.float32)))


def angle_loss_theta_grad(reference, candidate, mask: BinaryMask | None = None,
                          rho_override: np.ndarray | None = None):
    """Analytic gradient of the scalar loss wrt the candidate's angles.

    Valid away from wrapped differences of 0 or pi. Returns (d_theta_x,
    d_theta_y) arrays matching the map shape.
    """
    ref, cand, agg = _loss_inputs(reference, candidate, mask)
    n = max(int(agg.sum()), 1)
    rho_x = cand[2] if rho_override is None else rho_override
    rho_y = cand[3] if rho_override is None else rho_override
    gx = rho_x * np.sign(wrap_angle(cand[0] - ref[0])) / n
    gy = rho_y * np.sign(wrap_angle(cand[1] - ref[1])) / n
    gx = np.where(agg, gx, 0.0)
    gy = np.where(agg, gy, 0.0)
    return gx, gy
