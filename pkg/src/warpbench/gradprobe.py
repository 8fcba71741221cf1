"""Deterministic probe-point construction for gradient checking.

The losses are piecewise smooth: L1 terms kink where a residual crosses zero,
the RMSE at zero residual, and angle terms where a wrapped difference hits 0
or pi. Probe points are therefore built so every residual stays bounded away
from those loci:

- coordinate / curvature offsets have magnitude in [0.05, 0.2] with random
  signs;
- aux angles are placed 0.2..0.8 rad from the references with rho in
  [0.5, 1.5];
- the backward probe is B + eps*rot90(B - c) + t, whose Jacobian is the GT
  Jacobian rotated by a constant atan(eps) (angle residual constant and
  nonzero) while both offset components stay positive everywhere.
"""

from __future__ import annotations

import numpy as np

from .losses import PredictionSet, finite_diff_check, loss_3d, loss_3d_value_and_grad, \
    loss_combined, loss_combined_value_and_grad
from .mesh import flat_grid_mesh
from .raster import BinaryMask, FloatMap2D, Image, pixel_centers
from .rng import SplitRng
from .synth import GenConfig, SampleBundle
from .warpfield import BackwardMap, ForwardMap, angle_from_backward_map

PROBE_RES = 32  # synthetic fixture; small keeps the 2*probes loss evals fast


def make_reference_bundle(seed: int, res: int = PROBE_RES) -> SampleBundle:
    """Hand-built miniature ground truth exercising masks and partial validity."""
    rng = SplitRng(seed)
    xs, ys = pixel_centers(res, res)

    # gentle warp: keeps the angle-term gradient residuals safely below the
    # uniform L1 gradient so probe coordinates never have a vanishing net
    # gradient (which would drown the finite-difference comparison in roundoff)
    a = rng.uniform(0.004, 0.008)
    ph1 = rng.uniform(0.0, 2 * np.pi)
    ph2 = rng.uniform(0.0, 2 * np.pi)
    bx = 0.08 + 0.84 * (xs + a * np.sin(2 * np.pi * ys + ph1))
    by = 0.08 + 0.84 * (ys + a * np.cos(2 * np.pi * xs + ph2))
    backward = BackwardMap(
        FloatMap2D(np.stack([bx, by], axis=-1).astype(np.float32)),
        BinaryMask(np.ones((res, res), dtype=np.uint8)),
    )

    disk = (xs - 0.5) ** 2 + (ys - 0.5) ** 2 < 0.45 ** 2
    forward = ForwardMap(
        FloatMap2D(np.stack([xs, ys], axis=-1).astype(np.float32)),
        BinaryMask(disk),
    )

    coord = np.stack(
        [
            0.5 + 0.3 * np.sin(2 * np.pi * (xs + ys) + ph1),
            0.5 + 0.3 * np.cos(2 * np.pi * (xs - ys) + ph2),
            0.5 + 0.2 * np.sin(4 * np.pi * xs * ys),
        ],
        axis=-1,
    )

    text = np.zeros((res, res), dtype=np.uint8)
    text[res // 8 : -res // 8 : 3, res // 8 : -res // 8] = 1
    curv = np.zeros((res, res), dtype=np.uint8)
    curv[:, res // 2] = 1

    gray = Image(np.full((res, res, 1), 200, dtype=np.uint8))
    return SampleBundle(
        config=GenConfig(resolution=res, seed=seed),
        flat_image=gray,
        warped_image=gray,
        coord3d=FloatMap2D(coord.astype(np.float32)),
        forward=forward,
        backward=backward,
        angle_gt=angle_from_backward_map(backward),
        curvature=BinaryMask(curv),
        text_mask=BinaryMask(text),
        words=[],
        mesh=flat_grid_mesh(2, 2),
        crease_lines=[],
        meta={"synthetic_fixture": True},
    )


def make_probe_prediction(gt: SampleBundle, seed: int) -> PredictionSet:
    """A prediction point at which every loss term is differentiable."""
    rng = SplitRng(seed)
    res = gt.config.resolution

    def signed_offsets(shape, label):
        r = rng.split(label)
        mag = r.uniform_array(shape, 0.05, 0.2)
        sign = np.where(r.random_array(shape) < 0.5, -1.0, 1.0)
        return mag * sign

    coord = gt.coord3d.data.astype(np.float64) + signed_offsets((res, res, 3), "coord")
    curv = gt.curvature.bits.astype(np.float64)[:, :, None] \
        + signed_offsets((res, res, 1), "curv")

    r = rng.split("aux")
    tx = gt.angle_gt.theta_x + np.where(r.random_array((res, res)) < 0.5, -1.0, 1.0) \
        * r.uniform_array((res, res), 0.2, 0.8)
    ty = gt.angle_gt.theta_y + np.where(r.random_array((res, res)) < 0.5, -1.0, 1.0) \
        * r.uniform_array((res, res), 0.2, 0.8)
    rho_x = r.uniform_array((res, res), 0.5, 1.5)
    rho_y = r.uniform_array((res, res), 0.5, 1.5)
    phi = np.stack(
        [rho_x * np.cos(tx), rho_x * np.sin(tx), rho_y * np.cos(ty), rho_y * np.sin(ty)],
        axis=-1,
    )

    b = gt.backward.values.data.astype(np.float64)
    eps = 0.05
    rot = np.stack([-(b[:, :, 1] - 0.5), b[:, :, 0] - 0.5], axis=-1)
    b_hat = b + eps * rot + 0.03
    return PredictionSet(coord3d=coord, curvature=curv, aux_angles=phi,
                         backward=(b_hat, gt.backward.valid.as_bool()))


def run_gradcheck(which: str, seed: int = 0, eps: float | None = None,
                  min_probes: int = 256, points: int = 1) -> dict:
    """Finite-difference verification of the analytic gradients.

    Returns {target: max relative error} over `points` random probe points
    per target. The default step is 1e-5; the backward-map target uses 3e-6
    because its curvature in B inflates the truncation term at coordinates
    where the L1 and angle gradients partially cancel.
    """
    results: dict[str, float] = {}
    for p in range(points):
        gt = make_reference_bundle(seed + 1000 * p)
        pred = make_probe_prediction(gt, seed + 1000 * p + 1)
        if which == "3d":
            targets = ("coord3d", "aux_angles", "curvature")
            for target in targets:
                err = _check_3d_target(gt, pred, target, eps or 1e-5,
                                       min_probes, seed + p)
                results[target] = max(results.get(target, 0.0), err)
        elif which == "combined":
            err = _check_combined(gt, pred, eps or 3e-6, min_probes, seed + p)
            results["backward"] = max(results.get("backward", 0.0), err)
        else:
            raise ValueError(f"unknown loss {which!r}")
    return results


def _check_3d_target(gt, pred, target, eps, min_probes, seed):
    base = {"coord3d": pred.coord3d, "curvature": pred.curvature,
            "aux_angles": pred.aux_angles}

    def with_component(x):
        parts = dict(base)
        parts[target] = x
        return PredictionSet(**parts)

    x0 = np.asarray(base[target], dtype=np.float64)
    return finite_diff_check(
        lambda x: loss_3d_value_and_grad(with_component(x), gt, wrt=target),
        x0, eps=eps, min_probes=min_probes, seed=seed,
        value_fn=lambda x: loss_3d(with_component(x), gt).total,
    )


def _check_combined(gt, pred, eps, min_probes, seed):
    vals, valid = pred.backward
    # components that do not depend on B are pinned to the reference: they are
    # constants under the probe and would only add float cancellation noise
    coord = gt.coord3d.data.astype(np.float64)
    curv = gt.curvature.bits.astype(np.float64)[:, :, None]

    def with_backward(x):
        return PredictionSet(coord3d=coord, curvature=curv, backward=(x, valid))

    return finite_diff_check(
        lambda x: loss_combined_value_and_grad(with_backward(x), gt),
        np.asarray(vals, dtype=np.float64), eps=eps, min_probes=min_probes, seed=seed,
        value_fn=lambda x: loss_combined(with_backward(x), gt).total,
    )
