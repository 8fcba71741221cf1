"""Command-line front end: gen / rectify / invert / loss / gradcheck / eval / inspect.

Structured output is JSON on stdout, human-readable notes go to stderr. Every
subcommand that writes artifacts also records a meta.json with the full
configuration and seed so runs can be reproduced bit-exactly. Exit codes:
0 success, 1 usage error, 2 data or format error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .errors import WarpbenchError
from .evaluation import EvalReport, OcrConfig, evaluate, identity_map, ms_ssim
from .losses import PredictionSet, finite_diff_check, loss_3d, loss_3d_value_and_grad, \
    loss_combined, loss_combined_value_and_grad
from .raster import FloatMap2D, Image, read_fmap, read_image, write_fmap, write_image
from .rng import SplitRng
from .synth import GenConfig, SampleBundle, config_from_jsonable, generate_sample, \
    load_bundle, save_bundle, _config_jsonable, _dump_json
from .version import TOOLKIT_VERSION
from .warpfield import apply_backward_map, invert_forward_map, load_backward_map, \
    load_forward_map, save_field
from . import gradprobe

ENV_SEED = "WARPBENCH_SEED"


def _default_seed() -> int:
    return int(os.environ.get(ENV_SEED, "0"))


def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="warpbench", description=__doc__)
    top.add_argument("--version", action="version", version=TOOLKIT_VERSION)
    sub = top.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate synthetic sample bundles")
    gen.add_argument("--out", required=True)
    gen.add_argument("--count", type=int, default=1)
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--resolution", type=int, default=256)
    gen.add_argument("--folds", type=int, default=2)
    gen.add_argument("--bend", type=float, default=0.02)
    gen.add_argument("--camera", choices=("orthographic", "perspective"),
                     default="orthographic")
    gen.add_argument("--threads", type=int, default=1)
    gen.add_argument("--from-meta", default=None,
                     help="reproduce a run from a previously written meta.json")

    rectify = sub.add_parser("rectify", help="resample an image through a backward map")
    rectify.add_argument("--image", required=True)
    rectify.add_argument("--map", required=True)
    rectify.add_argument("--mask", required=True)
    rectify.add_argument("--out", required=True)
    rectify.add_argument("--fill", type=int, default=255)

    inv = sub.add_parser("invert", help="invert a forward map into a backward map")
    inv.add_argument("--forward", required=True)
    inv.add_argument("--mask", required=True)
    inv.add_argument("--out", required=True, help="output basename; writes "
                     "<out>.fmap and <out>.mask.fmap")
    inv.add_argument("--height", type=int, default=None)
    inv.add_argument("--width", type=int, default=None)

    loss = sub.add_parser("loss", help="score a prediction directory against a bundle")
    loss.add_argument("--pred", required=True)
    loss.add_argument("--gt", required=True)
    loss.add_argument("--combined", action="store_true")
    for term in ("coord-l1", "angle-masked", "curvature-l2", "backward-l1",
                 "backward-angle"):
        loss.add_argument(f"--weight-{term}", type=float, default=1.0)

    grad = sub.add_parser("gradcheck", help="verify analytic gradients by finite differences")
    grad.add_argument("--loss", choices=("3d", "combined"), default="combined")
    grad.add_argument("--seed", type=int, default=None)
    grad.add_argument("--eps", type=float, default=None,
                      help="finite-difference step; default per target")
    grad.add_argument("--probes", type=int, default=256)
    grad.add_argument("--tolerance", type=float, default=1e-5)

    ev = sub.add_parser("eval", help="evaluate a predicted backward map on a bundle")
    ev.add_argument("--sample", required=True)
    ev.add_argument("--pred", default=None, help="predicted map basename "
                    "(<pred>.fmap + <pred>.mask.fmap); defaults to the identity map")
    ev.add_argument("--out", default=None)
    ev.add_argument("--overlay", default=None)
    ev.add_argument("--char-error-rate", type=float, default=0.0)
    ev.add_argument("--drop-rate", type=float, default=0.0)
    ev.add_argument("--jitter", type=float, default=0.0)
    ev.add_argument("--levels", type=int, default=5)
    ev.add_argument("--seed", type=int, default=None)
    ev.add_argument("--threads", type=int, default=1)

    ins = sub.add_parser("inspect", help="render one FMAP channel as false-color PPM")
    ins.add_argument("--fmap", required=True)
    ins.add_argument("--channel", type=int, default=0)
    ins.add_argument("--out", required=True)
    return top


def dispatch(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return _HANDLERS[args.command](args)
    except WarpbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


# ---------------------------------------------------------------------------
# Handlers.
# ---------------------------------------------------------------------------

def _cmd_gen(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    if args.from_meta:
        with open(args.from_meta) as f:
            meta = json.load(f)
        base_cfg = config_from_jsonable(meta["base_config"])
        count = meta["count"]
        seed = meta["seed"]
    else:
        base_cfg = GenConfig(resolution=args.resolution, fold_count=args.folds,
                             bend_amplitude=args.bend, camera=args.camera, seed=seed)
        count = args.count
    base_cfg.validate()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def one(k: int):
        cfg = GenConfig(**{**_cfg_dict(base_cfg), "seed": seed + k})
        bundle = generate_sample(cfg)
        save_bundle(bundle, out / f"sample_{k:04d}")
        return k

    threads = max(args.threads if hasattr(args, "threads") else 1, 1)
    if threads == 1:
        for k in range(count):
            one(k)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(one, range(count)))

    _dump_json(
        {"base_config": _config_jsonable(base_cfg), "count": count, "seed": seed,
         "toolkit_version": TOOLKIT_VERSION},
        out / "meta.json",
    )
    print(json.dumps({"generated": count, "out": str(out), "seed": seed}))
    return 0


def _cfg_dict(cfg: GenConfig) -> dict:
    from dataclasses import asdict

    return asdict(cfg)


def _cmd_rectify(args) -> int:
    img = read_image(args.image)
    bmap = load_backward_map(args.map, args.mask)
    write_image(apply_backward_map(img, bmap, fill=args.fill), args.out)
    _write_run_meta(Path(args.out).parent, "rectify", vars(args))
    print(json.dumps({"out": args.out}))
    return 0


def _cmd_invert(args) -> int:
    fwd = load_forward_map(args.forward, args.mask)
    out_h = args.height or fwd.height
    out_w = args.width or fwd.width
    bwd = invert_forward_map(fwd, out_h, out_w)
    save_field(bwd, args.out + ".fmap", args.out + ".mask.fmap")
    _write_run_meta(Path(args.out).parent, "invert", vars(args))
    print(json.dumps({"out": args.out + ".fmap", "valid": int(bwd.valid.count())}))
    return 0


def _cmd_loss(args) -> int:
    gt = load_bundle(args.gt)
    pred = _load_prediction(Path(args.pred))
    weights = {
        "coord_l1": args.weight_coord_l1,
        "angle_masked": args.weight_angle_masked,
        "curvature_l2": args.weight_curvature_l2,
        "backward_l1": args.weight_backward_l1,
        "backward_angle": args.weight_backward_angle,
    }
    fn = loss_combined if args.combined else loss_3d
    breakdown = fn(pred, gt, weights=weights)
    print(json.dumps(breakdown.to_jsonable(), sort_keys=True))
    return 0


def _load_prediction(d: Path) -> PredictionSet:
    aux = d / "aux_angles.fmap"
    back = d / "backward.fmap"
    return PredictionSet(
        coord3d=read_fmap(d / "coord3d.fmap"),
        curvature=read_fmap(d / "curvature.fmap"),
        aux_angles=read_fmap(aux) if aux.exists() else None,
        backward=load_backward_map(back, d / "backward.mask.fmap") if back.exists() else None,
    )


def _cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    results = gradprobe.run_gradcheck(args.loss, seed=seed, eps=args.eps,
                                      min_probes=args.probes)
    worst = max(results.values())
    print(json.dumps({"loss": args.loss, "max_rel_err": worst,
                      "per_target": results, "tolerance": args.tolerance},
                     sort_keys=True))
    if worst >= args.tolerance:
        print(f"gradient check failed: {worst:.3e} >= {args.tolerance:.1e}",
              file=sys.stderr)
        return 2
    return 0


def _cmd_eval(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    ocr = OcrConfig(char_error_rate=args.char_error_rate, drop_rate=args.drop_rate,
                    jitter=args.jitter)
    root = Path(args.sample)
    children = sorted(p for p in root.glob("sample_*") if p.is_dir())
    if children:
        payload = _eval_many(children, args, ocr, seed)
    else:
        report = _eval_one(root, args, ocr, seed, overlay=args.overlay)
        payload = report.to_json()
    if args.out:
        with open(args.out, "w") as f:
            f.write(payload + "\n")
        _write_run_meta(Path(args.out).parent, "eval", vars(args), seed=seed)
    print(payload)
    return 0


def _eval_one(sample_dir: Path, args, ocr: OcrConfig, seed: int,
              overlay=None) -> EvalReport:
    sample = load_bundle(sample_dir)
    if args.pred:
        base = str(sample_dir / args.pred) if (sample_dir / (args.pred + ".fmap")).exists() \
            else args.pred
        predicted = load_backward_map(base + ".fmap", base + ".mask.fmap")
    else:
        predicted = identity_map(sample.config.resolution)
    report = evaluate(sample, predicted, ocr=ocr, seed=seed)
    if args.levels != 5:
        rect_pred = apply_backward_map(sample.warped_image, predicted, fill=255)
        rect_gt = apply_backward_map(sample.warped_image, sample.backward, fill=255)
        report.ms_ssim = ms_ssim(rect_pred, rect_gt, levels=args.levels)
        report.meta["msssim_levels"] = args.levels
    if overlay:
        _write_overlay(sample, predicted, report, overlay, ocr, seed)
    return report


def _eval_many(dirs, args, ocr: OcrConfig, seed: int) -> str:
    """Evaluate every sample directory; per-document reports plus aggregates.

    Work is distributed across --threads, but documents are keyed by index so
    the output is identical for any thread count.
    """
    def one(k):
        return k, _eval_one(dirs[k], args, ocr, seed + k)

    threads = max(args.threads, 1)
    if threads == 1:
        results = [one(k) for k in range(len(dirs))]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(len(dirs))))
    results.sort(key=lambda kv: kv[0])
    reports = [r.to_jsonable() for _, r in results]
    eds = [r["ed"] for r in reports if r["ed"] is not None]
    agg = {
        "ed": sum(eds) / len(eds) if eds else None,
        "epe": sum(r["epe"] for r in reports) / len(reports),
        "ms_ssim": sum(r["ms_ssim"] for r in reports) / len(reports),
        "counts": {
            key: sum(r["counts"][key] for r in reports)
            for key in ("matched", "unmatched_gt", "unmatched_pred")
        },
    }
    return json.dumps({"aggregate": agg, "samples": reports},
                      sort_keys=True, separators=(",", ":"))


def _cmd_inspect(args) -> int:
    fm = read_fmap(args.fmap)
    if not (0 <= args.channel < fm.channels):
        raise WarpbenchError(
            f"channel {args.channel} out of range for {fm.channels}-channel map"
        )
    ch = fm.data[:, :, args.channel].astype(np.float64)
    lo, hi = float(ch.min()), float(ch.max())
    t = (ch - lo) / (hi - lo) if hi > lo else np.zeros_like(ch)
    write_image(Image(_false_color(t)), args.out)
    print(json.dumps({"out": args.out, "min": lo, "max": hi}))
    return 0


def _false_color(t: np.ndarray) -> np.ndarray:
    """Blue -> cyan -> yellow -> red ramp, piecewise linear in t."""
    stops = np.array(
        [[20, 10, 120], [30, 160, 220], [240, 220, 60], [200, 30, 30]],
        dtype=np.float64,
    )
    idx = np.minimum((t * 3).astype(np.intp), 2)
    frac = t * 3 - idx
    out = stops[idx] * (1 - frac[:, :, None]) + stops[idx + 1] * frac[:, :, None]
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _fill_convex(canvas_mask: np.ndarray, poly: np.ndarray) -> None:
    """Mark pixels whose centers lie inside a convex polygon (in-place OR)."""
    from .evaluation import convex_hull, is_convex

    p = poly if is_convex(poly) else convex_hull(poly)
    if len(p) < 3:
        return
    h, w = canvas_mask.shape
    px = p * np.array([w, h])
    lo = np.clip(np.floor(px.min(axis=0)).astype(int), 0, [w - 1, h - 1])
    hi = np.clip(np.ceil(px.max(axis=0)).astype(int), 0, [w - 1, h - 1])
    if hi[0] <= lo[0] or hi[1] <= lo[1]:
        return
    xs = np.arange(lo[0], hi[0] + 1) + 0.5
    ys = np.arange(lo[1], hi[1] + 1) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    inside = np.ones(gx.shape, dtype=bool)
    # orient CCW so the half-plane test is uniform
    signed = 0.5 * float(np.dot(px[:, 0], np.roll(px[:, 1], -1))
                         - np.dot(px[:, 1], np.roll(px[:, 0], -1)))
    q = px if signed >= 0 else px[::-1]
    n = len(q)
    for i in range(n):
        a, b = q[i], q[(i + 1) % n]
        inside &= (b[0] - a[0]) * (gy - a[1]) - (b[1] - a[1]) * (gx - a[0]) >= 0
    canvas_mask[lo[1] : hi[1] + 1, lo[0] : hi[0] + 1] |= inside


def _write_overlay(sample: SampleBundle, predicted, report: EvalReport,
                   path, ocr: OcrConfig, seed: int) -> None:
    """Match visualization on the input image: purple where ground-truth and
    prediction boxes agree, blue for GT-only regions, red for prediction-only."""
    from .evaluation import simulate_ocr, transfer_words, _as_forward
    from .warpfield import invert_forward_map, warp_polygon

    res = sample.config.resolution
    rng = SplitRng(seed)
    pred_inverse = invert_forward_map(_as_forward(predicted), res, res)
    gt_words = simulate_ocr(sample.words, ocr, rng.split("gt").seed)
    pred_words = simulate_ocr(
        transfer_words(sample.words, sample.backward, pred_inverse), ocr,
        rng.split("pred").seed,
    )

    gt_any = np.zeros((res, res), dtype=bool)
    pred_any = np.zeros((res, res), dtype=bool)
    for w in gt_words:
        poly, ok = warp_polygon(w.quad, sample.backward)
        if ok:
            _fill_convex(gt_any, poly)
    for w in pred_words:
        poly, ok = warp_polygon(w.quad, predicted)
        if ok:
            _fill_convex(pred_any, poly)

    base = sample.warped_image.data.astype(np.float64)
    if base.shape[2] == 1:
        base = np.repeat(base, 3, axis=2)
    overlay = base.copy()
    blue = np.array([70.0, 70.0, 230.0])
    red = np.array([230.0, 60.0, 60.0])
    purple = np.array([170.0, 60.0, 200.0])
    overlay[gt_any & ~pred_any] = 0.45 * overlay[gt_any & ~pred_any] + 0.55 * blue
    overlay[pred_any & ~gt_any] = 0.45 * overlay[pred_any & ~gt_any] + 0.55 * red
    overlay[gt_any & pred_any] = 0.45 * overlay[gt_any & pred_any] + 0.55 * purple
    write_image(Image(np.clip(np.rint(overlay), 0, 255).astype(np.uint8)), path)


def _write_run_meta(directory: Path, command: str, params: dict, **extra) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    record = {"command": command, "toolkit_version": TOOLKIT_VERSION}
    record.update({k: v for k, v in params.items() if isinstance(v, (int, float, str, bool, type(None)))})
    record.update(extra)
    _dump_json(record, directory / f"{command}_meta.json")


_HANDLERS = {
    "gen": _cmd_gen,
    "rectify": _cmd_rectify,
    "invert": _cmd_invert,
    "loss": _cmd_loss,
    "gradcheck": _cmd_gradcheck,
    "eval": _cmd_eval,
    "inspect": _cmd_inspect,
}


if __name__ == "__main__":
    main()
