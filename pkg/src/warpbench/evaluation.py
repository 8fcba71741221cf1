"""Rectification evaluation: OCR simulation, polygon matching, Ed / EPE / MS-SSIM.

Word boxes from the ground-truth and candidate rectifications are warped back
into the input image domain through their own backward maps and matched by
maximum polygon intersection with the Hungarian algorithm; matched pairs
contribute a length-normalized edit distance, unmatched ground-truth words
score 1. EPE is the mean endpoint error between warp fields in normalized
coordinates, and MS-SSIM the standard five-level structural similarity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError
from .raster import Image, sample_many
from .rng import SplitRng
from .synth import SampleBundle, WordBox
from .version import TOOLKIT_VERSION
from .warpfield import BackwardMap, apply_backward_map, identity_backward_map, \
    invert_forward_map, warp_polygon

# Five-level weights and stabilizers from the MS-SSIM literature (not ours).
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2
MATCH_AREA_FRACTION = 0.10  # pairs overlapping less than this share of the smaller box drop


# ---------------------------------------------------------------------------
# Polygon intersection.
# ---------------------------------------------------------------------------

def shoelace_area(poly: np.ndarray) -> float:
    p = np.asarray(poly, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew monotone chain; returns CCW hull vertices."""
    pts = sorted({(float(x), float(y)) for x, y in np.asarray(points)})
    if len(pts) <= 2:
        return np.asarray(pts, dtype=np.float64).reshape(-1, 2)

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2:
                ox, oy = out[-2]
                ax, ay = out[-1]
                if (ax - ox) * (p[1] - oy) - (ay - oy) * (p[0] - ox) <= 0:
                    out.pop()
                else:
                    break
            out.append(p)
        return out

    lower = half(pts)
    upper = half(reversed(pts))
    return np.asarray(lower[:-1] + upper[:-1], dtype=np.float64)


def is_convex(poly: np.ndarray) -> bool:
    p = np.asarray(poly, dtype=np.float64)
    n = len(p)
    sign = 0
    for i in range(n):
        a, b, c = p[i], p[(i + 1) % n], p[(i + 2) % n]
        cr = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if abs(cr) < 1e-15:
            continue
        s = 1 if cr > 0 else -1
        if sign == 0:
            sign = s
        elif s != sign:
            return False
    return True


def _ensure_ccw(poly: np.ndarray) -> np.ndarray:
    p = np.asarray(poly, dtype=np.float64)
    signed = 0.5 * float(
        np.dot(p[:, 0], np.roll(p[:, 1], -1)) - np.dot(p[:, 1], np.roll(p[:, 0], -1))
    )
    return p if signed >= 0 else p[::-1]


def _clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a polygon by a convex CCW clip polygon."""
    output = [tuple(v) for v in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        a = clip[i]
        b = clip[(i + 1) % n]
        inputs = output
        output = []
        s = inputs[-1]

        def inside(p):
            return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= -1e-15

        for e in inputs:
            if inside(e):
                if not inside(s):
                    output.append(_edge_intersection(s, e, a, b))
                output.append(e)
            elif inside(s):
                output.append(_edge_intersection(s, e, a, b))
            s = e
    return np.asarray(output, dtype=np.float64).reshape(-1, 2)


def _edge_intersection(s, e, a, b):
    dc = (a[0] - b[0], a[1] - b[1])
    dp = (s[0] - e[0], s[1] - e[1])
    n1 = a[0] * b[1] - a[1] * b[0]
    n2 = s[0] * e[1] - s[1] * e[0]
    den = dc[0] * dp[1] - dc[1] * dp[0]
    if abs(den) < 1e-300:
        return e
    return ((n1 * dp[0] - n2 * dc[0]) / den, (n1 * dp[1] - n2 * dc[1]) / den)


def polygon_intersection_area(p, q, diagnostics: dict | None = None) -> float:
    """Area of the intersection of two simple polygons.

    Non-convex inputs (warped quads can flip) are replaced by their convex
    hulls before clipping; when that happens a counter in `diagnostics` is
    bumped. Degenerate inputs yield 0.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.ndim != 2 or q.ndim != 2 or len(p) < 3 or len(q) < 3:
        raise ShapeError("polygons need at least 3 vertices")
    if not is_convex(p):
        p = convex_hull(p)
        if diagnostics is not None:
            diagnostics["hull_substitutions"] = diagnostics.get("hull_substitutions", 0) + 1
    if not is_convex(q):
        q = convex_hull(q)
        if diagnostics is not None:
            diagnostics["hull_substitutions"] = diagnostics.get("hull_substitutions", 0) + 1
    if len(p) < 3 or len(q) < 3:
        return 0.0
    if shoelace_area(p) < 1e-300 or shoelace_area(q) < 1e-300:
        return 0.0
    clipped = _clip_convex(_ensure_ccw(p), _ensure_ccw(q))
    if len(clipped) < 3:
        return 0.0
    return shoelace_area(clipped)


# ---------------------------------------------------------------------------
# Assignment and edit distance.
# ---------------------------------------------------------------------------

def hungarian_match(cost) -> list[tuple[int, int]]:
    """Minimum-total-cost one-to-one assignment of min(n, m) pairs.

    O(n^2 m) shortest augmenting path formulation with potentials; costs must
    be finite. Empty matrices give an empty assignment.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.size == 0:
        return []
    if c.ndim != 2:
        raise ShapeError(f"cost matrix must be 2-D, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValidationError("cost matrix must be finite")
    transposed = c.shape[0] > c.shape[1]
    if transposed:
        c = c.T
    n, m = c.shape

    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    way = np.zeros(m + 1, dtype=np.intp)
    match_col = np.full(m + 1, n, dtype=np.intp)  # sentinel row n
    for i in range(n):
        match_col[m] = i
        j0 = m
        minv = np.full(m + 1, INF)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match_col[j0]
            delta = INF
            j1 = -1
            for j in range(m):
                if used[j]:
                    continue
                cur = c[i0, j] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[match_col[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match_col[j0] == n:
                break
        while j0 != m:
            j1 = way[j0]
            match_col[j0] = match_col[j1]
            j0 = j1

    pairs = [(int(match_col[j]), j) for j in range(m) if match_col[j] != n]
    if transposed:
        pairs = [(j, i) for i, j in pairs]
    return sorted(pairs)


def levenshtein(a: str, b: str) -> int:
    """Minimum single-character insert/delete/substitute count."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, cb in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb))
        prev = cur
    return prev[-1]


@dataclass
class MatchPair:
    pred_index: int
    gt_index: int
    area: float
    edit_distance: float  # normalized to [0, 1]


def match_word_boxes(pred_words, pred_map: BackwardMap,
                     gt_words, gt_map: BackwardMap,
                     diagnostics: dict | None = None) -> list[MatchPair]:
    """Match words in the shared input domain (each box warped by its own map).

    Cost is the negated polygon intersection; pairs overlapping less than
    MATCH_AREA_FRACTION of the smaller box are discarded after assignment.
    """
    if not pred_words or not gt_words:
        return []
    warped_pred = [warp_polygon(w.quad, pred_map) for w in pred_words]
    warped_gt = [warp_polygon(w.quad, gt_map) for w in gt_words]

    areas = np.zeros((len(pred_words), len(gt_words)))
    for i, (pp, pv) in enumerate(warped_pred):
        if not pv:
            continue
        for j, (gp, gv) in enumerate(warped_gt):
            if not gv:
                continue
            areas[i, j] = polygon_intersection_area(pp, gp, diagnostics)

    pairs = []
    for i, j in hungarian_match(-areas):
        inter = areas[i, j]
        own_p = shoelace_area(warped_pred[i][0])
        own_g = shoelace_area(warped_gt[j][0])
        if inter <= MATCH_AREA_FRACTION * max(min(own_p, own_g), 1e-300):
            continue
        norm = max(len(pred_words[i].text), len(gt_words[j].text))
        ed = levenshtein(pred_words[i].text, gt_words[j].text) / norm
        pairs.append(MatchPair(i, j, float(inter), float(ed)))
    return pairs


def edit_distance_score(pairs: list[MatchPair], gt_count: int, pred_count: int):
    """Mean normalized edit distance over ground-truth words; misses score 1.

    Unmatched predictions are reported in counts but do not enter the mean.
    Returns None when there are no ground-truth words.
    """
    if gt_count == 0:
        return None
    matched = {p.gt_index: p.edit_distance for p in pairs}
    total = sum(matched.get(j, 1.0) for j in range(gt_count))
    return total / gt_count


# ---------------------------------------------------------------------------
# Geometric and visual metrics.
# ---------------------------------------------------------------------------

def epe(b: BackwardMap, b_hat: BackwardMap) -> float:
    """Mean endpoint error over jointly valid pixels, normalized units."""
    if (b.height, b.width) != (b_hat.height, b_hat.width):
        raise ShapeError(
            f"backward maps differ: {b.height}x{b.width} vs {b_hat.height}x{b_hat.width}"
        )
    sel = b.valid.as_bool() & b_hat.valid.as_bool()
    if not sel.any():
        raise ValidationError("no jointly valid pixels for EPE")
    diff = b.values.data.astype(np.float64) - b_hat.values.data.astype(np.float64)
    return float(np.sqrt((diff[sel] ** 2).sum(axis=-1)).mean())


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    xs = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(xs ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation with a 1-D window along both axes."""
    k = len(win)
    h, w = img.shape
    out = np.zeros((h, w - k + 1))
    for t in range(k):
        out += win[t] * img[:, t : t + w - k + 1]
    out2 = np.zeros((h - k + 1, w - k + 1))
    for t in range(k):
        out2 += win[t] * out[t : t + h - k + 1, :]
    return out2


def _ssim_terms(a: np.ndarray, b: np.ndarray):
    win = _gaussian_window()
    mu_a = _filter_valid(a, win)
    mu_b = _filter_valid(b, win)
    saa = _filter_valid(a * a, win) - mu_a ** 2
    sbb = _filter_valid(b * b, win) - mu_b ** 2
    sab = _filter_valid(a * b, win) - mu_a * mu_b
    lum = (2 * mu_a * mu_b + SSIM_C1) / (mu_a ** 2 + mu_b ** 2 + SSIM_C1)
    cs = (2 * sab + SSIM_C2) / (saa + sbb + SSIM_C2)
    return float(lum.mean()), float(cs.mean())


def _downsample2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    img = img[: h - h % 2, : w - w % 2]
    return (img[0::2, 0::2] + img[0::2, 1::2] + img[1::2, 0::2] + img[1::2, 1::2]) / 4.0


def ms_ssim(a: Image, b: Image, levels: int = 5) -> float:
    """Multi-scale structural similarity on the luma channel.

    Standard construction: per-level mean contrast-structure terms, a
    luminance term at the coarsest level, 11x11 Gaussian window (sigma 1.5),
    dyadic downsampling, and the published five-level exponents. Negative
    terms clamp at 0 so the score stays in [0, 1].
    """
    if (a.height, a.width) != (b.height, b.width):
        raise ShapeError(f"images differ: {a.height}x{a.width} vs {b.height}x{b.width}")
    if levels < 1 or levels > len(MSSSIM_WEIGHTS):
        raise ShapeError(f"levels must be in 1..{len(MSSSIM_WEIGHTS)}, got {levels}")
    need = (2 ** (levels - 1)) * 11
    if min(a.height, a.width) < need:
        raise ShapeError(
            f"min side {min(a.height, a.width)} < {need} required for {levels} levels"
        )
    xa, xb = a.gray(), b.gray()
    weights = MSSSIM_WEIGHTS[:levels]
    score = 1.0
    for lvl in range(levels):
        lum, cs = _ssim_terms(xa, xb)
        if lvl == levels - 1:
            score *= max(lum, 0.0) ** weights[lvl] * max(cs, 0.0) ** weights[lvl]
        else:
            score *= max(cs, 0.0) ** weights[lvl]
            xa, xb = _downsample2(xa), _downsample2(xb)
    return float(score)


def max_msssim_levels(a: Image) -> int:
    """Largest level count the image size admits (capped at the 5 published weights)."""
    side = min(a.height, a.width)
    levels = 1
    while levels < len(MSSSIM_WEIGHTS) and side >= (2 ** levels) * 11:
        levels += 1
    return levels


def ms_ssim_auto(a: Image, b: Image) -> float:
    """MS-SSIM at the deepest level count both images admit."""
    return ms_ssim(a, b, levels=max_msssim_levels(a))


# ---------------------------------------------------------------------------
# Simulated OCR.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OcrConfig:
    char_error_rate: float = 0.0
    drop_rate: float = 0.0
    jitter: float = 0.0              # vertex jitter amplitude, normalized units
    distortion_weight: float = 25.0  # scales rates with per-word geometric distortion
    char_aspect: float = 0.55        # width/height of an undistorted character cell

    def validate(self) -> "OcrConfig":
        for name in ("char_error_rate", "drop_rate", "jitter"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"{name} must be in [0, 1], got {v}")
        if self.distortion_weight < 0 or self.char_aspect <= 0:
            raise ValidationError("distortion_weight must be >= 0 and char_aspect > 0")
        return self


_OCR_CHARSET = "abcdefghijklmnopqrstuvwxyz0123456789"


def quad_distortion(quad: np.ndarray, n_chars: int = 0,
                    char_aspect: float = 0.55) -> float:
    """Geometric deformation of a word quad as an OCR engine would feel it.

    Three components: deviation from an axis-aligned rectangle (fill ratio),
    tilt of the box edges away from the axes (rotation and shear, exactly
    zero for any upright rectangle), and squash of the per-character cell
    away from the reference aspect (catches axis-aligned compression). Small
    dead zones keep glyph-rounding and resampling jitter at exactly zero.
    """
    q = np.asarray(quad, dtype=np.float64)
    area = shoelace_area(q)
    ext = q.max(axis=0) - q.min(axis=0)
    bbox = float(ext[0] * ext[1])
    if bbox <= 0:
        return 1.0
    rot_shear = max(float(np.clip(1.0 - area / bbox, 0.0, 1.0)) - 0.01, 0.0)

    def tilt(v, axis):
        along = abs(float(v[axis]))
        across = abs(float(v[1 - axis]))
        return np.arctan2(across, along) if along + across > 1e-12 else 0.0

    edge_tilt = 0.25 * (tilt(q[1] - q[0], 0) + tilt(q[2] - q[3], 0)
                        + tilt(q[3] - q[0], 1) + tilt(q[2] - q[1], 1))

    squash = 0.0
    if n_chars > 0:
        width = 0.5 * (np.linalg.norm(q[1] - q[0]) + np.linalg.norm(q[2] - q[3]))
        height = 0.5 * (np.linalg.norm(q[3] - q[0]) + np.linalg.norm(q[2] - q[1]))
        if width > 1e-12 and height > 1e-12:
            ratio = (width / n_chars) / height / char_aspect
            squash = max(abs(float(np.log(ratio))) - 0.03, 0.0)
    return rot_shear + 2.0 * edge_tilt + squash


def simulate_ocr(words, corruption: OcrConfig, seed: int) -> list[WordBox]:
    """Rate-parameterized stand-in for an OCR engine; deterministic in seed.

    Whole words drop at the drop rate, characters substitute/insert/delete at
    the character rate, and quad vertices jitter. Both rates are amplified by
    the word's geometric distortion (scaled by distortion_weight), so warped
    text reads worse than upright text; with all rates zero the output is
    identical to the input.
    """
    corruption.validate()
    rng = SplitRng(seed)
    out = []
    for k, word in enumerate(words):
        wrng = rng.split("word", k)
        boost = 1.0 + corruption.distortion_weight * quad_distortion(
            word.quad, len(word.text), corruption.char_aspect)
        if wrng.random() < min(corruption.drop_rate * boost, 1.0):
            continue
        p_char = min(corruption.char_error_rate * boost, 1.0)
        chars = []
        for ch in word.text:
            r = wrng.random()
            if r < p_char / 3.0:
                continue  # deletion
            if r < 2.0 * p_char / 3.0:
                chars.append(wrng.choice(_OCR_CHARSET))  # substitution
            else:
                chars.append(ch)
                if r < p_char:
                    chars.append(wrng.choice(_OCR_CHARSET))  # trailing insertion
        text = "".join(chars) or wrng.choice(_OCR_CHARSET)
        quad = np.asarray(word.quad, dtype=np.float64)
        if corruption.jitter > 0:
            quad = quad + corruption.jitter * (wrng.uniform_array((4, 2)) * 2.0 - 1.0)
        out.append(WordBox(np.clip(quad, 0.0, 1.0), text))
    return out


# ---------------------------------------------------------------------------
# Full protocol.
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    ed: float | None
    epe: float
    ms_ssim: float
    counts: dict
    words: list
    meta: dict = field(default_factory=dict)

    def to_jsonable(self) -> dict:
        return {
            "ed": self.ed,
            "epe": self.epe,
            "ms_ssim": self.ms_ssim,
            "counts": dict(self.counts),
            "words": [dict(w) for w in self.words],
            "meta": dict(self.meta),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_jsonable(), sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_jsonable(d) -> "EvalReport":
        return EvalReport(d["ed"], d["epe"], d["ms_ssim"], dict(d["counts"]),
                          [dict(w) for w in d["words"]], dict(d.get("meta", {})))


def transfer_words(words, gt_map: BackwardMap, pred_inverse) -> list[WordBox]:
    """Map flat-domain GT words into the candidate's rectified domain.

    A document point u sits at gt_map(u) in the input image; the candidate
    rectification places that input point at pred_inverse(input). Quads are
    mapped vertex-wise.
    """
    out = []
    for w in words:
        q = np.asarray(w.quad, dtype=np.float64)
        xy = sample_many(gt_map.values, q[:, 0], q[:, 1])
        uv = sample_many(pred_inverse.values, xy[:, 0], xy[:, 1])
        out.append(WordBox(np.clip(uv, 0.0, 1.0), w.text))
    return out


def evaluate(sample: SampleBundle, predicted: BackwardMap,
             ocr: OcrConfig | None = None, seed: int = 0) -> EvalReport:
    """Run the full evaluation protocol for one candidate backward map.

    The input is rectified with both the candidate and the ground-truth map;
    simulated OCR reads words in both rectified domains (ground-truth words
    transferred through the candidate rectification on the candidate side);
    boxes are matched in the input domain and scored.
    """
    ocr = (ocr or OcrConfig()).validate()
    res = sample.config.resolution
    if (predicted.height, predicted.width) != (res, res):
        raise ShapeError(
            f"predicted map is {predicted.height}x{predicted.width}, "
            f"sample is {res}x{res}"
        )

    pred_inverse = invert_forward_map(_as_forward(predicted), res, res)
    pred_words_clean = transfer_words(sample.words, sample.backward, pred_inverse)
    rng = SplitRng(seed)
    gt_words = simulate_ocr(sample.words, ocr, rng.split("gt").seed)
    pred_words = simulate_ocr(pred_words_clean, ocr, rng.split("pred").seed)

    diagnostics: dict = {}
    pairs = match_word_boxes(pred_words, predicted, gt_words, sample.backward, diagnostics)
    ed = edit_distance_score(pairs, len(gt_words), len(pred_words))

    rect_pred = apply_backward_map(sample.warped_image, predicted, fill=255)
    rect_gt = apply_backward_map(sample.warped_image, sample.backward, fill=255)
    report = EvalReport(
        ed=ed,
        epe=epe(sample.backward, predicted),
        ms_ssim=ms_ssim_auto(rect_pred, rect_gt),
        counts={
            "matched": len(pairs),
            "unmatched_gt": len(gt_words) - len(pairs),
            "unmatched_pred": len(pred_words) - len(pairs),
        },
        words=[
            {"gt": p.gt_index, "pred": p.pred_index, "ed": p.edit_distance, "area": p.area}
            for p in pairs
        ],
        meta={
            "resolution": res,
            "epe_units": "normalized",
            "msssim_weights": list(MSSSIM_WEIGHTS),
            "ocr": {"char_error_rate": ocr.char_error_rate, "drop_rate": ocr.drop_rate,
                    "jitter": ocr.jitter, "distortion_weight": ocr.distortion_weight},
            "seed": seed,
            "toolkit_version": TOOLKIT_VERSION,
            **diagnostics,
        },
    )
    return report


def _as_forward(bmap: BackwardMap):
    """Reinterpret a backward map as a forward field for inversion purposes."""
    from .warpfield import ForwardMap

    return ForwardMap(bmap.values, bmap.valid)


def identity_map(resolution: int) -> BackwardMap:
    """The 'no rectification' baseline."""
    return identity_backward_map(resolution, resolution)
