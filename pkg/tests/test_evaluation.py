import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_force_assignment, dp_levenshtein

from warpbench import (
    BackwardMap, BinaryMask, EvalReport, FloatMap2D, Image, OcrConfig, ShapeError,
    ValidationError, WordBox, apply_backward_map, edit_distance_score, epe, evaluate,
    hungarian_match, identity_backward_map, identity_map, levenshtein,
    match_word_boxes, ms_ssim, pixel_centers, polygon_intersection_area,
    quad_distortion, simulate_ocr,
)

UNIT_SQUARE = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]


# ---------------------------------------------------------------------------
# Polygon intersection.
# ---------------------------------------------------------------------------

def test_polygon_self_intersection_is_area():
    assert polygon_intersection_area(UNIT_SQUARE, UNIT_SQUARE) == pytest.approx(1.0, abs=1e-12)


def test_polygon_disjoint_is_zero():
    far = [(2.0, 0.0), (3.0, 0.0), (3.0, 1.0), (2.0, 1.0)]
    assert polygon_intersection_area(UNIT_SQUARE, far) == 0.0


def test_polygon_half_overlap_square():
    shifted = [(0.5, 0.0), (1.5, 0.0), (1.5, 1.0), (0.5, 1.0)]
    assert polygon_intersection_area(UNIT_SQUARE, shifted) == pytest.approx(0.5, abs=1e-9)


def test_polygon_degenerate_input_gives_zero():
    line = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]
    assert polygon_intersection_area(UNIT_SQUARE, line) == 0.0


def test_polygon_subset_containment():
    inner = [(0.25, 0.25), (0.75, 0.25), (0.75, 0.75), (0.25, 0.75)]
    got = polygon_intersection_area(inner, UNIT_SQUARE)
    assert got == pytest.approx(0.25, abs=1e-12)


@settings(max_examples=80)
@given(st.integers(0, 10_000))
def test_polygon_symmetry_and_bounds(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0, 1, (4, 2)) + [0.0, 0.0]
    q = rng.uniform(0, 1, (4, 2)) + [0.3, 0.1]
    ab = polygon_intersection_area(p, q)
    ba = polygon_intersection_area(q, p)
    assert ab == pytest.approx(ba, abs=1e-9)
    from warpbench import convex_hull, shoelace_area

    cap = min(shoelace_area(convex_hull(p)), shoelace_area(convex_hull(q)))
    assert 0.0 <= ab <= cap + 1e-9


def test_polygon_nonconvex_uses_hull_and_logs():
    bowtie = [(0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0)]
    diag = {}
    got = polygon_intersection_area(bowtie, UNIT_SQUARE, diag)
    assert got == pytest.approx(1.0, abs=1e-9)  # hull of the bowtie is the square
    assert diag["hull_substitutions"] == 1


def test_polygon_rejects_too_few_vertices():
    with pytest.raises(ShapeError):
        polygon_intersection_area([(0, 0), (1, 1)], UNIT_SQUARE)


# ---------------------------------------------------------------------------
# Hungarian assignment.
# ---------------------------------------------------------------------------

def test_hungarian_two_by_two():
    assert hungarian_match([[1.0, 2.0], [2.0, 1.0]]) == [(0, 0), (1, 1)]


def test_hungarian_diagonal_dominant_identity():
    c = np.full((4, 4), 10.0)
    np.fill_diagonal(c, 0.0)
    assert hungarian_match(c) == [(0, 0), (1, 1), (2, 2), (3, 3)]


def test_hungarian_empty():
    assert hungarian_match(np.zeros((0, 3))) == []
    assert hungarian_match([]) == []


def test_hungarian_rejects_non_finite():
    with pytest.raises(ValidationError):
        hungarian_match([[np.inf, 1.0], [1.0, 2.0]])


def test_hungarian_matches_brute_force_2x3(rng):
    c = rng.uniform(0, 1, (2, 3))
    got = hungarian_match(c)
    _, best = brute_force_assignment(c)
    assert sum(c[i, j] for i, j in got) == pytest.approx(best, abs=1e-12)


@pytest.mark.parametrize("trial", range(30))
def test_hungarian_matches_brute_force_random(trial):
    rng = np.random.default_rng(5000 + trial)
    n, m = rng.integers(1, 7), rng.integers(1, 7)
    c = rng.uniform(-5, 5, (n, m))
    got = hungarian_match(c)
    assert len(got) == min(n, m)
    assert len({i for i, _ in got}) == len(got)
    assert len({j for _, j in got}) == len(got)
    total = sum(c[i, j] for i, j in got)
    _, best = brute_force_assignment(c)
    assert total == pytest.approx(best, abs=1e-9)


# ---------------------------------------------------------------------------
# Levenshtein.
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("a, b, want", [
    ("", "abc", 3), ("abc", "abc", 0), ("kitten", "sitting", 3),
    ("abc", "", 3), ("flaw", "lawn", 2),
])
def test_levenshtein_cases(a, b, want):
    assert levenshtein(a, b) == want


@settings(max_examples=200)
@given(st.text(alphabet="abcde", max_size=12), st.text(alphabet="abcde", max_size=12))
def test_levenshtein_matches_dp_oracle(a, b):
    assert levenshtein(a, b) == dp_levenshtein(a, b)


@settings(max_examples=200)
@given(st.text(alphabet="abc", max_size=8), st.text(alphabet="abc", max_size=8),
       st.text(alphabet="abc", max_size=8))
def test_levenshtein_metric_axioms(a, b, c):
    dab = levenshtein(a, b)
    assert dab == levenshtein(b, a)
    assert (dab == 0) == (a == b)
    assert dab <= levenshtein(a, c) + levenshtein(c, b)


# ---------------------------------------------------------------------------
# Word matching and scores.
# ---------------------------------------------------------------------------

def grid_words(n, text_prefix="w"):
    words = []
    for k in range(n):
        x0, y0 = 0.1 + 0.15 * (k % 5), 0.1 + 0.2 * (k // 5)
        quad = np.array([[x0, y0], [x0 + 0.1, y0], [x0 + 0.1, y0 + 0.05], [x0, y0 + 0.05]])
        words.append(WordBox(quad, f"{text_prefix}{k}"))
    return words


def test_match_identical_boxes_perfect():
    words = grid_words(6)
    ident = identity_backward_map(64, 64)
    pairs = match_word_boxes(words, ident, words, ident)
    assert len(pairs) == 6
    assert all(p.edit_distance == 0.0 for p in pairs)
    assert all(p.pred_index == p.gt_index for p in pairs)
    for p in pairs:
        w = words[p.gt_index]
        own = (w.quad[1, 0] - w.quad[0, 0]) * (w.quad[2, 1] - w.quad[1, 1])
        assert p.area == pytest.approx(own, rel=1e-6)


def test_match_disjoint_zero():
    a = grid_words(3)
    b = [WordBox(w.quad + [0.0, 0.5], w.text) for w in grid_words(3)]
    ident = identity_backward_map(64, 64)
    assert match_word_boxes(a, ident, b, ident) == []


def test_match_jittered_equals_exhaustive(rng):
    ident = identity_backward_map(64, 64)
    gt = grid_words(5)
    jittered = []
    for k, w in enumerate(rng.permutation(5)):
        q = gt[w].quad + rng.uniform(-0.01, 0.01, (4, 2))
        jittered.append(WordBox(np.clip(q, 0, 1), gt[w].text))
    pairs = match_word_boxes(jittered, ident, gt, ident)
    areas = np.zeros((5, 5))
    for i, pw in enumerate(jittered):
        for j, gw in enumerate(gt):
            areas[i, j] = polygon_intersection_area(pw.quad, gw.quad)
    oracle, _ = brute_force_assignment(-areas)
    assert sorted((p.pred_index, p.gt_index) for p in pairs) == oracle
    assert all(p.edit_distance == 0.0 for p in pairs)


def test_edit_distance_score_cases():
    from warpbench import MatchPair

    assert edit_distance_score([MatchPair(0, 0, 1.0, 0.0)], 1, 1) == 0.0
    assert edit_distance_score([], 3, 0) == 1.0
    assert edit_distance_score([MatchPair(0, 0, 1.0, 0.0)], 2, 1) == 0.5
    assert edit_distance_score([], 0, 4) is None


# ---------------------------------------------------------------------------
# EPE.
# ---------------------------------------------------------------------------

def as_map(vals, valid=None):
    h, w = vals.shape[:2]
    mask = BinaryMask(np.ones((h, w), np.uint8) if valid is None else valid)
    return BackwardMap(FloatMap2D(vals.astype(np.float32)), mask)


def test_epe_identical_zero():
    m = identity_backward_map(16, 16)
    assert epe(m, m) == 0.0


def test_epe_three_four_five():
    xs, ys = pixel_centers(16, 16)
    a = as_map(np.stack([xs * 0.8, ys * 0.8], -1))
    b = as_map(np.stack([xs * 0.8 + 0.03, ys * 0.8 + 0.04], -1))
    assert epe(a, b) == pytest.approx(0.05, abs=1e-6)
    assert epe(b, a) == pytest.approx(epe(a, b), abs=0)


def test_epe_triangle_inequality(rng):
    xs, ys = pixel_centers(12, 12)
    maps = []
    for _ in range(3):
        dx = rng.uniform(-0.04, 0.04, xs.shape)
        dy = rng.uniform(-0.04, 0.04, xs.shape)
        maps.append(as_map(np.stack([0.1 + 0.8 * xs + dx, 0.1 + 0.8 * ys + dy], -1)))
    a, b, c = maps
    assert epe(a, b) <= epe(a, c) + epe(c, b) + 1e-12


def test_epe_shape_and_validity_errors():
    a = identity_backward_map(8, 8)
    with pytest.raises(ShapeError):
        epe(a, identity_backward_map(9, 9))
    xs, ys = pixel_centers(8, 8)
    left = np.zeros((8, 8), np.uint8)
    left[:, :4] = 1
    right = 1 - left
    with pytest.raises(ValidationError):
        epe(as_map(np.stack([xs, ys], -1), left), as_map(np.stack([xs, ys], -1), right))


# ---------------------------------------------------------------------------
# MS-SSIM.
# ---------------------------------------------------------------------------

def checkerboard(res=192, period=8, lo=40, hi=200):
    i, j = np.indices((res, res))
    vals = np.where(((i // period) + (j // period)) % 2 == 0, hi, lo)
    return Image(vals[:, :, None].astype(np.uint8))


def test_msssim_identical_is_one(small_bundle):
    img = small_bundle.flat_image
    assert ms_ssim(img, img, levels=3) == 1.0
    const = Image(np.full((192, 192, 1), 77, np.uint8))
    assert ms_ssim(const, const) == 1.0


def test_msssim_negative_image_scores_low():
    img = checkerboard()
    neg = Image(255 - img.data)
    assert ms_ssim(img, neg) < 0.1


def test_msssim_affine_shift_invariance(rng):
    base = (rng.uniform(0, 1, (192, 192, 1)) * 120 + 60).astype(np.uint8)
    other = np.clip(base.astype(np.int64) + rng.integers(-10, 11, base.shape), 60, 180)
    a, b = Image(base), Image(other.astype(np.uint8))
    ref = ms_ssim(a, b)
    for beta in (-25, 12, 25):
        sa = Image((base.astype(np.int64) + beta).astype(np.uint8))
        sb = Image((other + beta).astype(np.uint8))
        assert ms_ssim(sa, sb) == pytest.approx(ref, abs=1e-3)


def test_msssim_level_count_error():
    img = checkerboard(res=100)
    with pytest.raises(ShapeError):
        ms_ssim(img, img, levels=5)  # needs 176 px
    assert ms_ssim(img, img, levels=3) == 1.0


def test_msssim_shape_mismatch():
    with pytest.raises(ShapeError):
        ms_ssim(checkerboard(192), checkerboard(256))


def test_msssim_rectification_ordering(small_bundle):
    b = small_bundle
    rect = apply_backward_map(b.warped_image, b.backward, fill=255)
    from warpbench.evaluation import ms_ssim_auto

    assert ms_ssim_auto(b.flat_image, rect) > ms_ssim_auto(b.flat_image, b.warped_image)


def test_msssim_bias_toward_smooth_textures(small_bundle):
    # the same warp hurts a textured page much more than a smooth one
    b = small_bundle
    res = b.config.resolution
    ys = np.linspace(170, 250, res)
    smooth = Image(np.tile(ys[:, None], (1, res))[:, :, None].astype(np.uint8))
    warped_smooth = apply_backward_map(smooth, b.forward, fill=60)
    warped_text = b.warped_image
    from warpbench.evaluation import ms_ssim_auto

    assert ms_ssim_auto(smooth, warped_smooth) > ms_ssim_auto(b.flat_image, warped_text)


# ---------------------------------------------------------------------------
# Simulated OCR.
# ---------------------------------------------------------------------------

def test_simulate_ocr_zero_rates_identity():
    words = grid_words(5)
    out = simulate_ocr(words, OcrConfig(), seed=3)
    assert [w.text for w in out] == [w.text for w in words]
    assert all(np.array_equal(a.quad, b.quad) for a, b in zip(out, words))


def test_simulate_ocr_drop_all():
    assert simulate_ocr(grid_words(4), OcrConfig(drop_rate=1.0), seed=1) == []


def test_simulate_ocr_deterministic():
    cfg = OcrConfig(char_error_rate=0.3, drop_rate=0.2, jitter=0.01)
    a = simulate_ocr(grid_words(8), cfg, seed=9)
    b = simulate_ocr(grid_words(8), cfg, seed=9)
    assert [w.text for w in a] == [w.text for w in b]
    assert all(np.array_equal(x.quad, y.quad) for x, y in zip(a, b))


def test_simulate_ocr_rate_validation():
    with pytest.raises(ValidationError):
        simulate_ocr(grid_words(1), OcrConfig(drop_rate=1.5), seed=0)


def test_quad_distortion_signals():
    rect = np.array([[0.2, 0.2], [0.4, 0.2], [0.4, 0.25], [0.2, 0.25]])
    assert quad_distortion(rect) == pytest.approx(0.0, abs=1e-9)
    c, s = np.cos(0.4), np.sin(0.4)
    center = rect.mean(axis=0)
    rot = (rect - center) @ np.array([[c, -s], [s, c]]).T + center
    assert quad_distortion(rot) > 0.1
    squashed = rect * [1.0, 0.5]
    n_chars = 4
    aspect = (0.2 / n_chars) / 0.05
    assert quad_distortion(squashed, n_chars, aspect) > 0.5
    assert quad_distortion(rect, n_chars, aspect) == pytest.approx(0.0, abs=1e-9)


# ---------------------------------------------------------------------------
# Full protocol.
# ---------------------------------------------------------------------------

def test_evaluate_zero_at_truth(small_bundle):
    rep = evaluate(small_bundle, small_bundle.backward, ocr=OcrConfig(), seed=0)
    assert rep.ed == 0.0
    assert rep.epe == 0.0
    assert rep.ms_ssim == pytest.approx(1.0, abs=1e-6)
    assert rep.counts["unmatched_gt"] == 0


def test_evaluate_identity_strictly_worse(small_bundle):
    ocr = OcrConfig(char_error_rate=0.08, drop_rate=0.08)
    rid = evaluate(small_bundle, identity_map(small_bundle.config.resolution),
                   ocr=ocr, seed=4)
    rgt = evaluate(small_bundle, small_bundle.backward, ocr=ocr, seed=4)
    assert rid.ed > rgt.ed
    assert rid.epe > rgt.epe
    assert rid.ms_ssim < 1.0


def test_evaluate_shape_mismatch_names_shapes(small_bundle):
    with pytest.raises(ShapeError) as exc:
        evaluate(small_bundle, identity_map(64))
    msg = str(exc.value)
    assert "64x64" in msg and "128x128" in msg


def test_report_json_round_trip(small_bundle):
    rep = evaluate(small_bundle, small_bundle.backward,
                   ocr=OcrConfig(char_error_rate=0.05), seed=2)
    back = EvalReport.from_jsonable(__import__("json").loads(rep.to_json()))
    assert back.to_json() == rep.to_json()
