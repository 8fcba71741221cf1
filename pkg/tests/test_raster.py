import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from warpbench import (
    BinaryMask, FloatMap2D, FormatError, Image, ShapeError, ValidationError,
    bilinear_sample, fmap_bytes, fmap_from_bytes, pixel_centers, read_fmap,
    read_image, sample_many, write_fmap, write_image,
)


def finite_f32(h, w, c, seed):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((h, w, c)) * 10).astype(np.float32)


def test_fmap_known_bytes():
    m = FloatMap2D(np.array([[[1.0]]], dtype=np.float32))
    expect = bytes.fromhex(
        "464d4150" "01000000" "01000000" "01000000" "01000000" "0000803f"
    )
    assert fmap_bytes(m) == expect


@settings(max_examples=100)
@given(
    h=st.integers(1, 9),
    w=st.integers(1, 9),
    c=st.integers(1, 4),
    seed=st.integers(0, 2**31),
)
def test_fmap_round_trip_bit_identity(h, w, c, seed):
    m = FloatMap2D(finite_f32(h, w, c, seed))
    back = fmap_from_bytes(fmap_bytes(m))
    assert back.data.tobytes() == m.data.tobytes()
    assert back.data.shape == m.data.shape


def test_fmap_file_round_trip(tmp_path):
    m = FloatMap2D(finite_f32(5, 7, 2, 0))
    write_fmap(m, tmp_path / "m.fmap")
    assert read_fmap(tmp_path / "m.fmap") == m


def test_fmap_bad_magic():
    raw = b"XMAP" + bytes(16) + bytes(4)
    with pytest.raises(FormatError):
        fmap_from_bytes(raw)


def test_fmap_truncated_payload():
    good = fmap_bytes(FloatMap2D(finite_f32(3, 3, 1, 1)))
    with pytest.raises(FormatError):
        fmap_from_bytes(good[:-2])
    with pytest.raises(FormatError):
        fmap_from_bytes(good[:10])


def test_fmap_dimension_overflow():
    import struct

    raw = b"FMAP" + struct.pack("<IIII", 1, 2**30, 2**30, 4) + b"\x00" * 16
    with pytest.raises(FormatError):
        fmap_from_bytes(raw)


def test_construction_rejects_non_finite():
    bad = np.ones((2, 2, 1), dtype=np.float32)
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValidationError):
        FloatMap2D(bad)
    bad[0, 0, 0] = np.inf
    with pytest.raises(ValidationError):
        FloatMap2D(bad)


def test_binary_mask_rejects_other_values():
    with pytest.raises(ValidationError):
        BinaryMask(np.full((2, 2), 2, dtype=np.uint8))


def test_image_channel_validation():
    with pytest.raises(ShapeError):
        Image(np.zeros((4, 4, 2), dtype=np.uint8))


def test_bilinear_constant_field():
    m = FloatMap2D(np.full((4, 5, 1), 7.0, dtype=np.float32))
    for x, y in [(0.0, 0.0), (0.3, 0.9), (1.0, 0.2), (0.51, 0.49)]:
        assert bilinear_sample(m, x, y)[0] == pytest.approx(7.0, abs=1e-9)


def test_bilinear_linear_ramp():
    # map value = its own x coordinate; bilinear reproduces the ramp
    xs, _ = pixel_centers(4, 4)
    m = FloatMap2D(xs[:, :, None].astype(np.float32))
    assert bilinear_sample(m, 0.25, 0.5)[0] == pytest.approx(0.25, abs=1e-6)


def test_bilinear_exact_at_pixel_centers():
    m = FloatMap2D(finite_f32(6, 7, 3, 2))
    xs, ys = pixel_centers(6, 7)
    got = sample_many(m, xs, ys)
    assert np.array_equal(got.astype(np.float32), m.data)


@settings(max_examples=60)
@given(
    a=st.floats(-3, 3), b=st.floats(-3, 3), c=st.floats(-3, 3),
    px=st.floats(0.12, 0.88), py=st.floats(0.12, 0.88),
)
def test_bilinear_exact_for_affine_fields(a, b, c, px, py):
    h = w = 8
    xs, ys = pixel_centers(h, w)
    m = FloatMap2D((a * xs + b * ys + c)[:, :, None].astype(np.float32))
    want = a * px + b * py + c
    got = bilinear_sample(m, px, py)[0]
    assert got == pytest.approx(want, abs=1e-6)


@settings(max_examples=60)
@given(x=st.floats(-2, 2), y=st.floats(-2, 2))
def test_bilinear_clamps_out_of_range(x, y):
    m = FloatMap2D(finite_f32(5, 5, 2, 3))
    got = bilinear_sample(m, x, y)
    want = bilinear_sample(m, min(max(x, 0.0), 1.0), min(max(y, 0.0), 1.0))
    assert np.allclose(got, want, atol=0)


@pytest.mark.parametrize("channels", [1, 3])
def test_image_io_round_trip(tmp_path, channels):
    rng = np.random.default_rng(7)
    img = Image(rng.integers(0, 256, (6, 9, channels), dtype=np.uint8))
    path = tmp_path / ("img.pgm" if channels == 1 else "img.ppm")
    write_image(img, path)
    assert read_image(path) == img


def test_image_io_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.ppm"
    path.write_bytes(b"P7\n2 2\n255\n" + bytes(12))
    with pytest.raises(FormatError):
        read_image(path)
