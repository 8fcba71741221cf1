import numpy as np
import pytest

from warpbench import (
    FormatError, Mesh, ShapeError, build_grid_mesh, curvature_mask,
    default_curvature_threshold, flat_grid_mesh, mean_curvature, read_mesh,
    write_mesh,
)


def test_build_2x2_degrees():
    m = flat_grid_mesh(2, 2)
    assert sorted(m.degrees().ravel().tolist()) == [2, 2, 2, 2]


def test_build_3x3_center_degree():
    m = flat_grid_mesh(3, 3)
    assert m.degrees()[1, 1] == 4


@pytest.mark.parametrize("rows, cols", [(2, 2), (3, 5), (7, 4), (10, 10)])
def test_handshake_identity(rows, cols):
    m = flat_grid_mesh(rows, cols)
    assert m.degrees().sum() == 2 * m.edge_count()
    assert m.edge_count() == rows * (cols - 1) + cols * (rows - 1)


def test_build_rejects_wrong_vertex_count():
    with pytest.raises(ShapeError):
        build_grid_mesh(3, 3, np.zeros((8, 3)))
    with pytest.raises(ShapeError):
        build_grid_mesh(1, 5, np.zeros((5, 3)))


def test_flat_interior_curvature_is_exactly_zero():
    h = mean_curvature(flat_grid_mesh(9, 9))
    assert np.all(h[1:-1, 1:-1] == 0.0)


def unit_fold_mesh():
    """3x3 unit-spacing grid folded 90 degrees along the middle column."""
    verts = []
    for r in range(3):
        for c in range(3):
            x, y = float(c), float(r)
            if c == 2:  # right column rotates up about the x=1 line
                verts.append([1.0, y, 1.0])
            else:
                verts.append([x, y, 0.0])
    return build_grid_mesh(3, 3, np.array(verts))


def test_crease_vertex_curvature_sqrt2():
    h = mean_curvature(unit_fold_mesh())
    assert h[1, 1] == pytest.approx(np.sqrt(2.0), abs=1e-9)


def test_boundary_edge_vertex_of_flat_unit_grid():
    verts = [[c, r, 0.0] for r in range(3) for c in range(3)]
    h = mean_curvature(build_grid_mesh(3, 3, np.array(verts, dtype=np.float64)))
    assert h[0, 1] == pytest.approx(1.0, abs=1e-12)  # top edge midpoint, 3 neighbors
    assert h[1, 0] == pytest.approx(1.0, abs=1e-12)


def test_rigid_invariance(rng):
    verts = rng.uniform(-1, 1, (6 * 7, 3))
    m = build_grid_mesh(6, 7, verts)
    theta, phi = 0.7, 0.3
    rz = np.array([[np.cos(theta), -np.sin(theta), 0],
                   [np.sin(theta), np.cos(theta), 0], [0, 0, 1]])
    rx = np.array([[1, 0, 0], [0, np.cos(phi), -np.sin(phi)],
                   [0, np.sin(phi), np.cos(phi)]])
    moved = verts @ (rz @ rx).T + np.array([0.3, -1.2, 2.0])
    h0 = mean_curvature(m)
    h1 = mean_curvature(build_grid_mesh(6, 7, moved))
    assert np.abs(h0 - h1).max() < 1e-9


def test_scale_covariance(rng):
    verts = rng.uniform(-1, 1, (5 * 5, 3))
    m = build_grid_mesh(5, 5, verts)
    s = 3.7
    h0 = mean_curvature(m)
    h1 = mean_curvature(build_grid_mesh(5, 5, verts * s))
    assert np.allclose(h1, s * h0, rtol=1e-12, atol=1e-12)


def test_locality(rng):
    verts = rng.uniform(-1, 1, (7 * 7, 3))
    h0 = mean_curvature(build_grid_mesh(7, 7, verts))
    moved = verts.copy()
    moved[3 * 7 + 3] += [0.5, 0.0, 0.2]  # vertex (3, 3)
    h1 = mean_curvature(build_grid_mesh(7, 7, moved))
    changed = np.abs(h1 - h0) > 1e-12
    ii, jj = np.nonzero(changed)
    assert len(ii) > 0
    assert all(abs(i - 3) + abs(j - 3) <= 1 for i, j in zip(ii, jj))


def test_mask_all_below_threshold():
    h = mean_curvature(unit_fold_mesh())
    mask = curvature_mask(h, unit_fold_mesh(), threshold=10.0, out_h=32, out_w=32)
    assert mask.count() == 0


def test_mask_threshold_zero_on_flat_sheet():
    m = flat_grid_mesh(17, 17)
    mask = curvature_mask(mean_curvature(m), m, threshold=0.0, out_h=64, out_w=64)
    assert mask.count() == 0  # boundary band excluded, interior exactly zero


def test_mask_single_fold_stays_near_crease():
    # fold along the vertical uv line u = 0.5 on a fine flat sheet
    rows = cols = 257
    m = flat_grid_mesh(rows, cols)
    verts = m.vertices.copy()
    right = verts[:, 0] > 0.5
    verts[right] = np.stack(
        [np.full(right.sum(), 0.5), verts[right, 1], verts[right, 0] - 0.5], axis=-1
    )
    folded = build_grid_mesh(rows, cols, verts)
    res = 64
    mask = curvature_mask(mean_curvature(folded), folded, threshold=None,
                          out_h=res, out_w=res)
    assert mask.count() > 0
    ii, jj = np.nonzero(mask.as_bool())
    dist_px = np.abs((jj + 0.5) - 0.5 * res)
    assert dist_px.max() <= 2.0


def test_default_threshold_is_three_median():
    h = np.array([[0, 0, 0, 0], [0, 2.0, 4.0, 0], [0, 6.0, 8.0, 0], [0, 0, 0, 0]])
    assert default_curvature_threshold(h) == pytest.approx(3 * 5.0)


def test_mesh_io_round_trip(tmp_path, rng):
    verts = rng.uniform(-1, 1, (4 * 6, 3)).astype(np.float32).astype(np.float64)
    m = build_grid_mesh(4, 6, verts)
    write_mesh(m, tmp_path / "m.bin")
    back = read_mesh(tmp_path / "m.bin")
    assert back.rows == 4 and back.cols == 6
    assert np.array_equal(back.vertices, verts)  # exact for f32-representable input


def test_mesh_io_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"MUSH" + bytes(12))
    with pytest.raises(FormatError):
        read_mesh(p)


def test_mesh_io_rejects_truncation(tmp_path, rng):
    m = build_grid_mesh(3, 3, rng.uniform(0, 1, (9, 3)))
    p = tmp_path / "m.bin"
    write_mesh(m, p)
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(FormatError):
        read_mesh(p)
