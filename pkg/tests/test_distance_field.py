import math
import struct

import numpy as np
import pytest

from dfloc.distance_field import (
    GRID_MAGIC,
    DfGrid,
    GridDimensionError,
    GridMagicError,
    GridSpec,
    GridTruncatedError,
    GridVersionError,
    build_grid,
    fit_cell_coeffs,
    load_grid,
    plan_grid,
    query,
    query_many,
    save_grid,
)
from dfloc.geometry import Frame, FrameError, PointCloud
from dfloc.nnsearch import brute_force_distances

UNIT_CUBE = PointCloud(
    np.array([[x, y, z] for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)]),
    Frame.MAP,
)


def _corner_offsets(res):
    # x fastest, then y, then z
    return np.array(
        [[i * res, j * res, k * res] for k in (0, 1) for j in (0, 1) for i in (0, 1)]
    )


def test_plan_grid_exact_tiling():
    spec = plan_grid(UNIT_CUBE, 0.5, margin=0.0)
    assert (spec.nx, spec.ny, spec.nz) == (2, 2, 2)
    assert np.allclose(spec.origin, [0.0, 0.0, 0.0])


def test_plan_grid_with_margin():
    spec = plan_grid(UNIT_CUBE, 0.5, margin=0.5)
    assert (spec.nx, spec.ny, spec.nz) == (4, 4, 4)
    assert np.allclose(spec.origin, [-0.5, -0.5, -0.5])


def test_plan_grid_degenerate_map():
    cloud = PointCloud(np.zeros((5, 3)), Frame.MAP)
    spec = plan_grid(cloud, 0.1, margin=0.0)
    assert (spec.nx, spec.ny, spec.nz) == (2, 2, 2)


def test_fit_constant_corners():
    coeffs = fit_cell_coeffs(np.full(8, 3.25), 0.5)
    assert coeffs[0] == pytest.approx(3.25)
    assert np.abs(coeffs[1:]).max() == 0.0


def test_fit_linear_in_x():
    res = 0.5
    corners = _corner_offsets(res)[:, 0]  # distance equals local x coordinate
    coeffs = fit_cell_coeffs(corners, res)
    assert coeffs[1] == pytest.approx(1.0)
    assert abs(coeffs[0]) < 1e-12 and np.abs(coeffs[2:]).max() < 1e-12


def test_fit_matches_linear_solve_oracle():
    rng = np.random.default_rng(11)
    res = 0.37
    offs = _corner_offsets(res)
    # design matrix of the trilinear basis at the 8 corners
    x, y, z = offs[:, 0], offs[:, 1], offs[:, 2]
    design = np.stack([np.ones(8), x, y, z, x * y, x * z, y * z, x * y * z], axis=1)
    for _ in range(50):
        corners = rng.uniform(0, 4, size=8)
        expected = np.linalg.solve(design, corners)
        got = fit_cell_coeffs(corners, res)
        assert np.abs(got - expected).max() < 1e-9


def test_corner_reconstruction(small_grid):
    rng = np.random.default_rng(12)
    spec = small_grid.spec
    offs = _corner_offsets(spec.resolution)
    for _ in range(100):
        i, j, k = (rng.integers(0, n) for n in (spec.nx, spec.ny, spec.nz))
        base = spec.origin + np.array([i, j, k]) * spec.resolution
        vals, _, inside = query_many(small_grid, base + offs)
        assert inside.all()
        stored = np.array(
            [small_grid.node_distances[i + di, j + dj, k + dk]
             for dk in (0, 1) for dj in (0, 1) for di in (0, 1)]
        )
        assert np.abs(vals - stored).max() < 1e-9


def test_single_point_map_node_distances():
    cloud = PointCloud(np.array([[1.0, 1.0, 1.0]]), Frame.MAP)
    spec = GridSpec(np.array([0.0, 0.0, 0.0]), 0.5, 4, 4, 4)
    grid = build_grid(cloud, spec)
    assert grid.node_distances[2, 2, 2] == 0.0
    assert grid.node_distances[3, 2, 2] == pytest.approx(0.5)
    assert grid.node_distances[3, 3, 2] == pytest.approx(0.5 * math.sqrt(2))


def test_node_exactness_small():
    rng = np.random.default_rng(13)
    cloud = PointCloud(rng.uniform(0, 3, size=(500, 3)), Frame.MAP)
    spec = plan_grid(cloud, 0.4, margin=0.5)
    grid = build_grid(cloud, spec)
    oracle = brute_force_distances(cloud, spec.node_coordinates())
    assert np.abs(grid.node_distances.ravel() - oracle).max() < 1e-9


def test_build_requires_map_frame():
    cloud = PointCloud(np.zeros((4, 3)), Frame.BODY)
    with pytest.raises(FrameError):
        build_grid(cloud, GridSpec(np.zeros(3), 0.5, 2, 2, 2))


def test_query_at_nodes_returns_stored_values(small_grid):
    spec = small_grid.spec
    nodes = spec.node_coordinates()
    rng = np.random.default_rng(14)
    pick = rng.choice(len(nodes), size=500, replace=False)
    vals, _, inside = query_many(small_grid, nodes[pick])
    assert inside.all()
    assert np.abs(vals - small_grid.node_distances.ravel()[pick]).max() < 1e-9


def test_query_outside_grid_is_zero(small_grid):
    s = query(small_grid, small_grid.spec.origin - 1.0)
    assert s.value == 0.0 and not s.inside and np.abs(s.gradient).max() == 0.0


def test_query_on_upper_boundary_is_inside(small_grid):
    s = query(small_grid, small_grid.spec.upper)
    assert s.inside


def test_gradient_matches_finite_differences(small_grid):
    rng = np.random.default_rng(15)
    spec = small_grid.spec
    h = 1e-6
    count = 0
    while count < 1000:
        p = rng.uniform(spec.origin + 0.01, spec.upper - 0.01)
        local = (p - spec.origin) / spec.resolution
        frac = local - np.floor(local)
        if (frac * spec.resolution < 1e-4).any() or ((1 - frac) * spec.resolution < 1e-4).any():
            continue
        count += 1
        s = query(small_grid, p)
        for axis in range(3):
            e = np.zeros(3)
            e[axis] = h
            fd = (query(small_grid, p + e).value - query(small_grid, p - e).value) / (2 * h)
            assert abs(s.gradient[axis] - fd) < 1e-5


def test_interpolation_error_bound(small_scene, small_grid):
    rng = np.random.default_rng(16)
    spec = small_grid.spec
    pts = rng.uniform(spec.origin, spec.upper, size=(2000, 3))
    vals, _, inside = query_many(small_grid, pts)
    assert inside.all()
    truth = brute_force_distances(small_scene.map, pts)
    err = np.abs(vals - truth)
    assert err.max() <= spec.resolution * math.sqrt(3.0)


def test_field_lipschitz_on_lattice(small_grid):
    res = small_grid.spec.resolution
    bound = res * math.sqrt(3.0) + 1e-9
    nd = small_grid.node_distances
    for axis in range(3):
        diff = np.abs(np.diff(nd, axis=axis))
        assert diff.max() <= bound


def test_face_continuity(small_grid):
    rng = np.random.default_rng(17)
    spec = small_grid.spec
    res = spec.resolution
    for _ in range(200):
        i = rng.integers(1, spec.nx)  # interior face x = origin + i*res
        y = rng.uniform(spec.origin[1], spec.upper[1])
        z = rng.uniform(spec.origin[2], spec.upper[2])
        x = spec.origin[0] + i * res
        p = np.array([x, y, z])
        # evaluate via both adjacent cells by nudging the lookup index only
        left = _eval_in_cell(small_grid, p, np.array([i - 1, None, None]))
        right = _eval_in_cell(small_grid, p, np.array([i, None, None]))
        assert left == pytest.approx(right, abs=1e-9)


def _eval_in_cell(grid, p, forced):
    spec = grid.spec
    rel = (p - spec.origin) / spec.resolution
    idx = np.floor(rel).astype(int)
    idx = np.minimum(idx, spec.counts - 1)
    for a, f in enumerate(forced):
        if f is not None:
            idx[a] = f
    local = p - (spec.origin + idx * spec.resolution)
    c = grid.coeffs[idx[0], idx[1], idx[2]]
    x, y, z = local
    return (
        c[0] + c[1] * x + c[2] * y + c[3] * z
        + c[4] * x * y + c[5] * x * z + c[6] * y * z + c[7] * x * y * z
    )


def test_non_negative_everywhere(small_grid):
    rng = np.random.default_rng(18)
    spec = small_grid.spec
    pts = rng.uniform(spec.origin - 1, spec.upper + 1, size=(5000, 3))
    vals, _, _ = query_many(small_grid, pts)
    assert vals.min() >= 0.0


def test_save_load_round_trip(tmp_path, small_grid):
    path = tmp_path / "grid.df"
    save_grid(small_grid, path)
    loaded = load_grid(path)
    assert loaded.spec.resolution == small_grid.spec.resolution
    assert loaded.spec.margin == small_grid.spec.margin
    assert np.array_equal(loaded.spec.origin, small_grid.spec.origin)
    assert (loaded.spec.nx, loaded.spec.ny, loaded.spec.nz) == (
        small_grid.spec.nx, small_grid.spec.ny, small_grid.spec.nz)
    assert np.array_equal(loaded.node_distances, small_grid.node_distances)
    assert np.array_equal(loaded.coeffs, small_grid.coeffs)


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.df"
    path.write_bytes(b"NOTAGRID" + b"\0" * 64)
    with pytest.raises(GridMagicError):
        load_grid(path)


def test_load_rejects_bad_version(tmp_path, small_grid):
    path = tmp_path / "v9.df"
    save_grid(small_grid, path)
    raw = bytearray(path.read_bytes())
    struct.pack_into("<I", raw, len(GRID_MAGIC), 9)
    path.write_bytes(bytes(raw))
    with pytest.raises(GridVersionError):
        load_grid(path)


def test_load_rejects_truncated_payload(tmp_path, small_grid):
    path = tmp_path / "trunc.df"
    save_grid(small_grid, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-16])
    with pytest.raises(GridTruncatedError):
        load_grid(path)
    path.write_bytes(raw + b"\0" * 8)
    with pytest.raises(GridTruncatedError):
        load_grid(path)


def test_load_rejects_dimension_overflow(tmp_path, small_grid):
    path = tmp_path / "dims.df"
    save_grid(small_grid, path)
    raw = bytearray(path.read_bytes())
    offset = len(GRID_MAGIC) + struct.calcsize("<I3ddd")
    struct.pack_into("<3Q", raw, offset, 1 << 40, 1 << 40, 1 << 40)
    path.write_bytes(bytes(raw))
    with pytest.raises(GridDimensionError):
        load_grid(path)


def test_grid_validates_shapes():
    spec = GridSpec(np.zeros(3), 0.5, 2, 2, 2)
    with pytest.raises(ValueError):
        DfGrid(spec, np.zeros((3, 3, 3)), np.zeros((2, 2, 2, 7)))
    with pytest.raises(ValueError):
        DfGrid(spec, -np.ones((3, 3, 3)), np.zeros((2, 2, 2, 8)))
