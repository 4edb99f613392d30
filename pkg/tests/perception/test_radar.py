# tests/perception/test_radar.py

import itertools
import math

import numpy as np
import pytest
from PIL import Image
from pydantic import ValidationError
from scipy import ndimage

from common.errors import ParameterError
from perception.labels import GridGeometry
from perception.radar import (
    CfarParams,
    RadarImage,
    cfar_alpha,
    cfar_threshold,
    closest_obstacles,
    convex_hull,
    extract_obstacles,
    hull_distance,
    morph_filter,
    point_in_hull,
    polar_to_cartesian,
    polygon_area,
    read_radar_image,
    write_mask_pgm,
    write_radar_image,
)


def _image(intensities, res=0.1, min_range=0.0) -> RadarImage:
    return RadarImage.full_circle(np.asarray(intensities, dtype=float), res, min_range)


# --- Polar / Cartesian ---

def test_single_hot_bin_lands_at_its_position():
    """Tests that a hot bin at 20 m, azimuth 0 projects to cells around (20, 0)."""
    img = _image(np.zeros((300, 360)))
    i, j, ok = img.bin_of(np.array([20.05]), np.array([0.0]))
    assert ok[0]
    img.intensities[i[0], j[0]] = 5.0

    grid = polar_to_cartesian(img, cell_size=0.1, extent=25.0)
    cx, cy = grid.geometry.centers()
    lit = grid.intensities == 5.0

    assert lit.any()
    half_arc = 20.1 * img.azimuth_resolution / 2
    assert np.all(np.abs(cx[lit] - 20.05) <= 0.1)
    assert np.all(np.abs(cy[lit]) <= half_arc + 0.1)


def test_uniform_image_fills_valid_cells():
    """Tests that a uniform polar image gives the same value on every valid cell and 0 outside."""
    img = _image(np.full((50, 72), 3.0), res=0.2, min_range=1.0)
    grid = polar_to_cartesian(img, cell_size=0.25)
    assert np.all(grid.intensities[grid.valid] == 3.0)
    assert np.all(grid.intensities[~grid.valid] == 0.0)
    r = np.hypot(*grid.geometry.centers())
    assert not np.any(grid.valid & ((r < 1.0) | (r >= img.max_range)))


def test_polar_to_cartesian_rejects_bad_cell_size():
    """Tests the cell-size check."""
    with pytest.raises(ParameterError, match="cell_size"):
        polar_to_cartesian(_image(np.ones((30, 8))), cell_size=0.0)


def test_radar_image_rejects_negative_intensity():
    """Tests the non-negativity check."""
    with pytest.raises(ParameterError, match="non-negative"):
        _image(-np.ones((30, 8)))


def test_radar_image_model_rejects_invalid_intensities():
    """Tests that a RadarImage cannot be built directly from negative or non-2D intensities."""
    with pytest.raises(ValidationError, match="non-negative"):
        RadarImage(intensities=-np.ones((30, 8)), range_resolution=0.1, min_range=3.0, azimuth_resolution=math.pi / 4)
    with pytest.raises(ValidationError, match="2D"):
        RadarImage(intensities=np.ones(30), range_resolution=0.1, min_range=3.0, azimuth_resolution=math.pi / 4)


# --- CFAR ---

def test_cfar_alpha_closed_form():
    """Tests the scale factor for 16 training cells."""
    assert float(cfar_alpha(16, 1e-2)) == pytest.approx(16 * (100 ** (1 / 16) - 1), rel=1e-12)
    assert float(cfar_alpha(16, 1e-2)) < 5.35


def test_cfar_silent_on_zero_image():
    """Tests that an all-zero image has no detections."""
    assert not cfar_threshold(_image(np.zeros((100, 16))), CfarParams()).any()


def test_cfar_detects_single_strong_cell():
    """Tests that one cell at 100x a uniform floor is the only detection."""
    x = np.ones((100, 16))
    x[50, 7] = 100.0
    detections = cfar_threshold(_image(x), CfarParams(n_train=8, n_guard=2, p_fa=1e-2))
    assert detections.sum() == 1
    assert detections[50, 7]


def test_cfar_false_alarm_rate_on_clutter(rng):
    """Tests the constant false-alarm rate on exponential clutter over 1e5 cells."""
    clutter = rng.exponential(1.0, size=(1000, 100))
    rate = cfar_threshold(_image(clutter), CfarParams(p_fa=1e-2)).mean()
    assert 0.007 <= rate <= 0.013


def test_cfar_window_must_fit():
    """Tests that a window longer than the range axis is rejected."""
    with pytest.raises(ParameterError, match="window"):
        cfar_threshold(_image(np.ones((20, 8))), CfarParams(n_train=8, n_guard=2))


# --- Morphology ---

def _disk_offsets(radius: int) -> list[tuple[int, int]]:
    return [(dr, dc) for dr in range(-radius, radius + 1) for dc in range(-radius, radius + 1) if dr * dr + dc * dc <= radius * radius]


def _erode(cells: set, radius: int) -> set:
    offsets = _disk_offsets(radius)
    return {p for p in cells if all((p[0] + dr, p[1] + dc) in cells for dr, dc in offsets)}


def _dilate(cells: set, radius: int) -> set:
    return {(p[0] + dr, p[1] + dc) for p in cells for dr, dc in _disk_offsets(radius)}


def _reference_filter(mask: np.ndarray, open_radius: int, min_area: int, close_radius: int) -> np.ndarray:
    """Set-based morphology on an unbounded zero background, cropped back to the mask."""
    cells = set(zip(*np.nonzero(mask)))
    opened = _dilate(_erode(cells, open_radius), open_radius)
    opened_mask = np.zeros_like(mask)
    for r, c in opened:
        if 0 <= r < mask.shape[0] and 0 <= c < mask.shape[1]:
            opened_mask[r, c] = True
    labels, n = ndimage.label(opened_mask, structure=np.ones((3, 3)))
    sizes = ndimage.sum(opened_mask, labels, index=range(1, n + 1))
    kept = np.isin(labels, [i + 1 for i, s in enumerate(sizes) if s >= min_area])
    closed = _erode(_dilate(set(zip(*np.nonzero(kept))), close_radius), close_radius)
    out = np.zeros_like(mask)
    for r, c in closed:
        if 0 <= r < mask.shape[0] and 0 <= c < mask.shape[1]:
            out[r, c] = True
    return out


def test_opening_removes_isolated_pixel():
    """Tests that a singleton does not survive an opening of radius 1."""
    mask = np.zeros((9, 9), dtype=bool)
    mask[4, 4] = True
    assert not morph_filter(mask, open_radius=1, min_area=0, close_radius=0).any()


def test_closing_bridges_one_pixel_gap():
    """Tests that two 3x3 blobs one pixel apart merge into one component."""
    mask = np.zeros((9, 11), dtype=bool)
    mask[3:6, 2:5] = True
    mask[3:6, 6:9] = True
    geometry = GridGeometry(origin_x=0.0, origin_y=0.0, cell_size=1.0, n_rows=9, n_cols=11)
    assert len(extract_obstacles(mask, geometry)) == 2
    closed = morph_filter(mask, open_radius=0, min_area=0, close_radius=1)
    assert len(extract_obstacles(closed, geometry)) == 1


def test_morph_filter_matches_stagewise_reference(rng):
    """Tests the full filter against set-based stage oracles on random noise fields."""
    for _ in range(5):
        mask = rng.random((24, 24)) < 0.45
        expected = _reference_filter(mask, open_radius=1, min_area=6, close_radius=1)
        np.testing.assert_array_equal(morph_filter(mask, 1, 6, 1), expected)


def test_morph_filter_stays_near_input(rng):
    """Tests that the output lies inside the input dilated by both radii."""
    mask = rng.random((30, 30)) < 0.4
    out = morph_filter(mask, 1, 4, 2)
    envelope = ndimage.binary_dilation(mask, iterations=3)
    assert np.all(envelope[out])


def test_morph_filter_rejects_negative_radius():
    """Tests the radius check."""
    with pytest.raises(ParameterError, match="radii"):
        morph_filter(np.zeros((5, 5), dtype=bool), -1, 0, 0)


# --- Geometry ---

def test_square_blob_centroid_and_hull():
    """Tests a 3x3 blob centred at (10, 0): centroid at the centre, hull on the corner cells."""
    geometry = GridGeometry(origin_x=5.05, origin_y=-2.05, cell_size=0.1, n_rows=41, n_cols=100)
    mask = np.zeros(geometry.shape, dtype=bool)
    mask[19:22, 48:51] = True

    (obstacle,) = extract_obstacles(mask, geometry)

    assert obstacle.centroid == pytest.approx((10.0, 0.0), abs=1e-9)
    assert len(obstacle.hull) == 4
    corners = sorted((round(x, 6), round(y, 6)) for x, y in obstacle.hull)
    assert corners == [(9.9, -0.1), (9.9, 0.1), (10.1, -0.1), (10.1, 0.1)]
    assert obstacle.member_cells == 9
    assert obstacle.area == pytest.approx(0.09)


def test_obstacles_ordered_by_range():
    """Tests nearest-first ordering and the closest-n selection."""
    geometry = GridGeometry(origin_x=0.0, origin_y=-2.0, cell_size=0.5, n_rows=8, n_cols=40)
    mask = np.zeros(geometry.shape, dtype=bool)
    mask[3:5, 29:31] = True
    mask[3:5, 15:17] = True
    mask[3:5, 5:7] = True

    obstacles = extract_obstacles(mask, geometry)

    ranges = [o.range for o in obstacles]
    assert ranges == sorted(ranges)
    assert ranges[1] == pytest.approx(8.0, abs=0.01)
    assert ranges[2] == pytest.approx(15.0, abs=0.01)
    assert [o.range for o in closest_obstacles(obstacles, 2)] == ranges[:2]
    assert extract_obstacles(np.zeros(geometry.shape, dtype=bool), geometry) == []


def test_l_shaped_blob_hull_contains_members():
    """Tests that every member cell centre of an L-shaped blob is inside or on its hull."""
    geometry = GridGeometry(origin_x=0.0, origin_y=0.0, cell_size=1.0, n_rows=10, n_cols=10)
    mask = np.zeros(geometry.shape, dtype=bool)
    mask[1:8, 2] = True
    mask[1, 2:7] = True

    (obstacle,) = extract_obstacles(mask, geometry)

    rows, cols = np.nonzero(mask)
    for r, c in zip(rows, cols):
        assert point_in_hull((c + 0.5, r + 0.5), obstacle.hull)
    assert polygon_area(obstacle.hull) == pytest.approx(12.0)


def test_convex_hull_drops_interior_and_collinear_points():
    """Tests the monotone-chain hull on a grid of points."""
    pts = list(itertools.product([0.0, 1.0, 2.0], [0.0, 1.0, 2.0]))
    assert sorted(convex_hull(pts)) == [(0.0, 0.0), (0.0, 2.0), (2.0, 0.0), (2.0, 2.0)]
    assert convex_hull([(1.0, 1.0)]) == [(1.0, 1.0)]


def test_hull_distance():
    """Tests zero distance inside and Euclidean distance outside a square."""
    square = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    d = hull_distance(np.array([[0.5, 0.5], [1.5, 0.5], [2.0, 2.0], [1.0, 0.5]]), square)
    np.testing.assert_allclose(d, [0.0, 0.5, math.sqrt(2.0), 0.0])
    assert np.isinf(hull_distance(np.array([[0.0, 0.0]]), [])[0])


# --- File formats ---

def test_radar_image_file_round_trip(tmp_path, rng):
    """Tests that a radar image reads back bit for bit."""
    img = RadarImage.full_circle(rng.exponential(1.0, (40, 12)), 0.1, 3.0)
    back = read_radar_image(write_radar_image(img, tmp_path / "radar.txt"))
    np.testing.assert_array_equal(back.intensities, img.intensities)
    assert (back.range_resolution, back.min_range, back.azimuth_resolution) == (
        img.range_resolution, img.min_range, img.azimuth_resolution
    )


def test_radar_image_file_size_mismatch(tmp_path):
    """Tests that a body with the wrong number of values is rejected."""
    path = tmp_path / "radar.txt"
    path.write_text("range_bins 2\nazimuth_bins 2\nrange_resolution_m 0.1\nmin_range_m 0\n1 2 3\n")
    with pytest.raises(ParameterError, match="expected 4"):
        read_radar_image(path)


def test_mask_pgm_puts_positive_y_on_top(tmp_path):
    """Tests the mask image orientation and values."""
    mask = np.zeros((3, 4), dtype=bool)
    mask[2, 1] = True
    with Image.open(write_mask_pgm(mask, tmp_path / "mask.pgm")) as im:
        pixels = np.asarray(im)
    assert pixels.shape == (3, 4)
    assert pixels[0, 1] == 255
    assert pixels.sum() == 255
