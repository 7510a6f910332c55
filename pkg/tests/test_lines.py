import math

import numpy as np
import pytest

from plant_catalog.errors import DegenerateInputError
from plant_catalog.lines import (
    SeedingLines,
    filter_weed,
    find_common_angle,
    hough_accumulator,
    hough_line_distance,
    hough_lines,
    load_lines,
    normalize_angle,
    rasterize_points,
    recognize_lines,
    rotate_points,
    save_lines,
    scan_line_positions,
)


def _row_field(angle_deg, n_lines=8, spacing=0.5, plants=60, intra=0.18, jitter=0.003, seed=0):
    """Points on parallel rows centered on the origin; returns (points, true offsets)."""
    rng = np.random.default_rng(seed)
    offsets = (np.arange(n_lines) - (n_lines - 1) / 2.0) * spacing
    along = (np.arange(plants) - (plants - 1) / 2.0) * intra
    phases = rng.uniform(-0.5, 0.5, size=n_lines) * intra
    u = (along[np.newaxis, :] + phases[:, np.newaxis]).ravel()
    v = np.repeat(offsets, plants)
    local = np.column_stack([u, v]) + rng.normal(0.0, jitter, size=(u.size, 2))
    return rotate_points(local, math.radians(angle_deg)), offsets


def test_normalize_angle():
    assert normalize_angle(90.0) == 90.0
    assert normalize_angle(-90.0) == 90.0
    assert normalize_angle(180.0) == 0.0
    assert normalize_angle(100.0) == -80.0
    assert normalize_angle(-14.0) == -14.0


def test_rotate_points_counter_clockwise():
    np.testing.assert_allclose(rotate_points([[1.0, 0.0]], math.pi / 2), [[0.0, 1.0]], atol=1e-15)
    points = np.random.default_rng(1).normal(size=(5, 2))
    np.testing.assert_allclose(rotate_points(rotate_points(points, 0.3), -0.3), points, atol=1e-12)


def test_rasterize_points():
    image, origin = rasterize_points(np.array([[1.0, 2.0], [1.05, 2.01]]), 0.02)
    np.testing.assert_array_equal(origin, [1.0, 2.0])
    assert image.shape == (1, 3)
    assert image[0, 0] and image[0, 2]
    with pytest.raises(DegenerateInputError):
        rasterize_points(np.zeros((0, 2)))


def test_accumulator_counts_every_pixel_once_per_angle():
    image = np.zeros((8, 12), dtype=bool)
    image[3, :10] = True
    image[6, 4] = True
    accumulator, offset = hough_accumulator(image, [0.0, 30.0, 90.0])
    np.testing.assert_array_equal(accumulator.sum(axis=1), [11, 11, 11])
    # horizontal direction: rho = -row
    assert accumulator[0, offset - 3] == 10


def test_hough_lines_finds_horizontal_line():
    image = np.zeros((20, 40), dtype=bool)
    image[10, 2:38] = True
    nodes = hough_lines(image, np.arange(-89.0, 91.0, 1.0))
    assert nodes[0].angle == pytest.approx(0.0)
    assert nodes[0].rho == pytest.approx(-10.0)
    assert nodes[0].votes == 36


def _angle_gap(a, b):
    return abs((a - b + 90.0) % 180.0 - 90.0)


@pytest.mark.parametrize("angle", [-14.0, 0.0, 7.3, 0.5, 20.5, 33.3, 89.4, 90.0, -89.6])
def test_common_angle_recovered(angle):
    points, _ = _row_field(angle)
    assert _angle_gap(find_common_angle(points), angle) <= 0.1


def test_common_angle_ignores_scattered_outliers(rng):
    points, _ = _row_field(7.3)
    low, high = points.min(axis=0), points.max(axis=0)
    outliers = rng.uniform(low, high, size=(int(0.05 * len(points)), 2))
    assert find_common_angle(np.vstack([points, outliers])) == pytest.approx(7.3, abs=0.1)


def test_common_angle_follows_field_rotation(rng):
    base_angle = float(rng.uniform(-90, 90))
    points, _ = _row_field(base_angle, n_lines=5, plants=20, seed=11)
    alpha = find_common_angle(points)
    assert _angle_gap(alpha, base_angle) <= 0.1
    for beta in rng.uniform(-180.0, 180.0, size=100):
        turned = find_common_angle(rotate_points(points, math.radians(beta)))
        assert _angle_gap(turned, alpha + beta) <= 0.1, beta


def test_common_angle_keeps_narrowing_after_nodes_agree():
    points, _ = _row_field(12.6, n_lines=1)
    hough_only = find_common_angle(points, refine=False)
    assert _angle_gap(hough_only, 12.6) < 0.5
    assert hough_only != round(hough_only)


def test_no_lines_in_single_point():
    with pytest.raises(DegenerateInputError):
        find_common_angle(np.array([[0.0, 0.0]]))


def test_hough_line_distance_estimates_spacing():
    points, _ = _row_field(7.3)
    assert hough_line_distance(points, 7.3) == pytest.approx(0.5, abs=0.04)
    single, _ = _row_field(0.0, n_lines=1)
    assert hough_line_distance(single, 0.0) is None


@pytest.mark.parametrize("angle", [-14.0, 0.0, 7.3, 89.4, -89.6])
def test_recognize_lines_count_and_positions(angle):
    points, offsets = _row_field(angle)
    lines = recognize_lines(points)
    assert _angle_gap(lines.alpha_deg, angle) <= 0.1
    assert lines.y_star.size == offsets.size
    np.testing.assert_allclose(lines.y_star, offsets, atol=0.01)
    assert lines.median_distance == pytest.approx(0.5, abs=0.01)


def test_twenty_nine_lines():
    points, _ = _row_field(-14.0, n_lines=29, spacing=0.48, plants=40, seed=3)
    lines = recognize_lines(points)
    assert lines.y_star.size == 29


def test_single_line_uses_spacing_hint():
    points, _ = _row_field(0.0, n_lines=1)
    with pytest.raises(DegenerateInputError):
        recognize_lines(points)
    lines = recognize_lines(points, spacing_hint=0.5)
    assert lines.y_star.size == 1
    assert lines.median_distance == 0.5
    assert lines.y_star[0] == pytest.approx(0.0, abs=0.01)


def test_scan_line_positions():
    y = np.concatenate([np.zeros(10), np.ones(10)])
    peaks = scan_line_positions(y, window=0.2, step=0.01, min_separation=0.5)
    np.testing.assert_allclose(peaks, [0.0, 1.0], atol=0.02)
    with pytest.raises(ValueError):
        scan_line_positions(y, window=0.01, step=0.01, min_separation=0.5)
    with pytest.raises(DegenerateInputError):
        scan_line_positions([], window=0.2, step=0.01, min_separation=0.5)


def test_seeding_lines_helpers():
    lines = SeedingLines(alpha_deg=0.0, y_star=[0.0, 1.0], median_distance=1.0)
    np.testing.assert_array_equal(lines.nearest_line([0.2, 0.5, 0.9, -3.0]), [0, 0, 1, 0])
    np.testing.assert_allclose(lines.distance_to_lines([0.2, 1.5]), [0.2, 0.5])
    with pytest.raises(ValueError):
        SeedingLines(alpha_deg=0.0, y_star=[1.0, 0.0], median_distance=1.0)


def test_weed_filter_boundary_is_inclusive():
    lines = SeedingLines(alpha_deg=0.0, y_star=[0.0, 0.5], median_distance=0.5)
    points = np.array([[3.0, 0.125], [3.0, 0.1250001], [3.0, -0.125], [1.0, 0.375], [1.0, 0.25]])
    mask = filter_weed(points, lines, theta_d=0.25)
    np.testing.assert_array_equal(mask.valid, [True, False, True, True, False])


def test_weed_filter_matches_band_membership(rng):
    for _ in range(100):
        alpha = float(rng.uniform(-89, 90))
        y_star = np.sort(rng.choice(np.arange(-20, 20), size=int(rng.integers(1, 6)), replace=False)) * 0.5
        lines = SeedingLines(alpha, y_star, median_distance=0.5)
        theta = float(rng.uniform(0.05, 0.5))
        points = rng.uniform(-12, 12, size=(200, 2))
        mask = filter_weed(points, lines, theta)

        angle = math.radians(alpha)
        across = -points[:, 0] * math.sin(angle) + points[:, 1] * math.cos(angle)
        expected = [any(abs(a - y) <= theta * 0.5 for y in y_star) for a in across]
        near_edge = [min(abs(abs(a - y) - theta * 0.5) for y in y_star) < 1e-9 for a in across]
        agree = (mask.valid == np.array(expected)) | np.array(near_edge)
        assert agree.all()


def test_weed_filter_on_synthetic_field(small_points):
    date = small_points.dates[0]
    points = small_points.detections[date]
    is_weed = small_points.is_weed[date]
    lines = recognize_lines(points)
    assert lines.y_star.size == small_points.spec.n_lines
    valid = filter_weed(points, lines, 0.2).valid
    assert np.mean(~valid[is_weed]) >= 0.95
    assert np.mean(~valid[~is_weed]) <= 0.02


def test_lines_file_round_trip(tmp_path):
    points, _ = _row_field(7.3, n_lines=4)
    lines = recognize_lines(points)
    masks = {"2021-05-03": filter_weed(points, lines)}
    path = tmp_path / "lines.json"
    save_lines(lines, str(path), masks)
    loaded = load_lines(str(path))
    assert loaded.alpha_deg == lines.alpha_deg
    np.testing.assert_array_equal(loaded.y_star, lines.y_star)
    assert loaded.median_distance == lines.median_distance
