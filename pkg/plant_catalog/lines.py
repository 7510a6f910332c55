"""Seeding-line recognition on aligned point clouds and off-line weed filtering.

The common line angle is found by nested Hough scans over shrinking angle
intervals and refined by an orthogonal regression over the line bands. Line
positions come from a sliding-window count of the rotated points.
"""
import json
import logging
import math
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage, signal

from plant_catalog.errors import DegenerateInputError

logger = logging.getLogger(__name__)

DEFAULT_BIN_WIDTH = 0.02
DEFAULT_THETA_D = 0.2
HOUGH_CHUNK = 4_000_000


@dataclass(frozen=True)
class HoughNode:
    angle: float
    rho: float
    votes: int


@dataclass
class SeedingLines:
    """Common line angle (degrees, (-90, 90]) and sorted line offsets in the rotated frame."""

    alpha_deg: float
    y_star: np.ndarray
    median_distance: float
    hough_distance: Optional[float] = None

    def __post_init__(self):
        self.y_star = np.asarray(self.y_star, dtype=float)
        if self.y_star.size > 1 and np.any(np.diff(self.y_star) <= 0):
            raise ValueError("line positions must be strictly increasing")

    @property
    def alpha_rad(self) -> float:
        return math.radians(self.alpha_deg)

    def nearest_line(self, rotated_y) -> np.ndarray:
        """Index of the nearest line; ties go to the lower index."""
        rotated_y = np.atleast_1d(np.asarray(rotated_y, dtype=float))
        return np.argmin(np.abs(rotated_y[:, np.newaxis] - self.y_star[np.newaxis, :]), axis=1)

    def distance_to_lines(self, rotated_y) -> np.ndarray:
        rotated_y = np.atleast_1d(np.asarray(rotated_y, dtype=float))
        return np.min(np.abs(rotated_y[:, np.newaxis] - self.y_star[np.newaxis, :]), axis=1)

    def to_dict(self) -> dict:
        return {
            "alpha_s_deg": self.alpha_deg,
            "y_star": self.y_star.tolist(),
            "median_distance": self.median_distance,
            "hough_distance": self.hough_distance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SeedingLines":
        return cls(
            alpha_deg=float(data["alpha_s_deg"]),
            y_star=np.asarray(data["y_star"], dtype=float),
            median_distance=float(data["median_distance"]),
            hough_distance=data.get("hough_distance"),
        )


@dataclass
class WeedMask:
    valid: np.ndarray
    distance: np.ndarray
    theta_d: float


def normalize_angle(angle_deg: float) -> float:
    """Map a line direction to (-90, 90]."""
    wrapped = (angle_deg + 90.0) % 180.0 - 90.0
    return 90.0 if wrapped == -90.0 else wrapped


def rotate_points(points, angle_rad: float) -> np.ndarray:
    """Counter-clockwise rotation about the origin."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    cos, sin = math.cos(angle_rad), math.sin(angle_rad)
    return points @ np.array([[cos, sin], [-sin, cos]])


def rasterize_points(points, bin_width: float = DEFAULT_BIN_WIDTH) -> Tuple[np.ndarray, np.ndarray]:
    """Binary occupancy image (rows follow y, columns follow x) and its origin."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(points) == 0:
        raise DegenerateInputError("Cannot rasterize an empty point set")
    if bin_width <= 0:
        raise ValueError(f"bin_width must be positive, got {bin_width}")
    origin = points.min(axis=0)
    cells = np.floor((points - origin) / bin_width).astype(int)
    image = np.zeros((cells[:, 1].max() + 1, cells[:, 0].max() + 1), dtype=bool)
    image[cells[:, 1], cells[:, 0]] = True
    return image, origin


def hough_accumulator(image: np.ndarray, angles_deg: Sequence[float]) -> Tuple[np.ndarray, int]:
    """Vote counts indexed by (angle, rho + offset).

    ``angles_deg`` are line directions; the normal is rotated by -90 degrees and
    ``rho = x cos(theta) + y sin(theta)`` is rounded to whole pixels. Pixels are
    processed in chunks whose partial accumulators are summed.
    """
    rows, cols = np.nonzero(image)
    theta = np.deg2rad(np.asarray(angles_deg, dtype=float) - 90.0)
    cos, sin = np.cos(theta), np.sin(theta)
    offset = int(math.ceil(math.hypot(*image.shape)))
    n_rho = 2 * offset + 1
    n_angles = theta.size

    accumulator = np.zeros(n_angles * n_rho, dtype=np.int64)
    angle_base = np.arange(n_angles) * n_rho
    chunk = max(1, HOUGH_CHUNK // max(n_angles, 1))
    for start in range(0, rows.size, chunk):
        x = cols[start:start + chunk].astype(float)
        y = rows[start:start + chunk].astype(float)
        rho = np.rint(np.outer(x, cos) + np.outer(y, sin)).astype(np.int64) + offset
        accumulator += np.bincount((rho + angle_base).ravel(), minlength=accumulator.size)
    return accumulator.reshape(n_angles, n_rho), offset


def hough_lines(
    image: np.ndarray,
    angles_deg: Sequence[float],
    threshold_ratio: float = 0.3,
    min_votes: int = 2,
    rho_separation: float = 3.0,
) -> List[HoughNode]:
    """Accumulator maxima above ``threshold_ratio`` times the global maximum.

    Connected plateaus of equal maxima collapse into one node at their center;
    weaker nodes within ``rho_separation`` pixels and three angle steps of a
    stronger one are dropped.
    """
    angles = np.asarray(angles_deg, dtype=float)
    accumulator, offset = hough_accumulator(image, angles)
    peak = int(accumulator.max()) if accumulator.size else 0
    if peak < min_votes:
        return []

    local = accumulator == ndimage.maximum_filter(accumulator, size=3, mode="constant", cval=0)
    strong = local & (accumulator >= max(threshold_ratio * peak, min_votes))
    labels, count = ndimage.label(strong, structure=np.ones((3, 3), dtype=int))
    angle_idx, rho_idx = np.nonzero(strong)
    component = labels[angle_idx, rho_idx] - 1
    sizes = np.bincount(component, minlength=count)
    mean_angle = np.bincount(component, weights=angles[angle_idx], minlength=count) / sizes
    mean_rho = np.bincount(component, weights=rho_idx - offset, minlength=count) / sizes
    votes = np.zeros(count, dtype=np.int64)
    np.maximum.at(votes, component, accumulator[angle_idx, rho_idx])

    step = float(np.min(np.abs(np.diff(angles)))) if angles.size > 1 else 1.0
    order = np.lexsort((mean_rho, mean_angle, -votes))
    nodes: List[HoughNode] = []
    for index in order:
        candidate = HoughNode(float(mean_angle[index]), float(mean_rho[index]), int(votes[index]))
        duplicate = any(
            abs(node.rho - candidate.rho) < rho_separation
            and abs(node.angle - candidate.angle) <= 3 * step
            for node in nodes
        )
        if not duplicate:
            nodes.append(candidate)
    return nodes


def _circular_mean_angle(angles_deg) -> float:
    """Mean of line directions with period 180 degrees."""
    doubled = np.deg2rad(2.0 * np.asarray(angles_deg, dtype=float))
    return normalize_angle(0.5 * math.degrees(math.atan2(np.sin(doubled).mean(), np.cos(doubled).mean())))


def refine_common_angle(
    points,
    alpha_deg: float,
    gap: float,
    max_shift: float = 1.0,
    max_iter: int = 10,
) -> float:
    """Orthogonal regression of the common direction shared by all lines.

    Points rotated by ``-alpha_deg`` are split into bands wherever sorted
    across-line coordinates jump by more than ``gap``; bands holding at least
    half as many points as the largest one are centered and pooled, and the
    principal axis of the pool corrects the angle. Points further than three
    robust deviations from their band are trimmed before the second fit of each
    pass. Returns ``alpha_deg`` unchanged when the correction exceeds
    ``max_shift`` degrees.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    alpha = float(alpha_deg)
    for _ in range(max_iter):
        rotated = rotate_points(points, -math.radians(alpha))
        order = np.argsort(rotated[:, 1])
        bands = np.split(order, np.flatnonzero(np.diff(rotated[order, 1]) > gap) + 1)
        largest = max(band.size for band in bands)
        kept = [band for band in bands if band.size >= max(3, 0.5 * largest)]
        if not kept:
            return float(alpha_deg)
        pooled = np.vstack([rotated[band] - rotated[band].mean(axis=0) for band in kept])

        delta = _principal_direction(pooled)
        residual = pooled @ np.array([-math.sin(math.radians(delta)), math.cos(math.radians(delta))])
        spread = 1.4826 * float(np.median(np.abs(residual)))
        if spread > 0:
            inliers = np.abs(residual) <= 3.0 * spread
            if inliers.sum() >= 3:
                delta = _principal_direction(pooled[inliers])

        alpha += delta
        if abs(delta) < 1e-9:
            break
    if abs(normalize_angle(alpha - alpha_deg)) > max_shift:
        logger.debug(f"Angle refinement moved {alpha - alpha_deg:.3f}°, keeping the Hough estimate")
        return float(alpha_deg)
    return float(normalize_angle(alpha))


def _principal_direction(centered: np.ndarray) -> float:
    """Direction of the largest principal axis in (-90, 90] degrees."""
    _, vectors = np.linalg.eigh(centered.T @ centered)
    major = vectors[:, -1]
    return normalize_angle(math.degrees(math.atan2(major[1], major[0])))


def find_common_angle(
    points,
    bin_width: float = DEFAULT_BIN_WIDTH,
    n_b: int = 18,
    n_plus: int = 1,
    n_angles: int = 180,
    threshold_ratio: float = 0.3,
    min_width: float = 0.01,
    max_iter: int = 30,
    refine: bool = True,
) -> float:
    """Common seeding-line angle in degrees by nested Hough intervals.

    The first pass scans the whole half turn in ``n_angles`` steps. Each pass
    histograms the node angles into ``n_b`` bins and keeps the modal bin plus
    ``n_plus`` neighbors; on the first pass the bins wrap around so a cluster
    near +-90 degrees stays in one interval, which may then reach past 90.
    Coincident node angles do not stop the nesting until the interval is
    narrower than ``min_width``. The Hough estimate is the circular mean of the
    last node angles; with ``refine`` it is corrected by
    :func:`refine_common_angle`.

    Raises:
        DegenerateInputError: no Hough node in the first scan
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    image, _ = rasterize_points(points, bin_width)
    low, high = -90.0, 90.0
    angles = low + (high - low) / n_angles * np.arange(1, n_angles + 1)
    node_angles = None

    for iteration in range(max_iter):
        nodes = hough_lines(image, angles, threshold_ratio=threshold_ratio)
        if not nodes:
            if node_angles is None:
                raise DegenerateInputError("No Hough nodes found; points do not form lines")
            break
        node_angles = np.array([node.angle for node in nodes])
        logger.debug(
            f"Angle pass {iteration}: [{low:.5f}, {high:.5f}] -> {len(nodes)} nodes"
        )
        if (high - low) < min_width:
            break

        width = (high - low) / n_b
        if iteration == 0:
            wrapped = (node_angles - low) % 180.0
            hist = np.bincount(np.minimum((wrapped // width).astype(int), n_b - 1), minlength=n_b)
            modal = int(np.argmax(hist))
            low, high = low + (modal - n_plus) * width, low + (modal + n_plus + 1) * width
        else:
            hist, edges = np.histogram(node_angles, bins=n_b, range=(low, high))
            modal = int(np.argmax(hist))
            low = float(edges[max(modal - n_plus, 0)])
            high = float(edges[min(modal + n_plus + 1, n_b)])
        angles = np.linspace(low, high, n_angles)

    alpha = _circular_mean_angle(node_angles)
    if refine:
        alpha = refine_common_angle(points, alpha, gap=3.0 * bin_width)
    return alpha


def hough_line_distance(
    points,
    alpha_deg: float,
    bin_width: float = DEFAULT_BIN_WIDTH,
    threshold_ratio: float = 0.3,
    rho_separation: int = 3,
) -> Optional[float]:
    """Median distance between neighboring Hough nodes at the common angle."""
    image, _ = rasterize_points(points, bin_width)
    accumulator, _ = hough_accumulator(image, [alpha_deg])
    profile = accumulator[0].astype(float)
    if profile.max() < 2:
        return None
    peaks, _ = signal.find_peaks(
        profile, height=max(threshold_ratio * profile.max(), 2.0), distance=rho_separation
    )
    if peaks.size < 2:
        return None
    return float(np.median(np.diff(np.sort(peaks)))) * bin_width


def scan_line_positions(
    rotated_y,
    window: float,
    step: float,
    min_separation: float,
    height_ratio: float = 0.1,
) -> np.ndarray:
    """Line offsets from a sliding-window point count.

    Counts points in ``[y - window/2, y + window/2)`` from ``min - window`` to
    ``max + window`` in increments of ``step``; peaks closer than
    ``min_separation`` are merged.

    Raises:
        DegenerateInputError: no peak in the count profile
    """
    if not window > step > 0:
        raise ValueError(f"Need window > step > 0, got window={window}, step={step}")
    values = np.sort(np.asarray(rotated_y, dtype=float).ravel())
    if values.size == 0:
        raise DegenerateInputError("No points to scan")

    grid = np.arange(values[0] - window, values[-1] + window + step, step)
    counts = (
        np.searchsorted(values, grid + 0.5 * window, side="left")
        - np.searchsorted(values, grid - 0.5 * window, side="left")
    ).astype(float)
    distance = max(1, int(round(min_separation / step)))
    peaks, _ = signal.find_peaks(
        np.concatenate([[0.0], counts, [0.0]]),
        height=max(height_ratio * counts.max(), 1.0),
        distance=distance,
    )
    if peaks.size == 0:
        raise DegenerateInputError("No seeding line found in the window scan")
    return grid[peaks - 1]


def recognize_lines(
    points,
    bin_width: float = DEFAULT_BIN_WIDTH,
    n_b: int = 18,
    n_plus: int = 1,
    n_angles: int = 180,
    threshold_ratio: float = 0.3,
    window: Optional[float] = None,
    step: Optional[float] = None,
    spacing_hint: Optional[float] = None,
) -> SeedingLines:
    """Angle, Hough spacing estimate and window scan in one call.

    ``window`` defaults to a quarter of the Hough line distance and ``step`` to
    1/64 of the window. ``spacing_hint`` is used when the Hough profile shows
    fewer than two lines.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    alpha = find_common_angle(points, bin_width, n_b, n_plus, n_angles, threshold_ratio)
    hough_distance = hough_line_distance(points, alpha, bin_width, threshold_ratio)
    if hough_distance is None:
        if spacing_hint is None:
            raise DegenerateInputError("Cannot estimate the line distance; configure the inter-row spacing")
        logger.warning(f"Hough spacing undetermined, using configured {spacing_hint:.3f}")
        hough_distance = spacing_hint

    window = window if window is not None else 0.25 * hough_distance
    step = step if step is not None else window / 64.0
    rotated = rotate_points(points, -math.radians(alpha))
    y_star = scan_line_positions(rotated[:, 1], window, step, 0.5 * hough_distance)
    median = float(np.median(np.diff(y_star))) if y_star.size > 1 else hough_distance

    logger.info(
        f"✓ {y_star.size} seeding lines at {alpha:.3f}° "
        f"(median distance {median:.4f}, Hough estimate {hough_distance:.4f})"
    )
    return SeedingLines(alpha_deg=alpha, y_star=y_star, median_distance=median,
                        hough_distance=hough_distance)


def filter_weed(points, lines: SeedingLines, theta_d: float = DEFAULT_THETA_D) -> WeedMask:
    """Keep points whose distance to the nearest line is at most ``theta_d`` times the median distance."""
    if lines.y_star.size == 0:
        raise ValueError("No seeding lines to filter against")
    rotated = rotate_points(points, -lines.alpha_rad)
    distance = lines.distance_to_lines(rotated[:, 1]) if len(rotated) else np.zeros(0)
    return WeedMask(valid=distance <= theta_d * lines.median_distance, distance=distance, theta_d=theta_d)


def save_lines(lines: SeedingLines, path: str, weed_masks: Optional[dict] = None) -> None:
    data = lines.to_dict()
    if weed_masks is not None:
        data["weed_mask"] = {date: mask.valid.tolist() for date, mask in weed_masks.items()}
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(data, handle, indent=2)


def load_lines(path: str) -> SeedingLines:
    with open(path, "r", encoding="utf-8") as handle:
        return SeedingLines.from_dict(json.load(handle))
