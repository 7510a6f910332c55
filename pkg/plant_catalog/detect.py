"""Plant-center candidates from adaptively blurred segmentation masks."""
import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from plant_catalog.raster import GeoTransform, points_to_crs

logger = logging.getLogger(__name__)

DEFAULT_MIN_INTENSITY = 0.1


@dataclass(frozen=True)
class BlurSpec:
    """Bandwidth interval in pixels; ``sigma_max`` is reached at ``cover_cutoff``."""

    sigma_min: float
    sigma_max: float
    cover_cutoff: float = 0.75

    def __post_init__(self):
        if not 0 < self.sigma_min <= self.sigma_max:
            raise ValueError(
                f"Need 0 < sigma_min <= sigma_max, got {self.sigma_min}, {self.sigma_max}"
            )
        if self.cover_cutoff <= 0:
            raise ValueError("cover_cutoff must be positive")


@dataclass
class PeakLayer:
    date: str
    positions_px: np.ndarray
    positions_crs: np.ndarray
    intensities: np.ndarray
    cover_ratio: float
    sigma: float
    day: int = 0

    def __len__(self) -> int:
        return len(self.positions_crs)

    def to_dict(self) -> dict:
        return {
            "date": self.date,
            "day": self.day,
            "cover_ratio": self.cover_ratio,
            "sigma": self.sigma,
            "positions_px": self.positions_px.tolist(),
            "positions_crs": self.positions_crs.tolist(),
            "intensities": self.intensities.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PeakLayer":
        return cls(
            date=data["date"],
            day=int(data.get("day", 0)),
            cover_ratio=float(data["cover_ratio"]),
            sigma=float(data["sigma"]),
            positions_px=np.asarray(data["positions_px"], dtype=float).reshape(-1, 2),
            positions_crs=np.asarray(data["positions_crs"], dtype=float).reshape(-1, 2),
            intensities=np.asarray(data.get("intensities", []), dtype=float),
        )


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian with radius ceil(3 sigma)."""
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=float)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    return kernel / kernel.sum()


def gaussian_blur(mask: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian convolution with reflected borders."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    kernel = gaussian_kernel(sigma)
    image = np.asarray(mask, dtype=np.float64)
    image = ndimage.correlate1d(image, kernel, axis=0, mode="reflect")
    return ndimage.correlate1d(image, kernel, axis=1, mode="reflect")


def adaptive_sigma(cover: float, spec: BlurSpec) -> float:
    """Linear bandwidth between sigma_min (bare soil) and sigma_max (at the cutoff)."""
    fraction = min(max(cover, 0.0) / spec.cover_cutoff, 1.0)
    return spec.sigma_min + (spec.sigma_max - spec.sigma_min) * fraction


def find_peaks(
    blurred: np.ndarray,
    min_distance: float,
    min_intensity: float = DEFAULT_MIN_INTENSITY,
):
    """Local maxima of the 8-neighborhood with greedy distance suppression.

    Candidates are visited by descending intensity, ties by (row, col); a
    candidate closer than ``min_distance`` to a kept peak is dropped.

    Returns:
        ([col, row] array of shape (K, 2), intensities of shape (K,))
    """
    if min_distance < 1:
        raise ValueError(f"min_distance must be >= 1, got {min_distance}")

    neighborhood_max = ndimage.maximum_filter(blurred, size=3, mode="constant", cval=-np.inf)
    candidates = (blurred == neighborhood_max) & (blurred >= min_intensity)
    rows, cols = np.nonzero(candidates)
    if rows.size == 0:
        return np.zeros((0, 2)), np.zeros(0)

    values = blurred[rows, cols]
    order = np.lexsort((cols, rows, -values))
    coords = np.column_stack([cols, rows]).astype(float)
    tree = cKDTree(coords)
    radius = np.nextafter(float(min_distance), 0.0)

    suppressed = np.zeros(rows.size, dtype=bool)
    kept = []
    for index in order:
        if suppressed[index]:
            continue
        kept.append(index)
        suppressed[tree.query_ball_point(coords[index], r=radius)] = True

    kept = np.asarray(kept, dtype=int)
    return coords[kept], values[kept]


def detect_layer(
    mask: np.ndarray,
    cover: float,
    spec: BlurSpec,
    geo: GeoTransform,
    date: str = "",
    min_distance: float = 1.0,
    min_intensity: float = DEFAULT_MIN_INTENSITY,
    day: int = 0,
) -> PeakLayer:
    sigma = adaptive_sigma(cover, spec)
    blurred = gaussian_blur(mask, sigma)
    positions_px, intensities = find_peaks(blurred, min_distance, min_intensity)
    logger.info(f"✓ {date}: {len(positions_px)} peaks (sigma={sigma:.2f} px, cover={cover:.3f})")
    return PeakLayer(
        date=date,
        day=day,
        positions_px=positions_px,
        positions_crs=points_to_crs(geo, positions_px),
        intensities=intensities,
        cover_ratio=float(cover),
        sigma=float(sigma),
    )


def save_peaks(layer: PeakLayer, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(layer.to_dict(), handle, indent=2)


def load_peaks(path: str) -> PeakLayer:
    with open(path, "r", encoding="utf-8") as handle:
        return PeakLayer.from_dict(json.load(handle))


def min_distance_px(intra_row_spacing: float, px_size: float, factor: float = 0.5) -> float:
    """Default suppression radius: half the intra-row spacing in pixels."""
    return max(1.0, factor * intra_row_spacing / abs(px_size))


def empty_layer(date: str, cover: float, sigma: Optional[float] = None, day: int = 0) -> PeakLayer:
    return PeakLayer(
        date=date,
        day=day,
        positions_px=np.zeros((0, 2)),
        positions_crs=np.zeros((0, 2)),
        intensities=np.zeros(0),
        cover_ratio=cover,
        sigma=sigma or 0.0,
    )
