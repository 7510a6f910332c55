"""Vegetation indices, cover ratios and plant/soil segmentation."""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from plant_catalog.errors import DegenerateInputError, RasterError
from plant_catalog.raster import Raster

logger = logging.getLogger(__name__)

OTSU_BINS = 256
DEFAULT_OSAVI_Y = 0.6
DEFAULT_COVER_CUTOFF = 0.75
PERCENTILE_SWITCH = 0.01


class VIKind(str, Enum):
    GLI = "GLI"
    NGRDI = "NGRDI"
    OSAVI = "OSAVI"

    @classmethod
    def parse(cls, value: str) -> "VIKind":
        return cls(str(value).strip().upper())


FIXED_THRESHOLDS = {
    VIKind.GLI: 0.2,
    VIKind.NGRDI: 0.0,
    VIKind.OSAVI: 0.25,
}

REQUIRED_CHANNELS = {
    VIKind.GLI: ("R", "G", "B"),
    VIKind.NGRDI: ("R", "G"),
    VIKind.OSAVI: ("NIR", "R"),
}


class ThresholdSource(str, Enum):
    OTSU = "otsu"
    PERCENTILE99 = "percentile99"


@dataclass
class VIImage:
    values: np.ndarray
    kind: VIKind
    nodata_mask: np.ndarray

    def valid_values(self) -> np.ndarray:
        return self.values[~self.nodata_mask]


@dataclass
class SegmentationResult:
    mask: np.ndarray
    threshold: float
    threshold_source: ThresholdSource
    cover_ratio: float
    usable: bool
    provisional_cover: float
    kind: VIKind

    def stats(self, date: str = "") -> dict:
        return {
            "date": date,
            "vi_kind": self.kind.value,
            "threshold": float(self.threshold),
            "threshold_source": self.threshold_source.value,
            "cover_ratio": float(self.cover_ratio),
            "provisional_cover": float(self.provisional_cover),
            "usable": bool(self.usable),
        }


def compute_vi(raster: Raster, kind: VIKind, y: float = DEFAULT_OSAVI_Y) -> VIImage:
    """Per-pixel GLI, NGRDI or OSAVI.

    Pixels with a zero denominator join the nodata mask and carry value 0.
    """
    kind = VIKind(kind)
    missing = [c for c in REQUIRED_CHANNELS[kind] if not raster.has_channel(c)]
    if missing:
        raise RasterError(f"{kind.value} needs channels {missing} (have {list(raster.channels)})")
    if kind is VIKind.OSAVI and y <= 0:
        raise ValueError(f"OSAVI soil parameter must be positive, got {y}")

    red = raster.channel("R")
    if kind is VIKind.GLI:
        green, blue = raster.channel("G"), raster.channel("B")
        numerator = 2.0 * green - red - blue
        denominator = 2.0 * green + red + blue
    elif kind is VIKind.NGRDI:
        green = raster.channel("G")
        numerator = green - red
        denominator = green + red
    else:
        nir = raster.channel("NIR")
        numerator = nir - red
        denominator = nir + red + y

    undefined = denominator == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(undefined, 0.0, numerator / np.where(undefined, 1.0, denominator))

    return VIImage(values=values, kind=kind, nodata_mask=raster.nodata_mask | undefined)


def cover_ratio(vi: VIImage, threshold: float) -> float:
    """Fraction of valid pixels with ``v >= threshold``."""
    values = vi.valid_values()
    if values.size == 0:
        raise DegenerateInputError("VI image has no valid pixels")
    return float(np.count_nonzero(values >= threshold)) / values.size


def _otsu_split(hist: np.ndarray, centers: np.ndarray) -> int:
    """Index k maximizing the between-class variance of bins [0..k] vs [k+1..]."""
    weight0 = np.cumsum(hist)[:-1]
    weight1 = hist.sum() - weight0
    mass0 = np.cumsum(hist * centers)[:-1]
    mass1 = (hist * centers).sum() - mass0
    with np.errstate(divide="ignore", invalid="ignore"):
        mean0 = mass0 / weight0
        mean1 = mass1 / weight1
        between = weight0 * weight1 * (mean0 - mean1) ** 2
    between[(weight0 == 0) | (weight1 == 0)] = -1.0
    return int(np.argmax(between))


def otsu_threshold(vi: VIImage, bins: int = OTSU_BINS) -> float:
    """Otsu threshold over a ``bins``-bin histogram of valid values.

    The returned value is the center of the last background bin; with
    ``v >= threshold`` the upper half of that bin joins the foreground.
    """
    values = vi.valid_values()
    if values.size == 0 or np.unique(values).size < 2:
        raise DegenerateInputError("Otsu threshold needs at least two distinct values")

    hist, edges = np.histogram(values, bins=bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    split = _otsu_split(hist.astype(np.float64), centers)
    return float(centers[split])


def percentile99(vi: VIImage) -> float:
    """Nearest-rank 99th percentile of valid values."""
    values = np.sort(vi.valid_values(), kind="stable")
    if values.size == 0:
        raise DegenerateInputError("VI image has no valid pixels")
    rank = math.ceil(0.99 * values.size)
    return float(values[rank - 1])


def segment(
    vi: VIImage,
    fixed_threshold: Optional[float] = None,
    cutoff: float = DEFAULT_COVER_CUTOFF,
    bins: int = OTSU_BINS,
) -> SegmentationResult:
    """Plant/soil mask with the threshold rule for early and late dates.

    The fixed per-index threshold only decides the branch: a provisional cover
    below 1 % switches to the 99th percentile, otherwise Otsu is used.
    """
    if fixed_threshold is None:
        fixed_threshold = FIXED_THRESHOLDS[vi.kind]
    provisional = cover_ratio(vi, fixed_threshold)

    if provisional < PERCENTILE_SWITCH:
        threshold = percentile99(vi)
        source = ThresholdSource.PERCENTILE99
    else:
        threshold = otsu_threshold(vi, bins=bins)
        source = ThresholdSource.OTSU

    mask = (vi.values >= threshold) & ~vi.nodata_mask
    cover = cover_ratio(vi, threshold)
    return SegmentationResult(
        mask=mask,
        threshold=threshold,
        threshold_source=source,
        cover_ratio=cover,
        usable=cover <= cutoff,
        provisional_cover=provisional,
        kind=vi.kind,
    )


def segment_raster(
    raster: Raster,
    kind: VIKind,
    y: float = DEFAULT_OSAVI_Y,
    fixed_threshold: Optional[float] = None,
    cutoff: float = DEFAULT_COVER_CUTOFF,
    bins: int = OTSU_BINS,
) -> SegmentationResult:
    result = segment(compute_vi(raster, kind, y), fixed_threshold, cutoff, bins)
    logger.debug(
        f"{raster.key or 'raster'}: {result.threshold_source.value} threshold "
        f"{result.threshold:.4f}, cover {result.cover_ratio:.4f}"
    )
    return result


def check_usable(result: SegmentationResult, cutoff: float = DEFAULT_COVER_CUTOFF) -> Tuple[bool, str]:
    """Whether single plants are still separable at this cover ratio.

    Returns:
        (usable, reason) tuple
    """
    if result.cover_ratio > cutoff:
        return False, f"Cover ratio {result.cover_ratio:.3f} above cutoff {cutoff:.2f}"
    if not np.any(result.mask):
        return False, "No plant pixels segmented"
    return True, "OK"
