"""Georeferenced multi-channel rasters.

Rasters are read and written with rasterio. Georeferencing always comes from an
ESRI world file (or an explicit geotransform from the configuration); internal
GeoTIFF tags are ignored.
"""
import datetime as dt
import logging
import os
import warnings
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import rasterio
from rasterio.errors import NotGeoreferencedWarning

from plant_catalog.errors import RasterError

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

DEFAULT_CHANNELS = {
    1: ("V",),
    3: ("R", "G", "B"),
    4: ("R", "G", "B", "NIR"),
}

_DRIVERS = {".png": "PNG", ".tif": "GTiff", ".tiff": "GTiff"}
_WORLD_EXTENSIONS = {".png": ".pgw", ".tif": ".tfw", ".tiff": ".tfw"}


@dataclass(frozen=True)
class GeoTransform:
    """Six-parameter affine map from pixel centers to the planar metric CRS.

    ``x = origin_x + px_w * col + rot_xy * row``
    ``y = origin_y + rot_yx * col + px_h * row``
    """

    origin_x: float
    origin_y: float
    px_w: float
    px_h: float
    rot_xy: float = 0.0
    rot_yx: float = 0.0

    def __post_init__(self):
        if self.det == 0.0 or not np.isfinite(self.det):
            raise RasterError(f"Singular geotransform (det={self.det})")

    @property
    def det(self) -> float:
        return self.px_w * self.px_h - self.rot_xy * self.rot_yx

    @classmethod
    def identity(cls) -> "GeoTransform":
        return cls(0.0, 0.0, 1.0, 1.0)

    @classmethod
    def from_world_values(cls, values: Sequence[float]) -> "GeoTransform":
        """Build from the world-file order px_w, rot_yx, rot_xy, px_h, origin_x, origin_y."""
        if len(values) != 6:
            raise RasterError(f"World file needs 6 values, got {len(values)}")
        px_w, rot_yx, rot_xy, px_h, origin_x, origin_y = (float(v) for v in values)
        return cls(origin_x, origin_y, px_w, px_h, rot_xy, rot_yx)

    def world_values(self) -> Tuple[float, ...]:
        return (self.px_w, self.rot_yx, self.rot_xy, self.px_h, self.origin_x, self.origin_y)

    def to_dict(self) -> dict:
        return {
            "origin_x": self.origin_x,
            "origin_y": self.origin_y,
            "px_w": self.px_w,
            "px_h": self.px_h,
            "rot_xy": self.rot_xy,
            "rot_yx": self.rot_yx,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GeoTransform":
        return cls(**{key: float(value) for key, value in data.items()})


def px_to_crs(geo: GeoTransform, col, row):
    """Pixel (col, row) to CRS (x, y). Accepts scalars or arrays."""
    x = geo.origin_x + geo.px_w * np.asarray(col, dtype=float) + geo.rot_xy * np.asarray(row, dtype=float)
    y = geo.origin_y + geo.rot_yx * np.asarray(col, dtype=float) + geo.px_h * np.asarray(row, dtype=float)
    if np.ndim(x) == 0:
        return float(x), float(y)
    return x, y


def crs_to_px(geo: GeoTransform, x, y):
    """CRS (x, y) to fractional pixel (col, row); exact inverse of :func:`px_to_crs`."""
    dx = np.asarray(x, dtype=float) - geo.origin_x
    dy = np.asarray(y, dtype=float) - geo.origin_y
    col = (geo.px_h * dx - geo.rot_xy * dy) / geo.det
    row = (geo.px_w * dy - geo.rot_yx * dx) / geo.det
    if np.ndim(col) == 0:
        return float(col), float(row)
    return col, row


def points_to_crs(geo: GeoTransform, points_px: np.ndarray) -> np.ndarray:
    """(N, 2) array of [col, row] to (N, 2) array of [x, y]."""
    points_px = np.asarray(points_px, dtype=float).reshape(-1, 2)
    x, y = px_to_crs(geo, points_px[:, 0], points_px[:, 1])
    return np.column_stack([x, y])


def points_to_px(geo: GeoTransform, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    col, row = crs_to_px(geo, points[:, 0], points[:, 1])
    return np.column_stack([col, row])


# World files

def read_world_file(path: PathLike) -> GeoTransform:
    with open(path, "r", encoding="ascii") as handle:
        values = [line.strip() for line in handle if line.strip()]
    try:
        return GeoTransform.from_world_values([float(v) for v in values])
    except ValueError as exc:
        raise RasterError(f"Invalid world file {path}: {exc}") from exc


def write_world_file(geo: GeoTransform, path: PathLike) -> None:
    # repr keeps the shortest string that parses back to the same float
    with open(path, "w", encoding="ascii") as handle:
        handle.write("\n".join(repr(float(v)) for v in geo.world_values()) + "\n")


def world_file_candidates(raster_path: PathLike) -> List[str]:
    """Sibling world-file names in lookup order (.pgw/.tfw, .wld, <ext>w)."""
    stem, ext = os.path.splitext(str(raster_path))
    candidates = []
    if ext.lower() in _WORLD_EXTENSIONS:
        candidates.append(stem + _WORLD_EXTENSIONS[ext.lower()])
    candidates.append(stem + ".wld")
    if ext:
        candidates.append(stem + ext + "w")
    return candidates


def find_world_file(raster_path: PathLike) -> Optional[str]:
    for candidate in world_file_candidates(raster_path):
        if os.path.exists(candidate):
            return candidate
    return None


# Acquisitions

@dataclass(frozen=True)
class Acquisition:
    """One flight: calendar date plus day index t since the first acquisition."""

    date: dt.date
    day: int = 0

    @property
    def key(self) -> str:
        return self.date.isoformat()


def parse_date(value: Union[str, dt.date]) -> dt.date:
    if isinstance(value, dt.date):
        return value
    return dt.date.fromisoformat(str(value).strip())


def acquisitions_from_dates(dates: Iterable[Union[str, dt.date]]) -> List[Acquisition]:
    """Sorted acquisitions with day indices relative to the earliest date."""
    parsed = sorted({parse_date(d) for d in dates})
    if not parsed:
        return []
    first = parsed[0]
    return [Acquisition(date=d, day=(d - first).days) for d in parsed]


# Rasters

@dataclass
class Raster:
    """Multi-channel raster in native sample type.

    ``samples`` is H×W×C in the file's dtype; :meth:`reflectance` and :meth:`channel`
    return floats in [0, 1] (integer samples divided by the type maximum).
    """

    channels: Tuple[str, ...]
    samples: np.ndarray
    geo: GeoTransform
    nodata_mask: np.ndarray = field(default=None)
    acquisition: Optional[Acquisition] = None
    nodata: Optional[float] = 0

    def __post_init__(self):
        if self.samples.ndim == 2:
            self.samples = self.samples[:, :, np.newaxis]
        if self.samples.ndim != 3:
            raise RasterError(f"Expected H×W×C samples, got shape {self.samples.shape}")
        if self.samples.shape[2] != len(self.channels):
            raise RasterError(
                f"{self.samples.shape[2]} planes but {len(self.channels)} channel names "
                f"{list(self.channels)}"
            )
        if self.nodata_mask is None:
            self.nodata_mask = compute_nodata_mask(self.samples, self.nodata)
        if self.nodata_mask.shape != self.shape:
            raise RasterError("nodata mask does not match raster shape")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.samples.shape[0], self.samples.shape[1]

    @property
    def scale(self) -> float:
        if np.issubdtype(self.samples.dtype, np.integer):
            return float(np.iinfo(self.samples.dtype).max)
        return 1.0

    def has_channel(self, name: str) -> bool:
        return name.upper() in (c.upper() for c in self.channels)

    def channel(self, name: str) -> np.ndarray:
        for index, channel_name in enumerate(self.channels):
            if channel_name.upper() == name.upper():
                return self.samples[:, :, index].astype(np.float64) / self.scale
        raise RasterError(f"Channel {name} not present (have {list(self.channels)})")

    def reflectance(self) -> np.ndarray:
        return self.samples.astype(np.float64) / self.scale

    @property
    def key(self) -> str:
        return self.acquisition.key if self.acquisition else ""


def compute_nodata_mask(samples: np.ndarray, nodata: Optional[float]) -> np.ndarray:
    """Pixels where every channel equals the sentinel."""
    if nodata is None:
        return np.zeros(samples.shape[:2], dtype=bool)
    return np.all(samples == nodata, axis=2)


def load_raster(
    path: PathLike,
    channels: Optional[Sequence[str]] = None,
    worldfile: Optional[PathLike] = None,
    geotransform: Optional[GeoTransform] = None,
    nodata: Optional[float] = 0,
    acquisition: Optional[Acquisition] = None,
) -> Raster:
    """Load an 8/16-bit multi-channel TIFF or PNG.

    Args:
        path: raster file
        channels: declared channel order; must match the band count
        worldfile: explicit world file; sibling files are searched otherwise
        geotransform: fallback when no world file exists
        nodata: sentinel shared by all channels, None disables masking
        acquisition: date metadata attached to the raster

    Raises:
        FileNotFoundError: raster missing
        RasterError: no georeferencing or channel count mismatch
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Raster not found: {path}")

    if worldfile is not None:
        geo = read_world_file(worldfile)
    else:
        sibling = find_world_file(path)
        if sibling is not None:
            geo = read_world_file(sibling)
        elif geotransform is not None:
            geo = geotransform
        else:
            raise RasterError(f"No world file next to {path} and no geotransform configured")

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotGeoreferencedWarning)
        with rasterio.open(path) as src:
            samples = src.read()

    samples = np.ascontiguousarray(np.moveaxis(samples, 0, -1))
    count = samples.shape[2]
    if channels is None:
        channels = DEFAULT_CHANNELS.get(count, tuple(f"C{i}" for i in range(count)))
    elif len(channels) != count:
        raise RasterError(
            f"{path} has {count} channels but {len(channels)} are declared ({list(channels)})"
        )

    logger.debug(f"Loaded {path}: {samples.shape[1]}x{samples.shape[0]} px, {count} ch, {samples.dtype}")
    return Raster(
        channels=tuple(channels),
        samples=samples,
        geo=geo,
        acquisition=acquisition,
        nodata=nodata,
    )


def save_raster(raster: Raster, path: PathLike, worldfile: bool = True) -> Optional[str]:
    """Write samples unchanged plus a sibling world file. Returns the world-file path."""
    ext = os.path.splitext(str(path))[1].lower()
    driver = _DRIVERS.get(ext)
    if driver is None:
        raise RasterError(f"Unsupported raster extension: {ext}")

    height, width = raster.shape
    bands = np.moveaxis(raster.samples, -1, 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotGeoreferencedWarning)
        with rasterio.open(
            path,
            "w",
            driver=driver,
            height=height,
            width=width,
            count=bands.shape[0],
            dtype=str(raster.samples.dtype),
        ) as dst:
            dst.write(bands)

    if not worldfile:
        return None
    world_path = os.path.splitext(str(path))[0] + _WORLD_EXTENSIONS[ext]
    write_world_file(raster.geo, world_path)
    return world_path


def save_mask(mask: np.ndarray, geo: GeoTransform, path: PathLike) -> Optional[str]:
    """Binary mask as a single-band 0/255 image."""
    samples = np.where(mask, 255, 0).astype(np.uint8)
    return save_raster(Raster(("mask",), samples, geo, nodata=None), path)


def load_mask(path: PathLike, worldfile: Optional[PathLike] = None) -> Tuple[np.ndarray, GeoTransform]:
    raster = load_raster(path, channels=("mask",), worldfile=worldfile, nodata=None)
    return raster.samples[:, :, 0] > 0, raster.geo
