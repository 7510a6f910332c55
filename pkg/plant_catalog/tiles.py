"""Per-plant image tiles for every acquisition date."""
import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from plant_catalog.catalog import DIRECT, PlantCatalog
from plant_catalog.raster import GeoTransform, Raster, crs_to_px, px_to_crs, save_raster

logger = logging.getLogger(__name__)

DEFAULT_FRAME = 128


@dataclass
class Tile:
    plant_id: int
    date: str
    kind: str
    samples: np.ndarray
    valid: np.ndarray
    corner: Tuple[int, int]
    center: Tuple[int, int]


def _check_frame(frame_px: int) -> None:
    if frame_px <= 0 or frame_px % 2:
        raise ValueError(f"Tile frame must be a positive even number of pixels, got {frame_px}")


def crop(raster: Raster, center: Tuple[int, int], frame_px: int):
    """``frame_px`` square around ``center`` (col, row); outside pixels hold the nodata value."""
    col, row = center
    half = frame_px // 2
    top, left = row - half, col - half
    height, width = raster.shape

    fill = raster.nodata if raster.nodata is not None else 0
    samples = np.full((frame_px, frame_px, len(raster.channels)), fill, dtype=raster.samples.dtype)
    valid = np.zeros((frame_px, frame_px), dtype=bool)

    r0, r1 = max(top, 0), min(top + frame_px, height)
    c0, c1 = max(left, 0), min(left + frame_px, width)
    if r0 < r1 and c0 < c1:
        samples[r0 - top:r1 - top, c0 - left:c1 - left] = raster.samples[r0:r1, c0:c1]
        valid[r0 - top:r1 - top, c0 - left:c1 - left] = ~raster.nodata_mask[r0:r1, c0:c1]
    return samples, valid, (left, top)


def position_to_pixel(raster: Raster, position) -> Tuple[int, int]:
    col, row = crs_to_px(raster.geo, float(position[0]), float(position[1]))
    return int(round(col)), int(round(row))


def extract_tiles(
    catalog: PlantCatalog,
    rasters: Mapping[str, Raster],
    frame_px: int = DEFAULT_FRAME,
    jobs: int = 1,
) -> List[Tile]:
    """Crop every plant on every date that has a raster, ordered by (plant, date)."""
    _check_frame(frame_px)
    for date in catalog.dates:
        if date not in rasters:
            logger.warning(f"○ No raster for {date}, its tiles are skipped")

    requests = [
        (cluster.plant_id, date, member)
        for cluster in catalog.clusters
        for date, member in sorted(cluster.members.items())
        if date in rasters
    ]

    def cut(request):
        plant_id, date, member = request
        raster = rasters[date]
        center = position_to_pixel(raster, member.position)
        samples, valid, corner = crop(raster, center, frame_px)
        return Tile(plant_id, date, member.kind, samples, valid, corner, center)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        tiles = list(pool.map(cut, requests))
    logger.info(f"✓ Extracted {len(tiles)} tiles of {frame_px}x{frame_px} px")
    return tiles


def tile_geotransform(geo: GeoTransform, corner: Tuple[int, int]) -> GeoTransform:
    x, y = px_to_crs(geo, corner[0], corner[1])
    return GeoTransform(x, y, geo.px_w, geo.px_h, geo.rot_xy, geo.rot_yx)


def write_tiles(tiles: Sequence[Tile], rasters: Mapping[str, Raster], out_dir: str) -> str:
    """One georeferenced image per tile plus ``tiles.csv``; returns the CSV path."""
    os.makedirs(out_dir, exist_ok=True)
    index_path = os.path.join(out_dir, "tiles.csv")
    with open(index_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["plant_id", "date", "kind", "file", "center_col", "center_row", "valid_fraction"])
        for tile in tiles:
            raster = rasters[tile.date]
            ext = ".png" if len(raster.channels) <= 4 else ".tif"
            name = f"plant{tile.plant_id:05d}_{tile.date}{ext}"
            save_raster(
                Raster(raster.channels, tile.samples, tile_geotransform(raster.geo, tile.corner),
                       nodata_mask=~tile.valid, nodata=raster.nodata),
                os.path.join(out_dir, name),
            )
            writer.writerow([tile.plant_id, tile.date, tile.kind, name, tile.center[0], tile.center[1],
                             f"{tile.valid.mean():.4f}"])
    return index_path


def augment_tile(
    raster: Raster,
    position,
    frame_px: int,
    rng: np.random.Generator,
    max_shift_px: int = 8,
    max_angle_deg: float = 180.0,
) -> np.ndarray:
    """Randomly shifted and rotated crop of the same plant.

    A window large enough for any rotation is cut around the shifted center,
    rotated with bilinear resampling and cropped back to ``frame_px``.
    """
    _check_frame(frame_px)
    col, row = position_to_pixel(raster, position)
    dx, dy = rng.integers(-max_shift_px, max_shift_px + 1, size=2)
    angle = float(rng.uniform(-max_angle_deg, max_angle_deg))

    outer = 2 * int(math.ceil(frame_px * math.sqrt(2) / 2)) + 2
    samples, _, _ = crop(raster, (col + int(dx), row + int(dy)), outer)
    rotated = ndimage.rotate(samples.astype(np.float64), angle, axes=(1, 0), reshape=False,
                             order=1, mode="constant", cval=0.0)
    start = (outer - frame_px) // 2
    window = rotated[start:start + frame_px, start:start + frame_px]
    if np.issubdtype(raster.samples.dtype, np.integer):
        info = np.iinfo(raster.samples.dtype)
        window = np.clip(np.rint(window), info.min, info.max)
    return window.astype(raster.samples.dtype)


def render_tile_sheet(tiles: Sequence[Tile], path: str, channels: Sequence[str],
                      max_plants: Optional[int] = 20) -> None:
    """Plant-by-date contact sheet; black frames mark direct, gray frames indirect detections."""
    from matplotlib.figure import Figure

    plants = sorted({tile.plant_id for tile in tiles})[:max_plants]
    dates = sorted({tile.date for tile in tiles})
    if not plants or not dates:
        logger.warning("No tiles to render")
        return
    lookup = {(tile.plant_id, tile.date): tile for tile in tiles}
    rgb = [list(channels).index(name) for name in ("R", "G", "B") if name in channels] or [0]

    fig = Figure(figsize=(1.2 * len(dates), 1.2 * len(plants)))
    axes = fig.subplots(len(plants), len(dates), squeeze=False)
    for i, plant_id in enumerate(plants):
        for j, date in enumerate(dates):
            ax = axes[i][j]
            ax.set_xticks([])
            ax.set_yticks([])
            tile = lookup.get((plant_id, date))
            if tile is None:
                ax.set_axis_off()
                continue
            image = tile.samples[:, :, rgb].astype(np.float64)
            peak = image.max()
            ax.imshow(np.squeeze(image / peak if peak > 0 else image), cmap="gray")
            color = "black" if tile.kind == DIRECT else "0.6"
            for spine in ax.spines.values():
                spine.set_edgecolor(color)
                spine.set_linewidth(3)
            if i == 0:
                ax.set_title(date, fontsize=6)
            if j == 0:
                ax.set_ylabel(str(plant_id), fontsize=6)
    fig.tight_layout()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, dpi=120)
