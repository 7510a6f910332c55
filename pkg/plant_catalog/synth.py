"""Synthetic field time series with known ground truth.

Plants sit on straight seeding lines with a random phase per line and a small
placement jitter. Every date renders the visible plants as Gaussian bumps cut
at half maximum, with the cut radius making the plant cover follow the growth
function, adds stationary off-line weeds and soil noise, and warps the whole
scene with a random rigid transform about the field center. All randomness
comes from numpy's counter-based Philox generator keyed by the seed, one
independent stream per date.
"""
import configparser
import datetime as dt
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import ndimage

from plant_catalog.errors import DegenerateInputError
from plant_catalog.growth import GrowthParams, growth_eval
from plant_catalog.raster import (
    Acquisition,
    GeoTransform,
    Raster,
    acquisitions_from_dates,
    crs_to_px,
    px_to_crs,
    save_raster,
)
from plant_catalog.register import RigidTransform

logger = logging.getLogger(__name__)

CHANNELS = ("R", "G", "B", "NIR")
SOIL_COLOR = np.array([0.45, 0.35, 0.25, 0.30])
PLANT_COLOR = np.array([0.12, 0.42, 0.10, 0.60])
WEED_RADIUS_FACTOR = 0.5
RIM_SHADE = 0.8
WEED_CLEARANCE = 0.3
RENDER_BAND = 256


@dataclass
class FieldSpec:
    n_lines: int = 30
    plants_per_line: int = 50
    inter_row: float = 0.48
    intra_row: float = 0.18
    line_angle_deg: float = 0.0
    jitter: float = 0.01
    weed_fraction: float = 0.05
    dropout: float = 0.1
    growth: GrowthParams = field(default_factory=lambda: GrowthParams(0.85, 0.12, 45.0))
    days: Tuple[int, ...] = (0, 10, 20, 30, 40, 50, 60, 70, 80, 90)
    start_date: str = "2021-05-03"
    px_size: float = 0.005
    margin: float = 0.3
    max_shift: float = 0.10
    max_rotation_deg: float = 0.5
    scale_range: Tuple[float, float] = (0.995, 1.005)
    noise: float = 0.02
    center: Tuple[float, float] = (500000.0, 5712000.0)
    detection_noise: float = 0.003
    raster_shape: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        if self.inter_row <= 0 or self.intra_row <= 0:
            raise ValueError("Row spacings must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.n_lines < 1 or self.plants_per_line < 1:
            raise ValueError("Need at least one line with one plant")
        if self.px_size <= 0:
            raise ValueError("px_size must be positive")
        if not self.days or any(b <= a for a, b in zip(self.days, self.days[1:])):
            raise ValueError(f"days must be non-empty and strictly increasing, got {self.days}")

    @property
    def n_plants(self) -> int:
        return self.n_lines * self.plants_per_line

    def dates(self) -> List[str]:
        start = dt.date.fromisoformat(self.start_date)
        return [(start + dt.timedelta(days=int(day))).isoformat() for day in self.days]

    def to_dict(self) -> dict:
        data = asdict(self)
        data["days"] = list(self.days)
        data["scale_range"] = list(self.scale_range)
        data["center"] = list(self.center)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "FieldSpec":
        data = dict(data)
        if "growth" in data and isinstance(data["growth"], dict):
            data["growth"] = GrowthParams(**data["growth"])
        for key in ("days", "scale_range", "center", "raster_shape"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def from_json(cls, path: str) -> "FieldSpec":
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_dict(json.load(handle))

    def to_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.to_dict(), handle, indent=2)


def reference_spec() -> FieldSpec:
    """30 lines x 50 plants, 48/18 cm spacing, ten dates."""
    return FieldSpec()


@dataclass
class SyntheticField:
    spec: FieldSpec
    seed: int
    acquisitions: List[Acquisition]
    plants: np.ndarray
    weeds: np.ndarray
    injected: Dict[str, RigidTransform]
    visible: Dict[str, np.ndarray]
    truth: Dict[str, np.ndarray]
    geo: GeoTransform
    shape: Tuple[int, int]
    rasters: Dict[str, Raster] = field(default_factory=dict)
    detections: Dict[str, np.ndarray] = field(default_factory=dict)
    is_weed: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def dates(self) -> List[str]:
        return [a.key for a in self.acquisitions]

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.spec.center, dtype=float)

    def emerged(self, date: str) -> np.ndarray:
        """Plants visible on ``date`` or any earlier date; later dropouts stay in the field."""
        index = self.dates.index(date)
        return np.logical_or.reduce([self.visible[d] for d in self.dates[:index + 1]])

    def target_cover(self, date: str) -> float:
        """Plant cover the renderer aims for on ``date``."""
        day = self.spec.days[self.dates.index(date)]
        return float(growth_eval(self.spec.growth, day))


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed).jumped(stream))


def _local_to_crs(spec: FieldSpec, local: np.ndarray) -> np.ndarray:
    angle = math.radians(spec.line_angle_deg)
    cos, sin = math.cos(angle), math.sin(angle)
    rotation = np.array([[cos, -sin], [sin, cos]])
    return local @ rotation.T + np.asarray(spec.center, dtype=float)


def layout(spec: FieldSpec, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """True plant and weed positions in the CRS."""
    line_offsets = (np.arange(spec.n_lines) - (spec.n_lines - 1) / 2.0) * spec.inter_row
    along = (np.arange(spec.plants_per_line) - (spec.plants_per_line - 1) / 2.0) * spec.intra_row
    phases = rng.uniform(-0.5, 0.5, size=spec.n_lines) * spec.intra_row

    u = (along[np.newaxis, :] + phases[:, np.newaxis]).ravel()
    v = np.repeat(line_offsets, spec.plants_per_line)
    local = np.column_stack([u, v]) + rng.normal(0.0, spec.jitter, size=(spec.n_plants, 2))

    n_weeds = int(round(spec.weed_fraction * spec.n_plants))
    half_length = 0.5 * spec.plants_per_line * spec.intra_row
    weed_u = rng.uniform(-half_length, half_length, size=n_weeds)
    weed_line = rng.integers(0, spec.n_lines, size=n_weeds)
    weed_side = rng.choice([-1.0, 1.0], size=n_weeds)
    weed_gap = rng.uniform(WEED_CLEARANCE, 0.5, size=n_weeds) * spec.inter_row
    weed_v = line_offsets[weed_line] + weed_side * weed_gap
    weeds = np.column_stack([weed_u, weed_v]).reshape(-1, 2)

    return _local_to_crs(spec, local), _local_to_crs(spec, weeds)


def _raster_grid(spec: FieldSpec, positions: np.ndarray) -> Tuple[GeoTransform, Tuple[int, int]]:
    pad = spec.margin + spec.max_shift
    low = positions.min(axis=0) - pad
    high = positions.max(axis=0) + pad
    cols = int(math.ceil((high[0] - low[0]) / spec.px_size)) + 1
    rows = int(math.ceil((high[1] - low[1]) / spec.px_size)) + 1
    if spec.raster_shape is not None:
        want_rows, want_cols = spec.raster_shape
        if want_rows < rows or want_cols < cols:
            raise DegenerateInputError(
                f"Raster {want_rows}x{want_cols} px too small for the layout ({rows}x{cols} px needed)"
            )
        low = low - 0.5 * spec.px_size * np.array([want_cols - cols, want_rows - rows])
        rows, cols = want_rows, want_cols
    geo = GeoTransform(origin_x=float(low[0]), origin_y=float(low[1] + (rows - 1) * spec.px_size),
                       px_w=spec.px_size, px_h=-spec.px_size)
    return geo, (rows, cols)


def _draw_warp(spec: FieldSpec, rng: np.random.Generator) -> RigidTransform:
    """Rigid warp about the field center with bounded shift, rotation and scale."""
    scale = float(rng.uniform(*spec.scale_range))
    angle = math.radians(float(rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg)))
    direction = float(rng.uniform(0.0, 2.0 * math.pi))
    radius = float(rng.uniform(0.0, spec.max_shift))
    offset = radius * np.array([math.cos(direction), math.sin(direction)])
    about_center = RigidTransform(scale, angle, (0.0, 0.0))
    center = np.asarray(spec.center, dtype=float)
    shift = center + offset - about_center.apply(center[np.newaxis, :])[0]
    return RigidTransform(scale, angle, tuple(shift))


def _base_field(spec: FieldSpec, seed: int) -> SyntheticField:
    plants, weeds = layout(spec, _rng(seed, 0))
    geo, shape = _raster_grid(spec, np.vstack([plants, weeds]))
    acquisitions = acquisitions_from_dates(spec.dates())

    injected, visible, truth = {}, {}, {}
    for index, acquisition in enumerate(acquisitions):
        rng = _rng(seed, index + 1)
        warp = _draw_warp(spec, rng)
        injected[acquisition.key] = warp
        visible[acquisition.key] = rng.random(spec.n_plants) >= spec.dropout
        truth[acquisition.key] = warp.apply(plants)

    return SyntheticField(
        spec=spec, seed=seed, acquisitions=acquisitions, plants=plants, weeds=weeds,
        injected=injected, visible=visible, truth=truth, geo=geo, shape=shape,
    )


def generate_points(spec: FieldSpec, seed: int) -> SyntheticField:
    """Geometry only: per-date detections (visible plants plus weeds) without rasters."""
    synthetic = _base_field(spec, seed)
    for index, date in enumerate(synthetic.dates):
        rng = _rng(seed, 1000 + index)
        shown = synthetic.plants[synthetic.visible[date]]
        noisy = shown + rng.normal(0.0, spec.detection_noise, size=shown.shape)
        points = synthetic.injected[date].apply(np.vstack([noisy, synthetic.weeds]))
        synthetic.detections[date] = points
        synthetic.is_weed[date] = np.concatenate(
            [np.zeros(len(shown), dtype=bool), np.ones(len(synthetic.weeds), dtype=bool)]
        )
    return synthetic


def _distance_field(geo: GeoTransform, shape: Tuple[int, int], seeds: np.ndarray) -> np.ndarray:
    """Metric distance of every pixel to the nearest seed pixel."""
    if len(seeds) == 0:
        return np.full(shape, np.inf)
    col, row = crs_to_px(geo, seeds[:, 0], seeds[:, 1])
    col = np.clip(np.rint(col).astype(int), 0, shape[1] - 1)
    row = np.clip(np.rint(row).astype(int), 0, shape[0] - 1)
    free = np.ones(shape, dtype=bool)
    free[row, col] = False
    return ndimage.distance_transform_edt(free) * abs(geo.px_w)


def plant_shading(distance, radius: float) -> np.ndarray:
    """Plant color weight of a Gaussian bump cut at half maximum ``radius`` away.

    1 at the center, ``RIM_SHADE`` on the half-maximum rim and 0 outside.
    """
    distance = np.asarray(distance, dtype=float)
    if radius <= 0:
        return np.zeros(distance.shape)
    bump = np.exp2(-np.square(distance / radius))
    return np.where(bump >= 0.5, RIM_SHADE + (1.0 - RIM_SHADE) * (2.0 * bump - 1.0), 0.0)


def render_date(synthetic: SyntheticField, index: int, weed_distance: np.ndarray) -> Raster:
    spec = synthetic.spec
    acquisition = synthetic.acquisitions[index]
    date = acquisition.key
    rng = _rng(synthetic.seed, 2000 + index)
    rows, cols = synthetic.shape
    warp = synthetic.injected[date]
    plant_distance = _distance_field(synthetic.geo, synthetic.shape,
                                     synthetic.plants[synthetic.visible[date]])

    # sample both distance fields at the true-frame location of every observed pixel
    sampled_plant = np.empty(rows * cols)
    sampled_weed = np.empty(rows * cols)
    for start in range(0, rows, RENDER_BAND):
        stop = min(start + RENDER_BAND, rows)
        band_row, band_col = np.mgrid[start:stop, 0:cols]
        x, y = px_to_crs(synthetic.geo, band_col.ravel(), band_row.ravel())
        true_xy = warp.invert(np.column_stack([x, y]))
        src_col, src_row = crs_to_px(synthetic.geo, true_xy[:, 0], true_xy[:, 1])
        coords = np.vstack([src_row, src_col])
        sampled_plant[start * cols:stop * cols] = ndimage.map_coordinates(
            plant_distance, coords, order=1, mode="nearest")
        sampled_weed[start * cols:stop * cols] = ndimage.map_coordinates(
            weed_distance, coords, order=1, mode="nearest")

    target = synthetic.target_cover(date)
    if target > 0 and np.isfinite(sampled_plant).any():
        radius = float(np.quantile(sampled_plant, min(target, 1.0)))
    else:
        radius = 0.0
    shade = np.maximum(plant_shading(sampled_plant, radius),
                       plant_shading(sampled_weed, WEED_RADIUS_FACTOR * radius)).reshape(rows, cols)

    samples = np.empty((rows, cols, len(CHANNELS)), dtype=np.uint8)
    for channel, (soil, plant) in enumerate(zip(SOIL_COLOR, PLANT_COLOR)):
        plane = soil + (plant - soil) * shade + rng.normal(0.0, spec.noise, size=(rows, cols))
        samples[:, :, channel] = np.rint(np.clip(plane, 0.0, 1.0) * 255).astype(np.uint8)
    # keep the all-zero nodata sentinel out of the scene
    samples[np.all(samples == 0, axis=2)] = 1

    logger.info(f"✓ Rendered {date} (day {acquisition.day}): target cover {target:.3f}, "
                f"plant radius {radius * 100:.1f} cm")
    return Raster(CHANNELS, samples, synthetic.geo, acquisition=acquisition)


def generate(spec: FieldSpec, seed: int) -> SyntheticField:
    """Rasters, per-date truth and injected transforms; deterministic under ``seed``."""
    synthetic = generate_points(spec, seed)
    weed_distance = _distance_field(synthetic.geo, synthetic.shape, synthetic.weeds)
    for index, date in enumerate(synthetic.dates):
        synthetic.rasters[date] = render_date(synthetic, index, weed_distance)
    return synthetic


def expected_alignment(synthetic: SyntheticField, reference: str, date: str, x_mean) -> RigidTransform:
    """Transform from ``date``'s centralized frame to ``reference``'s centralized frame."""
    motion = synthetic.injected[reference].compose(synthetic.injected[date].inverse())
    return motion.conjugate(np.asarray(x_mean, dtype=float))


def truth_geojson(synthetic: SyntheticField) -> dict:
    features = []
    for date in synthetic.dates:
        emerged = synthetic.emerged(date)
        for plant_id, (x, y) in enumerate(synthetic.truth[date]):
            if not emerged[plant_id]:
                continue
            features.append({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [float(x), float(y)]},
                "properties": {"date": date, "plant": plant_id,
                               "visible": bool(synthetic.visible[date][plant_id])},
            })
    return {"type": "FeatureCollection", "features": features}


def default_config(synthetic: SyntheticField, raster_paths: Dict[str, str], truth_path: str,
                   output_dir: str) -> configparser.ConfigParser:
    """Ready-to-run pipeline configuration for a written field."""
    spec = synthetic.spec
    config = configparser.ConfigParser()
    config["pipeline"] = {"output_dir": output_dir, "seed": str(synthetic.seed), "order_by": "cover"}
    config["raster"] = {"channels": ",".join(CHANNELS), "nodata": "0",
                        "crs_note": "synthetic planar metric CRS"}
    config["field"] = {"intra_row_spacing": repr(spec.intra_row), "inter_row_spacing": repr(spec.inter_row)}
    config["segmentation"] = {"vi": "GLI", "cover_cutoff": "0.75"}
    config["detection"] = {"sigma_min": "2.0", "sigma_max": "10.0"}
    config["alignment"] = {"d_register": repr(max(0.3, 3.0 * spec.max_shift)),
                           "d_group": repr(0.25 * spec.intra_row)}
    config["lines"] = {"theta_d": "0.2"}
    config["catalog"] = {"frame_px": "128", "min_direct": "2"}
    config["evaluation"] = {"truth": truth_path, "tolerance": "0.08"}
    for acquisition in synthetic.acquisitions:
        config[f"Acquisition_{acquisition.key}"] = {
            "path": raster_paths[acquisition.key],
            "date": acquisition.key,
        }
    return config


def write_field(synthetic: SyntheticField, out_dir: str) -> Dict[str, str]:
    """Rasters with world files, truth.geojson, injected_transforms.json, spec.json and plantcat.ini."""
    raster_dir = os.path.join(out_dir, "rasters")
    os.makedirs(raster_dir, exist_ok=True)
    raster_paths = {}
    for date, raster in synthetic.rasters.items():
        path = os.path.join(raster_dir, f"{date}.tif")
        save_raster(raster, path)
        raster_paths[date] = os.path.join("rasters", f"{date}.tif")

    truth_path = os.path.join(out_dir, "truth.geojson")
    with open(truth_path, "w", encoding="utf-8") as handle:
        json.dump(truth_geojson(synthetic), handle)

    transforms_path = os.path.join(out_dir, "injected_transforms.json")
    with open(transforms_path, "w", encoding="utf-8") as handle:
        json.dump({date: t.to_dict() for date, t in synthetic.injected.items()}, handle, indent=2)

    spec_path = os.path.join(out_dir, "spec.json")
    synthetic.spec.to_json(spec_path)

    config_path = os.path.join(out_dir, "plantcat.ini")
    config = default_config(synthetic, raster_paths, "truth.geojson", "output")
    with open(config_path, "w", encoding="utf-8") as handle:
        config.write(handle)

    logger.info(f"✓ Wrote synthetic field with {len(synthetic.rasters)} dates to {out_dir}")
    return {"truth": truth_path, "transforms": transforms_path, "spec": spec_path, "config": config_path}


def small_spec(**overrides) -> FieldSpec:
    """Compact field for quick runs and tests."""
    base = FieldSpec(n_lines=6, plants_per_line=14, days=(0, 10, 20, 30), max_shift=0.04,
                     max_rotation_deg=0.3, margin=0.25)
    return replace(base, **overrides)
