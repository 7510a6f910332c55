"""Shared fixtures: small georeferenced rasters and one synthetic field per session."""
import numpy as np
import pytest

from plant_catalog import synth
from plant_catalog.catalog import build_catalog
from plant_catalog.lines import filter_weed, recognize_lines
from plant_catalog.raster import GeoTransform, Raster
from plant_catalog.register import align_all, centralize

SEED = 42


@pytest.fixture
def geo():
    return GeoTransform(origin_x=500000.0, origin_y=5712000.0, px_w=0.005, px_h=-0.005)


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)


@pytest.fixture
def make_raster(geo):
    """Raster factory: ``make_raster(samples, channels)`` with the shared geotransform."""

    def factory(samples, channels=("R", "G", "B"), nodata=0):
        return Raster(tuple(channels), np.asarray(samples), geo, nodata=nodata)

    return factory


@pytest.fixture(scope="session")
def small_points():
    """Geometry-only synthetic field (no rasters)."""
    return synth.generate_points(synth.small_spec(), SEED)


@pytest.fixture(scope="session")
def small_field():
    return synth.generate(synth.small_spec(), SEED)


@pytest.fixture(scope="session")
def written_field(small_field, tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("field")
    paths = synth.write_field(small_field, str(out_dir))
    paths["dir"] = str(out_dir)
    return paths


@pytest.fixture(scope="session")
def small_catalog(small_points):
    """Catalog built from the geometry-only field, plus its intermediate products."""
    spec = small_points.spec
    clouds = centralize(small_points.detections)
    alignment = align_all(clouds, small_points.dates, d_register=0.3, d_group=0.25 * spec.intra_row)
    points = np.vstack([alignment.aligned[date] for date in small_points.dates])
    lines = recognize_lines(points)
    valid = {date: filter_weed(alignment.aligned[date], lines).valid for date in small_points.dates}
    catalog = build_catalog(
        aligned=alignment.aligned,
        raw={date: clouds.restore(date) for date in small_points.dates},
        valid=valid,
        order=alignment.order,
        transforms=alignment.transforms,
        x_mean=alignment.x_mean,
        lines=lines,
        dates=small_points.dates,
        d_max=0.4 * spec.intra_row,
    )
    return catalog
