import datetime as dt
import os

import numpy as np
import pytest

from plant_catalog.errors import RasterError
from plant_catalog.raster import (
    GeoTransform,
    Raster,
    acquisitions_from_dates,
    crs_to_px,
    find_world_file,
    load_mask,
    load_raster,
    points_to_crs,
    points_to_px,
    px_to_crs,
    read_world_file,
    save_mask,
    save_raster,
    world_file_candidates,
    write_world_file,
)


def test_pixel_to_crs_axis_aligned(geo):
    assert px_to_crs(geo, 0, 0) == (500000.0, 5712000.0)
    x, y = px_to_crs(geo, 200, 100)
    assert x == pytest.approx(500001.0)
    assert y == pytest.approx(5711999.5)


def test_crs_to_pixel_inverts_rotated_transform(rng):
    for _ in range(100):
        values = rng.uniform(-1, 1, size=4)
        geo = GeoTransform(rng.uniform(-1e5, 1e5), rng.uniform(-1e5, 1e5),
                           0.01 + abs(values[0]), -0.01 - abs(values[1]), 0.1 * values[2], 0.1 * values[3])
        px = rng.uniform(0, 3000, size=(20, 2))
        back = points_to_px(geo, points_to_crs(geo, px))
        np.testing.assert_allclose(back, px, atol=1e-6)


def test_scalar_round_trip(geo):
    col, row = crs_to_px(geo, *px_to_crs(geo, 12.5, 7.25))
    assert col == pytest.approx(12.5, abs=1e-9)
    assert row == pytest.approx(7.25, abs=1e-9)


def test_singular_transform_rejected():
    with pytest.raises(RasterError):
        GeoTransform(0.0, 0.0, 1.0, 1.0, 1.0, 1.0)


def test_world_file_values_order():
    geo = GeoTransform.from_world_values([0.02, 0.001, -0.002, -0.02, 10.0, 20.0])
    assert geo.px_w == 0.02
    assert geo.rot_yx == 0.001
    assert geo.rot_xy == -0.002
    assert geo.px_h == -0.02
    assert (geo.origin_x, geo.origin_y) == (10.0, 20.0)
    assert geo.world_values() == (0.02, 0.001, -0.002, -0.02, 10.0, 20.0)


def test_world_file_round_trip_is_exact(tmp_path):
    geo = GeoTransform(500123.456789, 5712345.678901, 0.0049999, -0.0050001, 1e-7, -3e-7)
    path = tmp_path / "a.tfw"
    write_world_file(geo, path)
    assert read_world_file(path) == geo


def test_world_file_wrong_value_count(tmp_path):
    path = tmp_path / "bad.tfw"
    path.write_text("1.0\n0.0\n0.0\n")
    with pytest.raises(RasterError):
        read_world_file(path)


def test_world_file_candidates():
    assert world_file_candidates("ortho.png") == ["ortho.pgw", "ortho.wld", "ortho.pngw"]
    assert world_file_candidates("ortho.tif")[0] == "ortho.tfw"


def test_find_world_file_prefers_short_extension(tmp_path, geo):
    raster_path = tmp_path / "ortho.png"
    write_world_file(geo, str(tmp_path / "ortho.wld"))
    assert find_world_file(str(raster_path)) == str(tmp_path / "ortho.wld")
    write_world_file(geo, str(tmp_path / "ortho.pgw"))
    assert find_world_file(str(raster_path)) == str(tmp_path / "ortho.pgw")


def test_acquisition_days_relative_to_first():
    acquisitions = acquisitions_from_dates(["2021-05-13", "2021-05-03", dt.date(2021, 6, 2)])
    assert [a.key for a in acquisitions] == ["2021-05-03", "2021-05-13", "2021-06-02"]
    assert [a.day for a in acquisitions] == [0, 10, 30]


def test_channel_normalization(make_raster):
    samples = np.zeros((2, 2, 3), dtype=np.uint16)
    samples[0, 0] = [65535, 0, 32768]
    raster = make_raster(samples)
    assert raster.channel("r")[0, 0] == 1.0
    assert raster.channel("B")[0, 0] == pytest.approx(32768 / 65535)
    with pytest.raises(RasterError):
        raster.channel("NIR")


def test_nodata_mask_requires_all_channels(make_raster):
    samples = np.ones((2, 3, 3), dtype=np.uint8)
    samples[0, 0] = 0
    samples[1, 1, 0] = 0
    raster = make_raster(samples)
    expected = np.zeros((2, 3), dtype=bool)
    expected[0, 0] = True
    np.testing.assert_array_equal(raster.nodata_mask, expected)


def test_channel_count_mismatch(geo):
    with pytest.raises(RasterError):
        Raster(("R", "G"), np.zeros((2, 2, 3), dtype=np.uint8), geo)


@pytest.mark.parametrize("ext,dtype", [(".tif", np.uint8), (".tif", np.uint16), (".png", np.uint8)])
def test_save_load_preserves_samples_and_geo(tmp_path, make_raster, geo, rng, ext, dtype):
    high = np.iinfo(dtype).max
    samples = rng.integers(1, high, size=(17, 23, 3), endpoint=True).astype(dtype)
    path = str(tmp_path / f"ortho{ext}")
    world = save_raster(make_raster(samples), path)
    assert os.path.exists(world)

    loaded = load_raster(path)
    assert loaded.channels == ("R", "G", "B")
    assert loaded.samples.dtype == dtype
    np.testing.assert_array_equal(loaded.samples, samples)
    assert loaded.geo == geo


def test_four_channel_default_names(tmp_path, make_raster):
    samples = np.full((4, 5, 4), 7, dtype=np.uint8)
    path = str(tmp_path / "multi.tif")
    save_raster(make_raster(samples, ("R", "G", "B", "NIR")), path)
    assert load_raster(path).channels == ("R", "G", "B", "NIR")
    with pytest.raises(RasterError):
        load_raster(path, channels=("R", "G", "B"))


def test_missing_georeferencing(tmp_path, make_raster, geo):
    path = str(tmp_path / "bare.tif")
    save_raster(make_raster(np.ones((3, 3, 3), dtype=np.uint8)), path, worldfile=False)
    with pytest.raises(RasterError):
        load_raster(path)
    assert load_raster(path, geotransform=geo).geo == geo


def test_missing_raster(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_raster(str(tmp_path / "nothing.tif"))


def test_mask_round_trip(tmp_path, geo, rng):
    mask = rng.random((12, 9)) > 0.5
    path = str(tmp_path / "mask.png")
    save_mask(mask, geo, path)
    loaded, loaded_geo = load_mask(path)
    np.testing.assert_array_equal(loaded, mask)
    assert loaded_geo == geo
