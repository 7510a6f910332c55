import json

import numpy as np
import pytest
from scipy import ndimage
from scipy.spatial import cKDTree

from plant_catalog import synth
from plant_catalog.config_loader import load_pipeline_config
from plant_catalog.errors import DegenerateInputError
from plant_catalog.register import RigidTransform
from plant_catalog.vegidx import VIKind, compute_vi, segment_raster

SEED = 42


def _still_spec(**overrides):
    values = dict(dropout=0.0, jitter=0.0, weed_fraction=0.0, max_shift=0.0, max_rotation_deg=0.0,
                  scale_range=(1.0, 1.0), detection_noise=0.0)
    values.update(overrides)
    return synth.small_spec(**values)


def test_same_seed_same_field():
    a = synth.generate_points(synth.small_spec(), SEED)
    b = synth.generate_points(synth.small_spec(), SEED)
    for date in a.dates:
        np.testing.assert_array_equal(a.detections[date], b.detections[date])
        assert a.injected[date] == b.injected[date]
    c = synth.generate_points(synth.small_spec(), SEED + 1)
    assert not np.array_equal(a.plants, c.plants)


def test_per_date_streams_are_independent_of_date_count():
    short = synth.generate_points(synth.small_spec(days=(0, 10)), SEED)
    long = synth.generate_points(synth.small_spec(days=(0, 10, 20, 30)), SEED)
    np.testing.assert_array_equal(short.plants, long.plants)
    for date in short.dates:
        assert short.injected[date] == long.injected[date]
        np.testing.assert_array_equal(short.visible[date], long.visible[date])


def test_still_field_is_a_perfect_grid():
    field = synth.generate_points(_still_spec(), SEED)
    for date in field.dates:
        assert field.injected[date] == RigidTransform(1.0, 0.0, (0.0, 0.0))
        np.testing.assert_allclose(field.truth[date], field.plants, atol=1e-9)
        assert field.visible[date].all()
    distance, _ = cKDTree(field.plants).query(field.plants, k=2)
    np.testing.assert_allclose(distance[:, 1], 0.18, atol=1e-8)
    rows = np.unique(np.round(field.plants[:, 1] - field.center[1], 6))
    np.testing.assert_allclose(np.diff(rows), 0.48, atol=1e-6)


def test_line_angle_rotates_the_layout():
    field = synth.generate_points(_still_spec(line_angle_deg=-14.0), SEED)
    local = field.plants - field.center
    first_line = local[:field.spec.plants_per_line]
    direction = first_line[-1] - first_line[0]
    assert np.degrees(np.arctan2(direction[1], direction[0])) == pytest.approx(-14.0, abs=1e-6)


def test_weeds_keep_clear_of_the_lines():
    field = synth.generate_points(synth.small_spec(weed_fraction=0.3), SEED)
    offsets = (np.arange(field.spec.n_lines) - (field.spec.n_lines - 1) / 2.0) * field.spec.inter_row
    across = field.weeds[:, 1] - field.center[1]
    gaps = np.min(np.abs(across[:, np.newaxis] - offsets[np.newaxis, :]), axis=1)
    assert len(field.weeds) == round(0.3 * field.spec.n_plants)
    assert np.all(gaps >= synth.WEED_CLEARANCE * field.spec.inter_row - 1e-9)


def test_emerged_is_cumulative(small_points):
    previous = np.zeros(small_points.spec.n_plants, dtype=bool)
    for date in small_points.dates:
        emerged = small_points.emerged(date)
        assert np.all(emerged >= previous)
        assert np.all(emerged >= small_points.visible[date])
        previous = emerged


def test_rendered_cover_follows_growth(small_field):
    for date, raster in small_field.rasters.items():
        assert raster.samples.dtype == np.uint8
        assert raster.shape == small_field.shape
        assert not raster.nodata_mask.any()
        target = small_field.target_cover(date)
        if target >= 0.1:
            cover = segment_raster(raster, VIKind.GLI).cover_ratio
            assert cover == pytest.approx(target, abs=0.02)


def test_fixed_raster_shape():
    spec = synth.small_spec(raster_shape=(800, 900))
    field = synth.generate_points(spec, SEED)
    assert field.shape == (800, 900)
    with pytest.raises(DegenerateInputError):
        synth.generate_points(synth.small_spec(raster_shape=(10, 10)), SEED)


@pytest.mark.parametrize("overrides", [
    {"inter_row": 0.0},
    {"dropout": 1.0},
    {"n_lines": 0},
    {"px_size": -0.005},
    {"days": (10, 10)},
])
def test_spec_validation(overrides):
    with pytest.raises(ValueError):
        synth.small_spec(**overrides)


def test_spec_json_round_trip(tmp_path):
    spec = synth.small_spec(line_angle_deg=7.3, raster_shape=(700, 800))
    path = tmp_path / "spec.json"
    spec.to_json(str(path))
    assert synth.FieldSpec.from_json(str(path)) == spec
    assert synth.reference_spec().n_plants == 1500


def test_written_field(written_field, small_field):
    with open(written_field["truth"], encoding="utf-8") as handle:
        truth = json.load(handle)
    expected = sum(int(small_field.emerged(date).sum()) for date in small_field.dates)
    assert len(truth["features"]) == expected

    with open(written_field["transforms"], encoding="utf-8") as handle:
        injected = {d: RigidTransform.from_dict(t) for d, t in json.load(handle).items()}
    assert injected == small_field.injected

    config = load_pipeline_config(written_field["config"], output_dir=str(written_field["dir"]) + "/run")
    assert config.dates == small_field.dates
    assert config.intra_row_spacing == pytest.approx(0.18)
    assert config.evaluation.truth == written_field["truth"]


def test_plant_shading_fades_to_the_half_maximum_rim():
    distance = np.array([0.0, 0.01, 0.02, 0.03, 0.0300001, 0.1])
    shade = synth.plant_shading(distance, 0.03)
    assert shade[0] == pytest.approx(1.0)
    assert np.all(np.diff(shade[:4]) < 0)
    assert shade[3] == pytest.approx(synth.RIM_SHADE)
    assert shade[4] == 0.0 and shade[5] == 0.0
    assert not synth.plant_shading(distance, 0.0).any()


def test_rendered_plants_are_greener_at_the_center(small_field):
    date = small_field.dates[-1]
    gli = compute_vi(small_field.rasters[date], VIKind.GLI).values
    plants = segment_raster(small_field.rasters[date], VIKind.GLI).mask
    core = ndimage.binary_erosion(plants, iterations=2)
    rim = plants & ~ndimage.binary_erosion(plants)
    assert gli[core].mean() > gli[rim].mean() + 0.02
