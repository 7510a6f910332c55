import math

import numpy as np
import pytest

from plant_catalog import synth
from plant_catalog.errors import DegenerateInputError
from plant_catalog.register import (
    RigidTransform,
    align_all,
    centralize,
    load_alignment,
    load_transforms,
    mutually_near,
    order_by_cover,
    rigid_cpd,
    save_alignment,
    save_transforms,
)


def _random_transform(rng, max_angle_deg=5.0, max_shift=0.05, scale_spread=0.02):
    return RigidTransform(
        float(rng.uniform(1 - scale_spread, 1 + scale_spread)),
        math.radians(float(rng.uniform(-max_angle_deg, max_angle_deg))),
        tuple(rng.uniform(-max_shift, max_shift, size=2)),
    )


def test_transform_round_trips(rng):
    for _ in range(100):
        t = RigidTransform(float(rng.uniform(0.5, 2.0)), float(rng.uniform(-math.pi, math.pi)),
                           tuple(rng.uniform(-100, 100, size=2)))
        points = rng.uniform(-50, 50, size=(10, 2))
        np.testing.assert_allclose(t.invert(t.apply(points)), points, atol=1e-9)
        np.testing.assert_allclose(t.inverse().apply(points), t.invert(points), atol=1e-9)
        np.testing.assert_allclose(t.compose(t.inverse()).apply(points), points, atol=1e-9)


def test_compose_and_conjugate(rng):
    a, b = _random_transform(rng), _random_transform(rng)
    points = rng.uniform(-5, 5, size=(8, 2))
    np.testing.assert_allclose(a.compose(b).apply(points), a.apply(b.apply(points)), atol=1e-12)
    offset = np.array([500000.0, 5712000.0])
    conjugated = a.conjugate(offset)
    np.testing.assert_allclose(conjugated.apply(points), a.apply(points + offset) - offset, atol=1e-6)


def test_transform_dict_and_validation():
    t = RigidTransform(1.01, 0.002, (0.05, -0.02))
    assert RigidTransform.from_dict(t.to_dict()) == t
    assert t.angle_deg == pytest.approx(math.degrees(0.002))
    with pytest.raises(ValueError):
        RigidTransform(0.0)


def test_inverse_of_pure_shift():
    # identity scale and rotation: x' = x - 0.05
    t = RigidTransform(1.0, 0.0, (0.05, 0.0))
    np.testing.assert_allclose(t.invert([[1.0, 1.0]]), [[0.95, 1.0]])


def test_centralize_uses_mean_of_layer_means():
    clouds = centralize({
        "a": np.array([[0.0, 0.0], [2.0, 0.0]]),
        "b": np.array([[10.0, 10.0]]),
        "c": np.zeros((0, 2)),
    })
    np.testing.assert_allclose(clouds.x_mean, [5.5, 5.0])
    np.testing.assert_allclose(clouds.restore("b"), [[10.0, 10.0]])
    assert clouds.layers["c"].shape == (0, 2)
    with pytest.raises(DegenerateInputError):
        centralize({"a": np.zeros((0, 2))})


def test_cpd_identity():
    points = np.random.default_rng(3).uniform(-1, 1, size=(50, 2))
    result = rigid_cpd(points, points)
    assert result.converged
    assert result.transform.scale == pytest.approx(1.0, abs=1e-6)
    assert result.transform.angle == pytest.approx(0.0, abs=1e-6)
    np.testing.assert_allclose(result.transform.shift, [0.0, 0.0], atol=1e-6)


def test_cpd_recovers_transform_and_nll_never_increases(rng):
    for _ in range(100):
        basis = rng.uniform(-1, 1, size=(60, 2))
        truth = _random_transform(rng)
        floating = truth.invert(basis) + rng.normal(0.0, 1e-3, size=basis.shape)
        keep = rng.random(len(floating)) > 0.1
        result = rigid_cpd(basis, floating[keep], w=0.1)

        history = np.asarray(result.nll_history)
        increase = np.diff(history)
        assert np.all(increase <= 1e-8 * (1.0 + np.abs(history[:-1])))
        moved = result.transform.apply(floating[keep])
        np.testing.assert_allclose(moved, basis[keep], atol=0.01)


def test_cpd_clamps_scale():
    points = np.random.default_rng(5).uniform(-1, 1, size=(40, 2))
    result = rigid_cpd(points, points * 0.5, scale_bounds=(0.9, 1.1))
    assert result.transform.scale == pytest.approx(1.1)


@pytest.mark.parametrize("cloud", [
    np.array([[0.0, 0.0], [1.0, 1.0]]),
    np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]),
])
def test_cpd_degenerate_clouds(cloud):
    good = np.random.default_rng(0).uniform(size=(10, 2))
    with pytest.raises(DegenerateInputError):
        rigid_cpd(good, cloud)
    with pytest.raises(DegenerateInputError):
        rigid_cpd(cloud, good)


def test_mutually_near():
    basis = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]])
    floating = np.array([[0.05, 0.0], [1.02, 0.0], [9.0, 9.0]])
    keep_basis, keep_floating = mutually_near(basis, floating, 0.1)
    np.testing.assert_array_equal(keep_basis, [True, True, False])
    np.testing.assert_array_equal(keep_floating, [True, True, False])


def test_order_by_cover_ties_by_date():
    cover = {"2021-05-13": 0.1, "2021-05-03": 0.1, "2021-05-23": 0.05}
    assert order_by_cover(cover) == ["2021-05-23", "2021-05-03", "2021-05-13"]


def test_align_all_rejects_group_radius_above_register_radius(small_points):
    clouds = centralize(small_points.detections)
    with pytest.raises(ValueError):
        align_all(clouds, small_points.dates, d_register=0.1, d_group=0.1)


def test_align_all_recovers_injected_warps(small_points):
    spec = small_points.spec
    clouds = centralize(small_points.detections)
    order = small_points.dates
    result = align_all(clouds, order, d_register=max(0.3, 3 * spec.max_shift), d_group=0.25 * spec.intra_row)

    assert result.order == order
    assert result.transforms[order[0]] == RigidTransform.identity()
    assert not any("cannot register" in flag for flag in result.flags.values())
    for date in order[1:]:
        expected = synth.expected_alignment(small_points, order[0], date, clouds.x_mean)
        found = result.transforms[date]
        assert found.scale == pytest.approx(expected.scale, abs=0.002)
        assert math.degrees(abs(found.angle - expected.angle)) <= 0.1
        layer = clouds.layers[date]
        assert np.max(np.linalg.norm(found.apply(layer) - expected.apply(layer), axis=1)) <= 0.01


def test_align_all_flags_unregistrable_layer():
    rng = np.random.default_rng(11)
    reference = rng.uniform(-1, 1, size=(30, 2))
    collinear = np.column_stack([np.linspace(-1, 1, 10), np.zeros(10)])
    clouds = centralize({"2021-05-03": reference, "2021-05-13": collinear, "2021-05-23": np.zeros((0, 2))})
    result = align_all(clouds, ["2021-05-03", "2021-05-13", "2021-05-23"], d_register=0.5, d_group=0.05)
    assert "cannot register" in result.flags["2021-05-13"]
    assert result.flags["2021-05-23"] == "empty layer"
    assert result.transforms["2021-05-13"] == RigidTransform.identity()
    np.testing.assert_array_equal(result.aligned["2021-05-13"], clouds.layers["2021-05-13"])


def test_alignment_files_round_trip(tmp_path, small_points):
    clouds = centralize(small_points.detections)
    order = small_points.dates
    result = align_all(clouds, order, d_register=0.3, d_group=0.045)
    cover = {date: 0.1 * i for i, date in enumerate(order)}

    save_alignment(result, clouds, str(tmp_path / "aligned.json"), cover)
    aligned, raw, x_mean, loaded_order, loaded_cover = load_alignment(str(tmp_path / "aligned.json"))
    assert loaded_order == order
    assert loaded_cover == cover
    np.testing.assert_array_equal(x_mean, clouds.x_mean)
    for date in order:
        np.testing.assert_array_equal(aligned[date], result.aligned[date])
        np.testing.assert_allclose(raw[date], small_points.detections[date], atol=1e-6)

    save_transforms(result.transforms, str(tmp_path / "transforms.json"), result.flags)
    assert load_transforms(str(tmp_path / "transforms.json")) == result.transforms
