import csv
import json

import numpy as np
import pytest

from plant_catalog import evalkit, synth
from plant_catalog.catalog import DIRECT, INDIRECT, Member, PlantCatalog, PlantCluster
from plant_catalog.errors import DegenerateInputError


def _brute_force(detections, truth, tolerance):
    tp = fp = fn = 0
    assigned = [[] for _ in truth]
    for det in detections:
        distances = [float(np.hypot(*(det - t))) for t in truth]
        best = int(np.argmin(distances))
        assigned[best].append(distances[best])
    for distances in assigned:
        if any(d <= tolerance for d in distances):
            tp += 1
            fp += len(distances) - 1
        else:
            fn += 1
            fp += len(distances)
    return tp, fp, fn


def test_score_matches_brute_force(rng):
    for _ in range(100):
        truth = rng.uniform(0, 2, size=(int(rng.integers(1, 30)), 2))
        detections = rng.uniform(0, 2, size=(int(rng.integers(0, 40)), 2))
        tolerance = float(rng.uniform(0.02, 0.3))
        result = evalkit.score(detections, truth, tolerance)
        assert (result.tp, result.fp, result.fn) == _brute_force(detections, truth, tolerance)
        assert result.tp + result.fn == len(truth)
        assert result.tp + result.fp == len(detections)


def test_nine_of_ten_matched():
    truth = np.column_stack([np.arange(10.0), np.zeros(10)])
    detections = truth.copy()
    detections[9] = [7.0, 0.16]
    result = evalkit.score(detections, truth, 0.08)
    assert (result.tp, result.fp, result.fn) == (9, 1, 1)
    assert result.precision == pytest.approx(0.9)
    assert result.recall == pytest.approx(0.9)


def test_double_detection_is_one_false_positive():
    result = evalkit.score([[0.01, 0.0], [0.0, 0.02]], [[0.0, 0.0]], 0.08)
    assert (result.tp, result.fp, result.fn) == (1, 1, 0)
    assert result.precision == 0.5
    assert result.recall == 1.0
    assert result.pairs == [(0, 0, pytest.approx(0.01))]


def test_identical_sets_are_perfect():
    truth = np.random.default_rng(2).uniform(size=(20, 2))
    result = evalkit.score(truth, truth, 0.01)
    assert result.precision == result.recall == 1.0


def test_score_arguments():
    with pytest.raises(ValueError):
        evalkit.score([[0, 0]], [[0, 0]], 0.0)
    with pytest.raises(DegenerateInputError):
        evalkit.score([[0, 0]], np.zeros((0, 2)), 0.08)
    empty = evalkit.score(np.zeros((0, 2)), [[0, 0]], 0.08)
    assert (empty.tp, empty.fp, empty.fn) == (0, 0, 1)
    assert empty.precision == 0.0


def test_presets():
    assert evalkit.TOLERANCE_PRESETS["sugar_beet"] == 0.08
    assert evalkit.TOLERANCE_PRESETS["cauliflower"] == 0.12


def test_leading_indirect_detections_are_skipped():
    cluster = PlantCluster(plant_id=0, line_id=0, centroid=np.zeros(2))
    cluster.members["2021-05-03"] = Member("2021-05-03", np.zeros(2), INDIRECT)
    cluster.members["2021-05-13"] = Member("2021-05-13", np.zeros(2), DIRECT)
    cluster.members["2021-05-23"] = Member("2021-05-23", np.zeros(2), INDIRECT)
    catalog = PlantCatalog(clusters=[cluster], transforms={}, x_mean=np.zeros(2), lines=None,
                           dates=["2021-05-03", "2021-05-13", "2021-05-23"],
                           usable_dates=["2021-05-13"])
    per_date = evalkit.catalog_detections(catalog)
    assert [len(per_date[d]) for d in catalog.dates] == [0, 1, 1]
    everything = evalkit.catalog_detections(catalog, skip_leading_indirect=False)
    assert [len(everything[d]) for d in catalog.dates] == [1, 1, 1]


def test_evaluate_needs_common_dates():
    with pytest.raises(DegenerateInputError):
        evalkit.evaluate({"2021-05-03": np.zeros((1, 2))}, {"2021-05-13": np.zeros((1, 2))}, 0.08)


def test_report_and_outputs(tmp_path):
    reports = [
        evalkit.score([[0, 0], [1, 0]], [[0, 0], [1, 0]], 0.08, "2021-05-03", day=0),
        evalkit.score([[0, 0]], [[0, 0], [1, 0]], 0.08, "2021-05-13", day=10),
    ]
    summary = evalkit.report(reports)
    assert summary.precision == 1.0
    assert summary.recall == pytest.approx(0.75)
    assert (summary.tp, summary.fp, summary.fn) == (3, 0, 1)
    assert summary.pooled_recall == pytest.approx(0.75)
    assert summary.pooled_precision == 1.0
    assert [p["day"] for p in summary.series()] == [0, 10]

    csv_path = tmp_path / "report.csv"
    evalkit.write_report_csv(summary, str(csv_path))
    with open(csv_path, newline="", encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    assert [row["date"] for row in rows] == ["2021-05-03", "2021-05-13", "mean"]
    assert rows[1]["recall"] == "0.500000"

    plot_path = tmp_path / "precision_recall.png"
    evalkit.plot_precision_recall(summary, str(plot_path))
    assert plot_path.stat().st_size > 0

    with pytest.raises(DegenerateInputError):
        evalkit.report([])


def test_load_truth(tmp_path):
    path = tmp_path / "truth.geojson"
    path.write_text(json.dumps({"type": "FeatureCollection", "features": [
        {"type": "Feature", "geometry": {"type": "Point", "coordinates": [1.0, 2.0]},
         "properties": {"date": "2021-05-13", "plant": 0}},
        {"type": "Feature", "geometry": {"type": "Point", "coordinates": [3.0, 4.0, 0.0]},
         "properties": {"date": "2021-05-03"}},
    ]}))
    truth = evalkit.load_truth(str(path))
    assert list(truth) == ["2021-05-03", "2021-05-13"]
    np.testing.assert_array_equal(truth["2021-05-03"], [[3.0, 4.0]])


def test_catalog_scores_against_synthetic_truth(small_catalog, small_points, tmp_path):
    path = tmp_path / "truth.geojson"
    path.write_text(json.dumps(synth.truth_geojson(small_points)))
    truth = evalkit.load_truth(str(path))
    reports = evalkit.evaluate_catalog(small_catalog, truth, evalkit.TOLERANCE_PRESETS["sugar_beet"])
    assert len(reports) == len(small_points.dates)
    for result in reports:
        assert result.precision >= 0.97
        assert result.recall >= 0.97
