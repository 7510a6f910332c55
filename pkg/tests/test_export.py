import csv
import json

import numpy as np

from plant_catalog import export
from plant_catalog.catalog import DIRECT, INDIRECT, Member, PlantCatalog, PlantCluster
from plant_catalog.lines import SeedingLines
from plant_catalog.register import RigidTransform

DATES = ["2021-05-03", "2021-05-13"]


def _catalog():
    clusters = []
    for plant_id, (x, y) in enumerate([(0.0, 0.0), (0.18, 0.0), (0.0, 0.48)]):
        cluster = PlantCluster(plant_id=plant_id, line_id=int(y > 0), centroid=np.array([x, y]))
        cluster.members[DATES[0]] = Member(DATES[0], np.array([x + 100.0, y + 200.0]), DIRECT)
        cluster.members[DATES[1]] = Member(DATES[1], np.array([x + 100.01, y + 200.0]), INDIRECT)
        clusters.append(cluster)
    return PlantCatalog(
        clusters=clusters,
        transforms={date: RigidTransform.identity() for date in DATES},
        x_mean=np.array([100.0, 200.0]),
        lines=SeedingLines(0.0, [0.0, 0.48], 0.48),
        dates=list(DATES),
        usable_dates=list(DATES),
    )


def test_csv_rows_per_plant_and_date(tmp_path):
    path = tmp_path / "out" / "catalog.csv"
    export.write_csv(_catalog(), str(path), {1: {"status": "diseased"}})
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == 6
    assert rows[0] == {"plant_id": "0", "line_id": "0", "date": DATES[0], "x": "100.0", "y": "200.0",
                       "kind": DIRECT, "status": ""}
    assert rows[3]["kind"] == INDIRECT
    assert rows[2]["status"] == "diseased"


def test_geojson_features():
    data = export.to_geojson(_catalog(), {2: {"note": "gap"}})
    assert data["type"] == "FeatureCollection"
    assert len(data["features"]) == 6
    last = data["features"][-1]
    assert last["properties"] == {"id": 2, "line": 1, "date": DATES[1], "kind": INDIRECT, "note": "gap"}
    assert last["geometry"]["coordinates"] == [100.01, 200.48]


def test_kml_has_one_placemark_per_plant(tmp_path):
    path = tmp_path / "catalog.kml"
    export.write_kml(_catalog(), str(path), crs_note="EPSG:25832")
    text = path.read_text(encoding="utf-8")
    assert text.count("<Placemark") == 3
    assert "<name>2</name>" in text
    assert "EPSG:25832" in text


def test_export_all_and_annotations(tmp_path):
    annotations_path = tmp_path / "notes.csv"
    annotations_path.write_text("id,status\n0,ok\nx,bad\n1,missing\n", encoding="utf-8")
    annotations = export.load_annotations(str(annotations_path))
    assert annotations == {0: {"status": "ok"}, 1: {"status": "missing"}}

    paths = export.export_all(_catalog(), str(tmp_path / "export"), annotations)
    assert sorted(paths) == ["csv", "geojson", "kml"]
    with open(paths["geojson"], encoding="utf-8") as handle:
        assert json.load(handle)["features"][0]["properties"]["status"] == "ok"
