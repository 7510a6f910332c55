"""Catalog exports for GIS tools: CSV, GeoJSON and KML.

Coordinates are written in the planar CRS of the inputs. Optional per-plant
annotations (an ``id`` column plus free columns) pass through unchanged.
"""
import csv
import json
import logging
import os
from typing import Dict, Mapping, Optional

import simplekml

from plant_catalog.catalog import PlantCatalog

logger = logging.getLogger(__name__)

Annotations = Mapping[int, Mapping[str, str]]


def load_annotations(path: str) -> Dict[int, Dict[str, str]]:
    """Per-plant attributes from a CSV keyed by an ``id`` column."""
    annotations: Dict[int, Dict[str, str]] = {}
    with open(path, "r", newline="", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            try:
                plant_id = int(row.pop("id"))
            except (KeyError, TypeError, ValueError):
                logger.warning(f"Skipping annotation row without a valid id: {row}")
                continue
            annotations[plant_id] = {key: value for key, value in row.items() if key}
    logger.info(f"Loaded annotations for {len(annotations)} plants from {path}")
    return annotations


def _annotation_columns(annotations: Optional[Annotations]):
    columns = []
    for values in (annotations or {}).values():
        for key in values:
            if key not in columns:
                columns.append(key)
    return columns


def write_csv(catalog: PlantCatalog, path: str, annotations: Optional[Annotations] = None) -> None:
    """One row per plant and date."""
    extra = _annotation_columns(annotations)
    _ensure_dir(path)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["plant_id", "line_id", "date", "x", "y", "kind"] + extra)
        for cluster in catalog.clusters:
            attributes = (annotations or {}).get(cluster.plant_id, {})
            for date, member in sorted(cluster.members.items()):
                writer.writerow(
                    [cluster.plant_id, cluster.line_id, date,
                     repr(float(member.position[0])), repr(float(member.position[1])), member.kind]
                    + [attributes.get(key, "") for key in extra]
                )


def to_geojson(catalog: PlantCatalog, annotations: Optional[Annotations] = None) -> dict:
    features = []
    for cluster in catalog.clusters:
        attributes = dict((annotations or {}).get(cluster.plant_id, {}))
        for date, member in sorted(cluster.members.items()):
            properties = {"id": cluster.plant_id, "line": cluster.line_id, "date": date, "kind": member.kind}
            properties.update(attributes)
            features.append({
                "type": "Feature",
                "geometry": {
                    "type": "Point",
                    "coordinates": [float(member.position[0]), float(member.position[1])],
                },
                "properties": properties,
            })
    return {"type": "FeatureCollection", "features": features}


def write_geojson(catalog: PlantCatalog, path: str, annotations: Optional[Annotations] = None) -> None:
    _ensure_dir(path)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(to_geojson(catalog, annotations), handle, indent=2)


def write_kml(catalog: PlantCatalog, path: str, annotations: Optional[Annotations] = None,
              crs_note: str = "") -> None:
    """One placemark per plant at its centroid in the reference acquisition's CRS."""
    kml = simplekml.Kml()
    kml.document.name = "Plant catalog"
    if crs_note:
        kml.document.description = f"Coordinates: {crs_note}"
    for cluster in catalog.clusters:
        x, y = catalog.reference_position(cluster)
        lines = [f"line {cluster.line_id}", f"direct detections: {cluster.n_direct}"]
        attributes = (annotations or {}).get(cluster.plant_id, {})
        lines.extend(f"{key}: {value}" for key, value in attributes.items())
        point = kml.newpoint(name=str(cluster.plant_id), coords=[(float(x), float(y))],
                             description="\n".join(lines))
        point.extendeddata.newdata(name="line_id", value=str(cluster.line_id))
        for key, value in attributes.items():
            point.extendeddata.newdata(name=key, value=str(value))
    _ensure_dir(path)
    kml.save(path)


def export_all(catalog: PlantCatalog, out_dir: str, annotations: Optional[Annotations] = None,
               crs_note: str = "") -> Dict[str, str]:
    paths = {
        "csv": os.path.join(out_dir, "catalog.csv"),
        "geojson": os.path.join(out_dir, "catalog.geojson"),
        "kml": os.path.join(out_dir, "catalog.kml"),
    }
    write_csv(catalog, paths["csv"], annotations)
    write_geojson(catalog, paths["geojson"], annotations)
    write_kml(catalog, paths["kml"], annotations, crs_note)
    logger.info(f"✓ Exported catalog to {out_dir}")
    return paths


def _ensure_dir(path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
