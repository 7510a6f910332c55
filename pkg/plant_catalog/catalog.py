"""Spatio-temporal plant catalog.

Aligned, weed-filtered detections of all dates are clustered into plant
identities, relabeled along the seeding lines and completed with indirect
detections for dates without a direct one.
"""
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from plant_catalog.lines import SeedingLines, rotate_points
from plant_catalog.register import RigidTransform

logger = logging.getLogger(__name__)

DIRECT = "direct"
INDIRECT = "indirect"
DISCARDED = -1


@dataclass
class ClusterResult:
    """Per-layer labels (``-1`` = discarded) and the final centroids."""

    labels: List[np.ndarray]
    centroids: np.ndarray
    counts: np.ndarray


def cluster_layers(layers: Sequence[np.ndarray], d_max: float) -> ClusterResult:
    """Iterative point clustering across layers.

    The first layer seeds one cluster per point. In every later layer a point
    joins its nearest centroid when within ``d_max``; of several such candidates
    for one centroid only the closest joins (ties: lowest point index) and the
    others are labeled -1. Points farther than ``d_max`` from every centroid open
    new clusters in point order. Centroids are recomputed after each layer.
    """
    if not layers:
        raise ValueError("cluster_layers needs at least one layer")

    sums = np.zeros((0, 2))
    counts = np.zeros(0, dtype=int)
    labels: List[np.ndarray] = []

    for layer in layers:
        points = np.asarray(layer, dtype=float).reshape(-1, 2)
        layer_labels = np.full(len(points), DISCARDED, dtype=int)

        if len(counts) and len(points):
            centroids = sums / counts[:, np.newaxis]
            distance, nearest = cKDTree(centroids).query(points)
            within = np.nonzero(distance <= d_max)[0]
            order = within[np.lexsort((within, distance[within]))]
            taken = set()
            for index in order:
                cluster = int(nearest[index])
                if cluster in taken:
                    continue
                taken.add(cluster)
                layer_labels[index] = cluster
            opening = np.nonzero(distance > d_max)[0]
        else:
            opening = np.arange(len(points))

        new_labels = len(counts) + np.arange(len(opening))
        layer_labels[opening] = new_labels
        sums = np.vstack([sums, np.zeros((len(opening), 2))])
        counts = np.concatenate([counts, np.zeros(len(opening), dtype=int)])

        members = layer_labels >= 0
        np.add.at(sums, layer_labels[members], points[members])
        np.add.at(counts, layer_labels[members], 1)
        labels.append(layer_labels)

    centroids = sums / np.maximum(counts, 1)[:, np.newaxis]
    return ClusterResult(labels=labels, centroids=centroids, counts=counts)


@dataclass
class Member:
    date: str
    position: np.ndarray
    kind: str
    aligned: Optional[np.ndarray] = None
    point_index: Optional[int] = None


@dataclass
class PlantCluster:
    plant_id: int
    line_id: int
    centroid: np.ndarray
    members: Dict[str, Member] = field(default_factory=dict)

    @property
    def n_direct(self) -> int:
        return sum(1 for member in self.members.values() if member.kind == DIRECT)

    def first_direct_date(self) -> Optional[str]:
        direct = sorted(d for d, member in self.members.items() if member.kind == DIRECT)
        return direct[0] if direct else None


@dataclass
class PlantCatalog:
    clusters: List[PlantCluster]
    transforms: Dict[str, RigidTransform]
    x_mean: np.ndarray
    lines: Optional[SeedingLines]
    dates: List[str]
    usable_dates: List[str]
    point_labels: Dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.clusters)

    def reference_position(self, cluster: PlantCluster) -> np.ndarray:
        """Centroid in the CRS of the reference acquisition."""
        return cluster.centroid + self.x_mean

    def to_dict(self) -> dict:
        return {
            "dates": list(self.dates),
            "usable_dates": list(self.usable_dates),
            "x_mean": [float(v) for v in self.x_mean],
            "alpha_s": None if self.lines is None else self.lines.alpha_deg,
            "lines": None if self.lines is None else self.lines.to_dict(),
            "transforms": {d: t.to_dict() for d, t in sorted(self.transforms.items())},
            "plants": [
                {
                    "id": cluster.plant_id,
                    "line_id": cluster.line_id,
                    "centroid_xy": [float(v) for v in cluster.centroid],
                    "members": [
                        {
                            "date": date,
                            "x": float(member.position[0]),
                            "y": float(member.position[1]),
                            "kind": member.kind,
                        }
                        for date, member in sorted(cluster.members.items())
                    ],
                }
                for cluster in self.clusters
            ],
            "point_labels": {d: labels.tolist() for d, labels in sorted(self.point_labels.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PlantCatalog":
        clusters = []
        for plant in data["plants"]:
            members = {
                m["date"]: Member(m["date"], np.array([m["x"], m["y"]], dtype=float), m["kind"])
                for m in plant["members"]
            }
            clusters.append(
                PlantCluster(
                    plant_id=int(plant["id"]),
                    line_id=int(plant["line_id"]),
                    centroid=np.asarray(plant["centroid_xy"], dtype=float),
                    members=members,
                )
            )
        return cls(
            clusters=clusters,
            transforms={d: RigidTransform.from_dict(t) for d, t in data["transforms"].items()},
            x_mean=np.asarray(data["x_mean"], dtype=float),
            lines=None if data.get("lines") is None else SeedingLines.from_dict(data["lines"]),
            dates=list(data["dates"]),
            usable_dates=list(data.get("usable_dates", data["dates"])),
            point_labels={d: np.asarray(v, dtype=int) for d, v in data.get("point_labels", {}).items()},
        )


def clusters_from_result(
    result: ClusterResult,
    order: Sequence[str],
    aligned: Mapping[str, np.ndarray],
    raw: Mapping[str, np.ndarray],
    indices: Mapping[str, np.ndarray],
) -> List[PlantCluster]:
    """Turn clustering labels into clusters with direct members.

    ``indices[date]`` maps positions of the clustered (valid) subset back to the
    date's full detection list.
    """
    clusters = [
        PlantCluster(plant_id=label, line_id=-1, centroid=result.centroids[label].copy())
        for label in range(len(result.counts))
    ]
    for date, labels in zip(order, result.labels):
        for subset_index, label in enumerate(labels):
            if label < 0:
                continue
            point_index = int(indices[date][subset_index])
            clusters[label].members[date] = Member(
                date=date,
                position=raw[date][point_index].copy(),
                kind=DIRECT,
                aligned=aligned[date][point_index].copy(),
                point_index=point_index,
            )
    return clusters


def prune_clusters(clusters: Sequence[PlantCluster], min_direct: int) -> List[PlantCluster]:
    kept = [cluster for cluster in clusters if cluster.n_direct >= min_direct]
    if len(kept) < len(clusters):
        logger.info(f"Dropped {len(clusters) - len(kept)} clusters with < {min_direct} direct members")
    return kept


def sort_labels(clusters: Sequence[PlantCluster], lines: SeedingLines) -> List[PlantCluster]:
    """Relabel 0..n-1 by (nearest line, along-line x, across-line y, insertion order)."""
    if not clusters:
        return []
    centroids = np.array([cluster.centroid for cluster in clusters])
    rotated = rotate_points(centroids, -lines.alpha_rad)
    line_ids = lines.nearest_line(rotated[:, 1])
    order = np.lexsort((np.arange(len(clusters)), rotated[:, 1], rotated[:, 0], line_ids))

    relabeled = []
    for new_id, index in enumerate(order):
        cluster = clusters[index]
        cluster.plant_id = new_id
        cluster.line_id = int(line_ids[index])
        relabeled.append(cluster)
    return relabeled


def complete_indirect(
    clusters: Sequence[PlantCluster],
    dates: Sequence[str],
    transforms: Mapping[str, RigidTransform],
    x_mean: np.ndarray,
) -> List[PlantCluster]:
    """Add an indirect member for every date without a direct one.

    The centroid is mapped back into the date's frame with the inverse transform;
    dates without a transform use the identity.
    """
    x_mean = np.asarray(x_mean, dtype=float)
    added = 0
    for cluster in clusters:
        for date in dates:
            if date in cluster.members:
                continue
            transform = transforms.get(date, RigidTransform.identity())
            position = transform.invert(cluster.centroid[np.newaxis, :])[0] + x_mean
            cluster.members[date] = Member(date=date, position=position, kind=INDIRECT)
            added += 1
    logger.info(f"✓ Added {added} indirect detections")
    return list(clusters)


def point_labels(clusters: Sequence[PlantCluster], sizes: Mapping[str, int]) -> Dict[str, np.ndarray]:
    """Plant id per raw detection and date; discarded points carry -1."""
    labels = {date: np.full(size, DISCARDED, dtype=int) for date, size in sizes.items()}
    for cluster in clusters:
        for date, member in cluster.members.items():
            if member.kind == DIRECT and member.point_index is not None:
                labels[date][member.point_index] = cluster.plant_id
    return labels


def build_catalog(
    aligned: Mapping[str, np.ndarray],
    raw: Mapping[str, np.ndarray],
    valid: Mapping[str, np.ndarray],
    order: Sequence[str],
    transforms: Mapping[str, RigidTransform],
    x_mean: np.ndarray,
    lines: SeedingLines,
    dates: Sequence[str],
    d_max: float,
    min_direct: int = 2,
) -> PlantCatalog:
    """Cluster, prune, sort and complete.

    Args:
        aligned: aligned (centralized) detections per usable date
        raw: the same detections in their own CRS frame
        valid: weed-filter flags per detection
        order: usable dates by ascending cover ratio
        transforms: per-date rigid transforms
        x_mean: centralization offset
        lines: recognized seeding lines
        dates: all acquisition dates, usable or not
        d_max: maximum point-centroid distance
        min_direct: minimum number of direct members to keep a cluster
    """
    indices = {date: np.nonzero(valid[date])[0] for date in order}
    result = cluster_layers([aligned[date][indices[date]] for date in order], d_max)
    clusters = clusters_from_result(result, order, aligned, raw, indices)
    clusters = prune_clusters(clusters, min_direct)
    clusters = sort_labels(clusters, lines)
    clusters = complete_indirect(clusters, dates, transforms, x_mean)

    catalog = PlantCatalog(
        clusters=clusters,
        transforms=dict(transforms),
        x_mean=np.asarray(x_mean, dtype=float),
        lines=lines,
        dates=list(dates),
        usable_dates=sorted(order),
        point_labels=point_labels(clusters, {date: len(raw[date]) for date in order}),
    )
    logger.info(f"✓ Catalog with {len(catalog)} plants on {len(lines.y_star)} seeding lines")
    return catalog


def save_catalog(catalog: PlantCatalog, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(catalog.to_dict(), handle, indent=2)
        handle.write("\n")


def load_catalog(path: str) -> PlantCatalog:
    with open(path, "r", encoding="utf-8") as handle:
        return PlantCatalog.from_dict(json.load(handle))
