"""Precision/recall of catalog detections against ground-truth plant positions.

Every detection is assigned to its nearest true position. A true plant with at
least one assigned detection inside the tolerance radius is a true positive and
its remaining assignments are false positives; a true plant without one is a
false negative and all its assignments are false positives.
"""
import csv
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from plant_catalog.catalog import DIRECT, PlantCatalog
from plant_catalog.errors import DegenerateInputError

logger = logging.getLogger(__name__)

TOLERANCE_PRESETS = {
    "sugar_beet": 0.08,
    "cauliflower": 0.12,
}


@dataclass
class EvalReport:
    date: str
    tp: int
    fp: int
    fn: int
    tolerance: float
    n_truth: int
    n_detections: int
    pairs: List[Tuple[int, int, float]] = field(default_factory=list)
    day: Optional[int] = None

    @property
    def precision(self) -> float:
        return self.tp / self.n_detections if self.n_detections else 0.0

    @property
    def recall(self) -> float:
        return self.tp / self.n_truth if self.n_truth else 0.0


@dataclass
class EvalSummary:
    reports: List[EvalReport]
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int

    @property
    def pooled_precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def pooled_recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    def series(self) -> List[dict]:
        """Plot-ready precision-vs-recall points, one per date."""
        return [
            {"date": r.date, "day": r.day, "recall": r.recall, "precision": r.precision}
            for r in self.reports
        ]


def score(detections, truth, tolerance: float, date: str = "", day: Optional[int] = None) -> EvalReport:
    """Count TP/FP/FN for one date.

    Raises:
        DegenerateInputError: empty truth
        ValueError: non-positive tolerance
    """
    if tolerance <= 0:
        raise ValueError(f"tolerance must be positive, got {tolerance}")
    truth = np.asarray(truth, dtype=float).reshape(-1, 2)
    detections = np.asarray(detections, dtype=float).reshape(-1, 2)
    if len(truth) == 0:
        raise DegenerateInputError(f"No ground truth for {date or 'date'}")

    tp = fp = fn = 0
    pairs: List[Tuple[int, int, float]] = []
    if len(detections):
        distances = cdist(detections, truth)
        assigned = np.argmin(distances, axis=1)
        assigned_distance = distances[np.arange(len(detections)), assigned]
    else:
        assigned = np.zeros(0, dtype=int)
        assigned_distance = np.zeros(0)

    for truth_index in range(len(truth)):
        mine = np.nonzero(assigned == truth_index)[0]
        hits = mine[assigned_distance[mine] <= tolerance]
        if hits.size:
            tp += 1
            fp += mine.size - 1
            best = hits[np.argmin(assigned_distance[hits])]
            pairs.append((int(best), truth_index, float(assigned_distance[best])))
        else:
            fn += 1
            fp += mine.size

    return EvalReport(
        date=date,
        tp=tp,
        fp=fp,
        fn=fn,
        tolerance=tolerance,
        n_truth=len(truth),
        n_detections=len(detections),
        pairs=pairs,
        day=day,
    )


def catalog_detections(catalog: PlantCatalog, skip_leading_indirect: bool = True) -> Dict[str, np.ndarray]:
    """Positions per date; indirect members dated before a plant's first direct one are left out."""
    per_date: Dict[str, List[np.ndarray]] = {date: [] for date in catalog.dates}
    for cluster in catalog.clusters:
        first_direct = cluster.first_direct_date()
        for date, member in cluster.members.items():
            leading = member.kind != DIRECT and (first_direct is None or date < first_direct)
            if skip_leading_indirect and leading:
                continue
            per_date.setdefault(date, []).append(member.position)
    return {
        date: np.asarray(positions, dtype=float).reshape(-1, 2)
        for date, positions in per_date.items()
    }


def evaluate(
    detections: Mapping[str, np.ndarray],
    truth: Mapping[str, np.ndarray],
    tolerance: float,
    days: Optional[Mapping[str, int]] = None,
) -> List[EvalReport]:
    """Score every date present in both mappings, in date order."""
    dates = sorted(set(detections) & set(truth))
    if not dates:
        raise DegenerateInputError("No date has both detections and ground truth")
    return [
        score(detections[date], truth[date], tolerance, date, None if days is None else days.get(date))
        for date in dates
    ]


def evaluate_catalog(
    catalog: PlantCatalog,
    truth: Mapping[str, np.ndarray],
    tolerance: float,
    days: Optional[Mapping[str, int]] = None,
) -> List[EvalReport]:
    return evaluate(catalog_detections(catalog), truth, tolerance, days)


def report(reports: Sequence[EvalReport]) -> EvalSummary:
    """Macro-averaged precision and recall plus pooled counts."""
    if not reports:
        raise DegenerateInputError("No evaluation reports to aggregate")
    summary = EvalSummary(
        reports=list(reports),
        precision=float(np.mean([r.precision for r in reports])),
        recall=float(np.mean([r.recall for r in reports])),
        tp=sum(r.tp for r in reports),
        fp=sum(r.fp for r in reports),
        fn=sum(r.fn for r in reports),
    )
    for r in reports:
        logger.info(f"  {r.date}: precision={r.precision:.3f} recall={r.recall:.3f} "
                    f"(TP={r.tp} FP={r.fp} FN={r.fn})")
    logger.info(f"✓ Mean precision {summary.precision:.3f}, mean recall {summary.recall:.3f}")
    return summary


def write_report_csv(summary: EvalSummary, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["date", "day", "tp", "fp", "fn", "precision", "recall", "tolerance"])
        for r in summary.reports:
            writer.writerow([r.date, "" if r.day is None else r.day, r.tp, r.fp, r.fn,
                             f"{r.precision:.6f}", f"{r.recall:.6f}", r.tolerance])
        writer.writerow(["mean", "", summary.tp, summary.fp, summary.fn,
                         f"{summary.precision:.6f}", f"{summary.recall:.6f}",
                         summary.reports[0].tolerance])


def plot_precision_recall(summary: EvalSummary, path: str) -> None:
    """Scatter of precision against recall, colored by acquisition day."""
    from matplotlib.figure import Figure

    series = summary.series()
    recall = [p["recall"] for p in series]
    precision = [p["precision"] for p in series]
    days = [p["day"] if p["day"] is not None else index for index, p in enumerate(series)]

    fig = Figure(figsize=(5, 4))
    ax = fig.subplots()
    points = ax.scatter(recall, precision, c=days, cmap="viridis", edgecolors="k")
    fig.colorbar(points, ax=ax, label="day")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(min(recall + [0.8]) - 0.02, 1.01)
    ax.set_ylim(min(precision + [0.8]) - 0.02, 1.01)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)


def load_truth(path: str) -> Dict[str, np.ndarray]:
    """Ground truth from a GeoJSON FeatureCollection with a ``date`` property per point."""
    with open(path, "r", encoding="utf-8") as handle:
        data = json.load(handle)
    per_date: Dict[str, List[List[float]]] = {}
    for feature in data.get("features", []):
        date = str(feature["properties"]["date"])
        x, y = feature["geometry"]["coordinates"][:2]
        per_date.setdefault(date, []).append([float(x), float(y)])
    return {date: np.asarray(points, dtype=float) for date, points in sorted(per_date.items())}
