"""Rigid alignment of per-date plant position clouds.

Each date's cloud is registered to the running set of plant centroids with rigid
coherent point drift (CPD), processing dates by ascending cover ratio.
"""
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from plant_catalog.errors import DegenerateInputError

logger = logging.getLogger(__name__)

SIGMA2_FLOOR = 1e-12


@dataclass(frozen=True)
class RigidTransform:
    """``p -> scale * R(angle) p + shift``; angle in radians."""

    scale: float = 1.0
    angle: float = 0.0
    shift: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "shift", (float(self.shift[0]), float(self.shift[1])))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @property
    def rotation(self) -> np.ndarray:
        cos, sin = math.cos(self.angle), math.sin(self.angle)
        return np.array([[cos, -sin], [sin, cos]])

    @property
    def matrix(self) -> np.ndarray:
        return self.scale * self.rotation

    @property
    def angle_deg(self) -> float:
        return math.degrees(self.angle)

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.matrix.T + np.asarray(self.shift)

    def invert(self, points) -> np.ndarray:
        """Inverse mapping ``R^T (p - shift) / scale``."""
        points = np.asarray(points, dtype=float)
        return (points - np.asarray(self.shift)) @ self.rotation / self.scale

    def inverse(self) -> "RigidTransform":
        shift = -(self.rotation.T @ np.asarray(self.shift)) / self.scale
        return RigidTransform(1.0 / self.scale, -self.angle, tuple(shift))

    def compose(self, inner: "RigidTransform") -> "RigidTransform":
        """``self ∘ inner``."""
        shift = self.matrix @ np.asarray(inner.shift) + np.asarray(self.shift)
        return RigidTransform(self.scale * inner.scale, self.angle + inner.angle, tuple(shift))

    def conjugate(self, offset) -> "RigidTransform":
        """Same motion expressed in coordinates shifted by ``-offset``: ``q -> T(q + offset) - offset``."""
        offset = np.asarray(offset, dtype=float)
        shift = self.matrix @ offset + np.asarray(self.shift) - offset
        return RigidTransform(self.scale, self.angle, tuple(shift))

    def to_dict(self) -> dict:
        return {"scale": self.scale, "angle": self.angle, "shift": list(self.shift)}

    @classmethod
    def from_dict(cls, data: dict) -> "RigidTransform":
        return cls(float(data["scale"]), float(data["angle"]), tuple(data["shift"]))


@dataclass
class CentralizedClouds:
    """Per-date point sets shifted by the mean of per-date means."""

    layers: Dict[str, np.ndarray]
    x_mean: np.ndarray

    def restore(self, date: str) -> np.ndarray:
        return self.layers[date] + self.x_mean


def centralize(clouds: Mapping[str, np.ndarray]) -> CentralizedClouds:
    """Subtract the mean of the per-layer means; empty layers are kept but ignored."""
    layers = {date: np.asarray(points, dtype=float).reshape(-1, 2) for date, points in clouds.items()}
    means = [points.mean(axis=0) for points in layers.values() if len(points)]
    if not means:
        raise DegenerateInputError("All point layers are empty")
    x_mean = np.mean(means, axis=0)
    return CentralizedClouds(
        layers={date: points - x_mean for date, points in layers.items()},
        x_mean=x_mean,
    )


@dataclass
class CPDResult:
    transform: RigidTransform
    converged: bool
    n_iter: int
    sigma2: float
    nll_history: List[float] = field(default_factory=list)


def _check_cloud(points: np.ndarray, name: str) -> None:
    if len(points) < 3:
        raise DegenerateInputError(f"{name} cloud needs at least 3 points, got {len(points)}")
    singular = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
    if singular[-1] <= 1e-9 * max(singular[0], 1e-300):
        raise DegenerateInputError(f"{name} cloud is collinear")


def rigid_cpd(
    basis: np.ndarray,
    floating: np.ndarray,
    w: float = 0.1,
    max_iter: int = 100,
    tol: float = 1e-8,
    scale_bounds: Tuple[float, float] = (0.9, 1.1),
) -> CPDResult:
    """Rigid CPD: the floating points are GMM centroids fitted to the basis points.

    Returns the transform mapping ``floating`` onto ``basis``. The scale update is
    clamped to ``scale_bounds`` and the variance update uses the clamped scale, so
    every iteration still decreases the negative log-likelihood.

    Raises:
        DegenerateInputError: fewer than three points or a collinear cloud
    """
    x = np.asarray(basis, dtype=float)
    y = np.asarray(floating, dtype=float)
    _check_cloud(x, "Basis")
    _check_cloud(y, "Floating")
    if not 0 <= w < 1:
        raise ValueError(f"Outlier weight must be in [0, 1), got {w}")

    n, m, dim = len(x), len(y), 2
    scale, rotation, shift = 1.0, np.eye(2), np.zeros(2)
    sigma2 = float(cdist(x, y, "sqeuclidean").sum()) / (dim * n * m)

    history: List[float] = []
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        moved = scale * y @ rotation.T + shift
        exponent = -cdist(x, moved, "sqeuclidean") / (2.0 * sigma2)  # n×m
        outlier = w / (1.0 - w) * m / n * (2.0 * math.pi * sigma2) ** (dim / 2.0)
        log_outlier = math.log(outlier) if outlier > 0 else -np.inf
        log_norm = logsumexp(
            np.hstack([exponent, np.full((n, 1), log_outlier)]), axis=1
        )
        history.append(
            float(-np.sum(log_norm) + n * (dim / 2.0) * math.log(2.0 * math.pi * sigma2)
                  - n * math.log((1.0 - w) / m))
        )
        posterior = np.exp(exponent - log_norm[:, np.newaxis])  # n×m

        weight_x = posterior.sum(axis=1)
        weight_y = posterior.sum(axis=0)
        total = float(weight_x.sum())
        if total <= 0:
            logger.warning("CPD lost all correspondences; keeping previous estimate")
            break
        mu_x = weight_x @ x / total
        mu_y = weight_y @ y / total
        x_hat = x - mu_x
        y_hat = y - mu_y

        cross = x_hat.T @ posterior @ y_hat
        u, _, vt = np.linalg.svd(cross)
        correction = np.diag([1.0, np.linalg.det(u @ vt)])
        rotation = u @ correction @ vt

        trace_ar = float(np.trace(cross.T @ rotation))
        spread_y = float(np.sum(weight_y * np.sum(y_hat ** 2, axis=1)))
        spread_x = float(np.sum(weight_x * np.sum(x_hat ** 2, axis=1)))
        scale = float(np.clip(trace_ar / spread_y, *scale_bounds))
        shift = mu_x - scale * rotation @ mu_y

        new_sigma2 = (spread_x - 2.0 * scale * trace_ar + scale ** 2 * spread_y) / (total * dim)
        if new_sigma2 <= SIGMA2_FLOOR:
            sigma2 = SIGMA2_FLOOR
            converged = True
            break
        change = abs(new_sigma2 - sigma2)
        sigma2 = new_sigma2
        if change < tol:
            converged = True
            break

    angle = math.atan2(rotation[1, 0], rotation[0, 0])
    result = CPDResult(
        transform=RigidTransform(scale, angle, tuple(shift)),
        converged=converged,
        n_iter=iteration,
        sigma2=sigma2,
        nll_history=history,
    )
    if not converged:
        logger.warning(f"CPD stopped after {iteration} iterations without converging (sigma2={sigma2:.3e})")
    return result


def mutually_near(basis: np.ndarray, floating: np.ndarray, d_register: float):
    """Boolean masks of basis/floating points whose nearest cross neighbor is within ``d_register``."""
    dist_basis, _ = cKDTree(floating).query(basis)
    dist_floating, _ = cKDTree(basis).query(floating)
    return dist_basis <= d_register, dist_floating <= d_register


@dataclass
class AlignmentResult:
    order: List[str]
    transforms: Dict[str, RigidTransform]
    aligned: Dict[str, np.ndarray]
    x_mean: np.ndarray
    flags: Dict[str, str] = field(default_factory=dict)
    cpd: Dict[str, CPDResult] = field(default_factory=dict)


def order_by_cover(cover: Mapping[str, float]) -> List[str]:
    """Dates by ascending cover ratio, ties by date."""
    return sorted(cover, key=lambda date: (cover[date], date))


def align_all(
    clouds: CentralizedClouds,
    order: Sequence[str],
    d_register: float,
    d_group: float,
    w: float = 0.1,
    max_iter: int = 100,
    tol: float = 1e-8,
    scale_bounds: Tuple[float, float] = (0.9, 1.1),
) -> AlignmentResult:
    """Iterative alignment of all layers onto the first one in ``order``.

    Each layer is registered to the running centroid set using only mutually
    near points, transformed completely, then merged into the centroid set by
    clustering with radius ``d_group``.
    """
    from plant_catalog.catalog import cluster_layers

    if not d_group < d_register:
        raise ValueError(f"d_group ({d_group}) must be smaller than d_register ({d_register})")
    order = list(order)
    if not order:
        raise ValueError("No layers to align")

    first = order[0]
    transforms = {first: RigidTransform.identity()}
    aligned = {first: clouds.layers[first].copy()}
    flags: Dict[str, str] = {}
    cpd_results: Dict[str, CPDResult] = {}
    combined = aligned[first]
    logger.info(f"Reference layer {first} ({len(combined)} points)")

    for date in order[1:]:
        layer = clouds.layers[date]
        transform = RigidTransform.identity()
        if len(combined) == 0 or len(layer) == 0:
            flags[date] = "empty layer"
        else:
            keep_basis, keep_floating = mutually_near(combined, layer, d_register)
            try:
                result = rigid_cpd(
                    combined[keep_basis], layer[keep_floating],
                    w=w, max_iter=max_iter, tol=tol, scale_bounds=scale_bounds,
                )
                transform = result.transform
                cpd_results[date] = result
                if not result.converged:
                    flags[date] = f"not converged after {result.n_iter} iterations"
            except DegenerateInputError as exc:
                flags[date] = f"cannot register: {exc}"

        if date in flags:
            logger.warning(f"○ {date}: {flags[date]}, identity transform used")
        else:
            logger.info(
                f"✓ {date}: scale={transform.scale:.5f} angle={transform.angle_deg:.4f}° "
                f"shift=({transform.shift[0]:.4f}, {transform.shift[1]:.4f})"
            )

        transforms[date] = transform
        aligned[date] = transform.apply(layer) if len(layer) else layer.copy()
        if len(aligned[date]):
            combined = cluster_layers([combined, aligned[date]], d_group).centroids

    return AlignmentResult(
        order=order,
        transforms=transforms,
        aligned=aligned,
        x_mean=clouds.x_mean,
        flags=flags,
        cpd=cpd_results,
    )


def save_alignment(result: AlignmentResult, clouds: CentralizedClouds, path: str,
                   cover: Optional[Mapping[str, float]] = None) -> None:
    """Aligned and raw (CRS) positions per date."""
    data = {
        "x_mean": result.x_mean.tolist(),
        "order": result.order,
        "flags": result.flags,
        "dates": {
            date: {
                "cover_ratio": None if cover is None else float(cover[date]),
                "aligned": result.aligned[date].tolist(),
                "raw": clouds.restore(date).tolist(),
            }
            for date in result.order
        },
    }
    _write_json(data, path)


def load_alignment(path: str):
    """Returns (aligned, raw, x_mean, order, cover) from :func:`save_alignment` output."""
    with open(path, "r", encoding="utf-8") as handle:
        data = json.load(handle)
    aligned = {d: np.asarray(v["aligned"], dtype=float).reshape(-1, 2) for d, v in data["dates"].items()}
    raw = {d: np.asarray(v["raw"], dtype=float).reshape(-1, 2) for d, v in data["dates"].items()}
    cover = {d: v.get("cover_ratio") for d, v in data["dates"].items()}
    return aligned, raw, np.asarray(data["x_mean"], dtype=float), list(data["order"]), cover


def save_transforms(transforms: Mapping[str, RigidTransform], path: str,
                    flags: Optional[Mapping[str, str]] = None) -> None:
    data = {date: transform.to_dict() for date, transform in transforms.items()}
    if flags:
        for date, flag in flags.items():
            data[date]["flag"] = flag
    _write_json(data, path)


def load_transforms(path: str) -> Dict[str, RigidTransform]:
    with open(path, "r", encoding="utf-8") as handle:
        data = json.load(handle)
    return {date: RigidTransform.from_dict(value) for date, value in data.items()}


def _write_json(data, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(data, handle, indent=2)
