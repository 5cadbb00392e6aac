# Docstring for src/geometry module
"""
geometry.py

Weiszfeld geometric median and the per-category center bank used by the style
loss of the adaptation pipeline.

Public API
----------
- weiszfeld_solve(points, max_iter=100, eps_conv=1e-9) -> WeiszfeldResult
- weiszfeld_median(points, max_iter=100, eps_conv=1e-9) -> np.ndarray
- weiszfeld_objective(points, y) -> float
- class_centers(features, labels, num_categories) -> CenterBank
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from ..config import NUMERICS_CONFIG
from .validators import require_same_length

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WeiszfeldResult:
    center: np.ndarray
    iterations: int
    objective_trace: tuple[float, ...]
    converged: bool


@dataclass
class CenterBank:

    """

    One robust center per category that has pseudo-source support.

    Categories without support are absent from `centers` (never zero-filled).

    """

    centers: dict[int, np.ndarray] = field(default_factory=dict)
    support_counts: dict[int, int] = field(default_factory=dict)

    def __contains__(self, category: int) -> bool:
        return int(category) in self.centers

    def __len__(self) -> int:
        return len(self.centers)

    def __getitem__(self, category: int) -> np.ndarray:
        return self.centers[int(category)]

    def categories(self) -> list[int]:
        return sorted(self.centers)

    @property
    def dim(self) -> int | None:
        if not self.centers:
            return None
        return int(next(iter(self.centers.values())).shape[0])


def _stack_points(points: Sequence) -> np.ndarray:
    if len(points) == 0:
        raise ValueError("points must be non-empty.")
    dims = {np.asarray(p).shape for p in points}
    if len(dims) != 1:
        raise ValueError(f"Dimension mismatch among points: shapes {sorted(dims)}.")
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"points must be a sequence of 1-D vectors, got shape {arr.shape}.")
    return arr


def weiszfeld_objective(points, y) -> float:
    pts = np.asarray(points, dtype=np.float64)
    return float(np.linalg.norm(pts - np.asarray(y, dtype=np.float64), axis=1).sum())


def weiszfeld_solve(
    points: Sequence,
    max_iter: int = NUMERICS_CONFIG.weiszfeld_max_iter,
    eps_conv: float = NUMERICS_CONFIG.weiszfeld_eps_conv,
    floor: float = NUMERICS_CONFIG.weiszfeld_floor,
) -> WeiszfeldResult:

    """

    Geometric median by Weiszfeld iteration, with diagnostics.

    Starts at the arithmetic mean and iterates

        y <- (sum_p p / d_p) / (sum_p 1 / d_p),   d_p = max(|p - y|, floor)

    until the step is shorter than eps_conv or max_iter steps were taken. No
    Vardi-Zhang correction: an iterate that lands on a data point simply sees a
    clamped denominator.

    Returns:
        WeiszfeldResult with the center, the number of steps taken, the objective
        sum_p |p - y| at the start and after every step, and a convergence flag.

    """

    pts = _stack_points(points)
    if max_iter < 0:
        raise ValueError(f"Invalid max_iter: {max_iter}. Expected >= 0.")
    if not eps_conv > 0:
        raise ValueError(f"Invalid eps_conv: {eps_conv}. Expected > 0.")

    y = pts.mean(axis=0)
    trace = [weiszfeld_objective(pts, y)]
    converged = False
    steps = 0

    for _ in range(max_iter):
        dist = np.maximum(np.linalg.norm(pts - y, axis=1), floor)
        weights = 1.0 / dist
        y_next = (weights[:, None] * pts).sum(axis=0) / weights.sum()
        step = float(np.linalg.norm(y_next - y))
        y = y_next
        steps += 1
        trace.append(weiszfeld_objective(pts, y))
        if step < eps_conv:
            converged = True
            break

    return WeiszfeldResult(center=y, iterations=steps, objective_trace=tuple(trace), converged=converged)


def weiszfeld_median(
    points: Sequence,
    max_iter: int = NUMERICS_CONFIG.weiszfeld_max_iter,
    eps_conv: float = NUMERICS_CONFIG.weiszfeld_eps_conv,
) -> np.ndarray:
    return weiszfeld_solve(points, max_iter=max_iter, eps_conv=eps_conv).center


def class_centers(features: Sequence, labels: Sequence[int], num_categories: int) -> CenterBank:

    """

    Group features by label and take the Weiszfeld median of each group.

    Args:
        features:
            Sequence (or (N, d) array) of feature vectors.
        labels:
            Category index per feature, each in [0, num_categories).
        num_categories:
            Category count C.

    Returns:
        CenterBank holding a center and support count for every category with
        at least one sample. Categories are processed in ascending order.

    Raises:
        ValueError: length mismatch or a label outside [0, C).

    """

    require_same_length(features, labels, "features", "labels")
    bank = CenterBank()
    if len(labels) == 0:
        return bank

    labels_arr = np.asarray(labels, dtype=np.int64)
    out_of_range = labels_arr[(labels_arr < 0) | (labels_arr >= num_categories)]
    if out_of_range.size:
        raise ValueError(
            f"Label out of range: {int(out_of_range[0])}. Expected labels in [0, {num_categories})."
        )

    feats = _stack_points(features)
    for category in range(num_categories):
        members = feats[labels_arr == category]
        if members.shape[0] == 0:
            continue
        result = weiszfeld_solve(members)
        if not result.converged:
            logger.debug(
                "Weiszfeld hit max_iter",
                extra={"category": category, "support": int(members.shape[0])},
            )
        bank.centers[category] = result.center
        bank.support_counts[category] = int(members.shape[0])
    return bank
