"""Corner-error and precision metrics for a matched synthetic pair."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .homography import project
from .synthetic import derive_ground_truth

THRESHOLDS = (3, 5, 10)
PRECISION_PX = 3.0


@dataclass
class EvalReport:
    precision: float
    num_matches: int
    corner_error: float
    corner_pass: dict[str, float]
    coarse_precision: float = 0.0
    empty: bool = False
    runtime_ms: Optional[float] = None
    config: dict = field(default_factory=dict)

    def to_dict(self, include_runtime: bool = False) -> dict:
        d = asdict(self)
        if not include_runtime:
            d.pop("runtime_ms")
        return d


def image_corners(shape: tuple[int, int]) -> np.ndarray:
    H, W = shape
    return np.array([[0, 0], [W, 0], [W, H], [0, H]], dtype=float)


def corner_error(H_est: np.ndarray, H_gt: np.ndarray, shape: tuple[int, int]) -> float:
    """Mean distance between the four image corners mapped by each homography."""
    c = image_corners(shape)
    err = np.linalg.norm(project(H_est, c) - project(H_gt, c), axis=1)
    return float(np.mean(err)) if np.all(np.isfinite(err)) else float("inf")


def fine_precision(H_gt: np.ndarray, point_a: np.ndarray, point_b: np.ndarray, px: float = PRECISION_PX) -> float:
    if len(point_a) == 0:
        return 0.0
    err = np.linalg.norm(project(H_gt, point_a) - point_b, axis=1)
    return float(np.mean(err <= px))


def coarse_precision(matches, gt_pairs) -> float:
    if not matches.coarse:
        return 0.0
    truth = set(map(tuple, gt_pairs))
    return float(np.mean([(m.i, m.j) in truth for m in matches.coarse]))


def evaluate(pair, matches, H_est, gt_pairs=None, config: dict | None = None) -> EvalReport:
    """Metrics for one pair. ``H_est`` may be None when estimation failed."""
    pa, pb = matches.fine_arrays()
    shape = pair.image_a.shape
    err = corner_error(H_est, pair.H_gt, shape) if H_est is not None else float("inf")
    passes = {str(t): float(err <= t) for t in THRESHOLDS}
    if gt_pairs is None:
        gt_pairs = derive_ground_truth(pair.H_gt, shape, matches.grid).coarse if matches.grid[0] else []
    return EvalReport(
        precision=fine_precision(pair.H_gt, pa, pb),
        num_matches=len(matches.fine),
        corner_error=err,
        corner_pass=passes,
        coarse_precision=coarse_precision(matches, gt_pairs),
        empty=len(matches.fine) == 0,
        config=dict(config or {}),
    )
