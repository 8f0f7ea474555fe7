"""Central-difference gradient checking against the reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .tensor import DiffTensor, backward


@dataclass(frozen=True)
class GradReport:
    op_name: str
    max_rel_error: float
    probe_count: int

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    f: Callable[[DiffTensor], DiffTensor],
    point: DiffTensor,
    step: float = 1e-5,
    probes: Optional[int] = None,
    seed: int = 0,
    op_name: str = "f",
    floor: float = 1e-6,
) -> GradReport:
    """Compare ``backward`` against central differences at ``point``.

    ``f`` must read ``point`` by reference (it is perturbed in place and
    restored). With ``probes`` set, that many coordinates are drawn without
    replacement from a seeded generator; otherwise every coordinate is probed.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    saved_grad = None if point.grad is None else point.grad.copy()
    was_tracking = point.requires_grad
    point.requires_grad = True
    point.grad = np.zeros_like(point.data)
    try:
        loss = f(point)
        backward(loss)
        analytic = point.grad.copy()

        flat = point.data.reshape(-1)
        if probes is None or probes >= flat.size:
            coords = np.arange(flat.size)
        else:
            coords = np.sort(np.random.default_rng(seed).choice(flat.size, probes, replace=False))

        worst = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            up = f(point).item()
            flat[i] = orig - step
            down = f(point).item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            err = relative_error(float(analytic.reshape(-1)[i]), numeric, floor)
            if not np.isfinite(err):
                err = float("inf")
            worst = max(worst, err)
    finally:
        point.requires_grad = was_tracking
        point.grad = saved_grad if was_tracking else None
    return GradReport(op_name=op_name, max_rel_error=float(worst), probe_count=int(len(coords)))
