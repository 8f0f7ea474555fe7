"""Normalized DLT homography fitting with seeded RANSAC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError


@dataclass(frozen=True)
class RansacOptions:
    iters: int = 1000
    inlier_px: float = 3.0
    seed: int = 0


def _normalizer(pts: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to 0 and the mean distance to sqrt(2)."""
    centroid = pts.mean(axis=0)
    dist = np.sqrt(((pts - centroid) ** 2).sum(axis=1)).mean()
    scale = np.sqrt(2.0) / dist if dist > 0 else 1.0
    return np.array(
        [[scale, 0.0, -scale * centroid[0]], [0.0, scale, -scale * centroid[1]], [0.0, 0.0, 1.0]]
    )


def _homogeneous(pts: np.ndarray) -> np.ndarray:
    return np.hstack([pts, np.ones((len(pts), 1))])


def dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Least-squares homography mapping src -> dst, scaled so H[2, 2] = 1."""
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    if len(src) < 4:
        raise InsufficientDataError(f"DLT needs at least 4 correspondences, got {len(src)}")
    Ts, Td = _normalizer(src), _normalizer(dst)
    s = _homogeneous(src) @ Ts.T
    d = _homogeneous(dst) @ Td.T
    zeros = np.zeros((len(s), 3))
    top = np.hstack([zeros, -d[:, 2:3] * s, d[:, 1:2] * s])
    bottom = np.hstack([d[:, 2:3] * s, zeros, -d[:, 0:1] * s])
    A = np.empty((2 * len(s), 9))
    A[0::2], A[1::2] = top, bottom
    _, _, vt = np.linalg.svd(A)
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ Hn @ Ts
    if abs(H[2, 2]) > 1e-15:
        H = H / H[2, 2]
    return H


def project(H: np.ndarray, pts: np.ndarray) -> np.ndarray:
    p = _homogeneous(np.asarray(pts, dtype=float).reshape(-1, 2)) @ H.T
    with np.errstate(divide="ignore", invalid="ignore"):
        return p[:, :2] / p[:, 2:3]


def transfer_error(H: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    err = np.linalg.norm(project(H, src) - dst, axis=1)
    return np.where(np.isfinite(err), err, np.inf)


def _degenerate(sample: np.ndarray) -> bool:
    """True when three of the four points are (nearly) collinear."""
    for a in range(4):
        p = np.delete(sample, a, axis=0)
        u, v = p[1] - p[0], p[2] - p[0]
        area = abs(u[0] * v[1] - u[1] * v[0])
        if area < 1e-6:
            return True
    return False


def estimate_homography(src, dst, options: RansacOptions = RansacOptions()):
    """RANSAC over 4-point DLT samples, then a DLT refit on the best inlier set.

    Returns ``(H, inlier_mask)``.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    n = len(src)
    if n < 4:
        raise InsufficientDataError(f"need at least 4 matches, got {n}")
    rng = np.random.default_rng(options.seed)

    best_mask = None
    best_count, best_err = -1, np.inf
    for _ in range(options.iters):
        idx = rng.choice(n, 4, replace=False)
        if _degenerate(src[idx]) or _degenerate(dst[idx]):
            continue
        H = dlt(src[idx], dst[idx])
        err = transfer_error(H, src, dst)
        mask = err <= options.inlier_px
        count = int(mask.sum())
        total = float(err[mask].sum()) if count else np.inf
        if count > best_count or (count == best_count and total < best_err):
            best_mask, best_count, best_err = mask, count, total
        if count == n:
            break

    if best_mask is None or best_count < 4:
        H = dlt(src, dst)
        return H, transfer_error(H, src, dst) <= options.inlier_px

    H = dlt(src[best_mask], dst[best_mask])
    mask = transfer_error(H, src, dst) <= options.inlier_px
    if mask.sum() >= 4 and not np.array_equal(mask, best_mask):
        H = dlt(src[mask], dst[mask])
        mask = transfer_error(H, src, dst) <= options.inlier_px
    return H, mask


def estimate_from_matches(matches, options: RansacOptions = RansacOptions()):
    """Convenience wrapper taking a :class:`~tkwin.matcher.MatchSet`."""
    pa, pb = matches.fine_arrays()
    return estimate_homography(pa, pb, options)
