"""Seeded synthetic image pairs related by a known homography."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ParameterError, PartitionError

KINDS = ("translate", "rotate", "homography", "lowtexture")
LOW_TEXTURE_CONTRAST = 0.1


@dataclass
class SyntheticPair:
    image_a: np.ndarray
    image_b: np.ndarray
    H_gt: np.ndarray
    noise_sigma: float
    kind: str = "translate"
    magnitude: float = 0.0
    seed: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.image_a.shape


def texture(H: int, W: int, rng: np.random.Generator, blur: float = 1.5) -> np.ndarray:
    """Band-limited random field rescaled to [0, 1]."""
    field = ndimage.gaussian_filter(rng.standard_normal((H, W)), blur, mode="wrap")
    lo, hi = field.min(), field.max()
    return (field - lo) / (hi - lo) if hi > lo else np.zeros((H, W))


def apply_homography(H: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    homog = np.hstack([pts, np.ones((len(pts), 1))]) @ np.asarray(H, dtype=float).T
    return homog[:, :2] / homog[:, 2:3]


def warp_image(image: np.ndarray, H: np.ndarray) -> np.ndarray:
    """out(p) = image(H^-1 p), bilinear, zero outside the source."""
    h, w = image.shape
    ys, xs = np.mgrid[0:h, 0:w]
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(float)
    src = apply_homography(np.linalg.inv(H), pts)
    coords = np.stack([src[:, 1], src[:, 0]])
    out = ndimage.map_coordinates(image, coords, order=1, mode="constant", cval=0.0)
    return out.reshape(h, w)


def _rotation(H: int, W: int, degrees: float) -> np.ndarray:
    cx, cy = (W - 1) / 2.0, (H - 1) / 2.0
    t = np.deg2rad(degrees)
    c, s = np.cos(t), np.sin(t)
    to_origin = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1.0]])
    rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    back = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1.0]])
    return back @ rot @ to_origin


def homography_from_points(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Exact homography through four point pairs (unnormalized DLT)."""
    rows = []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    _, _, vt = np.linalg.svd(np.asarray(rows, dtype=float))
    H = vt[-1].reshape(3, 3)
    return H / H[2, 2]


def _corner_jitter(H: int, W: int, magnitude: float, rng: np.random.Generator) -> np.ndarray:
    corners = np.array([[0, 0], [W - 1, 0], [W - 1, H - 1], [0, H - 1]], dtype=float)
    moved = corners + rng.uniform(-magnitude, magnitude, size=corners.shape)
    return homography_from_points(corners, moved)


def gen_pair(
    kind: str,
    H: int,
    W: int,
    magnitude: float = 0.0,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> SyntheticPair:
    """A textured image and its warp.

    ``magnitude`` is the x-shift in pixels for ``translate`` and
    ``lowtexture``, degrees for ``rotate`` and the maximum corner displacement
    in pixels for ``homography``. Noise is added to image B only; both images
    are clipped to [0, 1].
    """
    if kind not in KINDS:
        raise ParameterError(f"unknown pair kind {kind!r}; expected one of {KINDS}")
    if H % 16 or W % 16 or H <= 0 or W <= 0:
        raise PartitionError(f"image extents must be positive multiples of 16, got {H}x{W}")
    rng = np.random.default_rng(seed)
    image_a = texture(H, W, rng)
    if kind == "lowtexture":
        image_a = 0.5 + LOW_TEXTURE_CONTRAST * (image_a - 0.5)

    if kind in ("translate", "lowtexture"):
        Hgt = np.array([[1.0, 0.0, magnitude], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    elif kind == "rotate":
        Hgt = _rotation(H, W, magnitude)
    elif magnitude == 0:
        Hgt = np.eye(3)
    else:
        Hgt = _corner_jitter(H, W, magnitude, rng)

    image_b = warp_image(image_a, Hgt)
    if noise_sigma > 0:
        image_b = image_b + rng.normal(0.0, noise_sigma, size=image_b.shape)
    image_b = np.clip(image_b, 0.0, 1.0)
    return SyntheticPair(image_a, image_b, Hgt, float(noise_sigma), kind, float(magnitude), int(seed))


@dataclass
class GroundTruth:
    """Patch pairs (i, j), their subpixel targets in B, and their windows."""

    coarse: list[tuple[int, int]]
    fine: np.ndarray  # (len(coarse), 2) pixel targets in B for each pair's A point
    windows: list[tuple[int, int]]


def coarse_cell_centers(grid: tuple[int, int], stride: float) -> np.ndarray:
    gh, gw = grid
    rows, cols = np.divmod(np.arange(gh * gw), gw)
    return np.stack([cols, rows], axis=1) * stride + (stride - 1.0) / 2.0


def derive_ground_truth(
    H_gt: np.ndarray,
    image_shape: tuple[int, int],
    grid: tuple[int, int],
    fine_ratio: int = 4,
    window_side: int = 1,
) -> GroundTruth:
    """A cell pair is a match iff the warped A centre lands within half a cell
    of the B centre on both axes. Fine targets warp the A refinement point."""
    H, W = image_shape
    gh, gw = grid
    stride = H / gh
    centers = coarse_cell_centers(grid, stride)
    warped = apply_homography(H_gt, centers)
    pairs, targets = [], []
    fine_stride = stride / fine_ratio
    for i, (x, y) in enumerate(warped):
        # cells span [c*s - 0.5, (c+1)*s - 0.5) with pixel centres on integers
        col = int(np.floor((x + 0.5) / stride))
        row = int(np.floor((y + 0.5) / stride))
        if not (0 <= row < gh and 0 <= col < gw):
            continue
        cx, cy = centers[row * gw + col]
        if abs(x - cx) > stride / 2 or abs(y - cy) > stride / 2:
            continue
        pairs.append((i, row * gw + col))
        r, c = divmod(i, gw)
        fine_pt = np.array(
            [
                (c * fine_ratio + fine_ratio // 2) * fine_stride + (fine_stride - 1) / 2,
                (r * fine_ratio + fine_ratio // 2) * fine_stride + (fine_stride - 1) / 2,
            ]
        )
        targets.append(apply_homography(H_gt, fine_pt)[0])
    n_w = gw // window_side

    def window_of(p):
        r, c = divmod(p, gw)
        return (r // window_side) * n_w + c // window_side

    windows = [(window_of(i), window_of(j)) for i, j in pairs]
    return GroundTruth(pairs, np.array(targets, dtype=float).reshape(-1, 2), windows)
