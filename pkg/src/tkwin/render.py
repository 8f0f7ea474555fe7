"""Side-by-side match visualizations."""

from __future__ import annotations

import numpy as np
from skimage.draw import line

from .imageio import write_ppm

RED = (255, 0, 0)
GREEN = (0, 255, 0)
LOW_BAND = 0.3
HIGH_BAND = 0.5


def line_color(confidence: float):
    """Red for (0.3, 0.5], green above 0.5, None otherwise."""
    if confidence > HIGH_BAND:
        return GREEN
    if confidence > LOW_BAND:
        return RED
    return None


def compose(image_a: np.ndarray, image_b: np.ndarray, matches) -> np.ndarray:
    h, w = image_a.shape
    gray = np.clip(np.hstack([image_a, image_b]), 0.0, 1.0)
    # dim the background so pure red/green only ever come from lines
    canvas = np.repeat((gray * 200.0).astype(np.uint8)[..., None], 3, axis=2)
    for m in matches.fine:
        color = line_color(m.confidence)
        if color is None:
            continue
        x0, y0 = m.point_a
        x1, y1 = m.point_b
        rr, cc = line(int(round(y0)), int(round(x0)), int(round(y1)), int(round(x1)) + w)
        keep = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < 2 * w)
        canvas[rr[keep], cc[keep]] = color
    return canvas


def render_matches(pair, matches, path):
    """Write the composite for ``pair`` as a binary PPM and return the array."""
    canvas = compose(pair.image_a, pair.image_b, matches)
    write_ppm(path, canvas)
    return canvas
