"""Binary PGM (P5) and PPM (P6) reading and writing."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import TkwinError


class ImageFileError(TkwinError, OSError):
    """Unreadable, unwritable or malformed image file."""


def _header(magic: bytes, w: int, h: int, maxval: int) -> bytes:
    return magic + b"\n%d %d\n%d\n" % (w, h, maxval)


def write_pgm(path, image: np.ndarray, maxval: int = 65535) -> Path:
    """Write a [0, 1] grayscale array; 16-bit samples by default."""
    path = Path(path)
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ImageFileError(f"{path}: PGM needs a 2-d array, got shape {img.shape}")
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    try:
        path.write_bytes(_header(b"P5", img.shape[1], img.shape[0], maxval) + q.astype(dtype).tobytes())
    except OSError as exc:
        raise ImageFileError(f"{path}: cannot write ({exc.strerror})") from exc
    return path


def write_ppm(path, image: np.ndarray) -> Path:
    """Write an (h, w, 3) uint8 array."""
    path = Path(path)
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageFileError(f"{path}: PPM needs an (h, w, 3) array, got shape {img.shape}")
    data = np.clip(img, 0, 255).astype(np.uint8)
    try:
        path.write_bytes(_header(b"P6", img.shape[1], img.shape[0], 255) + data.tobytes())
    except OSError as exc:
        raise ImageFileError(f"{path}: cannot write ({exc.strerror})") from exc
    return path


def _tokens(raw: bytes, count: int, path) -> tuple[list[int], int]:
    """Read ``count`` whitespace-separated header integers, skipping comments."""
    out, pos = [], 2
    while len(out) < count:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and raw[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ImageFileError(f"{path}: malformed header")
        out.append(int(raw[start:pos]))
    return out, pos + 1


def _read(path, magic: bytes, channels: int) -> tuple[np.ndarray, int]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ImageFileError(f"{path}: cannot read ({exc.strerror})") from exc
    if raw[:2] != magic:
        raise ImageFileError(f"{path}: expected {magic.decode()} file")
    (w, h, maxval), start = _tokens(raw, 3, path)
    dtype = ">u2" if maxval > 255 else "u1"
    count = w * h * channels
    body = np.frombuffer(raw, dtype=dtype, count=count, offset=start)
    shape = (h, w) if channels == 1 else (h, w, channels)
    return body.reshape(shape), maxval


def read_pgm(path) -> np.ndarray:
    """Grayscale image as float64 in [0, 1]."""
    data, maxval = _read(path, b"P5", 1)
    return data.astype(float) / maxval


def read_ppm(path) -> np.ndarray:
    data, maxval = _read(path, b"P6", 3)
    if maxval != 255:
        return np.rint(data.astype(float) * 255 / maxval).astype(np.uint8)
    return data.astype(np.uint8)
