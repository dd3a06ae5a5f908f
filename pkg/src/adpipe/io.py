"""File formats: PNG frames/masks/assets and the DMAP depth container.

DMAP layout: an ASCII header ``DMAP <width> <height>\\n`` followed by
``width * height`` little-endian float32 values in row-major order.
"""

from __future__ import annotations

import re
from pathlib import Path

import cv2
import numpy as np

from .errors import InvalidInputError

_DIGITS = re.compile(r"(\d+)")
IMAGE_SUFFIXES = (".png", ".bmp", ".tif", ".tiff", ".pgm", ".ppm", ".jpg", ".jpeg")


def write_depth(path, depth) -> None:
    depth = np.asarray(depth, dtype="<f4")
    if depth.ndim != 2:
        raise InvalidInputError("depth map must be 2D")
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(f"DMAP {w} {h}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(depth).tobytes())


def read_depth(path) -> np.ndarray:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise InvalidInputError(f"{path}: missing DMAP header")
    parts = data[:nl].decode("ascii", errors="replace").split()
    if len(parts) != 3 or parts[0] != "DMAP":
        raise InvalidInputError(f"{path}: bad DMAP header {data[:nl]!r}")
    w, h = int(parts[1]), int(parts[2])
    body = data[nl + 1 :]
    if len(body) != 4 * w * h:
        raise InvalidInputError(f"{path}: expected {4 * w * h} bytes of depth, found {len(body)}")
    depth = np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float32)
    if not np.all(np.isfinite(depth)) or np.any(depth < 0):
        raise InvalidInputError(f"{path}: depth values must be finite and non-negative")
    return depth


def read_image(path) -> np.ndarray:
    """RGB uint8 image."""
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise InvalidInputError(f"cannot read image {path}")
    return np.ascontiguousarray(img[..., ::-1])


def write_image(path, rgb) -> None:
    rgb = np.asarray(rgb)
    img = rgb[..., ::-1] if rgb.ndim == 3 else rgb
    if not cv2.imwrite(str(path), np.ascontiguousarray(img)):
        raise InvalidInputError(f"cannot write image {path}")


def read_mask(path, crowd_labels=None) -> np.ndarray:
    """Crowd mask from an 8-bit raster.

    Without ``crowd_labels`` any non-zero pixel is crowd; otherwise the pixel
    values are label ids and the listed ids are unioned.
    """
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise InvalidInputError(f"cannot read mask {path}")
    if raw.ndim == 3:
        raw = raw[..., 0]
    if raw.dtype != np.uint8:
        raise InvalidInputError(f"{path}: masks must be 8-bit")
    if crowd_labels:
        return np.isin(raw, np.asarray(list(crowd_labels), dtype=np.uint8))
    return raw > 0


def write_mask(path, mask) -> None:
    write_image(path, np.asarray(mask).astype(bool).astype(np.uint8) * 255)


def frame_number(path) -> int | None:
    found = _DIGITS.findall(Path(path).stem)
    return int(found[-1]) if found else None


def numbered_files(directory, suffixes=IMAGE_SUFFIXES) -> dict[int, Path]:
    """Map frame number to file for every numbered file with a matching suffix."""
    directory = Path(directory)
    if not directory.is_dir():
        raise InvalidInputError(f"not a directory: {directory}")
    out: dict[int, Path] = {}
    for p in sorted(directory.iterdir()):
        if p.suffix.lower() not in suffixes:
            continue
        n = frame_number(p)
        if n is not None and n not in out:
            out[n] = p
    return out


def load_assets(path) -> list[np.ndarray]:
    """A single asset image, or a directory of numbered images cycled per frame."""
    path = Path(path)
    if path.is_dir():
        files = numbered_files(path)
        if not files:
            raise InvalidInputError(f"no asset images in {path}")
        return [read_image(files[k]) for k in sorted(files)]
    return [read_image(path)]
