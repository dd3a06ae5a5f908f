"""Raster primitives on numpy images.

Images are ``uint8`` arrays: ``(H, W)`` for gray, ``(H, W, 3)`` for RGB.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np

from .errors import DegenerateInputError, InvalidInputError
from .geometry import apply_homography

CANNY_LOW = 50
CANNY_HIGH = 150
CANNY_SIGMA = 1.4


@dataclass(frozen=True)
class LineSegment:
    """Image segment from ``p0`` to ``p1`` (pixels, ``(u, v)``)."""

    p0: tuple
    p1: tuple

    def __post_init__(self):
        if tuple(self.p0) == tuple(self.p1):
            raise InvalidInputError("segment endpoints coincide")

    @property
    def length(self) -> float:
        return math.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1])

    @property
    def angle_deg(self) -> float:
        """Orientation in [0, 180)."""
        ang = math.degrees(math.atan2(self.p1[1] - self.p0[1], self.p1[0] - self.p0[0]))
        return ang % 180.0

    @property
    def is_vertical(self) -> bool:
        return abs(self.p1[0] - self.p0[0]) < 1e-12

    def slope_intercept(self) -> tuple[float, float]:
        """Coefficients ``(a, b)`` of ``y = a x + b``; raises for vertical segments."""
        if self.is_vertical:
            raise InvalidInputError("vertical segment has no slope-intercept form")
        a = (self.p1[1] - self.p0[1]) / (self.p1[0] - self.p0[0])
        return a, self.p0[1] - a * self.p0[0]

    def homogeneous(self) -> np.ndarray:
        """Line through both endpoints as a unit-normal homogeneous 3-vector."""
        l = np.cross([*self.p0, 1.0], [*self.p1, 1.0])
        return l / np.hypot(l[0], l[1])


def to_grayscale(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidInputError(f"expected an RGB image, got shape {img.shape}")
    rgb = img.astype(np.float64)
    luma = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8)


def ensure_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    return img if img.ndim == 2 else to_grayscale(img)


def gaussian_smooth(gray: np.ndarray, sigma: float = CANNY_SIGMA, ksize: int = 5) -> np.ndarray:
    return cv2.GaussianBlur(gray, (ksize, ksize), sigma, borderType=cv2.BORDER_REPLICATE)


def canny(gray: np.ndarray, low: float = CANNY_LOW, high: float = CANNY_HIGH) -> np.ndarray:
    """Canny edge map (bool) after a 5x5, sigma 1.4 Gaussian pre-smooth."""
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise InvalidInputError("canny expects a single-channel image")
    if low > high:
        raise InvalidInputError("low threshold exceeds high threshold")
    if gray.dtype != np.uint8:
        gray = np.clip(gray, 0, 255).astype(np.uint8)
    smooth = gaussian_smooth(gray)
    return cv2.Canny(smooth, low, high, L2gradient=True) > 0


def hough_segments(
    edges: np.ndarray,
    angle_res: float = 1.0,
    rho_res: float = 1.0,
    min_votes: int = 30,
    min_len: float = 20.0,
    max_gap: int = 3,
    seed: int = 0,
) -> list[LineSegment]:
    """Progressive probabilistic Hough transform.

    Edge pixels are visited in a seeded random order; each vote that pushes a
    bin over ``min_votes`` triggers a walk along the corresponding line that
    tolerates gaps of up to ``max_gap`` pixels. Pixels on the walked line are
    removed from further consideration and, if the segment is long enough,
    their votes are withdrawn.

    Returns segments sorted longest first, ties broken by ``(p0.v, p0.u)``.
    """
    mask = np.asarray(edges).astype(bool).copy()
    height, width = mask.shape
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return []

    thetas = np.deg2rad(np.arange(0.0, 180.0, angle_res))
    cos_t = np.cos(thetas) / rho_res
    sin_t = np.sin(thetas) / rho_res
    rho_max = math.hypot(width, height) / rho_res
    offset = int(math.ceil(rho_max))
    acc = np.zeros((len(thetas), 2 * offset + 1), dtype=np.int32)
    rows = np.arange(len(thetas))
    voted = np.zeros_like(mask)

    def bins(x, y):
        return np.rint(x * cos_t + y * sin_t).astype(np.int64) + offset

    rng = np.random.default_rng(seed)
    found: list[LineSegment] = []
    for idx in rng.permutation(len(xs)):
        x0, y0 = int(xs[idx]), int(ys[idx])
        if not mask[y0, x0]:
            continue
        r = bins(x0, y0)
        acc[rows, r] += 1
        voted[y0, x0] = True
        counts = acc[rows, r]
        if counts.max() < min_votes:
            continue

        # the first bin over threshold is often a neighbour of the true angle
        # (ties, or stray votes from a crossing line); walk the peak angles and
        # their +-2 bin neighbours, keeping the walk that covers most pixels
        # and then the angle nearest the middle of the peak
        tied = np.flatnonzero(counts == counts.max())
        centre = 0.5 * np.angle(np.exp(2j * thetas[tied]).sum())
        step_rad = math.radians(angle_res)
        cands = sorted({round(float(thetas[t]) + k * step_rad, 12) for t in tied for k in range(-2, 3)})
        best_key, best_walk = None, None
        for th in cands:
            walk = _walk(mask, x0, y0, th, max_gap)
            off = abs(math.remainder(th - centre, math.pi))
            key = (-walk[2], off)
            if best_key is None or key < best_key:
                best_key, best_walk = key, walk
        step, ends, _ = best_walk

        length = math.hypot(ends[0][0] - ends[1][0], ends[0][1] - ends[1][1])
        good = length >= min_len
        # clear the walked pixels, withdrawing votes for accepted lines
        for sign, end in zip((1.0, -1.0), ends):
            sx, sy = step[0] * sign, step[1] * sign
            fx, fy = float(x0), float(y0)
            xi, yi = x0, y0
            while True:
                if mask[yi, xi]:
                    if good and voted[yi, xi]:
                        acc[rows, bins(xi, yi)] -= 1
                        voted[yi, xi] = False
                    mask[yi, xi] = False
                if (xi, yi) == end:
                    break
                fx += sx
                fy += sy
                xi, yi = int(math.floor(fx + 0.5)), int(math.floor(fy + 0.5))
                if not (0 <= xi < width and 0 <= yi < height):
                    break
        if good:
            p0, p1 = sorted([ends[0], ends[1]])
            found.append(LineSegment((float(p0[0]), float(p0[1])), (float(p1[0]), float(p1[1]))))

    found.sort(key=lambda s: (-s.length, s.p0[1], s.p0[0]))
    return found


def refine_segment(edges, seg: LineSegment, band: float = 1.5, max_gap: int = 3, rounds: int = 3) -> LineSegment:
    """Total-least-squares refit of ``seg`` to the edge pixels along it.

    Hough endpoints are quantised by the accumulator; here the line is refit to
    edge pixels within ``band`` of it and grown along the contiguous run of such
    pixels (gaps up to ``max_gap``) that overlaps the original segment.
    """
    vs, us = np.nonzero(edges)
    pts = np.column_stack([us, vs]).astype(float)
    p0 = np.asarray(seg.p0, dtype=float)
    p1 = np.asarray(seg.p1, dtype=float)
    t_lo, t_hi = 0.0, float(np.linalg.norm(p1 - p0))
    origin, d = p0, (p1 - p0) / t_hi
    for _ in range(rounds):
        normal = np.array([-d[1], d[0]])
        rel = pts - origin
        near = np.abs(rel @ normal) <= band
        t = rel[near] @ d
        order = np.argsort(t)
        t, cand = t[order], pts[near][order]
        # contiguous run overlapping [t_lo, t_hi]
        breaks = np.flatnonzero(np.diff(t) > max_gap + 1.0)
        starts = np.r_[0, breaks + 1]
        stops = np.r_[breaks + 1, len(t)]
        runs = [(a, b) for a, b in zip(starts, stops) if t[a] <= t_hi and t[b - 1] >= t_lo]
        if not runs:
            break
        a, b = max(runs, key=lambda r: t[r[1] - 1] - t[r[0]])
        run = cand[a:b]
        if len(run) < 2:
            break
        centre = run.mean(axis=0)
        _, _, vt = np.linalg.svd(run - centre, full_matrices=False)
        nd = vt[0] if vt[0] @ d >= 0 else -vt[0]
        ts = (run - centre) @ nd
        origin, d = centre, nd
        t_lo, t_hi = float(ts.min()), float(ts.max())
    if t_hi - t_lo < 1e-9:
        return seg
    q0 = origin + t_lo * d
    q1 = origin + t_hi * d
    a, b = (q0, q1) if (q0[0], q0[1]) <= (q1[0], q1[1]) else (q1, q0)
    return LineSegment((float(a[0]), float(a[1])), (float(b[0]), float(b[1])))


def _walk(mask: np.ndarray, x0: int, y0: int, theta: float, max_gap: int):
    """Follow the line with normal angle ``theta`` through ``(x0, y0)`` both ways.

    Returns the unit-major step, the two end pixels and the number of mask
    pixels visited.
    """
    height, width = mask.shape
    dx, dy = -math.sin(theta), math.cos(theta)
    if abs(dx) > abs(dy):
        step = (math.copysign(1.0, dx), dy / abs(dx))
    else:
        step = (dx / abs(dy), math.copysign(1.0, dy))
    ends = []
    hits = 1
    for sign in (1.0, -1.0):
        sx, sy = step[0] * sign, step[1] * sign
        fx, fy = float(x0), float(y0)
        gap = 0
        end = (x0, y0)
        while True:
            fx += sx
            fy += sy
            xi, yi = int(math.floor(fx + 0.5)), int(math.floor(fy + 0.5))
            if not (0 <= xi < width and 0 <= yi < height):
                break
            if mask[yi, xi]:
                gap = 0
                end = (xi, yi)
                hits += 1
            else:
                gap += 1
                if gap > max_gap:
                    break
        ends.append(end)
    return step, ends, hits


def color_histogram(img: np.ndarray, bins_per_channel: int = 8) -> np.ndarray:
    """Joint RGB histogram with ``bins_per_channel**3`` cells, L1-normalised."""
    if bins_per_channel < 2:
        raise InvalidInputError("need at least 2 bins per channel")
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidInputError("color_histogram expects an RGB image")
    q = (img.reshape(-1, 3).astype(np.int64) * bins_per_channel) // 256
    idx = (q[:, 0] * bins_per_channel + q[:, 1]) * bins_per_channel + q[:, 2]
    hist = np.bincount(idx, minlength=bins_per_channel**3).astype(np.float64)
    return hist / hist.sum()


def _bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = x - x0
    ay = y - y0
    src = img.astype(np.float64)
    if src.ndim == 3:
        ax = ax[:, None]
        ay = ay[:, None]
    top = src[y0, x0] * (1 - ax) + src[y0, x1] * ax
    bot = src[y1, x0] * (1 - ax) + src[y1, x1] * ax
    return top * (1 - ay) + bot * ay


def warp_composite(asset: np.ndarray, h: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Paste ``asset`` into a copy of ``target`` through homography ``h``.

    ``h`` maps asset pixel coordinates to target coordinates. Every target
    pixel whose inverse image lies in ``[0, w] x [0, h]`` of the asset is
    replaced by a bilinear sample; nothing else is touched.
    """
    h = np.asarray(h, dtype=float)
    if abs(np.linalg.det(h)) < 1e-12 * max(np.abs(h).max() ** 3, 1e-300):
        raise DegenerateInputError("homography is singular")
    asset = np.asarray(asset)
    target = np.asarray(target)
    if asset.ndim != target.ndim:
        raise InvalidInputError("asset and target must have the same channel layout")
    out = target.copy()
    th, tw = target.shape[:2]
    ah, aw = asset.shape[:2]

    corners = np.array([[0, 0], [aw, 0], [aw, ah], [0, ah]], dtype=float)
    hom = corners @ h[:, :2].T + h[:, 2]
    if np.all(hom[:, 2] > 0) or np.all(hom[:, 2] < 0):
        proj = hom[:, :2] / hom[:, 2:3]
        x_lo = max(int(math.floor(proj[:, 0].min())), 0)
        x_hi = min(int(math.ceil(proj[:, 0].max())), tw - 1)
        y_lo = max(int(math.floor(proj[:, 1].min())), 0)
        y_hi = min(int(math.ceil(proj[:, 1].max())), th - 1)
    else:
        x_lo, x_hi, y_lo, y_hi = 0, tw - 1, 0, th - 1
    if x_lo > x_hi or y_lo > y_hi:
        return out

    yy, xx = np.mgrid[y_lo : y_hi + 1, x_lo : x_hi + 1]
    pts = np.column_stack([xx.ravel(), yy.ravel()]).astype(float)
    src = apply_homography(np.linalg.inv(h), pts)
    inside = (
        np.isfinite(src).all(axis=1)
        & (src[:, 0] >= 0)
        & (src[:, 0] <= aw)
        & (src[:, 1] >= 0)
        & (src[:, 1] <= ah)
    )
    if not inside.any():
        return out
    vals = _bilinear(asset, src[inside, 0], src[inside, 1])
    vals = np.clip(np.floor(vals + 0.5), 0, 255).astype(target.dtype)
    ty = yy.ravel()[inside]
    tx = xx.ravel()[inside]
    out[ty, tx] = vals
    return out
