"""Projective primitives: pinhole back-projection, plane algebra, homographies.

World frame convention: the camera centre sits at ``(c_x, c_y, 0)`` and the
axes are aligned with the sensor, so a pixel ``(u, v)`` with depth ``z`` maps to

    x = c_x + (u - c_x) * z / f
    y = c_y + (v - c_y) * z / f
    z = s * md

where ``md`` is the relative depth read from the depth map. ``project`` is the
exact algebraic inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    BehindCameraError,
    DegenerateInputError,
    InvalidHullError,
    InvalidInputError,
    NoIntersectionError,
)


@dataclass(frozen=True)
class CameraIntrinsics:
    f: float
    c_x: float
    c_y: float
    s: float = 1.0

    def __post_init__(self):
        vals = (self.f, self.c_x, self.c_y, self.s)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInputError(f"non-finite intrinsics: {vals}")
        if self.f <= 0 or self.s <= 0:
            raise InvalidInputError(f"focal length and depth scale must be positive: f={self.f}, s={self.s}")

    @classmethod
    def centered(cls, width: int, height: int, f: float, s: float = 1.0) -> "CameraIntrinsics":
        """Intrinsics with the principal point at the image centre."""
        return cls(f=float(f), c_x=width / 2.0, c_y=height / 2.0, s=float(s))

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return np.array([self.c_x, self.c_y, 0.0])

    def with_scale(self, s: float) -> "CameraIntrinsics":
        return CameraIntrinsics(self.f, self.c_x, self.c_y, s)


@dataclass(frozen=True)
class PlaneEq:
    """Plane ``n . p + d = 0`` with unit normal ``n``."""

    n: np.ndarray
    d: float

    @classmethod
    def from_normal(cls, n, d: float) -> "PlaneEq":
        n = np.asarray(n, dtype=float)
        norm = np.linalg.norm(n)
        if not np.isfinite(norm) or norm < 1e-15:
            raise DegenerateInputError("plane normal has zero length")
        return cls(n / norm, float(d) / norm)

    @classmethod
    def from_point_normal(cls, point, n) -> "PlaneEq":
        n = np.asarray(n, dtype=float)
        n = n / np.linalg.norm(n)
        return cls(n, -float(n @ np.asarray(point, dtype=float)))

    def signed_distance(self, pts) -> np.ndarray:
        return np.asarray(pts, dtype=float) @ self.n + self.d


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvalidInputError("non-finite input")


def back_project(uv, md, k: CameraIntrinsics) -> np.ndarray:
    """Lift pixel(s) with relative depth into the world frame.

    ``uv`` has shape ``(..., 2)`` and ``md`` broadcasts against ``uv[..., 0]``.
    Returns an array of shape ``(..., 3)``.
    """
    uv = np.asarray(uv, dtype=float)
    md = np.asarray(md, dtype=float)
    _check_finite(uv, md)
    if np.any(md < 0):
        raise InvalidInputError("relative depth must be non-negative")
    z = k.s * md
    x = k.c_x + (uv[..., 0] - k.c_x) * z / k.f
    y = k.c_y + (uv[..., 1] - k.c_y) * z / k.f
    x, y, z = np.broadcast_arrays(x, y, z)
    return np.stack([x, y, z], axis=-1)


def project(p, k: CameraIntrinsics) -> np.ndarray:
    """Project world point(s) of shape ``(..., 3)`` to pixels ``(..., 2)``."""
    p = np.asarray(p, dtype=float)
    _check_finite(p)
    z = p[..., 2]
    if np.any(z <= 0):
        raise BehindCameraError("point at or behind the camera (z <= 0)")
    u = k.c_x + (p[..., 0] - k.c_x) * k.f / z
    v = k.c_y + (p[..., 1] - k.c_y) * k.f / z
    return np.stack([u, v], axis=-1)


def pixel_ray(uv, k: CameraIntrinsics) -> np.ndarray:
    """Direction of the viewing ray through pixel(s) ``uv`` (not normalised)."""
    uv = np.asarray(uv, dtype=float)
    dx = (uv[..., 0] - k.c_x) / k.f
    dy = (uv[..., 1] - k.c_y) / k.f
    return np.stack([dx, dy, np.ones_like(dx)], axis=-1)


def orient_direction(v) -> np.ndarray:
    """Flip ``v`` so its first non-negligible component is positive."""
    v = np.asarray(v, dtype=float)
    for comp in v:
        if abs(comp) > 1e-12:
            return v if comp > 0 else -v
    return v


def plane_intersection_direction(a: PlaneEq, b: PlaneEq) -> np.ndarray:
    """Unit direction of the line where planes ``a`` and ``b`` meet."""
    c = np.cross(a.n, b.n)
    norm = np.linalg.norm(c)
    if norm <= 1e-9:
        raise NoIntersectionError("planes are parallel")
    return orient_direction(c / norm)


def normalize_homography(h) -> np.ndarray:
    h = np.asarray(h, dtype=float).reshape(3, 3)
    if abs(h[2, 2]) > 1e-12:
        return h / h[2, 2]
    h = h / np.linalg.norm(h)
    flat = h.ravel()
    first = flat[np.flatnonzero(np.abs(flat) > 1e-15)[0]]
    return h if first > 0 else -h


def _hartley(pts: np.ndarray) -> np.ndarray:
    centroid = pts.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(pts - centroid, axis=1))
    if mean_dist < 1e-15:
        raise DegenerateInputError("all points coincide")
    scale = math.sqrt(2.0) / mean_dist
    return np.array(
        [[scale, 0.0, -scale * centroid[0]], [0.0, scale, -scale * centroid[1]], [0.0, 0.0, 1.0]]
    )


def homography_dlt(src, dst) -> np.ndarray:
    """Normalised DLT estimate of ``H`` with ``dst ~ H @ src``.

    Points are Hartley-normalised (zero centroid, mean distance sqrt(2))
    before solving, and ``H`` is the right singular vector belonging to the
    smallest singular value.

    Raises:
        InvalidInputError: fewer than 4 correspondences or mismatched shapes.
        DegenerateInputError: rank-deficient system or singular result.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    if src.shape != dst.shape or len(src) < 4:
        raise InvalidInputError("need at least 4 matching point pairs")
    _check_finite(src, dst)
    t_src = _hartley(src)
    t_dst = _hartley(dst)
    s = apply_homography(t_src, src)
    d = apply_homography(t_dst, dst)
    n = len(s)
    a = np.zeros((2 * n, 9))
    x, y = s[:, 0], s[:, 1]
    xp, yp = d[:, 0], d[:, 1]
    a[0::2, 0:3] = np.column_stack([-x, -y, -np.ones(n)])
    a[0::2, 6:9] = np.column_stack([xp * x, xp * y, xp])
    a[1::2, 3:6] = np.column_stack([-x, -y, -np.ones(n)])
    a[1::2, 6:9] = np.column_stack([yp * x, yp * y, yp])
    _, sv, vt = np.linalg.svd(a)
    if sv[-2] < 1e-10 * sv[0]:
        raise DegenerateInputError("correspondences do not determine a unique homography")
    h_norm = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h_norm @ t_src
    # a 3-collinear source set yields a rank-2 solution
    u_sv = np.linalg.svd(h / np.linalg.norm(h), compute_uv=False)
    if u_sv[-1] < 1e-9 * u_sv[0]:
        raise DegenerateInputError("estimated homography is singular")
    return normalize_homography(h)


def apply_homography(h, pts) -> np.ndarray:
    """Map 2D point(s) ``(..., 2)`` through ``h``."""
    h = np.asarray(h, dtype=float)
    pts = np.asarray(pts, dtype=float)
    hom = pts @ h[:, :2].T + h[:, 2]
    return hom[..., :2] / hom[..., 2:3]


def reprojection_errors(h, src, dst) -> np.ndarray:
    return np.linalg.norm(apply_homography(h, src) - np.asarray(dst, dtype=float), axis=-1)


def point_in_convex_polygon(p, hull, tol: float = 1e-9) -> bool:
    """Boundary-inclusive containment test against a CCW convex polygon."""
    hull = np.asarray(hull, dtype=float).reshape(-1, 2)
    if len(hull) < 3:
        raise InvalidHullError("hull needs at least 3 vertices")
    p = np.asarray(p, dtype=float)
    a = hull
    b = np.roll(hull, -1, axis=0)
    cross = (b[:, 0] - a[:, 0]) * (p[1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (p[0] - a[:, 0])
    return bool(np.all(cross >= -tol))


def convex_hull_2d(pts) -> np.ndarray:
    """Andrew's monotone chain. Returns CCW vertices without collinear points."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]
    # drop exact duplicates
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.any(np.diff(pts, axis=0) != 0, axis=1)
    pts = pts[keep]
    if len(pts) < 3:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def polygon_area(poly) -> float:
    """Signed shoelace area (positive for CCW in a y-up frame)."""
    poly = np.asarray(poly, dtype=float).reshape(-1, 2)
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))
