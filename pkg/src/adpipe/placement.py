"""Orienting, sizing and mapping the asset onto the crowd plane."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import (
    DegenerateInputError,
    InvalidInputError,
    NoAlignmentError,
    PlacementFailedError,
)
from .geometry import (
    CameraIntrinsics,
    PlaneEq,
    convex_hull_2d,
    homography_dlt,
    pixel_ray,
    plane_intersection_direction,
    point_in_convex_polygon,
    polygon_area,
    project,
)
from .imaging import LineSegment, canny, hough_segments, refine_segment
from .reconstruction import PlaneFit, PlaneHull

DEFAULT_MARGIN = 0.02


@dataclass(frozen=True)
class AlignmentLine:
    segment: LineSegment
    a: float | None  # slope of y = a x + b, None when vertical
    b: float | None
    vertical: bool

    @classmethod
    def from_segment(cls, seg: LineSegment) -> "AlignmentLine":
        if seg.is_vertical:
            return cls(seg, None, None, True)
        a, b = seg.slope_intercept()
        return cls(seg, a, b, False)


@dataclass
class Placement:
    corners3d: np.ndarray  # (4, 3): bottom-left, bottom-right, top-right, top-left
    corners2d: np.ndarray | None  # (4, 2) projections, same order
    v_align: np.ndarray
    width: float  # along the bottom edge, world units
    height: float
    h: np.ndarray | None = None


def alignment_line(
    component,
    canny_low: float = 50,
    canny_high: float = 150,
    min_votes: int = 30,
    min_len: float = 20.0,
    max_gap: int = 3,
    seed: int = 0,
) -> AlignmentLine:
    """Longest straight boundary segment of a binary crowd component."""
    img = np.asarray(component).astype(bool).astype(np.uint8) * 255
    if not img.any():
        raise InvalidInputError("alignment line requested for an empty mask")
    edges = canny(img, canny_low, canny_high)
    segs = hough_segments(edges, min_votes=min_votes, min_len=min_len, max_gap=max_gap, seed=seed)
    if not segs:
        raise NoAlignmentError("no straight boundary segment found in the crowd mask")
    return AlignmentLine.from_segment(refine_segment(edges, segs[0], max_gap=max_gap))


def alignment_plane(line: AlignmentLine, k: CameraIntrinsics) -> PlaneEq:
    """Plane through the camera centre containing every point that images onto ``line``.

    Built from the viewing rays of the two segment endpoints; the depths along
    the rays are irrelevant, so only directions enter.
    """
    r1 = pixel_ray(np.asarray(line.segment.p0, dtype=float), k)
    r2 = pixel_ray(np.asarray(line.segment.p1, dtype=float), k)
    n = np.cross(r1, r2)
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        raise InvalidInputError("alignment line is degenerate")
    n = n / norm
    return PlaneEq(n, -float(n @ k.center))


def alignment_vector(align: PlaneEq, crowd: PlaneEq) -> np.ndarray:
    return plane_intersection_direction(align, crowd)


# ---------------------------------------------------------------- rectangle fit


def _halfplanes(poly: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Outward unit normals ``A`` and offsets ``b`` with ``A p <= b`` inside a CCW polygon."""
    a = poly
    b = np.roll(poly, -1, axis=0)
    edge = b - a
    normals = np.column_stack([edge[:, 1], -edge[:, 0]])
    lens = np.linalg.norm(normals, axis=1)
    keep = lens > 1e-15
    normals = normals[keep] / lens[keep, None]
    offsets = np.einsum("ij,ij->i", normals, a[keep])
    return normals, offsets


def _clip(poly: list, normal: np.ndarray, offset: float) -> list:
    out = []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        dp = normal @ p - offset
        dq = normal @ q - offset
        if dp <= 0:
            out.append(p)
        if (dp < 0 < dq) or (dq < 0 < dp):
            t = dp / (dp - dq)
            out.append(p + t * (q - p))
    return out


def _nearest_in_polygon(poly: list, g: np.ndarray) -> np.ndarray:
    pts = np.array(poly)
    if len(pts) >= 3 and polygon_area(pts) > 0 and point_in_convex_polygon(g, pts, tol=0.0):
        return g.copy()
    best, best_d = None, np.inf
    for i in range(len(pts)):
        a, b = pts[i], pts[(i + 1) % len(pts)]
        ab = b - a
        denom = ab @ ab
        t = 0.0 if denom == 0 else float(np.clip((g - a) @ ab / denom, 0.0, 1.0))
        c = a + t * ab
        d = np.linalg.norm(c - g)
        if d < best_d:
            best, best_d = c, d
    return best


def polygon_centroid(poly) -> np.ndarray:
    poly = np.asarray(poly, dtype=float)
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = cross.sum() / 2.0
    if abs(area) < 1e-300:
        return poly.mean(axis=0)
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * area)


def max_inscribed_rectangle(poly, aspect: float, margin: float = 0.0) -> tuple[np.ndarray, float]:
    """Largest axis-aligned rectangle with ``width / height == aspect`` inside ``poly``.

    ``poly`` must be convex and CCW. Each edge is pulled inward by
    ``margin * sqrt(area)``. The width is maximised exactly as a linear
    program in ``(cx, cy, width)``; among optimal centres the one nearest the
    polygon centroid is returned.

    Returns ``(center, width)``.
    """
    poly = np.asarray(poly, dtype=float)
    area = polygon_area(poly)
    if len(poly) < 3 or area <= 0:
        raise PlacementFailedError("hull is degenerate")
    normals, offsets = _halfplanes(poly)
    offsets = offsets - margin * np.sqrt(area)
    signs = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
    unit = signs * np.array([0.5, 0.5 / aspect])  # corner offsets per unit width
    reach = (normals @ unit.T).max(axis=1)  # worst corner per edge
    a_ub = np.column_stack([normals, reach])
    res = linprog(
        c=[0.0, 0.0, -1.0],
        A_ub=a_ub,
        b_ub=offsets,
        bounds=[(None, None), (None, None), (0.0, None)],
        method="highs",
    )
    if res.status != 0:
        raise PlacementFailedError(f"rectangle LP failed: {res.message}")
    width = float(res.x[2])
    if width <= 0:
        raise PlacementFailedError("no rectangle fits inside the hull")

    # centres admissible at (almost) the optimal width form a convex polygon
    w_eff = width * (1.0 - 1e-9)
    lo = poly.min(axis=0) - 1.0
    hi = poly.max(axis=0) + 1.0
    region = [np.array([lo[0], lo[1]]), np.array([hi[0], lo[1]]), np.array([hi[0], hi[1]]), np.array([lo[0], hi[1]])]
    for nrm, off, r in zip(normals, offsets, reach):
        region = _clip(region, nrm, off - w_eff * r)
        if not region:
            break
    g = polygon_centroid(poly)
    center = _nearest_in_polygon(region, g) if region else np.asarray(res.x[:2], dtype=float)
    return center, width


def place_asset(
    crowd: PlaneFit,
    hull: PlaneHull,
    v_align,
    aspect: float,
    margin: float = DEFAULT_MARGIN,
    k: CameraIntrinsics | None = None,
    min_fraction: float = 0.01,
) -> Placement:
    """Fit the asset rectangle on the crowd plane with its bottom edge along ``v_align``.

    When ``k`` is given the rectangle is labelled so that "up" points toward
    smaller image ``v`` and "right" toward larger image ``u``, and the corner
    projections are filled in.
    """
    if aspect <= 0:
        raise InvalidInputError("aspect ratio must be positive")
    n = crowd.plane.n
    v = np.asarray(v_align, dtype=float)
    v = v / np.linalg.norm(v)
    if abs(v @ n) > 1e-6:
        raise InvalidInputError("alignment vector is not parallel to the crowd plane")
    v = v - (v @ n) * n
    v /= np.linalg.norm(v)
    w = np.cross(n, v)

    verts3d = hull.hull_world()
    rel = verts3d - hull.origin
    poly = convex_hull_2d(np.column_stack([rel @ v, rel @ w]))
    if len(poly) < 3:
        raise PlacementFailedError("hull is degenerate")
    hull_area = polygon_area(poly)
    center2d, width = max_inscribed_rectangle(poly, aspect, margin)
    height = width / aspect
    if width * height < min_fraction * hull_area:
        raise PlacementFailedError("largest fitting rectangle is below the minimum size")

    c3 = hull.origin + center2d[0] * v + center2d[1] * w
    right, up = v, w
    corners2d = None
    if k is not None:
        step = max(height, 1e-9)
        base = project(c3, k)
        if project(c3 + step * up, k)[1] > base[1]:
            up = -up
        if project(c3 + step * right, k)[0] < base[0]:
            right = -right
    hw, hh = width / 2.0, height / 2.0
    corners3d = np.array(
        [
            c3 - hw * right - hh * up,
            c3 + hw * right - hh * up,
            c3 + hw * right + hh * up,
            c3 - hw * right + hh * up,
        ]
    )
    if k is not None:
        corners2d = project(corners3d, k)
    return Placement(corners3d=corners3d, corners2d=corners2d, v_align=right, width=width, height=height)


def asset_corners(asset_w: float, asset_h: float) -> np.ndarray:
    """Asset-frame corners matching the placement order BL, BR, TR, TL."""
    return np.array([[0.0, asset_h], [asset_w, asset_h], [asset_w, 0.0], [0.0, 0.0]])


def placement_homography(p: Placement, asset_w: float, asset_h: float) -> np.ndarray:
    """Homography taking asset pixel coordinates onto the placed quadrilateral."""
    if p.corners2d is None or not np.all(np.isfinite(p.corners2d)):
        raise DegenerateInputError("placement has no finite image corners")
    return homography_dlt(asset_corners(asset_w, asset_h), p.corners2d)
