"""Point clouds from relative depth, dominant-plane RANSAC, plane hulls and
focal-length estimation from vanishing points."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateInputError,
    InconsistentGeometryError,
    InsufficientStructureError,
    InvalidInputError,
)
from .geometry import CameraIntrinsics, PlaneEq, back_project, convex_hull_2d, polygon_area
from .imaging import LineSegment, canny, hough_segments, refine_segment

DEFAULT_DEPTH_SCALE = 1_000_000.0
DEFAULT_TOLERANCE = 10_000.0
DEFAULT_ITERATIONS = 500
DEFAULT_STRIDE = 4


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3)
    pixels: np.ndarray  # (N, 2) originating (u, v)

    def __len__(self):
        return len(self.points)


@dataclass
class PlaneFit:
    plane: PlaneEq
    inliers: np.ndarray  # indices into the cloud
    inlier_ratio: float
    tolerance: float


@dataclass
class PlaneHull:
    origin: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    hull2d: np.ndarray  # CCW vertices in (e1, e2) coordinates
    normal: np.ndarray = field(default=None)

    def to_world(self, pts2d) -> np.ndarray:
        pts2d = np.asarray(pts2d, dtype=float)
        return self.origin + pts2d[..., :1] * self.e1 + pts2d[..., 1:2] * self.e2

    def hull_world(self) -> np.ndarray:
        return self.to_world(self.hull2d)

    @property
    def area(self) -> float:
        return polygon_area(self.hull2d)


def depth_to_cloud(depth, k: CameraIntrinsics, mask, stride: int = 1) -> PointCloud:
    """Back-project every ``stride``-th masked pixel (raster order) with MD > 0."""
    depth = np.asarray(depth, dtype=float)
    mask = np.asarray(mask).astype(bool)
    if depth.shape != mask.shape:
        raise InvalidInputError(f"depth {depth.shape} and mask {mask.shape} differ in size")
    if stride < 1:
        raise InvalidInputError("stride must be >= 1")
    vs, us = np.nonzero(mask)
    vs, us = vs[::stride], us[::stride]
    md = depth[vs, us]
    keep = md > 0
    vs, us, md = vs[keep], us[keep], md[keep]
    pixels = np.column_stack([us, vs]).astype(float)
    if len(pixels) == 0:
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 2)))
    return PointCloud(back_project(pixels, md, k), pixels)


def _oriented_plane(n: np.ndarray, d: float) -> PlaneEq:
    if d > 0 or (d == 0 and np.dot(n, [1e-6, 1e-3, 1.0]) < 0):
        n, d = -n, -d
    return PlaneEq(n, float(d))


def fit_plane_lsq(pts) -> PlaneEq:
    """Total least-squares plane: centroid plus smallest principal axis."""
    pts = np.asarray(pts, dtype=float)
    centroid = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - centroid, full_matrices=False)
    n = vt[-1] / np.linalg.norm(vt[-1])
    return _oriented_plane(n, -float(n @ centroid))


def _check_not_collinear(pts: np.ndarray):
    centred = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    if len(sv) < 2 or sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise DegenerateInputError("points are collinear")


def ransac_plane(
    cloud: PointCloud,
    tolerance: float = DEFAULT_TOLERANCE,
    iterations: int = DEFAULT_ITERATIONS,
    rng_seed: int = 0,
    chunk: int = 64,
) -> PlaneFit:
    """Dominant plane by 3-point RANSAC followed by a least-squares refit.

    Hypotheses are ranked by inlier count, then by lower RMS residual of their
    inliers. The refit plane replaces the winning hypothesis only when it keeps
    at least as many inliers.
    """
    pts = np.asarray(cloud.points, dtype=float)
    n_pts = len(pts)
    if n_pts < 3:
        raise DegenerateInputError("RANSAC needs at least 3 points")
    _check_not_collinear(pts)

    rng = np.random.default_rng(rng_seed)
    samples = np.array([rng.choice(n_pts, 3, replace=False) for _ in range(iterations)])
    p0, p1, p2 = pts[samples[:, 0]], pts[samples[:, 1]], pts[samples[:, 2]]
    normals = np.cross(p1 - p0, p2 - p0)
    lens = np.linalg.norm(normals, axis=1)
    scale = np.linalg.norm(p1 - p0, axis=1) * np.linalg.norm(p2 - p0, axis=1)
    valid = lens > 1e-12 * np.maximum(scale, 1e-300)
    normals[valid] /= lens[valid, None]
    offsets = -np.einsum("ij,ij->i", normals, p0)

    best_key = None
    best_idx = -1
    for start in range(0, iterations, chunk):
        stop = min(start + chunk, iterations)
        res = np.abs(pts @ normals[start:stop].T + offsets[start:stop])
        inl = res <= tolerance
        counts = inl.sum(axis=0)
        sq = np.where(inl, res * res, 0.0).sum(axis=0)
        for j in range(stop - start):
            i = start + j
            if not valid[i]:
                continue
            rms = math.sqrt(sq[j] / counts[j]) if counts[j] else math.inf
            key = (-int(counts[j]), rms)
            if best_key is None or key < best_key:
                best_key, best_idx = key, i
    if best_idx < 0:
        raise DegenerateInputError("every sampled triple was collinear")

    plane = _oriented_plane(normals[best_idx], offsets[best_idx])
    inliers = np.flatnonzero(np.abs(plane.signed_distance(pts)) <= tolerance)
    if len(inliers) >= 3:
        try:
            _check_not_collinear(pts[inliers])
            refit = fit_plane_lsq(pts[inliers])
        except DegenerateInputError:
            refit = None
        if refit is not None:
            refit_inliers = np.flatnonzero(np.abs(refit.signed_distance(pts)) <= tolerance)
            if len(refit_inliers) >= len(inliers):
                plane, inliers = refit, refit_inliers
    return PlaneFit(plane=plane, inliers=inliers, inlier_ratio=len(inliers) / n_pts, tolerance=tolerance)


def plane_basis(n) -> tuple[np.ndarray, np.ndarray]:
    """Right-handed orthonormal pair ``(e1, e2)`` spanning the plane with normal ``n``."""
    n = np.asarray(n, dtype=float)
    axis = np.eye(3)[int(np.argmin(np.abs(n)))]
    e1 = np.cross(axis, n)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2


def hull_on_plane(fit: PlaneFit, cloud: PointCloud) -> PlaneHull:
    if len(fit.inliers) < 3:
        raise DegenerateInputError("hull needs at least 3 inliers")
    pts = np.asarray(cloud.points, dtype=float)[fit.inliers]
    n = fit.plane.n
    on_plane = pts - fit.plane.signed_distance(pts)[:, None] * n
    origin = on_plane.mean(axis=0)
    e1, e2 = plane_basis(n)
    rel = on_plane - origin
    coords = np.column_stack([rel @ e1, rel @ e2])
    hull = convex_hull_2d(coords)
    extent = np.ptp(coords, axis=0).max() if len(coords) else 0.0
    if len(hull) < 3 or polygon_area(hull) <= 1e-12 * max(extent, 1e-300) ** 2:
        raise DegenerateInputError("inliers are collinear on the plane")
    return PlaneHull(origin=origin, e1=e1, e2=e2, hull2d=hull, normal=n.copy())


# ---------------------------------------------------------------- vanishing points


def _segment_arrays(segments):
    p0 = np.array([s.p0 for s in segments], dtype=float)
    p1 = np.array([s.p1 for s in segments], dtype=float)
    return p0, p1


def _consistency_deg(vp_h: np.ndarray, mid: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Angle between each segment and the ray from its midpoint to ``vp_h``."""
    to_vp = vp_h[:2][None, :] - vp_h[2] * mid
    norm = np.linalg.norm(to_vp, axis=1)
    cosang = np.abs(np.einsum("ij,ij->i", to_vp, direction)) / np.maximum(norm, 1e-300)
    ang = np.degrees(np.arccos(np.clip(cosang, 0.0, 1.0)))
    return np.where(norm > 1e-12, ang, 90.0)


def _lsq_vp(lines: np.ndarray, weights: np.ndarray) -> np.ndarray:
    m = (lines * weights[:, None]).T @ lines
    _, vecs = np.linalg.eigh(m)
    return vecs[:, 0]


@dataclass
class VanishingPoint:
    homogeneous: np.ndarray  # in pixel coordinates, unit norm
    members: np.ndarray  # segment indices

    @property
    def is_finite(self) -> bool:
        h = self.homogeneous
        return abs(h[2]) > 1e-9 * np.linalg.norm(h[:2])

    @property
    def point(self) -> np.ndarray:
        return self.homogeneous[:2] / self.homogeneous[2]


def vanishing_points(
    segments,
    max_points: int = 3,
    inlier_deg: float = 2.0,
    merge_deg: float = 10.0,
    max_candidates: int = 80,
) -> list[VanishingPoint]:
    """Group segments by the vanishing point they converge to.

    Candidates are the pairwise intersections of the longest segments; the
    candidate supported by the largest total segment length is taken, refined
    by weighted least squares over its members, and its members are removed
    before the next round. Groups whose vanishing directions (seen from the
    centre of the segment set) lie within ``merge_deg`` are merged; groups with
    fewer than two members are dropped.

    Returns at most ``max_points`` groups, strongest first.
    """
    segments = list(segments)
    if len(segments) < 4:
        raise InsufficientStructureError("need at least 4 segments")
    p0, p1 = _segment_arrays(segments)
    centre = np.vstack([p0, p1]).mean(axis=0)
    scale = max(np.abs(np.vstack([p0, p1]) - centre).max(), 1.0)
    # work in normalised coordinates for conditioning
    q0 = (p0 - centre) / scale
    q1 = (p1 - centre) / scale
    mid = 0.5 * (q0 + q1)
    vec = q1 - q0
    lengths = np.linalg.norm(vec, axis=1)
    direction = vec / lengths[:, None]
    lines = np.cross(np.column_stack([q0, np.ones(len(q0))]), np.column_stack([q1, np.ones(len(q1))]))
    lines /= np.linalg.norm(lines[:, :2], axis=1)[:, None]

    remaining = np.ones(len(segments), dtype=bool)
    groups: list[tuple[np.ndarray, np.ndarray]] = []
    while len(groups) < max_points + 2 and remaining.sum() >= 2:
        idx = np.flatnonzero(remaining)
        top = idx[np.argsort(-lengths[idx], kind="stable")[:max_candidates]]
        best = None
        for i, j in itertools.combinations(top, 2):
            cand = np.cross(lines[i], lines[j])
            nrm = np.linalg.norm(cand)
            if nrm < 1e-15:
                continue
            cand = cand / nrm
            ang = _consistency_deg(cand, mid[idx], direction[idx])
            support = lengths[idx][ang < inlier_deg].sum()
            if best is None or support > best[0] + 1e-12:
                best = (support, cand)
        if best is None:
            break
        vp = best[1]
        for _ in range(3):
            members = idx[_consistency_deg(vp, mid[idx], direction[idx]) < inlier_deg]
            if len(members) < 2:
                break
            vp = _lsq_vp(lines[members], lengths[members])
        members = idx[_consistency_deg(vp, mid[idx], direction[idx]) < inlier_deg]
        if len(members) < 2:
            break
        groups.append((vp, members))
        remaining[members] = False

    groups = _merge_groups(groups, lines, lengths, merge_deg)
    groups = [g for g in groups if len(g[1]) >= 2]
    groups.sort(key=lambda g: -lengths[g[1]].sum())
    groups = groups[:max_points]
    if len(groups) < 2:
        raise InsufficientStructureError("fewer than two vanishing directions found")

    denorm = np.array([[scale, 0.0, centre[0]], [0.0, scale, centre[1]], [0.0, 0.0, 1.0]])
    out = []
    for vp, members in groups:
        h = denorm @ vp
        h = h / np.linalg.norm(h)
        if h[2] < 0:
            h = -h
        out.append(VanishingPoint(homogeneous=h, members=np.sort(members)))
    return out


def _vp_direction_deg(vp: np.ndarray) -> tuple[float, bool]:
    finite = abs(vp[2]) > 1e-9 * np.linalg.norm(vp[:2])
    if finite:
        pt = vp[:2] / vp[2]
        return math.degrees(math.atan2(pt[1], pt[0])) % 360.0, True
    return math.degrees(math.atan2(vp[1], vp[0])) % 180.0, False


def _merge_groups(groups, lines, lengths, merge_deg):
    merged = True
    groups = list(groups)
    while merged:
        merged = False
        for a, b in itertools.combinations(range(len(groups)), 2):
            da, fa = _vp_direction_deg(groups[a][0])
            db, fb = _vp_direction_deg(groups[b][0])
            period = 360.0 if (fa and fb) else 180.0
            diff = abs(da - db) % period
            diff = min(diff, period - diff)
            if diff < merge_deg:
                members = np.concatenate([groups[a][1], groups[b][1]])
                vp = _lsq_vp(lines[members], lengths[members])
                groups[a] = (vp, members)
                del groups[b]
                merged = True
                break
    return groups


def estimate_focal(vps, principal) -> float:
    """Focal length from vanishing points of mutually orthogonal directions.

    For a pair, ``f = sqrt(-(v1 - p) . (v2 - p))``. With three points the
    median of the valid pairwise estimates is returned.
    """
    pts = []
    for v in vps:
        if isinstance(v, VanishingPoint):
            if not v.is_finite:
                continue
            v = v.point
        pts.append(np.asarray(v, dtype=float))
    p = np.asarray(principal, dtype=float)
    if len(pts) < 2:
        raise InconsistentGeometryError("need two finite vanishing points")
    estimates = []
    for a, b in itertools.combinations(pts, 2):
        dot = float(np.dot(a - p, b - p))
        if dot < 0:
            estimates.append(math.sqrt(-dot))
    if not estimates:
        raise InconsistentGeometryError("vanishing points are not consistent with orthogonal directions")
    return float(np.median(estimates))


def focal_from_image(
    gray: np.ndarray,
    principal,
    canny_low: float = 50,
    canny_high: float = 150,
    min_votes: int = 30,
    min_len: float = 30.0,
    max_gap: int = 3,
    seed: int = 0,
) -> tuple[float, list[VanishingPoint]]:
    """Detect lines in ``gray`` and estimate the focal length from their vanishing points."""
    edges = canny(gray, canny_low, canny_high)
    segs = hough_segments(edges, min_votes=min_votes, min_len=min_len, max_gap=max_gap, seed=seed)
    # sub-pixel line fits matter: far vanishing points amplify angle errors
    segs = [refine_segment(edges, s, max_gap=max_gap) for s in segs]
    vps = vanishing_points(segs)
    return estimate_focal(vps, principal), vps


def heuristic_focal(width: int, height: int) -> float:
    return 1.2 * max(width, height)
