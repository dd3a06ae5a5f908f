import math

import cv2
import numpy as np
import pytest
from helpers import angle_deg, grid_rectangle_oracle, scene_placement
from hypothesis import given
from hypothesis import strategies as st

from adpipe.errors import InvalidInputError, NoAlignmentError, PlacementFailedError
from adpipe.geometry import (
    CameraIntrinsics,
    PlaneEq,
    apply_homography,
    back_project,
    point_in_convex_polygon,
    polygon_area,
)
from adpipe.imaging import LineSegment
from adpipe.placement import (
    AlignmentLine,
    Placement,
    alignment_line,
    alignment_plane,
    alignment_vector,
    asset_corners,
    max_inscribed_rectangle,
    place_asset,
    placement_homography,
)
from adpipe.reconstruction import PlaneFit, PlaneHull, plane_basis

K = CameraIntrinsics(f=500.0, c_x=320.0, c_y=180.0, s=1.0)


def rect_mask(w, h, angle=0.0, size=(360, 640)):
    m = np.zeros(size, np.uint8)
    box = cv2.boxPoints(((size[1] / 2, size[0] / 2), (w, h), angle))
    cv2.fillPoly(m, [np.round(box).astype(np.int32)], 1)
    return m.astype(bool)


def planar_hull(poly2d, normal=(0, 0, 1), origin=(0, 0, 10)):
    """PlaneHull/PlaneFit pair whose 2D hull is ``poly2d`` in the plane's own basis."""
    n = np.asarray(normal, float) / np.linalg.norm(normal)
    origin = np.asarray(origin, float)
    e1, e2 = plane_basis(n)
    fit = PlaneFit(PlaneEq.from_point_normal(origin, n), np.arange(len(poly2d)), 1.0, 1e-6)
    return fit, PlaneHull(origin=origin, e1=e1, e2=e2, hull2d=np.asarray(poly2d, float), normal=n)


# ---------------------------------------------------------------- alignment line


def test_alignment_line_axis_aligned_rectangle():
    line = alignment_line(rect_mask(200, 50))
    assert abs(line.a) < 0.02
    assert line.segment.length > 180


def test_alignment_line_rotated_rectangle():
    line = alignment_line(rect_mask(260, 60, angle=15))
    ang = line.segment.angle_deg
    assert min(abs(ang - 15), abs(ang - 195)) < 1.0


def test_alignment_line_single_pixel():
    m = np.zeros((50, 50), bool)
    m[20, 20] = True
    with pytest.raises(NoAlignmentError):
        alignment_line(m)


def test_alignment_line_empty():
    with pytest.raises(InvalidInputError):
        alignment_line(np.zeros((10, 10), bool))


@given(st.floats(-40, 40), st.integers(150, 300))
def test_alignment_line_endpoints_on_line(angle, w):
    line = alignment_line(rect_mask(w, 60, angle=angle))
    if line.vertical:
        assert abs(line.segment.p0[0] - line.segment.p1[0]) < 0.5
        return
    for p in (line.segment.p0, line.segment.p1):
        assert abs(line.a * p[0] + line.b - p[1]) <= 0.5
    diff = abs((line.segment.angle_deg - angle) % 90)
    assert min(diff, 90 - diff) < 1.0


# ---------------------------------------------------------------- alignment plane


def test_alignment_plane_horizontal_through_principal_point():
    line = AlignmentLine.from_segment(LineSegment((100.0, 180.0), (500.0, 180.0)))
    p = alignment_plane(line, K)
    assert abs(p.n @ [0, 0, 1]) < 1e-9  # contains the optical axis
    assert abs(p.n @ [1, 0, 0]) < 1e-9  # contains the horizontal ray
    assert abs(p.signed_distance(K.center)) < 1e-9


def test_alignment_plane_vertical_line_through_centre():
    line = AlignmentLine.from_segment(LineSegment((320.0, 10.0), (320.0, 300.0)))
    p = alignment_plane(line, K)
    assert abs(abs(p.n[0]) - 1) < 1e-12 and abs(p.n[1]) < 1e-12 and abs(p.n[2]) < 1e-12


@given(
    st.tuples(st.floats(0, 640), st.floats(0, 360)),
    st.tuples(st.floats(0, 640), st.floats(0, 360)),
    st.floats(0, 1),
    st.floats(0.01, 1e6),
)
def test_alignment_plane_contains_back_projected_line(p0, p1, t, depth):
    if math.dist(p0, p1) < 1.0:
        return
    line = AlignmentLine.from_segment(LineSegment(p0, p1))
    plane = alignment_plane(line, K)
    uv = np.asarray(p0) + t * (np.asarray(p1) - np.asarray(p0))
    pt = back_project(uv, depth, K)
    scale = max(1.0, np.linalg.norm(pt - K.center))
    assert abs(plane.signed_distance(pt)) <= 1e-6 * scale


def test_alignment_vector_is_plane_intersection():
    crowd = PlaneEq.from_normal([0, -1, -1], 10)
    align = PlaneEq.from_normal([0, 1, 0], -3)
    v = alignment_vector(align, crowd)
    assert np.allclose(v, [1, 0, 0])


# ---------------------------------------------------------------- rectangle fit


def test_rectangle_in_square_aspect_two():
    square = np.array([[0, 0], [10, 0], [10, 10], [0, 10]], float)
    centre, width = max_inscribed_rectangle(square, 2.0)
    assert width == pytest.approx(10.0, abs=1e-9)
    assert np.allclose(centre, [5, 5], atol=1e-9)


def test_place_asset_square_hull():
    fit, hull = planar_hull([[-5, -5], [5, -5], [5, 5], [-5, 5]])
    p = place_asset(fit, hull, hull.e1, 2.0, margin=0.0)
    assert p.width == pytest.approx(10) and p.height == pytest.approx(5)
    assert np.allclose(p.corners3d.mean(axis=0), hull.origin, atol=1e-9)


def test_place_asset_triangle_vs_grid_oracle():
    tri = np.array([[0, 0], [12, 0], [3, 9]], float)
    fit, hull = planar_hull(tri)
    p = place_asset(fit, hull, hull.e1, 1.0, margin=0.0)
    coords = (p.corners3d - hull.origin) @ np.column_stack([hull.e1, hull.e2])
    for c in coords:
        assert point_in_convex_polygon(c, tri, tol=1e-7)
    best, _ = grid_rectangle_oracle(tri, 1.0)
    assert p.width * p.height >= 0.95 * best * best


def test_place_asset_degenerate_hull():
    fit, hull = planar_hull([[0, 0], [10, 0], [5, 1e-9]])
    with pytest.raises(PlacementFailedError):
        place_asset(fit, hull, hull.e1, 1.0)


def test_place_asset_rejects_off_plane_vector():
    fit, hull = planar_hull([[0, 0], [4, 0], [4, 4], [0, 4]])
    with pytest.raises(InvalidInputError):
        place_asset(fit, hull, hull.normal, 1.0)


convex_polys = st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=3, max_size=12).map(
    lambda pts: cv2.convexHull(np.array(pts, np.float32)).reshape(-1, 2).astype(float)
)


def _ccw(poly):
    return poly if polygon_area(poly) > 0 else poly[::-1]


@given(convex_polys, st.floats(0.3, 4.0), st.integers(0, 11))
def test_rectangle_fit_properties(poly, aspect, shift):
    poly = _ccw(poly)
    if len(poly) < 3 or polygon_area(poly) < 1.0:
        return
    try:
        centre, width = max_inscribed_rectangle(poly, aspect)
    except PlacementFailedError:
        return
    h = width / aspect
    corners = centre + np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]]) * [width / 2, h / 2]
    for c in corners:
        assert point_in_convex_polygon(c, poly, tol=1e-6 * max(1.0, np.abs(poly).max()) ** 2)
    best, _ = grid_rectangle_oracle(poly, aspect, n=81)
    assert width >= best * (1 - 1e-6)
    # starting vertex does not matter
    rolled = np.roll(poly, shift % len(poly), axis=0)
    c2, w2 = max_inscribed_rectangle(rolled, aspect)
    assert w2 == pytest.approx(width, rel=1e-7)
    assert np.allclose(c2, centre, atol=1e-6 * max(1.0, np.abs(poly).max()))


def test_margin_shrinks_rectangle():
    square = np.array([[0, 0], [10, 0], [10, 10], [0, 10]], float)
    _, w0 = max_inscribed_rectangle(square, 1.0)
    _, w1 = max_inscribed_rectangle(square, 1.0, margin=0.05)
    assert w1 == pytest.approx(w0 - 2 * 0.05 * 10)


# ---------------------------------------------------------------- homography


def _placement_with(corners2d):
    return Placement(corners3d=np.zeros((4, 3)), corners2d=np.asarray(corners2d, float), v_align=np.r_[1, 0, 0],
                     width=1, height=1)


def test_homography_fronto_parallel_is_affine():
    fit, hull = planar_hull([[-100, -50], [100, -50], [100, 50], [-100, 50]], normal=(0, 0, -1),
                            origin=(320, 180, 1000))
    p = place_asset(fit, hull, [1, 0, 0], 2.0, margin=0.0, k=K)
    h = placement_homography(p, 200, 100)
    assert abs(h[2, 0]) < 1e-9 and abs(h[2, 1]) < 1e-9


def test_homography_similarity():
    corners = asset_corners(200, 100) * 1.5 + [10, 20]
    h = placement_homography(_placement_with(corners), 200, 100)
    assert np.allclose(h, [[1.5, 0, 10], [0, 1.5, 20], [0, 0, 1]], atol=1e-9)


def test_homography_oblique_hits_corners():
    corners = np.array([[100, 300], [500, 320], [450, 120], [140, 90]], float)
    h = placement_homography(_placement_with(corners), 240, 120)
    assert np.allclose(apply_homography(h, asset_corners(240, 120)), corners, atol=1e-6)


def test_homography_needs_corners():
    p = _placement_with(np.zeros((4, 2)))
    p.corners2d = None
    with pytest.raises(Exception):
        placement_homography(p, 10, 10)


# ---------------------------------------------------------------- full placement on synthetic scenes


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_scene_placement_invariants(seed):
    spec, b, p, k, hull_img, hull, _ = scene_placement(seed)
    n = hull.normal
    # coplanar with the crowd plane
    res = (p.corners3d - hull.origin) @ n
    assert np.all(np.abs(res) <= 1e-6 * np.linalg.norm(p.corners3d, axis=1))
    bottom = p.corners3d[1] - p.corners3d[0]
    assert math.radians(angle_deg(bottom, p.v_align)) < 1e-6
    assert p.width / p.height == pytest.approx(2.0, rel=1e-6)
    side = p.corners3d[3] - p.corners3d[0]
    assert np.linalg.norm(bottom) / np.linalg.norm(side) == pytest.approx(2.0, rel=1e-6)
    # asset top is above its bottom in the image
    assert p.corners2d[3, 1] < p.corners2d[0, 1]


def test_scene_bottom_edge_parallel_to_alignment_line_without_yaw():
    import dataclasses

    from adpipe import synth
    from adpipe.config import PipelineConfig
    from adpipe.pipeline import Diagnostics, place_on_image

    spec = synth.default_scene(4, yaw_deg=0.0)
    b = synth.render_scene(spec)
    cfg = dataclasses.replace(PipelineConfig(), focal=repr(spec.f))
    diag = Diagnostics()
    p, _ = place_on_image(cfg, b.frame, b.mask, b.depth, 2.0, diag)
    rec = diag.of("alignment")[0]
    line = np.subtract(rec["p1"], rec["p0"])
    edge = p.corners2d[1] - p.corners2d[0]
    assert angle_deg(np.r_[line, 0], np.r_[edge, 0]) < 0.5


def test_scene_depth_scale_does_not_move_corners():
    _, _, p1, *_ = scene_placement(1)
    _, _, p2, *_ = scene_placement(1, scale=2e6, tolerance=2e4)
    assert np.allclose(p1.corners2d, p2.corners2d, atol=1e-6)
