import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adpipe.errors import (
    BehindCameraError,
    DegenerateInputError,
    InvalidHullError,
    InvalidInputError,
    NoIntersectionError,
)
from adpipe.geometry import (
    CameraIntrinsics,
    PlaneEq,
    apply_homography,
    back_project,
    convex_hull_2d,
    homography_dlt,
    normalize_homography,
    orient_direction,
    plane_intersection_direction,
    point_in_convex_polygon,
    polygon_area,
    project,
)

K = CameraIntrinsics(f=1000.0, c_x=960.0, c_y=540.0, s=2.0)
UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])

finite = st.floats(-1e4, 1e4, allow_nan=False)
# project() loses ~eps*c_x*f/z px to the fixed camera-centre offset, so the
# 1e-9 px round-trip holds for z = s*md >= 1 (pipeline depths are ~1e6)
positive_md = st.floats(0.5, 1e3, allow_nan=False)


# ---------------------------------------------------------------- intrinsics


@pytest.mark.parametrize("f,s", [(0, 1), (-1, 1), (100, 0), (100, -2), (math.inf, 1)])
def test_intrinsics_reject_invalid(f, s):
    with pytest.raises(InvalidInputError):
        CameraIntrinsics(f=f, c_x=0, c_y=0, s=s)


def test_centered_intrinsics():
    k = CameraIntrinsics.centered(1920, 1080, 1000, 2)
    assert (k.c_x, k.c_y, k.f, k.s) == (960.0, 540.0, 1000.0, 2.0)
    assert np.array_equal(k.center, [960.0, 540.0, 0.0])


# ---------------------------------------------------------------- back-projection


def test_back_project_principal_ray():
    assert np.allclose(back_project([960, 540], 3, K), [960, 540, 6])


def test_back_project_offset_pixel():
    # x = 960 + 200 * 6 / 1000
    assert np.allclose(back_project([1160, 540], 3, K), [961.2, 540, 6], atol=1e-12)


def test_back_project_vertical_uses_v():
    p = back_project([960, 740], 3, K)
    assert np.allclose(p, [960, 541.2, 6], atol=1e-12)


def test_back_project_zero_depth_collapses_to_centre():
    assert np.allclose(back_project([123, 456], 0, K), [960, 540, 0])


@pytest.mark.parametrize("uv,md", [([np.nan, 0], 1.0), ([0, 0], np.inf), ([0, 0], -1.0)])
def test_back_project_rejects_bad_input(uv, md):
    with pytest.raises(InvalidInputError):
        back_project(uv, md, K)


def test_project_examples():
    assert np.allclose(project([960, 540, 6], K), [960, 540])
    assert np.allclose(project([961.2, 540, 6], K), [1160, 540], atol=1e-9)


@pytest.mark.parametrize("z", [0.0, -1.0])
def test_project_behind_camera(z):
    with pytest.raises(BehindCameraError):
        project([1, 2, z], K)


@given(u=finite, v=finite, md=positive_md)
def test_round_trip(u, v, md):
    back = project(back_project([u, v], md, K), K)
    assert np.allclose(back, [u, v], atol=1e-9, rtol=0)


@given(u=finite, v=finite, md=positive_md)
def test_back_project_linear_in_depth(u, v, md):
    p1 = back_project([u, v], md, K) - K.center
    p2 = back_project([u, v], 2 * md, K) - K.center
    assert np.allclose(p2, 2 * p1, rtol=1e-12, atol=1e-9)


def test_back_project_broadcasts():
    uv = np.array([[[0, 0], [10, 20]], [[30, 40], [50, 60]]], dtype=float)
    md = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = back_project(uv, md, K)
    assert out.shape == (2, 2, 3)
    assert np.allclose(out[1, 0], back_project([30, 40], 3.0, K))


# ---------------------------------------------------------------- planes


def test_plane_from_normal_normalises():
    p = PlaneEq.from_normal([0, 0, 2], -10)
    assert np.allclose(p.n, [0, 0, 1]) and p.d == pytest.approx(-5)


def test_plane_zero_normal():
    with pytest.raises(DegenerateInputError):
        PlaneEq.from_normal([0, 0, 0], 1)


def test_intersection_coordinate_planes():
    a = PlaneEq.from_normal([0, 0, 1], 0)
    b = PlaneEq.from_normal([0, 1, 0], 3)
    assert np.allclose(plane_intersection_direction(a, b), [1, 0, 0])


def test_intersection_parallel_planes():
    with pytest.raises(NoIntersectionError):
        plane_intersection_direction(PlaneEq.from_normal([0, 0, 1], 0), PlaneEq.from_normal([0, 0, 1], 5))


def test_intersection_tilted_plane():
    a = PlaneEq.from_normal([0, 0, 1], 0)
    b = PlaneEq.from_normal(np.array([1, 0, 1]) / math.sqrt(2), 0)
    assert np.allclose(plane_intersection_direction(a, b), [0, 1, 0])


unit_vectors = st.tuples(finite, finite, finite).filter(lambda v: np.linalg.norm(v) > 1e-3)


@given(na=unit_vectors, nb=unit_vectors)
def test_intersection_orthogonal_to_normals(na, nb):
    a = PlaneEq.from_normal(na, 0)
    b = PlaneEq.from_normal(nb, 0)
    if np.linalg.norm(np.cross(a.n, b.n)) <= 1e-6:
        return
    d = plane_intersection_direction(a, b)
    assert abs(np.linalg.norm(d) - 1) < 1e-12
    assert abs(d @ a.n) < 1e-9 and abs(d @ b.n) < 1e-9
    nz = d[np.abs(d) > 1e-12]
    assert nz[0] > 0


def test_orient_direction_tie_breaks():
    assert np.array_equal(orient_direction([0, -1, 2]), [0, 1, -2])
    assert np.array_equal(orient_direction([0, 0, -3]), [0, 0, 3])


# ---------------------------------------------------------------- homographies


def test_dlt_identity():
    assert np.allclose(homography_dlt(UNIT_SQUARE, UNIT_SQUARE), np.eye(3), atol=1e-12)


def test_dlt_translation():
    h = homography_dlt(UNIT_SQUARE, UNIT_SQUARE + [10, 5])
    assert np.allclose(h, [[1, 0, 10], [0, 1, 5], [0, 0, 1]], atol=1e-9)


def test_dlt_recovers_projective():
    h_true = np.array([[1.2, 0.1, 30.0], [-0.05, 0.9, 12.0], [0.001, 0.0005, 1.0]])
    src = np.array([[0, 0], [200, 0], [200, 120], [0, 120], [90, 40], [150, 100]], dtype=float)
    h = homography_dlt(src, apply_homography(h_true, src))
    assert np.max(np.abs(h - h_true) / np.abs(h_true).max()) < 1e-6


def test_dlt_needs_four_pairs():
    with pytest.raises(InvalidInputError):
        homography_dlt(UNIT_SQUARE[:3], UNIT_SQUARE[:3])


def test_dlt_collinear_source():
    src = np.array([[0, 0], [1, 0], [2, 0], [3, 0]], dtype=float)
    with pytest.raises(DegenerateInputError):
        homography_dlt(src, src + 1)


quad_jitter = st.lists(st.floats(-0.2, 0.2), min_size=8, max_size=8)


@given(jit=quad_jitter, lam=st.floats(0.1, 50))
def test_dlt_scale_covariant(jit, lam):
    src = np.array([[0, 0], [100, 0], [100, 60], [0, 60], [40, 20]], dtype=float)
    dst = src * 1.1 + np.r_[jit, 0, 0].reshape(5, 2) * 100 + [5, 7]
    h = homography_dlt(src, dst)
    s = np.diag([lam, lam, 1.0])
    h_scaled = homography_dlt(src * lam, dst * lam)
    expected = normalize_homography(s @ h @ np.linalg.inv(s))
    assert np.allclose(h_scaled, expected, rtol=1e-6, atol=1e-6 * np.abs(expected).max())


@given(st.lists(st.floats(-10, 10), min_size=9, max_size=9))
def test_normalize_idempotent(vals):
    h = np.array(vals).reshape(3, 3)
    if np.linalg.norm(h) < 1e-6:
        return
    once = normalize_homography(h)
    assert np.allclose(normalize_homography(once), once, rtol=1e-12, atol=1e-12)


def test_normalize_tiny_corner_uses_frobenius():
    h = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]], dtype=float)
    n = normalize_homography(h)
    assert np.linalg.norm(n) == pytest.approx(1.0)


# ---------------------------------------------------------------- polygons


@pytest.mark.parametrize("p,inside", [((0.5, 0.5), True), ((2, 0.5), False), ((1.0, 0.5), True), ((1, 1), True)])
def test_point_in_unit_square(p, inside):
    assert point_in_convex_polygon(p, UNIT_SQUARE) is inside


def test_point_in_polygon_needs_three_vertices():
    with pytest.raises(InvalidHullError):
        point_in_convex_polygon((0, 0), UNIT_SQUARE[:2])


@given(st.lists(st.tuples(finite, finite), min_size=3, max_size=40))
def test_convex_hull_contains_points(pts):
    pts = np.array(pts)
    hull = convex_hull_2d(pts)
    if len(hull) < 3 or polygon_area(hull) < 1e-6:
        return
    assert polygon_area(hull) > 0  # counter-clockwise
    scale = np.abs(pts).max() + 1
    for p in pts:
        assert point_in_convex_polygon(p, hull, tol=1e-9 * scale * scale)


def test_convex_hull_square_with_interior():
    pts = np.vstack([UNIT_SQUARE, [[0.5, 0.5], [0.2, 0.7], [0.5, 0.0]]])
    hull = convex_hull_2d(pts)
    assert len(hull) == 4
    assert {tuple(p) for p in hull} == {tuple(p) for p in UNIT_SQUARE}
