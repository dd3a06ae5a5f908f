"""Ground-truthed synthetic stadium scenes.

A textured crowd stand rises from a straight boundary on a textured ground
plane. Frames are rendered analytically by intersecting every pixel ray with
the two planes, so masks, depth maps and plane equations are exact.

World coordinates follow the back-projection convention of
:mod:`adpipe.geometry`: the reference camera centre is ``(c_x, c_y, 0)``,
``y`` points down and ``z`` forward. Default lengths are scaled so that the
relative depth map values are around 0.4-1.0 with ``depth_scale = 1e6``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import cv2
import numpy as np

from .errors import InvalidSpecError
from .geometry import CameraIntrinsics, PlaneEq, apply_homography, homography_dlt

PALETTES = {
    # base colour and per-channel noise amplitude for crowd, ground, sky
    "stadium": {
        "crowd": ((150, 70, 60), (90, 80, 70)),
        "ground": ((60, 130, 50), (25, 40, 25)),
        "sky": (170, 200, 235),
        "grid": (235, 225, 200),
    },
    "alt": {
        "crowd": ((50, 70, 160), (40, 50, 80)),
        "ground": ((120, 120, 125), (20, 20, 20)),
        "sky": (20, 20, 40),
        "grid": (20, 20, 30),
    },
}


@dataclass(frozen=True)
class CameraPose:
    """Camera state for one frame.

    ``yaw``/``pitch``/``roll`` are degrees, ``offset`` moves the camera centre
    in world units, and ``pan`` displaces the whole image by ``(du, dv)`` pixels
    (a sensor shift, so every scene point moves by exactly that amount).
    """

    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0
    offset: tuple = (0.0, 0.0, 0.0)
    pan: tuple = (0.0, 0.0)

    def rotation(self) -> np.ndarray:
        """World-to-camera rotation."""
        return rotation_matrix(self.yaw, self.pitch, self.roll)


def rotation_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    y, p, r = (math.radians(a) for a in (yaw, pitch, roll))
    ry = np.array([[math.cos(y), 0, -math.sin(y)], [0, 1, 0], [math.sin(y), 0, math.cos(y)]])
    rx = np.array([[1, 0, 0], [0, math.cos(p), math.sin(p)], [0, -math.sin(p), math.cos(p)]])
    rz = np.array([[math.cos(r), math.sin(r), 0], [-math.sin(r), math.cos(r), 0], [0, 0, 1]])
    return rz @ rx @ ry


@dataclass(frozen=True)
class SceneSpec:
    width: int = 640
    height: int = 360
    f: float = 500.0
    depth_scale: float = 1e6
    boundary_depth: float = 4e5
    boundary_offset: float = 0.0  # lateral shift of the boundary anchor point
    ground_drop: float = 5e4  # ground plane distance below the camera
    yaw_deg: float = 8.0  # boundary direction about the vertical axis
    tilt_deg: float = 35.0  # stand lean back from vertical
    crowd_length: float = 3e6
    crowd_height: float = 1.2e6
    cell: float = 5e3  # texture noise cell size, world units
    grid_spacing: float = 4e4
    texture_seed: int = 0
    palette: str = "stadium"
    motion: tuple = ()  # CameraPose per frame; frames past the end reuse the last pose
    cuts: tuple = ()  # (start, stop, SceneSpec): frames in [start, stop) come from the other spec
    depth_noise: float = 0.0  # std-dev of additive noise on relative depth
    mask_dropout: float = 0.0  # fraction of crowd mask pixels cleared at random

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.centered(self.width, self.height, self.f, self.depth_scale)

    def pose(self, frame_index: int) -> CameraPose:
        if not self.motion:
            return CameraPose()
        return self.motion[min(frame_index, len(self.motion) - 1)]

    # -- scene geometry in reference world coordinates
    def boundary_anchor(self) -> np.ndarray:
        k = self.intrinsics
        return np.array([k.c_x + self.boundary_offset, k.c_y + self.ground_drop, self.boundary_depth])

    def boundary_direction(self) -> np.ndarray:
        y = math.radians(self.yaw_deg)
        return np.array([math.cos(y), 0.0, math.sin(y)])

    def stand_direction(self) -> np.ndarray:
        """Unit vector pointing up the stands."""
        y, t = math.radians(self.yaw_deg), math.radians(self.tilt_deg)
        away = np.array([-math.sin(y), 0.0, math.cos(y)])
        return math.cos(t) * np.array([0.0, -1.0, 0.0]) + math.sin(t) * away

    def crowd_plane(self) -> PlaneEq:
        n = np.cross(self.boundary_direction(), self.stand_direction())
        return PlaneEq.from_point_normal(self.boundary_anchor(), n)

    def ground_plane(self) -> PlaneEq:
        return PlaneEq.from_point_normal(self.boundary_anchor(), [0.0, 1.0, 0.0])

    def quad_corners(self) -> np.ndarray:
        b, d, s = self.boundary_anchor(), self.boundary_direction(), self.stand_direction()
        half = self.crowd_length / 2.0
        return np.array([b - half * d, b + half * d, b + half * d + self.crowd_height * s, b - half * d + self.crowd_height * s])


def pan_motion(n_frames: int, du: float, dv: float = 0.0) -> tuple:
    """Constant image-space pan of ``(du, dv)`` pixels per frame."""
    return tuple(CameraPose(pan=(du * i, dv * i)) for i in range(n_frames))


def scripted_pan(velocities) -> tuple:
    """Pan whose per-frame displacement follows ``velocities`` (one ``(du, dv)`` per step)."""
    poses = [CameraPose()]
    pos = np.zeros(2)
    for v in velocities:
        pos = pos + np.asarray(v, dtype=float)
        poses.append(CameraPose(pan=(float(pos[0]), float(pos[1]))))
    return tuple(poses)


@dataclass
class FrameBundle:
    frame: np.ndarray  # (H, W, 3) uint8 RGB
    mask: np.ndarray  # (H, W) bool
    depth: np.ndarray  # (H, W) float64 relative depth (DMAP files store float32)
    truth: dict = field(default_factory=dict)


@lru_cache(maxsize=16)
def _lattice(seed: int, channels: int, size: int = 512) -> np.ndarray:
    """Random lattice values, one row per lattice node: ``(size * size, channels)``."""
    rng = np.random.default_rng(seed)
    lat = rng.random((channels, size, size))
    return np.ascontiguousarray(lat.reshape(channels, -1).T)


def value_noise(a: np.ndarray, b: np.ndarray, seed: int, channels: int = 3, size: int = 512) -> np.ndarray:
    """Bilinear value noise in [0, 1] on a wrapping lattice; coordinates in cells."""
    lat = _lattice(seed, channels, size)
    a0 = np.floor(a)
    b0 = np.floor(b)
    fa = a - a0
    fb = b - b0
    # smoothstep keeps the gradient continuous at cell borders
    fa = (fa * fa * (3 - 2 * fa))[:, None]
    fb = (fb * fb * (3 - 2 * fb))[:, None]
    i0 = a0.astype(np.int64) % size
    j0 = b0.astype(np.int64) % size
    i1 = (i0 + 1) % size
    r0 = j0 * size
    r1 = ((j0 + 1) % size) * size
    top = lat[r0 + i0] * (1 - fa) + lat[r0 + i1] * fa
    bot = lat[r1 + i0] * (1 - fa) + lat[r1 + i1] * fa
    return top * (1 - fb) + bot * fb  # (n, channels)


def _camera_rays(spec: SceneSpec, pose: CameraPose):
    k = spec.intrinsics
    vv, uu = np.mgrid[0 : spec.height, 0 : spec.width].astype(float)
    du, dv = pose.pan
    dc = np.stack(
        [(uu.ravel() - du - k.c_x) / k.f, (vv.ravel() - dv - k.c_y) / k.f, np.ones(uu.size)], axis=1
    )
    rot = pose.rotation()
    dirs = dc @ rot  # rows are R^T d
    origin = k.center + np.asarray(pose.offset, dtype=float)
    return origin, dirs, dc, rot


def _intersect(plane: PlaneEq, origin, dirs):
    denom = dirs @ plane.n
    num = -(plane.n @ origin + plane.d)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = num / denom
    t[~np.isfinite(t)] = -1.0
    return t


def _shade(base, amp, noise):
    return np.asarray(base, dtype=float) + (noise - 0.5) * 2.0 * np.asarray(amp, dtype=float)


def _render_main(spec: SceneSpec, frame_index: int, reference: SceneSpec) -> FrameBundle:
    pose = spec.pose(frame_index)
    origin, dirs, dc, rot = _camera_rays(spec, pose)
    crowd = spec.crowd_plane()
    ground = spec.ground_plane()
    if abs(crowd.signed_distance(origin)) < 1e-6 * spec.boundary_depth:
        raise InvalidSpecError("camera lies in the crowd plane")

    n = len(dirs)
    t_crowd = _intersect(crowd, origin, dirs)
    hit = origin + t_crowd[:, None] * dirs
    rel = hit - spec.boundary_anchor()
    along = rel @ spec.boundary_direction()
    up = rel @ spec.stand_direction()
    in_quad = (t_crowd > 0) & (np.abs(along) <= spec.crowd_length / 2) & (up >= 0) & (up <= spec.crowd_height)

    t_ground = _intersect(ground, origin, dirs)
    on_ground = t_ground > 0
    crowd_first = in_quad & (~on_ground | (t_crowd <= t_ground))
    ground_vis = on_ground & ~crowd_first

    pal = PALETTES[spec.palette]
    rgb = np.empty((n, 3))
    rgb[:] = pal["sky"]

    ca = along[crowd_first] / spec.cell
    cb = up[crowd_first] / spec.cell
    lum = 0.7 * value_noise(ca, cb, spec.texture_seed, 1) + 0.3 * value_noise(ca / 4.0, cb / 4.0, spec.texture_seed + 1, 1)
    noise = 0.75 * lum + 0.25 * value_noise(ca, cb, spec.texture_seed + 2)
    col = _shade(*pal["crowd"], noise)
    g = spec.grid_spacing
    da = np.abs(((along[crowd_first] + g / 2) % g) - g / 2)
    db = np.abs(((up[crowd_first] + g / 2) % g) - g / 2)
    line = 0.6 * np.exp(-((np.minimum(da, db) / (0.03 * g)) ** 2))
    col = col * (1 - line[:, None]) + np.asarray(pal["grid"], dtype=float) * line[:, None]
    rgb[crowd_first] = col

    gh = origin + t_ground[ground_vis, None] * dirs[ground_vis]
    gn = value_noise(gh[:, 0] / (2 * spec.cell), gh[:, 2] / (2 * spec.cell), spec.texture_seed + 7)
    rgb[ground_vis] = _shade(*pal["ground"], gn)

    frame = np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8).reshape(spec.height, spec.width, 3)
    mask = crowd_first.reshape(spec.height, spec.width)

    depth = np.zeros(n)
    # camera-frame z of the visible surface; the view ray has unit camera z
    depth[crowd_first] = t_crowd[crowd_first]
    depth[ground_vis] = t_ground[ground_vis]
    depth = (depth / spec.depth_scale).reshape(spec.height, spec.width)

    rng = np.random.default_rng((spec.texture_seed, frame_index, 99))
    if spec.depth_noise > 0:
        noisy = depth + rng.normal(0.0, spec.depth_noise, depth.shape)
        depth = np.where(depth > 0, np.maximum(noisy, 1e-12), 0.0)
    if spec.mask_dropout > 0:
        mask = mask & (rng.random(mask.shape) >= spec.mask_dropout)

    truth = _truth(spec, frame_index, reference)
    return FrameBundle(frame=frame, mask=mask, depth=depth, truth=truth)


def project_world(spec: SceneSpec, frame_index: int, pts) -> np.ndarray:
    """Pixel positions of reference-world points in frame ``frame_index``."""
    pose = spec.pose(frame_index)
    k = spec.intrinsics
    origin = k.center + np.asarray(pose.offset, dtype=float)
    cam = (np.asarray(pts, dtype=float) - origin) @ pose.rotation().T
    u = k.c_x + k.f * cam[..., 0] / cam[..., 2] + pose.pan[0]
    v = k.c_y + k.f * cam[..., 1] / cam[..., 2] + pose.pan[1]
    return np.stack([u, v], axis=-1)


def camera_frame_plane(spec: SceneSpec, frame_index: int, plane: PlaneEq) -> PlaneEq:
    """Express a reference-world plane in frame ``frame_index``'s back-projection frame."""
    pose = spec.pose(frame_index)
    k = spec.intrinsics
    rot = pose.rotation()
    origin = k.center + np.asarray(pose.offset, dtype=float)
    n_cam = rot @ plane.n
    point = -plane.d * plane.n
    p_cam = rot @ (point - origin) + k.center
    return PlaneEq.from_point_normal(p_cam, n_cam)


def plane_homography(spec: SceneSpec, src_frame: int, dst_frame: int) -> np.ndarray:
    """Exact image homography of the crowd plane between two frames of ``spec``."""
    b, d, s = spec.boundary_anchor(), spec.boundary_direction(), spec.stand_direction()
    pts = np.array([b, b + 1e5 * d, b + 1e5 * d + 1e5 * s, b + 1e5 * s])
    return homography_dlt(project_world(spec, src_frame, pts), project_world(spec, dst_frame, pts))


def _truth(spec: SceneSpec, frame_index: int, reference: SceneSpec) -> dict:
    b, d = spec.boundary_anchor(), spec.boundary_direction()
    boundary = project_world(spec, frame_index, np.array([b - 5e4 * d, b + 5e4 * d]))
    return {
        "frame_index": frame_index,
        "scene": "main" if spec is reference else "cut",
        "intrinsics": spec.intrinsics,
        "plane": camera_frame_plane(spec, frame_index, spec.crowd_plane()),
        "boundary2d": boundary,
        "quad2d": project_world(spec, frame_index, spec.quad_corners()),
        "homography_from_ref": plane_homography(spec, 0, frame_index) if spec is reference else None,
    }


def _active_spec(spec: SceneSpec, frame_index: int) -> SceneSpec:
    for start, stop, other in spec.cuts:
        if start <= frame_index < stop:
            return other
    return spec


def render_scene(spec: SceneSpec, frame_index: int = 0) -> FrameBundle:
    """Frame, crowd mask, relative depth map and truth record for one frame."""
    if spec.f <= 0 or spec.width < 1 or spec.height < 1:
        raise InvalidSpecError("invalid camera in scene spec")
    active = _active_spec(spec, frame_index)
    return _render_main(active, frame_index, spec)


def render_sequence(spec: SceneSpec, n_frames: int, track_points=None):
    """Render ``n_frames`` frames plus ground-truth trajectories.

    ``track_points`` are frame-0 pixels assumed to lie on the crowd plane;
    their positions in every frame follow the exact plane homography (NaN in
    frames that belong to a cut).

    Returns ``(bundles, trajectories)``; ``trajectories`` has shape
    ``(n_frames, m, 2)`` or is ``None``.
    """
    if spec.motion and len(spec.motion) < n_frames:
        raise InvalidSpecError("motion script shorter than the requested sequence")
    bundles = [render_scene(spec, i) for i in range(n_frames)]
    traj = None
    if track_points is not None:
        pts = np.asarray(track_points, dtype=float).reshape(-1, 2)
        traj = np.full((n_frames, len(pts), 2), np.nan)
        for i, b in enumerate(bundles):
            h = b.truth["homography_from_ref"]
            if h is not None:
                traj[i] = apply_homography(h, pts)
    return bundles, traj


# ---------------------------------------------------------------- Manhattan wireframe scenes


@dataclass(frozen=True)
class WireframeSpec:
    f: float = 800.0
    width: int = 640
    height: int = 360
    seed: int = 0
    divisions: int = 4
    fill: float = 0.6  # fraction of image height spanned by the box


def _wireframe_pose(spec: WireframeSpec):
    rng = np.random.default_rng(spec.seed)
    yaw = rng.uniform(30.0, 60.0) * rng.choice([-1, 1])
    pitch = rng.uniform(20.0, 35.0)
    roll = rng.uniform(-8.0, 8.0)
    return rotation_matrix(yaw, -pitch, roll)


def wireframe_segments3d(spec: WireframeSpec):
    """Grid lines on the three camera-facing faces of a unit cube, in camera coordinates."""
    rot = _wireframe_pose(spec)
    dist = spec.f * math.sqrt(3.0) / (spec.fill * spec.height)
    centre = np.array([0.0, 0.0, dist])
    cam_pos_obj = -rot.T @ centre  # camera position in cube coordinates
    ticks = np.linspace(-0.5, 0.5, spec.divisions + 1)
    segs = []
    for axis in range(3):
        for sign in (-0.5, 0.5):
            if (cam_pos_obj[axis] - sign) * np.sign(sign) <= 0:
                continue  # face points away from the camera
            others = [a for a in range(3) if a != axis]
            for run, fix in ((others[0], others[1]), (others[1], others[0])):
                for t in ticks:
                    p = np.zeros(3)
                    q = np.zeros(3)
                    p[axis] = q[axis] = sign
                    p[fix] = q[fix] = t
                    p[run], q[run] = -0.5, 0.5
                    segs.append((rot @ p + centre, rot @ q + centre, run))
    return segs


def render_wireframe(spec: WireframeSpec) -> tuple[np.ndarray, list]:
    """Gray image of the wireframe and the exact 2D segments with their world axis."""
    img = np.zeros((spec.height, spec.width), dtype=np.uint8)
    cx, cy = spec.width / 2.0, spec.height / 2.0
    segs2d = []
    for p, q, axis in wireframe_segments3d(spec):
        a = (cx + spec.f * p[0] / p[2], cy + spec.f * p[1] / p[2])
        b = (cx + spec.f * q[0] / q[2], cy + spec.f * q[1] / q[2])
        segs2d.append((a, b, axis))
        shift = 4
        pa = (int(round(a[0] * 16)), int(round(a[1] * 16)))
        pb = (int(round(b[0] * 16)), int(round(b[1] * 16)))
        cv2.line(img, pa, pb, 255, thickness=1, lineType=cv2.LINE_AA, shift=shift)
    return img, segs2d


def true_vanishing_points(spec: WireframeSpec) -> np.ndarray:
    """Image vanishing points of the cube's three axes (homogeneous rows)."""
    rot = _wireframe_pose(spec)
    k = np.array([[spec.f, 0, spec.width / 2.0], [0, spec.f, spec.height / 2.0], [0, 0, 1]])
    return (k @ rot).T


def default_scene(seed: int = 0, **overrides) -> SceneSpec:
    """Randomised but well-conditioned stadium scene for test suites."""
    rng = np.random.default_rng(seed)
    params = dict(
        f=float(rng.uniform(420, 650)),
        yaw_deg=float(rng.uniform(-12, 12)),
        tilt_deg=float(rng.uniform(25, 45)),
        boundary_depth=float(rng.uniform(3.5e5, 5e5)),
        ground_drop=float(rng.uniform(4e4, 6e4)),
        boundary_offset=float(rng.uniform(-5e4, 5e4)),
        texture_seed=int(seed),
    )
    params.update(overrides)
    return SceneSpec(**params)


def alternate_scene(spec: SceneSpec) -> SceneSpec:
    """A visually unrelated scene of the same size, used as the far side of a cut."""
    return replace(
        spec, palette="alt", texture_seed=spec.texture_seed + 1000, yaw_deg=-spec.yaw_deg - 20, tilt_deg=60.0,
        motion=(), cuts=(),
    )


def demo_asset(width: int = 240, height: int = 120) -> np.ndarray:
    """Banner-like RGB asset: coloured bands with a checker strip, easy to spot in output."""
    img = np.empty((height, width, 3), dtype=np.uint8)
    img[:] = (250, 250, 245)
    img[: height // 3] = (200, 30, 40)
    img[2 * height // 3 :] = (20, 60, 160)
    yy, xx = np.mgrid[height // 3 : 2 * height // 3, 0:width]
    checker = ((yy // 10 + xx // 10) % 2).astype(bool)
    mid = img[height // 3 : 2 * height // 3]
    mid[checker] = (30, 30, 30)
    return img
