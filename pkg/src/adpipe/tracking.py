"""Quadrilateral tracking with per-corner feature groups.

Each asset corner owns the Shi-Tomasi features within ``radius`` pixels of it.
Features are followed with pyramidal Lucas-Kanade; a corner whose group still
has features moves with that group's local homography, and a corner whose
group is gone is carried by a constant-velocity Kalman filter fed with the
blended group velocity

    v_corner_i = alpha * v_i + (1 - alpha) * mean(v_1, ..., v_4).

Shot cuts suspend tracking; saved features are matched against later frames
until the scene returns or the suspension budget runs out.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace

import cv2
import numpy as np

from .errors import DegenerateInputError, InsufficientTextureError, InvalidInputError
from .geometry import apply_homography, homography_dlt, reprojection_errors
from .imaging import color_histogram, ensure_gray

logger = logging.getLogger(__name__)

PATCH = 11
LK_WINDOW = 21
LK_BORDER = LK_WINDOW // 2
_F = np.array([[1.0, 0, 1, 0], [0, 1, 0, 1], [0, 0, 1, 0], [0, 0, 0, 1]])
_H_POS = np.array([[1.0, 0, 0, 0], [0, 1, 0, 0]])
_H_VEL = np.array([[0.0, 0, 1, 0], [0, 0, 0, 1]])


class Mode(str, enum.Enum):
    TRACKING = "tracking"
    SUSPENDED = "suspended"
    LOST = "lost"


@dataclass(frozen=True)
class TrackerConfig:
    alpha: float = 0.8
    radius: float = 50.0
    max_features: int = 25
    min_group_features: int = 3
    redetect_below: int = 6
    quality_level: float = 0.01
    min_distance: float = 5.0
    max_suspended: int = 90
    shot_threshold: float = 0.55
    hist_bins: int = 8
    process_noise: tuple = (1.0, 1.0, 4.0, 4.0)
    measurement_noise: tuple = (4.0, 4.0)
    init_covariance: tuple = (10.0, 10.0, 100.0, 100.0)
    zncc_threshold: float = 0.85
    min_matches: int = 8
    min_match_groups: int = 3
    reacquire_inlier_px: float = 3.0
    fb_threshold: float = 1.0
    seed: int = 0


@dataclass
class CornerState:
    position: np.ndarray
    x: np.ndarray  # (x, y, vx, vy)
    p: np.ndarray  # 4x4 covariance
    visible: bool = True


@dataclass
class FeatureGroup:
    points: np.ndarray  # (n, 2)
    descriptors: np.ndarray  # (n, PATCH*PATCH)

    def __len__(self):
        return len(self.points)


@dataclass
class Snapshot:
    points: np.ndarray
    descriptors: np.ndarray
    groups: np.ndarray
    corners: np.ndarray


@dataclass
class TrackState:
    corners: list
    groups: list
    mode: Mode = Mode.TRACKING
    saved: Snapshot | None = None
    frames_since_suspend: int = 0
    velocities: np.ndarray = field(default_factory=lambda: np.zeros((4, 2)))

    def corner_positions(self) -> np.ndarray:
        return np.array([c.position for c in self.corners])


# ---------------------------------------------------------------- features


def _disk_mask(shape, center, radius) -> np.ndarray:
    mask = np.zeros(shape, dtype=np.uint8)
    cx, cy = float(center[0]), float(center[1])
    h, w = shape
    yy, xx = np.ogrid[:h, :w]
    mask[(xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius] = 255
    return mask


def detect_features(gray, mask=None, max_corners=25, quality=0.01, min_distance=5.0) -> np.ndarray:
    """Shi-Tomasi corners as an ``(n, 2)`` float array."""
    pts = cv2.goodFeaturesToTrack(
        gray, maxCorners=max_corners, qualityLevel=quality, minDistance=min_distance, mask=mask, blockSize=3
    )
    if pts is None:
        return np.zeros((0, 2))
    return pts.reshape(-1, 2).astype(float)


def describe(gray, pts) -> np.ndarray:
    """Zero-mean, unit-norm 11x11 patches; flat patches come back as zeros."""
    gray = np.asarray(gray, dtype=np.float32)
    out = np.zeros((len(pts), PATCH * PATCH))
    for i, (x, y) in enumerate(np.asarray(pts, dtype=float)):
        patch = cv2.getRectSubPix(gray, (PATCH, PATCH), (float(x), float(y))).astype(float).ravel()
        patch -= patch.mean()
        norm = np.linalg.norm(patch)
        if norm > 1e-6:
            out[i] = patch / norm
    return out


def _group_features(gray, center, cfg: TrackerConfig) -> FeatureGroup:
    mask = _disk_mask(gray.shape, center, cfg.radius)
    if not mask.any():
        return FeatureGroup(np.zeros((0, 2)), np.zeros((0, PATCH * PATCH)))
    pts = detect_features(gray, mask, cfg.max_features, cfg.quality_level, cfg.min_distance)
    return FeatureGroup(pts, describe(gray, pts))


def _new_corner(pos, cfg: TrackerConfig) -> CornerState:
    pos = np.asarray(pos, dtype=float)
    return CornerState(
        position=pos.copy(),
        x=np.array([pos[0], pos[1], 0.0, 0.0]),
        p=np.diag(np.asarray(cfg.init_covariance, dtype=float)),
    )


def init_track(frame, corners, radius: float | None = None, cfg: TrackerConfig | None = None) -> TrackState:
    """Seed the tracker with up to ``max_features`` corners per asset corner disk."""
    cfg = cfg or TrackerConfig()
    if radius is not None:
        cfg = replace(cfg, radius=radius)
    gray = ensure_gray(frame)
    corners = np.asarray(corners, dtype=float).reshape(4, 2)
    groups = []
    for i, c in enumerate(corners):
        g = _group_features(gray, c, cfg)
        if len(g) < cfg.min_group_features:
            raise InsufficientTextureError(f"corner {i} has only {len(g)} trackable features")
        groups.append(g)
    return TrackState(corners=[_new_corner(c, cfg) for c in corners], groups=groups)


# ---------------------------------------------------------------- flow


def lk_flow(prev, next_, pts, fb_threshold: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Pyramidal Lucas-Kanade (3 levels, 21x21 window) with a forward-backward check.

    Returns new positions and a boolean status per point; points that fail to
    converge, come within half a window of the border, sit in flat windows, or do not track back to
    within ``fb_threshold`` pixels get status ``False``.
    """
    prev = ensure_gray(prev)
    next_ = ensure_gray(next_)
    if prev.shape != next_.shape:
        raise InvalidInputError("frames differ in size")
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return np.zeros((0, 2)), np.zeros(0, dtype=bool)
    params = dict(
        winSize=(LK_WINDOW, LK_WINDOW),
        maxLevel=2,
        criteria=(cv2.TERM_CRITERIA_COUNT | cv2.TERM_CRITERIA_EPS, 30, 0.01),
    )
    p0 = pts.astype(np.float32).reshape(-1, 1, 2)
    p1, st, _ = cv2.calcOpticalFlowPyrLK(prev, next_, p0, None, **params)
    back, st_back, _ = cv2.calcOpticalFlowPyrLK(next_, prev, p1, None, **params)
    new = p1.reshape(-1, 2).astype(float)
    h, w = prev.shape
    ok = (st.ravel() == 1) & (st_back.ravel() == 1) & np.isfinite(new).all(axis=1)
    m = LK_BORDER  # windows clipped by the border bias the flow
    ok &= (new[:, 0] >= m) & (new[:, 0] <= w - 1 - m) & (new[:, 1] >= m) & (new[:, 1] <= h - 1 - m)
    ok &= np.linalg.norm(back.reshape(-1, 2) - pts, axis=1) <= fb_threshold
    return new, ok


# ---------------------------------------------------------------- velocity blending and filtering


def corner_velocity(group_velocities, alpha: float) -> np.ndarray:
    """Blend each group's velocity with the mean of all four."""
    if not 0.0 < alpha <= 1.0:
        raise InvalidInputError("alpha must lie in (0, 1]")
    v = np.asarray(group_velocities, dtype=float).reshape(4, 2)
    return alpha * v + (1.0 - alpha) * v.mean(axis=0)


def _kalman_update(x, p, obs, hm, r):
    s = hm @ p @ hm.T + r
    gain = p @ hm.T @ np.linalg.inv(s)
    x = x + gain @ (obs - hm @ x)
    ikh = np.eye(4) - gain @ hm
    return x, ikh @ p @ ikh.T + gain @ r @ gain.T  # Joseph form keeps P PSD


def kalman_step(
    c: CornerState,
    measurement=None,
    velocity_obs=None,
    process_noise=(1.0, 1.0, 4.0, 4.0),
    measurement_noise=(4.0, 4.0),
) -> CornerState:
    """Advance a constant-velocity corner filter by one frame.

    ``measurement`` is a position in the new frame: predict, then update.
    ``velocity_obs`` is the displacement from the previous frame to the new
    one, i.e. the velocity over the interval being predicted, so it updates the
    state before the prediction carries it forward. ``measurement_noise`` is
    the covariance of whichever observation is given.
    """
    q = np.diag(np.asarray(process_noise, dtype=float))
    r = np.diag(np.asarray(measurement_noise, dtype=float))
    x, p = c.x.astype(float), c.p.astype(float)
    if velocity_obs is not None and measurement is None:
        x, p = _kalman_update(x, p, np.asarray(velocity_obs, dtype=float), _H_VEL, r)
    x = _F @ x
    p = _F @ p @ _F.T + q
    if measurement is not None:
        x, p = _kalman_update(x, p, np.asarray(measurement, dtype=float), _H_POS, r)
    p = 0.5 * (p + p.T)
    return CornerState(position=x[:2].copy(), x=x, p=p, visible=measurement is not None)


# ---------------------------------------------------------------- shot changes and re-acquisition


def histogram_distance(a, b, bins: int = 8) -> float:
    return float(np.abs(color_histogram(a, bins) - color_histogram(b, bins)).sum())


def detect_shot_change(prev, next_, threshold: float = 0.55, bins: int = 8) -> bool:
    if np.shape(prev) != np.shape(next_):
        raise InvalidInputError("frames differ in size")
    return histogram_distance(prev, next_, bins) > threshold


def snapshot(state: TrackState, frame, cfg: TrackerConfig) -> Snapshot:
    """Freshly detected features around the current corners, with descriptors."""
    gray = ensure_gray(frame)
    pts, descs, groups = [], [], []
    for i, c in enumerate(state.corners):
        g = _group_features(gray, c.position, cfg)
        pts.append(g.points)
        descs.append(g.descriptors)
        groups.append(np.full(len(g), i))
    return Snapshot(
        points=np.vstack(pts),
        descriptors=np.vstack(descs),
        groups=np.concatenate(groups).astype(int),
        corners=state.corner_positions(),
    )


def robust_homography(src, dst, inlier_px: float, iterations: int = 300, seed: int = 0):
    """4-point RANSAC around the DLT. Returns ``(H, inlier_mask)`` or ``(None, None)``."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    n = len(src)
    if n < 4:
        return None, None
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(iterations):
        idx = rng.choice(n, 4, replace=False)
        try:
            h = homography_dlt(src[idx], dst[idx])
        except (DegenerateInputError, InvalidInputError):
            continue
        inl = reprojection_errors(h, src, dst) <= inlier_px
        if best is None or inl.sum() > best.sum():
            best = inl
            if best.all():
                break
    if best is None or best.sum() < 4:
        return None, None
    for _ in range(2):
        try:
            h = homography_dlt(src[best], dst[best])
        except (DegenerateInputError, InvalidInputError):
            return None, None
        inl = reprojection_errors(h, src, dst) <= inlier_px
        if inl.sum() < 4:
            break
        best = inl
    return h, best


def reacquire(saved: Snapshot, frame, cfg: TrackerConfig | None = None):
    """Match saved features in ``frame``; return the mapped corners or ``None``."""
    cfg = cfg or TrackerConfig()
    if saved is None or len(saved.points) == 0:
        return None
    gray = ensure_gray(frame)
    pts = detect_features(gray, None, max_corners=3000, quality=cfg.quality_level / 10, min_distance=cfg.min_distance)
    if len(pts) == 0:
        return None
    desc = describe(gray, pts)
    score = saved.descriptors @ desc.T
    fwd = score.argmax(axis=1)
    bwd = score.argmax(axis=0)
    rows = np.arange(len(saved.points))
    mutual = (bwd[fwd] == rows) & (score[rows, fwd] > cfg.zncc_threshold)
    src_idx = rows[mutual]
    if len(src_idx) < cfg.min_matches or len(np.unique(saved.groups[src_idx])) < cfg.min_match_groups:
        return None
    h, inl = robust_homography(saved.points[src_idx], pts[fwd[src_idx]], cfg.reacquire_inlier_px, seed=cfg.seed)
    if h is None or inl.sum() < cfg.min_matches or len(np.unique(saved.groups[src_idx[inl]])) < cfg.min_match_groups:
        return None
    return apply_homography(h, saved.corners)


# ---------------------------------------------------------------- main step


def _in_frame(p, shape) -> bool:
    h, w = shape
    return 0 <= p[0] <= w - 1 and 0 <= p[1] <= h - 1


def _group_estimate(old: np.ndarray, new: np.ndarray, corner: np.ndarray) -> np.ndarray:
    """Corner position predicted by the group's flow (homography, else translation)."""
    if len(old) >= 6:
        try:
            h = homography_dlt(old, new)
            err = reprojection_errors(h, old, new)
            keep = err <= 2.0
            if keep.sum() >= 6 and not keep.all():
                h = homography_dlt(old[keep], new[keep])
            est = apply_homography(h, corner)
            if np.all(np.isfinite(est)):
                return est
        except (DegenerateInputError, InvalidInputError):
            pass
    return corner + (new - old).mean(axis=0)


def track_step(state: TrackState, prev, next_, cfg: TrackerConfig | None = None) -> tuple[TrackState, str]:
    """Advance the tracker by one frame.

    Returns the new state and an event: ``"track"``, ``"cut"`` (suspended by a
    shot change), ``"wait"`` (still suspended), ``"reacquire"`` or ``"lost"``.
    """
    cfg = cfg or TrackerConfig()
    if state.mode is Mode.LOST:
        return state, "lost"

    if state.mode is Mode.SUSPENDED:
        corners = reacquire(state.saved, next_, cfg)
        if corners is not None:
            try:
                fresh = init_track(next_, corners, cfg=cfg)
            except InsufficientTextureError:
                fresh = None
            if fresh is not None:
                return fresh, "reacquire"
        count = state.frames_since_suspend + 1
        if count > cfg.max_suspended:
            return replace(state, mode=Mode.LOST, frames_since_suspend=count), "lost"
        return replace(state, frames_since_suspend=count), "wait"

    if next_.ndim == 3 and detect_shot_change(prev, next_, cfg.shot_threshold, cfg.hist_bins):
        return _suspend(state, prev, cfg), "cut"

    gray_prev = ensure_gray(prev)
    gray_next = ensure_gray(next_)
    sizes = [len(g) for g in state.groups]
    all_pts = np.vstack([g.points for g in state.groups]) if sum(sizes) else np.zeros((0, 2))
    moved, ok = lk_flow(gray_prev, gray_next, all_pts, cfg.fb_threshold)

    bounds = np.cumsum([0] + sizes)
    survivors, velocities, estimates = [], [None] * 4, [None] * 4
    for i, g in enumerate(state.groups):
        sl = slice(bounds[i], bounds[i + 1])
        good = ok[sl]
        old, new = g.points[good], moved[sl][good]
        survivors.append(FeatureGroup(new, g.descriptors[good]))
        if len(old):
            velocities[i] = (new - old).mean(axis=0)
            estimates[i] = _group_estimate(old, new, state.corners[i].position)

    known = [v for v in velocities if v is not None]
    if not known:
        return _suspend(state, prev, cfg), "cut"
    fill = np.mean(known, axis=0)
    group_v = np.array([v if v is not None else fill for v in velocities])
    blended = corner_velocity(group_v, cfg.alpha)

    corners = []
    for i, c in enumerate(state.corners):
        if estimates[i] is not None:
            upd = kalman_step(c, measurement=estimates[i], process_noise=cfg.process_noise,
                              measurement_noise=cfg.measurement_noise)
            upd.position = np.asarray(estimates[i], dtype=float).copy()
        else:
            upd = kalman_step(c, velocity_obs=blended[i], process_noise=cfg.process_noise,
                              measurement_noise=cfg.measurement_noise)
        corners.append(upd)

    groups = []
    for i, g in enumerate(survivors):
        if len(g) < cfg.redetect_below and _in_frame(corners[i].position, gray_next.shape):
            fresh = _group_features(gray_next, corners[i].position, cfg)
            if len(fresh) > len(g):
                g = fresh
        groups.append(g)

    return TrackState(corners=corners, groups=groups, mode=Mode.TRACKING, velocities=blended), "track"


def _suspend(state: TrackState, frame, cfg: TrackerConfig) -> TrackState:
    return replace(state, mode=Mode.SUSPENDED, saved=snapshot(state, frame, cfg), frames_since_suspend=0)
