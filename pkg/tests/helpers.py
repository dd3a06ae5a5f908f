"""Synthetic data shared by the module tests and the acceptance suite."""

import functools
import math

import numpy as np

from adpipe import synth
from adpipe.reconstruction import PointCloud


def random_unit(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def plane_cloud(seed: int, n: int = 1000, inlier_frac: float = 0.7, noise: float = 0.01, extent: float = 10.0):
    """Points on a random plane with Gaussian noise plus uniform outliers in a cube.

    Returns ``(cloud, normal, d, inlier_mask)``.
    """
    rng = np.random.default_rng(seed)
    n_in = int(round(n * inlier_frac))
    normal = random_unit(rng)
    d = rng.uniform(-2, 2)
    a = np.cross(normal, [1.0, 0, 0] if abs(normal[0]) < 0.9 else [0, 1.0, 0])
    a /= np.linalg.norm(a)
    b = np.cross(normal, a)
    uv = rng.uniform(-extent, extent, size=(n_in, 2))
    on = -d * normal + uv[:, :1] * a + uv[:, 1:] * b + rng.normal(scale=noise, size=(n_in, 1)) * normal
    off = rng.uniform(-extent, extent, size=(n - n_in, 3))
    pts = np.vstack([on, off])
    order = rng.permutation(n)
    truth = np.zeros(n, bool)
    truth[:n_in] = True
    return PointCloud(pts[order], np.zeros((n, 2))), normal, d, truth[order]


def angle_deg(a, b) -> float:
    """Unsigned angle between two lines/normals (sign-agnostic)."""
    c = abs(float(np.dot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return math.degrees(math.acos(min(1.0, c)))


@functools.lru_cache(maxsize=None)
def scene_frame(seed: int):
    spec = synth.default_scene(seed)
    return spec, synth.render_scene(spec, 0)


@functools.lru_cache(maxsize=None)
def pan_sequence(n: int = 60, du: float = 2.0, seed: int = 0):
    spec = synth.default_scene(seed, motion=synth.pan_motion(n, du))
    bundles, _ = synth.render_sequence(spec, n)
    return spec, bundles


def grid_rectangle_oracle(poly, aspect: float, margin: float = 0.0, n: int = 201):
    """Brute-force the largest ``aspect`` rectangle inside a convex CCW polygon.

    Centres are sampled on an ``n x n`` grid over the bounding box; for each
    centre the widest rectangle is limited by the first edge any of its four
    corners would cross. Returns ``(best_width, best_centre)``.
    """
    poly = np.asarray(poly, dtype=float)
    x, y = poly[:, 0], poly[:, 1]
    area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))
    shrink = margin * math.sqrt(area)
    xs = np.linspace(x.min(), x.max(), n)
    ys = np.linspace(y.min(), y.max(), n)
    cx, cy = np.meshgrid(xs, ys)
    centres = np.column_stack([cx.ravel(), cy.ravel()])
    limit = np.full(len(centres), np.inf)
    half = np.array([[-0.5, -0.5 / aspect], [0.5, -0.5 / aspect], [0.5, 0.5 / aspect], [-0.5, 0.5 / aspect]])
    for i in range(len(poly)):
        a, b = poly[i], poly[(i + 1) % len(poly)]
        e = b - a
        out = np.array([e[1], -e[0]]) / np.hypot(*e)  # outward normal of a CCW edge
        slack = (a @ out) - shrink - centres @ out  # distance from centre to the edge
        per_width = (half @ out).max()  # how fast the worst corner approaches the edge
        lim = np.where(slack >= 0, slack / per_width, -1.0)
        limit = np.minimum(limit, lim)
    k = int(np.argmax(limit))
    return float(max(limit[k], 0.0)), centres[k]


def scene_placement(seed: int, aspect: float = 2.0, **cfg_overrides):
    """Run every stage up to placement on synthetic scene ``seed`` with its true focal length.

    Returns ``(spec, bundle, placement, intrinsics, hull_image_polygon, hull, diagnostics)``.
    """
    import dataclasses

    from adpipe.config import PipelineConfig
    from adpipe.geometry import project
    from adpipe.masks import largest_component
    from adpipe.pipeline import Diagnostics, place_on_image
    from adpipe.reconstruction import depth_to_cloud, hull_on_plane, ransac_plane

    spec, b = scene_frame(seed)
    cfg = dataclasses.replace(PipelineConfig(), focal=repr(float(spec.f)), **cfg_overrides)
    diag = Diagnostics()
    placement, k = place_on_image(cfg, b.frame, b.mask, b.depth, aspect, diag)
    comp = largest_component(b.mask)
    cloud = depth_to_cloud(b.depth, k, comp, stride=cfg.stride)
    fit = ransac_plane(cloud, cfg.tolerance, cfg.iterations, cfg.seed)
    hull = hull_on_plane(fit, cloud)
    hull_img = project(hull.hull_world(), k)
    return spec, b, placement, k, hull_img, hull, diag


QUAD = np.array([[200.0, 190.0], [440.0, 190.0], [440.0, 80.0], [200.0, 80.0]])


def run_tracker(spec, n_frames: int, corners=QUAD, cfg=None):
    """Track ``corners`` through a rendered sequence.

    Returns ``(errors, events, trajectories, states)`` where ``errors[i]`` is the
    per-corner error at frame ``i`` (NaN where not tracking or no truth).
    """
    from adpipe import tracking

    bundles, traj = synth.render_sequence(spec, n_frames, corners)
    state = tracking.init_track(bundles[0].frame, corners, cfg=cfg)
    errors = np.full((n_frames, len(corners)), np.nan)
    errors[0] = 0.0
    events, states = [None], [state]
    for i in range(1, n_frames):
        state, ev = tracking.track_step(state, bundles[i - 1].frame, bundles[i].frame, cfg)
        events.append(ev)
        states.append(state)
        if state.mode is tracking.Mode.TRACKING and not np.isnan(traj[i]).any():
            errors[i] = np.linalg.norm(state.corner_positions() - traj[i], axis=1)
    return errors, events, traj, states


def aba_spec(seed: int = 2, n: int = 60, cut=(20, 35), du: float = 1.0):
    import dataclasses

    base = synth.default_scene(seed, motion=synth.pan_motion(n, du))
    return dataclasses.replace(base, cuts=((cut[0], cut[1], synth.alternate_scene(base)),))


def exit_reentry_spec(seed: int = 1, speed: float = 10.0, steps: int = 30):
    vel = [(0.0, 0.0)] + [(speed, 0.0)] * steps + [(-speed, 0.0)] * steps
    return synth.default_scene(seed, motion=synth.scripted_pan(vel)), len(vel) + 1


def inside_dilated(p, poly, dilation: float = 1.0) -> bool:
    """Is ``p`` inside convex ``poly`` (either winding) grown by ``dilation`` pixels?"""
    poly = np.asarray(poly, dtype=float)
    a, b = poly, np.roll(poly, -1, axis=0)
    e = b - a
    cross = e[:, 0] * (p[1] - a[:, 1]) - e[:, 1] * (p[0] - a[:, 0])
    dist = cross / np.hypot(e[:, 0], e[:, 1])
    if np.sum(e[:, 0] * (a[:, 1] + b[:, 1])) > 0:  # clockwise in x-right/y-up terms: flip
        dist = -dist
    return bool(np.all(dist >= -dilation))


ACCEPTANCE: list[str] = []


def report(criterion: str, ok: bool, detail: str = "") -> str:
    """Record (and print) one acceptance result line."""
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return line
