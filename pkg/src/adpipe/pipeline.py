"""End-to-end orchestration: single images and frame sequences."""

from __future__ import annotations

import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, is_dataclass, asdict
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import io as aio
from .config import PipelineConfig, as_record
from .errors import (
    AdPipeError,
    EmptyMaskError,
    InconsistentGeometryError,
    InsufficientStructureError,
    InsufficientTextureError,
    InvalidInputError,
    NoCandidateError,
    StageError,
)
from .geometry import CameraIntrinsics, PlaneEq, homography_dlt
from .imaging import ensure_gray, warp_composite
from .masks import SqsReport, largest_component, pick_seed, sqs
from .placement import Placement, alignment_line, alignment_plane, alignment_vector, asset_corners, place_asset
from .reconstruction import depth_to_cloud, focal_from_image, heuristic_focal, hull_on_plane, ransac_plane
from .tracking import Mode, TrackerConfig, init_track, track_step

logger = logging.getLogger(__name__)

# estimated focal lengths outside this range (in units of the larger image side) are rejected
FOCAL_RANGE = (0.25, 8.0)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, SqsReport):
        return obj.as_dict()
    if isinstance(obj, PlaneEq):
        return {"n": _jsonable(obj.n), "d": float(obj.d)}
    if is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


class Diagnostics:
    """Ordered machine-readable records; wall-clock timings are kept apart so
    the records themselves are reproducible bit for bit."""

    def __init__(self):
        self.records: list[dict] = []
        self.timings: list[dict] = []

    def add(self, record: str, **fields) -> dict:
        rec = {"record": record, **_jsonable(fields)}
        self.records.append(rec)
        return rec

    @contextmanager
    def timed(self, stage: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings.append({"stage": stage, "seconds": time.perf_counter() - t0})

    def of(self, record: str) -> list[dict]:
        return [r for r in self.records if r["record"] == record]

    def dumps(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def write(self, path, timings_path=None) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")
        if timings_path is not None:
            Path(timings_path).write_text(
                "".join(json.dumps(t, sort_keys=True) + "\n" for t in self.timings), encoding="utf-8"
            )


@contextmanager
def _stage(name: str, diag: Diagnostics):
    with diag.timed(name):
        try:
            yield
        except StageError:
            raise
        except (AdPipeError, ValueError, np.linalg.LinAlgError) as exc:
            diag.add("error", stage=name, type=type(exc).__name__, message=str(exc))
            raise StageError(name, exc, diag) from exc


# ---------------------------------------------------------------- single image


@dataclass
class ImageResult:
    output: np.ndarray
    placement: Placement
    homography: np.ndarray
    intrinsics: CameraIntrinsics
    diagnostics: Diagnostics


def resolve_focal(cfg: PipelineConfig, frame, diag: Diagnostics) -> float:
    h, w = frame.shape[:2]
    fixed = cfg.fixed_focal()
    if fixed is not None:
        diag.add("focal", f=fixed, method="fixed")
        return fixed
    if cfg.focal == "heuristic":
        f = heuristic_focal(w, h)
        diag.add("focal", f=f, method="heuristic")
        return f
    principal = (w / 2.0, h / 2.0)
    try:
        f, vps = focal_from_image(
            ensure_gray(frame), principal, cfg.canny_low, cfg.canny_high, seed=cfg.seed
        )
        lo, hi = FOCAL_RANGE
        if not lo * max(w, h) <= f <= hi * max(w, h):
            raise InconsistentGeometryError(f"estimated focal {f:.1f} px is implausible")
    except (InsufficientStructureError, InconsistentGeometryError) as exc:
        f = heuristic_focal(w, h)
        diag.add("focal", f=f, method="heuristic-fallback", reason=str(exc))
        return f
    diag.add("focal", f=f, method="estimate", vanishing_points=[v.homogeneous for v in vps])
    return f


def place_on_image(cfg: PipelineConfig, frame, mask, depth, aspect: float, diag: Diagnostics):
    """Every stage up to the image-space quadrilateral; returns ``(placement, intrinsics)``."""
    frame = np.asarray(frame)
    h, w = frame.shape[:2]
    with _stage("mask-analysis", diag):
        mask = np.asarray(mask)
        if mask.shape != (h, w):
            raise InvalidInputError(f"mask {mask.shape} does not match frame {(h, w)}")
        comp = largest_component(mask)
        diag.add("mask", area=int(np.count_nonzero(mask)), component_area=int(np.count_nonzero(comp)))
    with _stage("alignment", diag):
        line = alignment_line(
            comp, cfg.canny_low, cfg.canny_high, cfg.hough_votes, cfg.hough_min_len, cfg.hough_max_gap, cfg.seed
        )
        diag.add("alignment", p0=line.segment.p0, p1=line.segment.p1, a=line.a, b=line.b, vertical=line.vertical)
    with _stage("focal", diag):
        f = resolve_focal(cfg, frame, diag)
        k = CameraIntrinsics.centered(w, h, f, cfg.scale)
    with _stage("reconstruction", diag):
        depth = np.asarray(depth)
        if depth.shape != (h, w):
            raise InvalidInputError(f"depth {depth.shape} does not match frame {(h, w)}")
        cloud = depth_to_cloud(depth, k, comp, stride=cfg.stride)
        fit = ransac_plane(cloud, cfg.tolerance, cfg.iterations, cfg.seed)
        hull = hull_on_plane(fit, cloud)
        diag.add(
            "plane", n=fit.plane.n, d=fit.plane.d, points=len(cloud), inliers=len(fit.inliers),
            inlier_ratio=fit.inlier_ratio, hull_vertices=len(hull.hull2d), hull_area=hull.area,
        )
    with _stage("placement", diag):
        v = alignment_vector(alignment_plane(line, k), fit.plane)
        placement = place_asset(fit, hull, v, aspect, cfg.margin, k=k)
        diag.add(
            "placement", v_align=placement.v_align, width=placement.width, height=placement.height,
            corners3d=placement.corners3d, corners2d=placement.corners2d,
        )
    return placement, k


def run_image(cfg: PipelineConfig, frame, mask, depth, asset, diag: Diagnostics | None = None) -> ImageResult:
    diag = diag or Diagnostics()
    if not any(r["record"] == "config" for r in diag.records):
        diag.add("config", **as_record(cfg))
    frame = np.asarray(frame)
    asset = np.asarray(asset)
    ah, aw = asset.shape[:2]
    placement, k = place_on_image(cfg, frame, mask, depth, aw / ah, diag)
    with _stage("composite", diag):
        hom = homography_dlt(asset_corners(aw, ah), placement.corners2d)
        placement.h = hom
        out = warp_composite(asset, hom, frame)
        diag.add("composite", homography=hom)
    return ImageResult(out, placement, hom, k, diag)


# ---------------------------------------------------------------- video


@dataclass
class VideoResult:
    outputs: list | None
    corners: list  # per frame: (4, 2) array or None
    events: list
    seeds: list
    diagnostics: Diagnostics = field(repr=False, default=None)


def tracker_config(cfg: PipelineConfig) -> TrackerConfig:
    return TrackerConfig(
        alpha=cfg.alpha, radius=cfg.radius, max_suspended=cfg.max_suspended,
        shot_threshold=cfg.shot_threshold, seed=cfg.seed,
    )


def _track_run(frames, seed: int, corners, order, tcfg: TrackerConfig, results, events):
    """Track from ``seed`` through ``order``; return the index where LOST was declared, else None."""
    state = init_track(frames[seed], corners, cfg=tcfg)
    prev = seed
    for i in order:
        state, event = track_step(state, frames[prev], frames[i], tcfg)
        events[i] = event
        if state.mode is Mode.LOST:
            return i
        results[i] = state.corner_positions() if state.mode is Mode.TRACKING else None
        prev = i
    return None


def _seed_candidates(masks, indices, diag: Diagnostics):
    cands, reports = [], {}
    for i in indices:
        m = masks.get(i)
        if m is None:
            continue
        m = np.asarray(m)
        area = int(np.count_nonzero(m))
        if area == 0:
            continue
        reports[i] = sqs(m)
        cands.append((i, area, reports[i].sqs))
    diag.add("sqs", candidates=[{"index": i, "area": a, **reports[i].as_dict()} for i, a, _ in cands])
    return cands


def _ranked(cands):
    """Candidates in the order they should be tried: the seed rule first, then by SQS."""
    if not cands:
        return []
    first = pick_seed(cands)
    max_area = max(c[1] for c in cands)
    rest = sorted((c for c in cands if 2 * c[1] >= max_area and c is not first), key=lambda c: (c[2], c[0]))
    return [first] + rest


def run_video_frames(
    cfg: PipelineConfig, frames, masks, depths, assets, *, keep_outputs: bool = True, sink=None,
    diag: Diagnostics | None = None,
) -> VideoResult:
    """Augment an indexable sequence of RGB frames.

    ``masks`` and ``depths`` map frame positions to arrays (only the sampled
    frames need masks; only seed frames need depth). ``assets`` is a list
    cycled by frame position. ``sink(i, frame)`` receives every output frame in
    order when given.
    """
    diag = diag or Diagnostics()
    diag.add("config", **as_record(cfg))
    n = len(frames)
    if n == 0:
        raise InvalidInputError("no frames")
    if not assets:
        raise InvalidInputError("no asset")
    tcfg = tracker_config(cfg)
    aspect = assets[0].shape[1] / assets[0].shape[0]
    corners: list = [None] * n
    events: list = ["none"] * n
    seeds = []

    start = 0
    while start < n:
        with diag.timed("seed-selection"):
            cands = _seed_candidates(masks, range(start, n, cfg.sample_stride), diag)
        if not cands:
            if not seeds:
                raise NoCandidateError("no sampled frame contains crowd pixels")
            diag.add("restart-failed", start=start, reason="no candidate")
            break
        chosen, last_exc = None, None
        for idx, area, score in _ranked(cands):
            sub = Diagnostics()
            try:
                if idx not in depths:
                    raise InvalidInputError(f"no depth map for seed frame {idx}")
                placement, _ = place_on_image(cfg, frames[idx], masks[idx], depths[idx], aspect, sub)
                with _stage("tracking", sub):
                    init_track(frames[idx], placement.corners2d, cfg=tcfg)
            except StageError as exc:
                last_exc = exc
                diag.records.extend(sub.records)
                diag.timings.extend(sub.timings)
                diag.add("seed-rejected", index=idx, stage=exc.stage, message=str(exc.cause))
                continue
            diag.records.extend(sub.records)
            diag.timings.extend(sub.timings)
            chosen = (idx, placement)
            break
        if chosen is None:
            if not seeds:
                raise last_exc
            diag.add("restart-failed", start=start, reason="no candidate could be placed")
            break
        seed, placement = chosen
        seeds.append(seed)
        diag.add("seed", index=seed, segment_start=start, corners=placement.corners2d)
        corners[seed] = placement.corners2d.copy()
        events[seed] = "seed"
        with diag.timed("tracking"):
            back = _track_run(frames, seed, placement.corners2d, range(seed - 1, start - 1, -1), tcfg, corners, events)
            if back is not None:
                diag.add("backward-lost", index=back)
            lost = _track_run(frames, seed, placement.corners2d, range(seed + 1, n), tcfg, corners, events)
        start = n if lost is None else lost + 1

    outputs = [] if keep_outputs else None
    with diag.timed("composite"):
        for i in range(n):
            frame = np.asarray(frames[i])
            out, augmented = frame, False
            c = corners[i]
            if c is not None and np.all(np.isfinite(c)):
                asset = assets[i % len(assets)]
                ah, aw = asset.shape[:2]
                try:
                    hom = homography_dlt(asset_corners(aw, ah), c)
                    out = warp_composite(asset, hom, frame)
                    augmented = True
                except (AdPipeError, np.linalg.LinAlgError):
                    out = frame
            diag.add("frame", index=i, event=events[i], augmented=augmented, corners=c)
            if sink is not None:
                sink(i, out)
            if keep_outputs:
                outputs.append(out)
    return VideoResult(outputs, corners, events, seeds, diag)


class _LazyImages:
    """Read numbered images on demand, keeping a few recent ones."""

    def __init__(self, paths, reader):
        self.paths = list(paths)
        self._get = lru_cache(maxsize=8)(lambda i: reader(self.paths[i]))

    def __len__(self):
        return len(self.paths)

    def __getitem__(self, i):
        return self._get(i)


class _LazyMap:
    def __init__(self, paths: dict, reader):
        self.paths = paths
        self.reader = reader

    def __contains__(self, i):
        return i in self.paths

    def __getitem__(self, i):
        return self.reader(self.paths[i])

    def get(self, i, default=None):
        return self[i] if i in self.paths else default


def run_video(cfg: PipelineConfig, keep_outputs: bool = False) -> VideoResult:
    """Run on directories named in ``cfg`` and write frames plus diagnostics to ``cfg.output``."""
    for key in ("frames", "masks", "depths", "asset", "output"):
        if not getattr(cfg, key):
            raise InvalidInputError(f"config path '{key}' is not set")
    frame_files = aio.numbered_files(cfg.frames)
    numbers = sorted(frame_files)
    pos = {num: i for i, num in enumerate(numbers)}
    mask_files = {pos[k]: p for k, p in aio.numbered_files(cfg.masks).items() if k in pos}
    depth_files = {pos[k]: p for k, p in aio.numbered_files(cfg.depths, (".dmap",)).items() if k in pos}
    frames = _LazyImages([frame_files[k] for k in numbers], aio.read_image)
    masks = _LazyMap(mask_files, lambda p: aio.read_mask(p, cfg.crowd_labels))
    depths = _LazyMap(depth_files, aio.read_depth)
    assets = aio.load_assets(cfg.asset)

    out_dir = Path(cfg.output)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)

    def sink(i, img):
        aio.write_image(out_dir / "frames" / f"{numbers[i]:06d}.png", img)

    diag = Diagnostics()
    try:
        result = run_video_frames(cfg, frames, masks, depths, assets, keep_outputs=keep_outputs, sink=sink, diag=diag)
    finally:
        diag.write(out_dir / "diagnostics.jsonl", out_dir / "timings.jsonl")
    return result


__all__ = [
    "Diagnostics",
    "ImageResult",
    "VideoResult",
    "place_on_image",
    "resolve_focal",
    "run_image",
    "run_video",
    "run_video_frames",
    "tracker_config",
]
