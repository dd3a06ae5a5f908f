"""Pipeline configuration: INI-style ``key = value`` files, env overrides, flags.

Precedence, lowest first: defaults, config file, ``ADPIPE_<KEY>`` environment
variables, command-line flags. Keys may appear before any section header or
inside their own section; anything unknown is rejected.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError

ENV_PREFIX = "ADPIPE_"


@dataclass(frozen=True)
class PipelineConfig:
    # paths
    frames: str = ""
    masks: str = ""
    depths: str = ""
    asset: str = ""
    output: str = ""
    # reconstruction
    scale: float = 1_000_000.0
    tolerance: float = 10_000.0
    iterations: int = 500
    stride: int = 4
    focal: str = "estimate"  # "estimate", "heuristic" or a focal length in pixels
    # segmentation
    sample_stride: int = 25
    crowd_labels: tuple = ()  # empty: masks are binary
    # placement
    margin: float = 0.02
    canny_low: float = 50.0
    canny_high: float = 150.0
    hough_votes: int = 30
    hough_min_len: float = 20.0
    hough_max_gap: int = 3
    # tracking
    alpha: float = 0.8
    radius: float = 50.0
    max_suspended: int = 90
    shot_threshold: float = 0.55
    # general
    seed: int = 0

    def fixed_focal(self) -> float | None:
        try:
            return float(self.focal)
        except ValueError:
            return None


SECTIONS = {
    "paths": ("frames", "masks", "depths", "asset", "output"),
    "reconstruction": ("scale", "tolerance", "iterations", "stride", "focal"),
    "segmentation": ("sample_stride", "crowd_labels"),
    "placement": ("margin", "canny_low", "canny_high", "hough_votes", "hough_min_len", "hough_max_gap"),
    "tracking": ("alpha", "radius", "max_suspended", "shot_threshold"),
    "general": ("seed",),
}
_SECTION_OF = {key: sec for sec, keys in SECTIONS.items() for key in keys}
_TYPES = {f.name: type(f.default) for f in fields(PipelineConfig)}


def _convert(key: str, raw: str):
    raw = raw.strip()
    kind = _TYPES[key]
    if kind is str:
        return raw
    if kind is tuple:
        if not raw:
            return ()
        try:
            ids = tuple(int(x) for x in raw.replace(",", " ").split())
        except ValueError:
            raise ConfigError(f"{key}: expected comma-separated integers, got {raw!r}") from None
        if any(not 0 <= i <= 255 for i in ids):
            raise ConfigError(f"{key}: label ids must be 0..255")
        return ids
    try:
        value = kind(raw) if kind is float else int(raw.replace("_", ""), 10)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {raw!r}") from None
    if kind is float and not math.isfinite(value):
        raise ConfigError(f"{key}: must be finite")
    return value


def validate(cfg: PipelineConfig) -> PipelineConfig:
    positive = ("scale", "tolerance", "iterations", "stride", "sample_stride", "canny_low", "canny_high",
                "hough_votes", "hough_min_len", "radius", "max_suspended", "shot_threshold")
    for key in positive:
        if getattr(cfg, key) <= 0:
            raise ConfigError(f"{key} must be positive, got {getattr(cfg, key)}")
    if cfg.hough_max_gap < 0 or cfg.seed < 0:
        raise ConfigError("hough_max_gap and seed must be non-negative")
    if not 0.0 < cfg.alpha <= 1.0:
        raise ConfigError(f"alpha must lie in (0, 1], got {cfg.alpha}")
    if not 0.0 <= cfg.margin < 0.5:
        raise ConfigError(f"margin must lie in [0, 0.5), got {cfg.margin}")
    if cfg.canny_low > cfg.canny_high:
        raise ConfigError("canny_low exceeds canny_high")
    if cfg.focal not in ("estimate", "heuristic"):
        f = cfg.fixed_focal()
        if f is None or not f > 0 or not math.isfinite(f):
            raise ConfigError(f"focal must be 'estimate', 'heuristic' or a positive number, got {cfg.focal!r}")
    return cfg


def _validate_with_line(cfg: PipelineConfig, lines: dict) -> PipelineConfig:
    try:
        return validate(cfg)
    except ConfigError as exc:
        key = next((k for k in lines if str(exc).startswith(k)), None)
        if key is not None:
            raise ConfigError(str(exc), lineno=lines[key]) from None
        raise


def parse_config_text(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    values: dict = {}
    lines: dict = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError(f"malformed section header {stripped!r}", lineno)
            section = stripped[1:-1].strip().lower()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", lineno)
        key, raw = (s.strip() for s in stripped.split("=", 1))
        key = key.lower()
        if key not in _SECTION_OF:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if section is not None and _SECTION_OF[key] != section:
            raise ConfigError(f"key {key!r} belongs in [{_SECTION_OF[key]}], not [{section}]", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        try:
            values[key] = _convert(key, raw)
        except ConfigError as exc:
            raise ConfigError(str(exc), lineno) from None
        lines[key] = lineno
    cfg = replace(base or PipelineConfig(), **values)
    return _validate_with_line(cfg, lines)


def parse_config(path) -> PipelineConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def serialize_config(cfg: PipelineConfig) -> str:
    out = []
    data = asdict(cfg)
    for sec, keys in SECTIONS.items():
        out.append(f"[{sec}]")
        for key in keys:
            value = data[key]
            if isinstance(value, tuple):
                value = ", ".join(str(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            out.append(f"{key} = {value}")
        out.append("")
    return "\n".join(out)


def apply_overrides(cfg: PipelineConfig, overrides: dict) -> PipelineConfig:
    """Apply ``key -> raw string`` overrides (env vars or flags)."""
    values = {}
    for key, raw in overrides.items():
        if key not in _TYPES:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = raw if not isinstance(raw, str) else _convert(key, raw)
    return validate(replace(cfg, **values))


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX) :].lower()
        if key not in _TYPES:
            raise ConfigError(f"unknown key in environment variable {name}")
        out[key] = raw
    return out


def as_record(cfg: PipelineConfig) -> dict:
    data = asdict(cfg)
    data["crowd_labels"] = list(cfg.crowd_labels)
    return data
