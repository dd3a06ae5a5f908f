"""Command-line entry point: ``adpipe {image,video,synth,score}``.

Exit codes: 0 success, 2 configuration error, 3 stage failure, 4 no seed candidate.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as aio
from .config import PipelineConfig, apply_overrides, env_overrides, parse_config, serialize_config
from .errors import AdPipeError, ConfigError, NoCandidateError, StageError

EXIT_OK, EXIT_CONFIG, EXIT_STAGE, EXIT_NO_CANDIDATE = 0, 2, 3, 4

logger = logging.getLogger("adpipe")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI-style configuration file")
    g = p.add_argument_group("configuration overrides")
    for f in dataclasses.fields(PipelineConfig):
        g.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", default=None, metavar="VALUE")


def build_config(args, environ=None) -> PipelineConfig:
    cfg = parse_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    cfg = apply_overrides(cfg, env_overrides(environ))
    flags = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return apply_overrides(cfg, flags)


def _cmd_image(args, cfg: PipelineConfig) -> int:
    from .pipeline import Diagnostics, run_image

    frame = aio.read_image(args.frame)
    mask = aio.read_mask(args.mask, cfg.crowd_labels)
    depth = aio.read_depth(args.depth)
    asset = aio.load_assets(args.asset or cfg.asset)[0]
    diag = Diagnostics()
    try:
        result = run_image(cfg, frame, mask, depth, asset, diag)
    finally:
        if args.diagnostics:
            diag.write(args.diagnostics)
    aio.write_image(args.out, result.output)
    return EXIT_OK


def _cmd_video(args, cfg: PipelineConfig) -> int:
    from .pipeline import run_video

    res = run_video(cfg)
    n_aug = sum(1 for r in res.diagnostics.of("frame") if r["augmented"])
    print(f"{len(res.corners)} frames, {n_aug} augmented, seeds {res.seeds}")
    return EXIT_OK


def _parse_cut(text: str):
    try:
        a, b = (int(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"cut must be START:STOP, got {text!r}") from None
    if not 0 <= a < b:
        raise argparse.ArgumentTypeError("cut needs 0 <= START < STOP")
    return a, b


def _cmd_synth(args, cfg: PipelineConfig) -> int:
    from . import synth

    base = synth.default_scene(args.scene_seed)
    spec = dataclasses.replace(base, motion=synth.pan_motion(args.n_frames, args.pan_u, args.pan_v))
    if args.cut:
        alt = synth.alternate_scene(spec)
        spec = dataclasses.replace(spec, cuts=tuple((a, b, alt) for a, b in args.cut))
    out = Path(args.out)
    for sub in ("frames", "masks", "depths"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    with open(out / "truth.jsonl", "w", encoding="utf-8") as fh:
        for i in range(args.n_frames):
            b = synth.render_scene(spec, i)
            aio.write_image(out / "frames" / f"{i:06d}.png", b.frame)
            aio.write_mask(out / "masks" / f"{i:06d}.png", b.mask)
            aio.write_depth(out / "depths" / f"{i:06d}.dmap", b.depth)
            t = b.truth
            rec = {
                "frame_index": i,
                "scene": t["scene"],
                "f": t["intrinsics"].f,
                "plane": {"n": t["plane"].n.tolist(), "d": t["plane"].d},
                "boundary2d": np.asarray(t["boundary2d"]).tolist(),
                "homography_from_ref": None if t["homography_from_ref"] is None else t["homography_from_ref"].tolist(),
            }
            fh.write(json.dumps(rec) + "\n")
    aio.write_image(out / "asset.png", synth.demo_asset())
    cfg = dataclasses.replace(
        cfg, frames=str(out / "frames"), masks=str(out / "masks"), depths=str(out / "depths"),
        asset=str(out / "asset.png"), output=str(out / "augmented"), focal=repr(float(spec.f)),
    )
    (out / "config.ini").write_text(serialize_config(cfg), encoding="utf-8")
    print(f"wrote {args.n_frames} frames to {out}")
    return EXIT_OK


def _cmd_score(args, cfg: PipelineConfig) -> int:
    from .masks import pick_seed, sqs

    files = aio.numbered_files(args.masks or cfg.masks)
    numbers = sorted(files)
    cands = []
    for k in numbers[:: cfg.sample_stride]:
        m = aio.read_mask(files[k], cfg.crowd_labels)
        area = int(np.count_nonzero(m))
        rec = {"frame": k, "area": area}
        if area:
            rep = sqs(m)
            rec.update(rep.as_dict())
            cands.append((k, area, rep.sqs))
        print(json.dumps(rec, sort_keys=True))
    seed = pick_seed(cands)
    print(json.dumps({"seed": seed[0], "sqs": seed[2]}, sort_keys=True))
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adpipe", description="Automatic advertisement placement on crowd regions.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("image", help="augment a single image")
    p.add_argument("--frame", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--out", required=True, help="output image path")
    p.add_argument("--diagnostics", help="write diagnostics (JSON lines) here")
    p.add_argument("--asset-file", dest="asset", default=None, help="asset image (overrides the asset config key)")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_image)

    p = sub.add_parser("video", help="augment a numbered frame sequence")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_video)

    p = sub.add_parser("synth", help="write a synthetic stadium sequence with ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--n-frames", dest="n_frames", type=int, default=100)
    p.add_argument("--scene-seed", dest="scene_seed", type=int, default=0)
    p.add_argument("--pan-u", type=float, default=2.0, help="horizontal pan, px/frame")
    p.add_argument("--pan-v", type=float, default=0.0)
    p.add_argument("--cut", type=_parse_cut, action="append", help="START:STOP frames showing another scene")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("score", help="score crowd masks and report the seed frame")
    p.add_argument("--masks-dir", dest="masks", default=None)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_score)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = build_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoCandidateError as exc:
        print(f"no seed candidate: {exc}", file=sys.stderr)
        return EXIT_NO_CANDIDATE
    except StageError as exc:
        if isinstance(exc.cause, NoCandidateError):
            print(f"no seed candidate: {exc.cause}", file=sys.stderr)
            return EXIT_NO_CANDIDATE
        print(f"stage '{exc.stage}' failed: {exc.cause}", file=sys.stderr)
        return EXIT_STAGE
    except AdPipeError as exc:
        print(f"stage 'input' failed: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
