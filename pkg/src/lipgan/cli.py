"""Command-line entry point: train, dub, eval, make-toy-data and pipeline."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, LipGANError, StageError

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


def _error_record(exc: BaseException) -> dict:
    record = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("key", "stage", "exit_code", "frame_indices", "diagnostics"):
        value = getattr(exc, attr, None)
        if value not in (None, {}, []):
            record[attr] = value
    return record


def _load_frames(path: Path):
    from .media_io import decode_video, read_image

    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise LipGANError(f"no image frames in {path}")
        return [read_image(p).pixels for p in files]
    if path.suffix.lower() in IMAGE_SUFFIXES:
        return [read_image(path).pixels]
    return [f.pixels for f in decode_video(path).frames]


def cmd_make_toy_data(args) -> dict:
    from .synthetic import write_corpus

    manifest = write_corpus(args.out, args.clips, seed=args.seed, held_out_fraction=args.held_out_fraction,
                            duration_s=args.duration)
    return {"manifest": str(manifest)}


def cmd_train(args) -> dict:
    from .config import load_config
    from .model import init_params
    from .synthetic import read_corpus
    from .media_io import FixedBoxDetector
    from .training import PreparedClip, train

    cfg = load_config(args.config)
    if cfg.data is None:
        raise ConfigError("training needs data.corpus", key="data")
    arch = cfg.architecture_config()
    train_clips, _ = read_corpus(cfg.data.corpus)
    # the corpus stores the renderer's face boxes; use them instead of re-detecting
    prepared = [PreparedClip(toy.clip, arch.face_size, FixedBoxDetector(toy.face_box)) for toy in train_clips]
    model = init_params(arch, cfg.seed)
    reports = train(model, prepared, cfg.train_config(), cfg.loss_config(), log_path=cfg.output.log_csv,
                    checkpoint_dir=cfg.output.checkpoint_dir)
    return {
        "checkpoint": str(Path(cfg.output.checkpoint_dir) / "final.ckpt"),
        "log": str(cfg.output.log_csv),
        "steps": len(reports),
        "final_L_Re": reports[-1].L_Re if reports else None,
    }


def cmd_dub(args) -> dict:
    from .audio_features import read_wav
    from .inference import EVAL_RANDOM_IDENTITY, SELF_POSE, DubRequest, dub
    from .media_io import decode_video, encode_video, read_image
    from .model import load_checkpoint

    video = Path(args.video)
    source = read_image(video) if video.suffix.lower() in IMAGE_SUFFIXES else decode_video(video)
    model, _ = load_checkpoint(args.checkpoint)
    mode = EVAL_RANDOM_IDENTITY if args.mode == "eval" else SELF_POSE
    clip = dub(DubRequest(source, read_wav(args.audio), model, mode=mode, fps_out=args.fps,
                          loop=args.loop, on_no_face=args.on_no_face, paste_region=args.paste_region))
    out = encode_video(clip.frames, clip.audio, clip.fps, args.out)
    return {"output": str(out), "frames": len(clip.frames), "fps": clip.fps}


def cmd_eval(args) -> dict:
    from .evaluation import evaluate_frames, write_rows_csv

    pred = [f.astype(np.float64) / 255.0 for f in _load_frames(Path(args.pred))]
    gt = [f.astype(np.float64) / 255.0 for f in _load_frames(Path(args.gt))]
    pred_lm = gt_lm = None
    if args.toy_landmarks:
        from .synthetic import measured_landmarks

        pred_lm = [measured_landmarks(np.round(p * 255).astype(np.uint8)) for p in pred]
        gt_lm = [measured_landmarks(np.round(g * 255).astype(np.uint8)) for g in gt]
    report, rows = evaluate_frames(pred, gt, pred_lm, gt_lm)
    out = report.to_json(args.out)
    if args.rows:
        write_rows_csv(rows, args.rows)
    return {"output": str(out), **json.loads(out.read_text())}


def cmd_pipeline(args) -> dict:
    from .config import load_config
    from .pipeline import PipelineJob, StageSpec, run_pipeline

    cfg = load_config(args.config)
    if cfg.pipeline is None:
        raise ConfigError("config has no pipeline section", key="pipeline")
    out = Path(args.out)
    workdir = Path(args.workdir) if args.workdir else (cfg.pipeline.workdir or out.parent / f"{out.stem}_work")
    stages = [StageSpec(s.name, s.adapter, dict(s.config)) for s in cfg.pipeline.stages]
    job = PipelineJob(Path(args.video), workdir)
    try:
        result = run_pipeline(job, stages, output=out)
    except StageError as exc:
        exc.diagnostics = {**exc.diagnostics, "manifest": str(job.manifest_path)}
        raise
    return {"output": str(result), "manifest": str(job.manifest_path)}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lipgan", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train generator and sync discriminator from a YAML config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("dub", help="regenerate lip motion in a video or image for a new audio track")
    p.add_argument("--video", required=True, help="video file or still image")
    p.add_argument("--audio", required=True, help="WAV file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["self_pose", "eval"], default="self_pose")
    p.add_argument("--fps", type=float, default=None)
    p.add_argument("--loop", choices=["pingpong", "freeze"], default="pingpong")
    p.add_argument("--on-no-face", choices=["error", "skip"], default="error")
    p.add_argument("--paste-region", choices=["full", "lower_half"], default="full")
    p.set_defaults(func=cmd_dub)

    p = sub.add_parser("eval", help="PSNR / SSIM (and toy LMD) between predicted and reference frames")
    p.add_argument("--pred", required=True, help="video file or directory of frames")
    p.add_argument("--gt", required=True, help="video file or directory of frames")
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--rows", default=None, help="optional per-frame CSV")
    p.add_argument("--toy-landmarks", action="store_true", help="measure LMD with the synthetic mouth oracle")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("make-toy-data", help="write a synthetic talking-head corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, default=220)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--held-out-fraction", type=float, default=1 / 11)
    p.add_argument("--duration", type=float, default=4.0)
    p.set_defaults(func=cmd_make_toy_data)

    p = sub.add_parser("pipeline", help="run the configured translation stages and lipsync")
    p.add_argument("--config", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workdir", default=None)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        result = args.func(args)
    except (LipGANError, OSError, ValueError) as exc:
        print(json.dumps(_error_record(exc), default=str), file=sys.stderr)
        return 2 if isinstance(exc, LipGANError) else 1
    print(json.dumps(result, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
