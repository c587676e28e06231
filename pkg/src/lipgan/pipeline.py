"""Stage orchestration for video-to-video speech translation with lip regeneration.

Each stage turns one artifact into the next (video -> text -> text -> audio ->
audio -> video). Stages are backed by adapters: a precomputed file, an external
command, or (for lipsync only) the in-process generator.
"""

from __future__ import annotations

import hashlib
import json
import shlex
import shutil
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import LipGANError, StageError

# stage -> (input media type, output media type)
STAGE_IO = {
    "recognize": ("video", "text"),
    "translate": ("text", "text"),
    "synthesize": ("text", "audio"),
    "voice_transfer": ("audio", "audio"),
    "lipsync": ("audio", "video"),
}
MEDIA_SUFFIXES = {
    "text": {".txt"},
    "audio": {".wav"},
    "video": {".mp4", ".mkv", ".mov", ".avi"},
}
DEFAULT_SUFFIX = {"text": ".txt", "audio": ".wav", "video": ".mp4"}


@dataclass
class StageSpec:
    name: str
    adapter: str  # file | command | internal
    config: dict[str, Any] = field(default_factory=dict)

    @property
    def input_type(self) -> str:
        return STAGE_IO[self.name][0]

    @property
    def output_type(self) -> str:
        return STAGE_IO[self.name][1]


@dataclass
class PipelineJob:
    input_video: Path
    workdir: Path
    stage_outputs: dict[str, Path] = field(default_factory=dict)
    status: str = "pending"  # pending | running | done | failed
    error: dict | None = None

    @property
    def manifest_path(self) -> Path:
        return self.workdir / "manifest.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def validate_chain(stages: list[StageSpec]) -> None:
    """Check stage names, uniqueness and that each stage consumes what the previous one produced."""
    if not stages:
        raise StageError("pipeline", "no stages configured")
    seen = set()
    current = "video"
    for spec in stages:
        if spec.name not in STAGE_IO:
            raise StageError(spec.name, f"unknown stage; expected one of {list(STAGE_IO)}")
        if spec.name in seen:
            raise StageError(spec.name, "stage listed twice")
        seen.add(spec.name)
        if spec.input_type != current:
            raise StageError(spec.name, f"expects {spec.input_type} input but the previous stage yields {current}")
        current = spec.output_type
    if current != "video":
        raise StageError(stages[-1].name, f"pipeline must end with a video, not {current}")


def _check_media(stage: str, path: Path, media: str) -> None:
    if not path.exists():
        raise StageError(stage, f"missing artifact {path}")
    if path.suffix.lower() not in MEDIA_SUFFIXES[media]:
        raise StageError(stage, f"{path.name} is not a {media} artifact",
                         diagnostics={"expected": sorted(MEDIA_SUFFIXES[media]), "got": path.suffix})


def _file_stage(spec: StageSpec, output: Path) -> Path:
    src = Path(spec.config["path"])
    _check_media(spec.name, src, spec.output_type)
    output = output.with_suffix(src.suffix.lower())
    shutil.copyfile(src, output)
    return output


def _command_stage(spec: StageSpec, inputs: dict, output: Path) -> Path:
    command = spec.config["command"]
    if isinstance(command, str):
        command = shlex.split(command)
    values = {k: str(v) for k, v in inputs.items()} | {"output": str(output)}
    try:
        argv = [part.format(**values) for part in command]
    except KeyError as exc:
        raise StageError(spec.name, f"unknown placeholder {exc} in command") from None
    try:
        proc = subprocess.run(argv, capture_output=True, text=True, timeout=spec.config.get("timeout_s"))
    except (OSError, subprocess.TimeoutExpired) as exc:
        raise StageError(spec.name, f"could not run {argv[0]}: {exc}") from None
    if proc.returncode != 0:
        raise StageError(spec.name, f"command exited with status {proc.returncode}", exit_code=proc.returncode,
                         diagnostics={"argv": argv, "stderr": proc.stderr[-2000:]})
    declared = Path(spec.config.get("output", str(output)).format(**values))
    _check_media(spec.name, declared, spec.output_type)
    return declared


def _lipsync_stage(spec: StageSpec, inputs: dict, output: Path) -> Path:
    from .audio_features import read_wav
    from .inference import DubRequest, dub
    from .media_io import decode_video, encode_video, read_image
    from .model import load_checkpoint

    cfg = spec.config
    ckpt = Path(cfg["checkpoint"])
    if not ckpt.exists():
        raise StageError(spec.name, f"checkpoint not found: {ckpt}")
    video = Path(inputs["video"])
    source = read_image(video) if video.suffix.lower() in {".png", ".jpg", ".jpeg"} else decode_video(video)
    model, _ = load_checkpoint(ckpt)
    req = DubRequest(source, read_wav(inputs["input"]), model,
                     mode=cfg.get("mode", "self_pose"), fps_out=cfg.get("fps_out"),
                     loop=cfg.get("loop", "pingpong"), on_no_face=cfg.get("on_no_face", "error"),
                     paste_region=cfg.get("paste_region", "full"))
    clip = dub(req)
    encode_video(clip.frames, clip.audio, clip.fps, output)
    return output


def run_stage(spec: StageSpec, inputs: dict, output: Path) -> Path:
    """Run one stage. ``inputs`` holds ``input`` (previous artifact), ``video`` and ``workdir``."""
    if spec.adapter != "file":
        _check_media(spec.name, Path(inputs["input"]), spec.input_type)
    try:
        if spec.adapter == "file":
            return _file_stage(spec, output)
        if spec.adapter == "command":
            return _command_stage(spec, inputs, output)
        if spec.adapter == "internal" and spec.name == "lipsync":
            return _lipsync_stage(spec, inputs, output)
    except StageError:
        raise
    except LipGANError as exc:
        raise StageError(spec.name, str(exc), diagnostics={"type": type(exc).__name__}) from exc
    raise StageError(spec.name, f"no adapter {spec.adapter!r} for this stage")


def _write_manifest(job: PipelineJob, stages: list[StageSpec], records: list[dict]) -> None:
    manifest = {
        "input_video": str(job.input_video),
        "input_sha256": sha256_file(job.input_video) if job.input_video.exists() else None,
        "status": job.status,
        "stages": records,
        "pending": [s.name for s in stages[len(records):]],
        "error": job.error,
    }
    job.manifest_path.write_text(json.dumps(manifest, indent=2))


def run_pipeline(job: PipelineJob, stages: list[StageSpec], output=None) -> Path:
    """Run stages in order, recording each artifact and its hash in ``workdir/manifest.json``.

    On failure the manifest keeps every completed stage and the error, and the
    StageError is re-raised.
    """
    job.workdir.mkdir(parents=True, exist_ok=True)
    validate_chain(stages)
    job.status = "running"
    records: list[dict] = []
    _write_manifest(job, stages, records)
    current = Path(job.input_video)
    try:
        _check_media("input", current, "video")
        for i, spec in enumerate(stages):
            target = job.workdir / f"{i + 1:02d}_{spec.name}{DEFAULT_SUFFIX[spec.output_type]}"
            inputs = {"input": current, "video": job.input_video, "workdir": job.workdir}
            artifact = run_stage(spec, inputs, target)
            job.stage_outputs[spec.name] = artifact
            records.append({"stage": spec.name, "adapter": spec.adapter, "artifact": str(artifact),
                            "sha256": sha256_file(artifact)})
            _write_manifest(job, stages, records)
            current = artifact
    except StageError as exc:
        job.status = "failed"
        job.error = {"stage": exc.stage, "message": str(exc), "exit_code": exc.exit_code,
                     "diagnostics": exc.diagnostics}
        _write_manifest(job, stages, records)
        raise
    job.status = "done"
    _write_manifest(job, stages, records)
    if output is not None:
        output = Path(output)
        output.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(current, output)
        return output
    return current
