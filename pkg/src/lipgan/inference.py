"""Frame-by-frame dubbing of a video or still image with an arbitrary speech track."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .audio_features import Waveform, mfcc_at, resample, SAMPLE_RATE
from .errors import NoFaceError
from .media_io import FaceBox, Frame, VideoClip, crop_resize, detect_face, mask_lower_half, paste_back
from .model import LipGAN
from .training import generate_faces

SELF_POSE = "self_pose"
EVAL_RANDOM_IDENTITY = "eval_random_identity"
MODES = (SELF_POSE, EVAL_RANDOM_IDENTITY)


@dataclass
class DubRequest:
    visual_source: VideoClip | Frame | np.ndarray
    audio: Waveform
    params: LipGAN
    mode: str = SELF_POSE
    fps_out: float | None = None  # source fps for video, 25 for a still image
    loop: str = "pingpong"  # or "freeze"
    on_no_face: str = "error"  # or "skip": copy the source frame through
    paste_region: str = "full"  # or "lower_half"
    identity_seed: int = 0
    batch_size: int = 64
    detector: object = None

    def __post_init__(self):
        if self.audio is None or len(self.audio.samples) == 0:
            raise ValueError("audio must be non-empty")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.loop not in ("pingpong", "freeze"):
            raise ValueError(f"unknown loop policy {self.loop!r}")
        if self.on_no_face not in ("error", "skip"):
            raise ValueError(f"unknown no-face policy {self.on_no_face!r}")


def self_pose_input(current: np.ndarray) -> np.ndarray:
    """Identity channels = current crop, pose channels = its masked copy; (H, H, 6)."""
    return eval_mode_input(current, current)


def eval_mode_input(random_identity: np.ndarray, current: np.ndarray) -> np.ndarray:
    """Identity channels = a reference crop of the speaker, pose channels = the masked current crop."""
    random_identity = np.asarray(random_identity, dtype=np.float32)
    current = np.asarray(current, dtype=np.float32)
    if random_identity.shape != current.shape:
        raise ValueError(f"crop shapes differ: {random_identity.shape} vs {current.shape}")
    return np.concatenate([random_identity, mask_lower_half(current)], axis=-1)


def output_frame_count(duration_s: float, fps: float) -> int:
    # guard against 2.0000000001 * 25 rounding up to an extra frame
    return max(1, math.ceil(round(duration_s * fps, 6)))


def source_index(i: int, n_source: int, loop: str = "pingpong") -> int:
    """Map an output frame index onto the source, looping back and forth past the end."""
    if i < n_source or n_source == 1:
        return min(i, n_source - 1)
    if loop == "freeze":
        return n_source - 1
    period = 2 * n_source - 2
    j = i % period
    return j if j < n_source else period - j


def _source_frames(src) -> tuple[list[Frame], float | None]:
    if isinstance(src, VideoClip):
        return list(src.frames), src.fps
    if isinstance(src, Frame):
        return [src], None
    pixels = np.asarray(src)
    if pixels.ndim != 3:
        raise ValueError("visual source must be a VideoClip, a Frame or an (H, W, 3) image")
    return [Frame(pixels, 0, 0.0)], None


def dub(req: DubRequest) -> VideoClip:
    """Generate one lip-synced frame per output timestamp and paste it into the source frame."""
    frames, src_fps = _source_frames(req.visual_source)
    fps = req.fps_out or src_fps or 25.0
    audio = req.audio if req.audio.sample_rate == SAMPLE_RATE else resample(req.audio, SAMPLE_RATE)
    n_out = output_frame_count(audio.duration_s, fps)
    size = req.params.cfg.face_size

    # detect and crop each source frame once
    boxes: dict[int, FaceBox | None] = {}
    crops: dict[int, np.ndarray] = {}
    missing = []
    for k, frame in enumerate(frames):
        try:
            boxes[k] = detect_face(frame, req.detector)
            crops[k] = crop_resize(frame, boxes[k], size)
        except NoFaceError:
            boxes[k] = None
            missing.append(k)
    if missing and req.on_no_face == "error":
        raise NoFaceError(missing)
    usable = [k for k in range(len(frames)) if boxes[k] is not None]

    identity = None
    if req.mode == EVAL_RANDOM_IDENTITY and usable:
        rng = np.random.default_rng(req.identity_seed)
        identity = crops[usable[int(rng.integers(len(usable)))]]

    plan = []
    for i in range(n_out):
        if src_fps is None:
            k = 0
        else:
            k = source_index(int(math.floor(i * src_fps / fps + 1e-9)), len(frames), req.loop)
        plan.append((i, k, i * 1000.0 / fps))

    todo = [(i, k, t) for i, k, t in plan if boxes[k] is not None]
    generated = {}
    if todo:
        pose = np.stack([crops[k] for _, k, _ in todo])
        ident = np.repeat(identity[None], len(todo), 0) if identity is not None else pose
        heatmaps = np.stack([mfcc_at(audio, t).values for _, _, t in todo])
        out = generate_faces(req.params, ident, pose, heatmaps, req.batch_size)
        generated = {i: g for (i, _, _), g in zip(todo, out)}

    result = []
    for i, k, t in plan:
        src = frames[k]
        if i in generated:
            pasted = paste_back(src, boxes[k], generated[i], region=req.paste_region)
            result.append(Frame(pasted.pixels, i, t))
        else:
            result.append(Frame(src.pixels.copy(), i, t))
    return VideoClip(result, fps, audio)
