"""Procedural talking-face corpus with an exact audio-to-mouth oracle.

Each clip shows a flat-coloured circular head with two eyes and an elliptical
mouth whose vertical semi-axis follows a smooth random loudness envelope. The
soundtrack is a 220 Hz tone amplitude-modulated by the same envelope over a
constant low-level noise floor. The floor matters: cepstral coefficients 1..12
ignore a global gain, so a pure modulated tone would be invisible to them,
whereas the tone-to-floor ratio changes the spectral shape.

Training code only ever sees ``ToyClip.clip`` (frames + audio). The envelope,
boxes and landmarks live in ``ToyClip.labels`` and are for evaluation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .audio_features import Waveform, extract_window, read_wav, write_wav
from .evaluation import LandmarkSet
from .media_io import FaceBox, Frame, VideoClip, make_frames, read_image, write_image

MOUTH_RGB = (70.0, 16.0, 28.0)
EYE_RGB = (25.0, 25.0, 35.0)
LANDMARK_COUNT = 20


@dataclass(frozen=True)
class ToyClipSpec:
    seed: int
    duration_s: float = 4.0
    fps: float = 25.0
    sample_rate: int = 16000
    frame_size: int = 96
    head_radius_px: float = 40.0
    head_center: tuple = (48.0, 48.0)
    mouth_center: tuple = (48.0, 66.0)
    mouth_half_width: float = 14.0
    a_min: float = 2.0
    a_max: float = 14.0
    eye_offset: tuple = (15.0, -12.0)
    eye_radius: float = 4.0
    tone_hz: float = 220.0
    amp_range: tuple = (0.1, 0.9)
    noise_level: float = 0.003
    envelope_hz: tuple = (0.3, 2.0)

    def __post_init__(self):
        if not 0 <= self.a_min < self.a_max < self.head_radius_px:
            raise ValueError("need 0 <= a_min < a_max < head_radius_px")

    @property
    def n_frames(self) -> int:
        return int(round(self.duration_s * self.fps))

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate))

    def face_box(self, frame_index: int = 0) -> FaceBox:
        cx, cy = self.head_center
        r = self.head_radius_px
        x0, y0 = int(np.floor(cx - r)), int(np.floor(cy - r))
        x1, y1 = int(np.ceil(cx + r)), int(np.ceil(cy + r))
        return FaceBox(x0, y0, x1 - x0, y1 - y0, frame_index)

    def semi_axis(self, envelope):
        return self.a_min + (self.a_max - self.a_min) * np.asarray(envelope)


@dataclass
class ToyLabels:
    envelope: np.ndarray
    face_boxes: list
    mouth_landmarks: list


@dataclass
class ToyClip:
    spec: ToyClipSpec
    clip: VideoClip
    labels: ToyLabels = field(repr=False)

    @property
    def envelope(self) -> np.ndarray:
        return self.labels.envelope

    @property
    def face_box(self) -> list:
        return self.labels.face_boxes

    @property
    def mouth_landmarks(self) -> list:
        return self.labels.mouth_landmarks


# --- rendering -----------------------------------------------------------------


def _coverage(shape, cx, cy, rx, ry, ss=4, rows=None):
    """Anti-aliased coverage of an axis-aligned ellipse; pixel (i, j) is centred at (j, i)."""
    h, w = shape
    r0, r1 = rows if rows is not None else (0, h)
    r0, r1 = max(0, r0), min(h, r1)
    out = np.zeros((h, w))
    if ry <= 0 or rx <= 0 or r1 <= r0:
        return out
    off = (np.arange(ss) + 0.5) / ss - 0.5
    ys = (np.arange(r0, r1)[:, None] + off[None, :]).reshape(-1)
    xs = (np.arange(w)[:, None] + off[None, :]).reshape(-1)
    inside = ((xs[None, :] - cx) / rx) ** 2 + ((ys[:, None] - cy) / ry) ** 2 <= 1.0
    cov = inside.reshape(r1 - r0, ss, w, ss).mean(axis=(1, 3))
    out[r0:r1] = cov
    return out


def _identity_colors(rng: np.random.Generator):
    skin = np.array([rng.uniform(170, 240), rng.uniform(120, 200), rng.uniform(90, 170)])
    bg = rng.uniform(20, 80, size=3)
    return skin, bg


def render_static(spec: ToyClipSpec, skin, bg) -> np.ndarray:
    n = spec.frame_size
    img = np.broadcast_to(np.asarray(bg, dtype=np.float64), (n, n, 3)).copy()
    hx, hy = spec.head_center
    head = _coverage((n, n), hx, hy, spec.head_radius_px, spec.head_radius_px)[..., None]
    img = img * (1 - head) + head * np.asarray(skin)
    ex, ey = spec.eye_offset
    for sx in (-1.0, 1.0):
        eye = _coverage((n, n), hx + sx * ex, hy + ey, spec.eye_radius, spec.eye_radius)[..., None]
        img = img * (1 - eye) + eye * np.asarray(EYE_RGB)
    return img


def render_frame(spec: ToyClipSpec, static: np.ndarray, semi_axis: float) -> np.ndarray:
    mx, my = spec.mouth_center
    rows = (int(np.floor(my - spec.a_max)) - 1, int(np.ceil(my + spec.a_max)) + 2)
    mouth = _coverage(static.shape[:2], mx, my, spec.mouth_half_width, semi_axis, ss=8, rows=rows)[..., None]
    img = static * (1 - mouth) + mouth * np.asarray(MOUTH_RGB)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def mouth_landmarks(spec: ToyClipSpec, semi_axis: float) -> LandmarkSet:
    theta = 2 * np.pi * np.arange(LANDMARK_COUNT) / LANDMARK_COUNT
    mx, my = spec.mouth_center
    pts = np.stack([mx + spec.mouth_half_width * np.cos(theta), my + semi_axis * np.sin(theta)], axis=1)
    return LandmarkSet(pts)


def smooth_envelope(spec: ToyClipSpec, rng: np.random.Generator) -> np.ndarray:
    """Per-sample envelope in [0, 1]: three random-phase sinusoids, min-max normalised."""
    t = np.arange(spec.n_samples) / spec.sample_rate
    freqs = rng.uniform(*spec.envelope_hz, size=3)
    phases = rng.uniform(0, 2 * np.pi, size=3)
    raw = np.sin(2 * np.pi * freqs[:, None] * t[None, :] + phases[:, None]).sum(axis=0)
    return (raw - raw.min()) / (raw.max() - raw.min())


def make_clip(spec: ToyClipSpec) -> ToyClip:
    rng = np.random.default_rng(spec.seed)
    skin, bg = _identity_colors(rng)
    env_samples = smooth_envelope(spec, rng)
    t = np.arange(spec.n_samples) / spec.sample_rate
    lo, hi = spec.amp_range
    amp = lo + (hi - lo) * env_samples
    tone = amp * np.sin(2 * np.pi * spec.tone_hz * t + rng.uniform(0, 2 * np.pi))
    noise = spec.noise_level * rng.standard_normal(spec.n_samples)
    audio = Waveform(tone + noise, spec.sample_rate)

    frame_idx = np.minimum(np.round(np.arange(spec.n_frames) / spec.fps * spec.sample_rate).astype(int),
                           spec.n_samples - 1)
    envelope = env_samples[frame_idx]
    static = render_static(spec, skin, bg)
    axes = spec.semi_axis(envelope)
    pixels = [render_frame(spec, static, a) for a in axes]
    clip = VideoClip(make_frames(pixels, spec.fps), spec.fps, audio)
    labels = ToyLabels(
        envelope=envelope,
        face_boxes=[spec.face_box(i) for i in range(spec.n_frames)],
        mouth_landmarks=[mouth_landmarks(spec, a) for a in axes],
    )
    return ToyClip(spec, clip, labels)


# --- oracles ---------------------------------------------------------------------


def audio_envelope(w: Waveform, frame_times_ms, rms_ms: float = 25.0) -> np.ndarray:
    """25 ms RMS at each frame time, affinely normalised to [0, 1] per clip."""
    if len(w.samples) == 0:
        raise ValueError("empty waveform")
    rms = np.array([np.sqrt(np.mean(extract_window(w, t, rms_ms).samples ** 2)) for t in frame_times_ms])
    lo, hi = rms.min(), rms.max()
    if hi <= 0 or hi - lo <= 1e-6 * hi:
        return np.zeros_like(rms)
    return (rms - lo) / (hi - lo)


def _luminance(px: np.ndarray) -> np.ndarray:
    return px[..., 0] * 0.299 + px[..., 1] * 0.587 + px[..., 2] * 0.114


def measure_mouth_opening(image, spec: ToyClipSpec | None = None, box: FaceBox | None = None) -> float:
    """Estimate the mouth's vertical semi-axis (frame pixels) from the centre column.

    ``image`` is either a full frame (uint8 or Frame) or a face crop in [0, 1]
    covering ``box`` (the clip's head box by default). Each pixel in the mouth
    column contributes its darkness relative to the forehead skin tone, so
    anti-aliased and blurry mouths give fractional counts.
    """
    spec = spec or ToyClipSpec(seed=0)
    raw = image.pixels if isinstance(image, Frame) else np.asarray(image)
    px = raw.astype(np.float64)
    if raw.dtype != np.uint8:
        px *= 255.0
    if px.shape[0] == spec.frame_size and box is None:
        scale, ox, oy = 1.0, 0.0, 0.0
    else:
        box = box or spec.face_box()
        scale = box.w / px.shape[1]
        ox, oy = box.x, box.y

    def to_img(x, y):  # frame coordinates -> image pixel coordinates
        return (x - ox) / scale + 0.5 / scale - 0.5, (y - oy) / scale + 0.5 / scale - 0.5

    lum = _luminance(px)
    mx, my = spec.mouth_center
    hx, hy = spec.head_center
    fx, fy = to_img(hx, hy - 0.55 * spec.head_radius_px)
    fx, fy = int(round(fx)), int(round(fy))
    pad = max(1, int(round(2 / scale)))
    skin = float(np.median(lum[max(0, fy - pad):fy + pad + 1, max(0, fx - pad):fx + pad + 1]))
    mouth_lum = float(_luminance(np.asarray(MOUTH_RGB)))
    if skin - mouth_lum < 10:
        return 0.0
    cx, cy0 = to_img(mx, my - spec.a_max - 4)
    _, cy1 = to_img(mx, my + spec.a_max + 4)
    col = int(round(cx))
    r0, r1 = max(0, int(np.floor(cy0))), min(px.shape[0], int(np.ceil(cy1)) + 1)
    column = lum[r0:r1, col]
    dark = np.clip((skin - column) / (skin - mouth_lum), 0.0, 1.0)
    return float(dark.sum() * scale / 2.0)


def measured_landmarks(image, spec: ToyClipSpec | None = None, box: FaceBox | None = None) -> LandmarkSet:
    """Mouth contour landmarks from the measured opening (synthetic landmark source)."""
    spec = spec or ToyClipSpec(seed=0)
    return mouth_landmarks(spec, measure_mouth_opening(image, spec, box))


# --- corpus on disk ----------------------------------------------------------------


def make_corpus(n_train: int, n_held_out: int, seed: int = 0, **spec_kwargs):
    """Lists of (train, held_out) ToyClips with per-clip seeds derived from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(n_train + n_held_out)
    clips = [make_clip(ToyClipSpec(seed=int(s), **spec_kwargs)) for s in seeds]
    return clips[:n_train], clips[n_train:]


def _spec_record(spec: ToyClipSpec) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(spec).items()}


def write_clip(toy: ToyClip, directory) -> Path:
    d = Path(directory)
    (d / "frames").mkdir(parents=True, exist_ok=True)
    for f in toy.clip.frames:
        write_image(f.pixels, d / "frames" / f"{f.index:05d}.png")
    write_wav(toy.clip.audio, d / "audio.wav")
    meta = {
        "spec": _spec_record(toy.spec),
        "fps": toy.clip.fps,
        "envelope": toy.labels.envelope.tolist(),
        "face_boxes": [[b.x, b.y, b.w, b.h] for b in toy.labels.face_boxes],
        "mouth_landmarks": [lm.points.tolist() for lm in toy.labels.mouth_landmarks],
    }
    (d / "meta.json").write_text(json.dumps(meta))
    return d


def read_clip(directory) -> ToyClip:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    spec = ToyClipSpec(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in meta["spec"].items()})
    frame_paths = sorted((d / "frames").glob("*.png"))
    pixels = [read_image(p).pixels for p in frame_paths]
    clip = VideoClip(make_frames(pixels, meta["fps"]), meta["fps"], read_wav(d / "audio.wav"))
    labels = ToyLabels(
        envelope=np.asarray(meta["envelope"]),
        face_boxes=[FaceBox(*b, frame_index=i) for i, b in enumerate(meta["face_boxes"])],
        mouth_landmarks=[LandmarkSet(np.asarray(p)) for p in meta["mouth_landmarks"]],
    )
    return ToyClip(spec, clip, labels)


def write_corpus(out_dir, n_clips: int, seed: int = 0, held_out_fraction: float = 0.1,
                 **spec_kwargs) -> Path:
    """Write clips as PNG frames + WAV + metadata, plus a manifest of splits."""
    out = Path(out_dir)
    n_held = int(round(n_clips * held_out_fraction))
    train, held = make_corpus(n_clips - n_held, n_held, seed, **spec_kwargs)
    manifest = {"seed": seed, "train": [], "held_out": []}
    for split, clips in (("train", train), ("held_out", held)):
        for i, toy in enumerate(clips):
            name = f"{split}_{i:04d}"
            write_clip(toy, out / name)
            manifest[split].append(name)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out / "manifest.json"


def read_corpus(root):
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    train = [read_clip(root / n) for n in manifest["train"]]
    held = [read_clip(root / n) for n in manifest["held_out"]]
    return train, held
