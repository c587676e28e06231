"""Video/audio decode and encode, face detection, cropping, masking and paste-back.

Frames are RGB ``uint8`` rasters. Face crops are ``float32`` arrays of shape
(H, H, 3) with values in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Protocol, Sequence

import av
import cv2
import numpy as np
from scipy import ndimage

from .audio_features import Waveform, to_pcm16
from .errors import DecodeError, EncodeError, NoFaceError

FEATHER_PX = 5


@dataclass
class Frame:
    pixels: np.ndarray = field(repr=False)
    index: int
    timestamp_ms: float

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class FaceBox:
    x: int
    y: int
    w: int
    h: int
    frame_index: int = 0

    @property
    def area(self) -> int:
        return self.w * self.h

    def inside(self, height: int, width: int) -> bool:
        return (self.w > 0 and self.h > 0 and self.x >= 0 and self.y >= 0
                and self.x + self.w <= width and self.y + self.h <= height)

    def with_margin(self, margin: float, height: int, width: int) -> "FaceBox":
        """Grow the box by ``margin`` (fraction of its size) per side, clipped to the frame."""
        if margin == 0:
            return self
        dx, dy = int(round(self.w * margin)), int(round(self.h * margin))
        x0, y0 = max(0, self.x - dx), max(0, self.y - dy)
        x1, y1 = min(width, self.x + self.w + dx), min(height, self.y + self.h + dy)
        return FaceBox(x0, y0, x1 - x0, y1 - y0, self.frame_index)


@dataclass
class VideoClip:
    frames: list
    fps: float
    audio: Waveform | None = None

    def __len__(self):
        return len(self.frames)

    @property
    def duration_s(self) -> float:
        return len(self.frames) / self.fps

    @property
    def frame_times_ms(self) -> np.ndarray:
        return np.array([f.timestamp_ms for f in self.frames])


def make_frames(pixels: Sequence[np.ndarray], fps: float) -> list[Frame]:
    return [Frame(np.asarray(p, dtype=np.uint8), i, i * 1000.0 / fps) for i, p in enumerate(pixels)]


# --- decode / encode ---------------------------------------------------------


def decode_video(path) -> VideoClip:
    """Decode all frames (RGB8) and the first audio track (mono, native rate)."""
    path = Path(path)
    if not path.exists():
        raise DecodeError(f"no such file: {path}")
    try:
        container = av.open(str(path))
    except av.error.FFmpegError as exc:
        raise DecodeError(f"cannot open {path}: {exc}") from exc
    with container:
        if not container.streams.video:
            raise DecodeError(f"{path} has no video stream")
        vstream = container.streams.video[0]
        rate = vstream.average_rate or vstream.guessed_rate or vstream.base_rate
        fps = float(rate) if rate else 25.0
        pixels = []
        try:
            for frame in container.decode(vstream):
                pixels.append(frame.to_ndarray(format="rgb24"))
        except av.error.FFmpegError as exc:
            raise DecodeError(f"corrupt video stream in {path}: {exc}") from exc
    if not pixels:
        raise DecodeError(f"{path} contains no decodable frames")
    audio = decode_audio(path)
    return VideoClip(make_frames(pixels, fps), fps, audio)


def decode_audio(path) -> Waveform | None:
    """First audio track as mono PCM at its native rate, or None when absent."""
    try:
        container = av.open(str(path))
    except av.error.FFmpegError as exc:
        raise DecodeError(f"cannot open {path}: {exc}") from exc
    with container:
        if not container.streams.audio:
            return None
        astream = container.streams.audio[0]
        rate = astream.codec_context.sample_rate or astream.rate
        declared = None
        if astream.duration is not None and astream.time_base is not None:
            declared = int(round(float(astream.duration * astream.time_base) * rate))
        resampler = av.AudioResampler(format="s16", layout="mono", rate=rate)
        chunks = []
        try:
            for frame in container.decode(astream):
                for out in resampler.resample(frame):
                    chunks.append(out.to_ndarray().reshape(-1))
            for out in resampler.resample(None):
                chunks.append(out.to_ndarray().reshape(-1))
        except av.error.FFmpegError as exc:
            raise DecodeError(f"corrupt audio stream in {path}: {exc}") from exc
    if not chunks:
        return None
    pcm = np.concatenate(chunks).astype(np.float64) / 32768.0
    if declared:
        # codec frame padding past the declared stream end
        pcm = pcm[:declared]
    return Waveform(pcm, int(rate))


def encode_video(frames: Sequence[Frame | np.ndarray], audio: Waveform | None, fps: float, path,
                 codec: str = "libx264", crf: int = 18) -> Path:
    """Write an MP4 with H.264 video and (optionally) AAC audio."""
    if len(frames) == 0:
        raise ValueError("encode_video requires at least one frame")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rasters = [f.pixels if isinstance(f, Frame) else np.asarray(f, dtype=np.uint8) for f in frames]
    h, w = rasters[0].shape[:2]
    # yuv420p needs even dimensions
    eh, ew = h + (h % 2), w + (w % 2)
    rate = Fraction(fps).limit_denominator(1001)
    try:
        with av.open(str(path), mode="w", format="mp4") as container:
            vstream = container.add_stream(codec, rate=rate)
            vstream.width, vstream.height = ew, eh
            vstream.pix_fmt = "yuv420p"
            vstream.codec_context.thread_count = 1
            if codec == "libx264":
                vstream.options = {"crf": str(crf), "preset": "medium"}
            astream = None
            if audio is not None and len(audio) > 0:
                astream = container.add_stream("aac", rate=int(audio.sample_rate))
                astream.layout = "mono"
            for i, r in enumerate(rasters):
                if r.shape[:2] != (eh, ew):
                    r = np.pad(r, ((0, eh - r.shape[0]), (0, ew - r.shape[1]), (0, 0)), mode="edge")
                vf = av.VideoFrame.from_ndarray(np.ascontiguousarray(r), format="rgb24")
                vf.pts = i
                vf.time_base = Fraction(1) / rate
                for packet in vstream.encode(vf):
                    container.mux(packet)
            for packet in vstream.encode():
                container.mux(packet)
            if astream is not None:
                pcm = to_pcm16(audio)
                step = 1024
                for start in range(0, len(pcm), step):
                    chunk = pcm[start:start + step]
                    af = av.AudioFrame.from_ndarray(chunk.reshape(1, -1), format="s16", layout="mono")
                    af.sample_rate = int(audio.sample_rate)
                    af.pts = start
                    af.time_base = Fraction(1, int(audio.sample_rate))
                    for packet in astream.encode(af):
                        container.mux(packet)
                for packet in astream.encode():
                    container.mux(packet)
    except (av.error.FFmpegError, OSError) as exc:
        raise EncodeError(f"failed writing {path}: {exc}") from exc
    return path


def probe_duration(path) -> float:
    """Container duration in seconds (video stream frames / rate)."""
    with av.open(str(path)) as container:
        vstream = container.streams.video[0]
        n = sum(1 for _ in container.demux(vstream) if _.size)
        rate = vstream.average_rate or vstream.guessed_rate
        return n / float(rate)


def read_image(path) -> Frame:
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise DecodeError(f"cannot read image {path}")
    return Frame(cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB), 0, 0.0)


def write_image(pixels: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(pixels)
    if arr.ndim == 3:
        arr = cv2.cvtColor(arr, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), arr):
        raise EncodeError(f"cannot write image {path}")
    return path


# --- face detection --------------------------------------------------------------


class FaceDetector(Protocol):
    def __call__(self, frame: Frame) -> list[FaceBox]: ...


class BlobDetector:
    """Foreground blobs against a flat background estimated from the frame border.

    Intended for synthetic/toy footage; real footage needs a plug-in detector.
    """

    def __init__(self, threshold: float = 30.0, min_area: int = 64, margin: float = 0.0):
        self.threshold = threshold
        self.min_area = min_area
        self.margin = margin

    def __call__(self, frame: Frame) -> list[FaceBox]:
        px = frame.pixels.astype(np.int16)
        border = np.concatenate([px[0], px[-1], px[:, 0], px[:, -1]])
        bg = np.median(border, axis=0)
        fg = np.abs(px - bg).max(axis=2) > self.threshold
        fg = ndimage.binary_fill_holes(fg)
        labels, n = ndimage.label(fg)
        boxes = []
        for i, sl in enumerate(ndimage.find_objects(labels), start=1):
            if sl is None:
                continue
            area = int((labels[sl] == i).sum())
            if area < self.min_area:
                continue
            ys, xs = sl
            box = FaceBox(xs.start, ys.start, xs.stop - xs.start, ys.stop - ys.start, frame.index)
            boxes.append(box.with_margin(self.margin, frame.height, frame.width))
        return boxes


class FixedBoxDetector:
    """Returns known ground-truth boxes (synthetic corpus renderer output)."""

    def __init__(self, boxes: FaceBox | Sequence[FaceBox]):
        self.boxes = boxes

    def __call__(self, frame: Frame) -> list[FaceBox]:
        if isinstance(self.boxes, FaceBox):
            b = self.boxes
        else:
            b = self.boxes[min(frame.index, len(self.boxes) - 1)]
        return [FaceBox(b.x, b.y, b.w, b.h, frame.index)]


def detect_face(frame: Frame, detector: Callable[[Frame], list[FaceBox]] | None = None) -> FaceBox:
    """Largest face box found by ``detector`` (blob detector by default)."""
    detector = detector or BlobDetector()
    boxes = [b for b in detector(frame) if b.inside(frame.height, frame.width)]
    if not boxes:
        raise NoFaceError(frame.index)
    return max(boxes, key=lambda b: (b.area, -b.y, -b.x))


# --- crop / mask / paste -------------------------------------------------------


def crop_resize(frame: Frame | np.ndarray, box: FaceBox, size: int = 96) -> np.ndarray:
    """Bilinear resample of the boxed region to size x size, scaled to [0, 1]."""
    px = frame.pixels if isinstance(frame, Frame) else np.asarray(frame)
    if not box.inside(px.shape[0], px.shape[1]):
        raise ValueError(f"{box} is not inside a {px.shape[1]}x{px.shape[0]} frame")
    region = px[box.y:box.y + box.h, box.x:box.x + box.w].astype(np.float32) / 255.0
    if region.shape[:2] == (size, size):
        return np.ascontiguousarray(region)
    out = cv2.resize(region, (size, size), interpolation=cv2.INTER_LINEAR)
    return np.clip(out, 0.0, 1.0)


def mask_lower_half(crop: np.ndarray) -> np.ndarray:
    """Zero rows H//2 .. H-1 in every channel; works on (H, W, C) or (..., H, W, C)."""
    out = np.array(crop, copy=True)
    h = out.shape[-3]
    out[..., h // 2:, :, :] = 0
    return out


def feather_weights(box: FaceBox, height: int, width: int, feather: int = FEATHER_PX) -> np.ndarray:
    """Per-pixel blend weight for ``box``: 0 on interior borders, ramping to 1 at ``feather`` px."""
    yy = np.arange(box.h, dtype=np.float64)[:, None]
    xx = np.arange(box.w, dtype=np.float64)[None, :]
    dist = np.full((box.h, box.w), np.inf)
    if box.y > 0:
        dist = np.minimum(dist, yy)
    if box.y + box.h < height:
        dist = np.minimum(dist, box.h - 1 - yy)
    if box.x > 0:
        dist = np.minimum(dist, xx)
    if box.x + box.w < width:
        dist = np.minimum(dist, box.w - 1 - xx)
    if feather <= 0:
        return np.ones((box.h, box.w))
    return np.clip(dist / feather, 0.0, 1.0)


def paste_back(frame: Frame, box: FaceBox, generated: np.ndarray, feather: int = FEATHER_PX,
               region: str = "full") -> Frame:
    """Resize ``generated`` to the box, feather its interior borders and composite it.

    ``region="lower_half"`` only replaces the lower half of the box (the mouth
    region the generator inpaints); the default writes the whole crop.
    """
    px = frame.pixels
    if not box.inside(px.shape[0], px.shape[1]):
        raise ValueError(f"{box} is not inside the frame")
    gen = np.clip(np.asarray(generated, dtype=np.float32), 0.0, 1.0)
    if gen.shape[:2] != (box.h, box.w):
        gen = cv2.resize(gen, (box.w, box.h), interpolation=cv2.INTER_LINEAR)
    alpha = feather_weights(box, px.shape[0], px.shape[1], feather)
    if region == "lower_half":
        sub = FaceBox(box.x, box.y + box.h // 2, box.w, box.h - box.h // 2, box.frame_index)
        lower = np.minimum(feather_weights(sub, px.shape[0], px.shape[1], feather), alpha[box.h // 2:])
        alpha = np.zeros_like(alpha)
        alpha[box.h // 2:] = lower
    elif region != "full":
        raise ValueError(f"unknown paste region {region!r}")
    out = px.copy()
    src = px[box.y:box.y + box.h, box.x:box.x + box.w].astype(np.float64)
    a = alpha[..., None]
    blended = a * (gen.astype(np.float64) * 255.0) + (1.0 - a) * src
    out[box.y:box.y + box.h, box.x:box.x + box.w] = np.clip(np.round(blended), 0, 255).astype(np.uint8)
    return Frame(out, frame.index, frame.timestamp_ms)
