"""Waveform handling and MFCC heatmap extraction.

Feature layout: 13 cepstral coefficients per 25 ms analysis frame, 10 ms hop
(100 feature frames per second), first coefficient dropped, giving a
12 x 35 x 1 heatmap for a 350 ms window at 16 kHz.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.io import wavfile

from .errors import ShapeError

SAMPLE_RATE = 16000
WINDOW_MS = 350.0
FEATURE_RATE = 100  # feature frames per second
FRAME_MS = 25.0
N_FFT = 512
N_MELS = 26
N_CEPS = 13
LOG_FLOOR = 1e-10


@dataclass
class Waveform:
    """Mono PCM audio as float samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise ShapeError(f"waveform must be mono (1-D), got shape {s.shape}")
        self.samples = np.clip(s, -1.0, 1.0)

    @property
    def duration_ms(self) -> float:
        return 1000.0 * len(self.samples) / self.sample_rate

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self):
        return len(self.samples)


@dataclass
class AudioWindow:
    samples: np.ndarray
    sample_rate: int
    center_ms: float
    span_ms: float = WINDOW_MS


@dataclass
class MfccConfig:
    sample_rate: int = SAMPLE_RATE
    frame_ms: float = FRAME_MS
    feature_rate: int = FEATURE_RATE
    n_fft: int = N_FFT
    n_mels: int = N_MELS
    n_ceps: int = N_CEPS
    log_floor: float = LOG_FLOOR
    low_hz: float = 0.0
    high_hz: float | None = None

    @property
    def frame_length(self) -> int:
        return int(round(self.frame_ms * self.sample_rate / 1000))

    @property
    def hop_length(self) -> int:
        return int(round(self.sample_rate / self.feature_rate))

    @property
    def n_coeffs(self) -> int:
        return self.n_ceps - 1

    def n_frames(self, span_ms: float = WINDOW_MS) -> int:
        return int(round(span_ms * self.feature_rate / 1000))


@dataclass
class MfccHeatmap:
    """M x T_f x 1 cepstral heatmap for one audio window."""

    values: np.ndarray = field(repr=False)

    @property
    def shape(self):
        return self.values.shape

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]


# --- waveform io -----------------------------------------------------------


def read_wav(path) -> Waveform:
    rate, data = wavfile.read(str(path))
    if data.ndim > 1:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    else:
        x = data.astype(np.float64)
    return Waveform(x, int(rate))


def to_pcm16(w: Waveform) -> np.ndarray:
    return np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")


def write_wav(w: Waveform, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), int(w.sample_rate), to_pcm16(w))
    return path


def save_heatmap(h: MfccHeatmap, path) -> None:
    np.save(str(path), np.asarray(h.values, dtype="<f4"))


def load_heatmap(path) -> MfccHeatmap:
    return MfccHeatmap(np.load(str(path)).astype("<f4"))


def heatmap_to_bytes(h: MfccHeatmap) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.asarray(h.values, dtype="<f4"))
    return buf.getvalue()


# --- windowing ---------------------------------------------------------------


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Band-limited polyphase resampling to ``target_rate``."""
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if int(target_rate) == int(w.sample_rate):
        return Waveform(w.samples.copy(), w.sample_rate)
    ratio = Fraction(int(target_rate), int(w.sample_rate))
    y = signal.resample_poly(w.samples, ratio.numerator, ratio.denominator)
    return Waveform(y, int(target_rate))


def window_length(span_ms: float, sample_rate: int) -> int:
    return int(round(span_ms * sample_rate / 1000.0))


def extract_window(w: Waveform, center_ms: float, span_ms: float = WINDOW_MS) -> AudioWindow:
    """Cut a ``span_ms`` window centred at ``center_ms``; reflect-pad outside the clip."""
    if len(w.samples) == 0:
        raise ValueError("cannot window an empty waveform")
    n = window_length(span_ms, w.sample_rate)
    start = int(round(center_ms * w.sample_rate / 1000.0)) - n // 2
    stop = start + n
    x = w.samples
    pad_left = max(0, -start)
    pad_right = max(0, stop - len(x))
    if pad_left or pad_right:
        mode = "reflect" if len(x) > 1 else "edge"
        x = np.pad(x, (pad_left, pad_right), mode=mode)
        start += pad_left
        stop += pad_left
    return AudioWindow(x[start:stop].copy(), w.sample_rate, float(center_ms), float(span_ms))


# --- MFCC ----------------------------------------------------------------------


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MfccConfig) -> np.ndarray:
    """Triangular filters with corners snapped to FFT bins, shape (n_mels, n_fft//2+1)."""
    high = cfg.high_hz if cfg.high_hz is not None else cfg.sample_rate / 2
    mels = np.linspace(hz_to_mel(cfg.low_hz), hz_to_mel(high), cfg.n_mels + 2)
    bins = np.floor((cfg.n_fft + 1) * mel_to_hz(mels) / cfg.sample_rate).astype(int)
    k = np.arange(cfg.n_fft // 2 + 1)[None, :]
    lo, mid, hi = bins[:-2, None], bins[1:-1, None], bins[2:, None]
    rising = (k - lo) / np.maximum(mid - lo, 1)
    falling = (hi - k) / np.maximum(hi - mid, 1)
    fb = np.where((k >= lo) & (k < mid), rising, 0.0)
    fb = np.where((k >= mid) & (k < hi), falling, fb)
    return fb


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis as an (n, n) matrix acting on column vectors."""
    i = np.arange(n)[None, :]
    k = np.arange(n)[:, None]
    basis = np.cos(np.pi * k * (2 * i + 1) / (2 * n)) * np.sqrt(2.0 / n)
    basis[0] /= np.sqrt(2.0)
    return basis


_CACHE: dict = {}


def _tables(cfg: MfccConfig):
    key = (cfg.sample_rate, cfg.frame_length, cfg.n_fft, cfg.n_mels, cfg.low_hz, cfg.high_hz)
    if key not in _CACHE:
        _CACHE[key] = (np.hanning(cfg.frame_length), mel_filterbank(cfg), dct_matrix(cfg.n_mels))
    return _CACHE[key]


def frame_signal(x: np.ndarray, cfg: MfccConfig) -> np.ndarray:
    """Centred analysis frames: reflect-pad by (frame - hop) / 2 on each side."""
    flen, hop = cfg.frame_length, cfg.hop_length
    if len(x) < flen:
        raise ValueError(f"window of {len(x)} samples is shorter than one {flen}-sample analysis frame")
    pad = (flen - hop) // 2
    xp = np.pad(x, (pad, pad), mode="reflect")
    n_frames = 1 + (len(xp) - flen) // hop
    idx = np.arange(flen)[None, :] + hop * np.arange(n_frames)[:, None]
    return xp[idx]


def log_mel_energies(x: np.ndarray, cfg: MfccConfig) -> np.ndarray:
    window, fb, _ = _tables(cfg)
    frames = frame_signal(np.asarray(x, dtype=np.float64), cfg) * window
    power = np.abs(np.fft.rfft(frames, n=cfg.n_fft, axis=1)) ** 2 / cfg.n_fft
    return np.log(np.maximum(power @ fb.T, cfg.log_floor))


def compute_mfcc(win: AudioWindow, cfg: MfccConfig | None = None) -> MfccHeatmap:
    """MFCC heatmap (coefficients 1..12) of shape (12, 35, 1) for a 350 ms window."""
    cfg = cfg or MfccConfig()
    if win.sample_rate != cfg.sample_rate:
        raise ValueError(f"window sample rate {win.sample_rate} != configured {cfg.sample_rate}")
    _, _, dct = _tables(cfg)
    ceps = log_mel_energies(win.samples, cfg) @ dct.T  # (frames, n_mels)
    kept = ceps[:, 1:cfg.n_ceps].T  # (12, frames)
    return MfccHeatmap(kept[:, :, None].astype(np.float64))


def mfcc_at(w: Waveform, center_ms: float, span_ms: float = WINDOW_MS,
            cfg: MfccConfig | None = None) -> MfccHeatmap:
    return compute_mfcc(extract_window(w, center_ms, span_ms), cfg)
