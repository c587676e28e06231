"""Generator (face encoder, audio encoder, skip-connected face decoder) and sync discriminator.

Tensors are NCHW. Face inputs are (B, 6, H, H) for the generator and
(B, 3, H, H) for the discriminator; MFCC heatmaps are (B, 1, M, T).
The numpy-facing helpers accept single samples in HWC layout.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError

OUTPUT_EPS = 1e-6


@dataclass(frozen=True)
class ArchitectureConfig:
    face_size: int = 96
    embed_dim: int = 256
    encoder_widths: tuple = (32, 64, 128, 256, 512, 512)
    decoder_widths: tuple = (512, 512, 256, 128, 64, 32)
    skip_count: int = 6
    audio_widths: tuple = (32, 64, 128, 256)
    mfcc_bins: int = 12
    mfcc_frames: int = 35
    audio_scale: float = 0.1  # MFCC magnitudes are O(10); bring them to O(1)
    unit_embeddings: bool = False  # if set, d is measured between L2-normalised embeddings (range [0, 2])
    res_blocks: int = 1
    res_from_scale: int = 0
    activation: str = "relu"
    norm: str = "none"

    def validate(self) -> "ArchitectureConfig":
        if len(self.decoder_widths) != self.skip_count:
            raise ConfigError(
                f"decoder has {len(self.decoder_widths)} upsampling steps but skip_count={self.skip_count}",
                key="architecture.decoder_widths")
        if len(self.encoder_widths) != self.skip_count:
            raise ConfigError(
                f"encoder has {len(self.encoder_widths)} scales but skip_count={self.skip_count}",
                key="architecture.encoder_widths")
        if self.face_size / 2 ** self.skip_count < 1:
            raise ConfigError(f"face_size {self.face_size} too small for {self.skip_count} downsamplings",
                              key="architecture.face_size")
        if self.embed_dim <= 0 or not self.audio_widths:
            raise ConfigError("embed_dim must be positive and audio_widths non-empty", key="architecture")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}", key="architecture.activation")
        if self.norm not in ("none", "group"):
            raise ConfigError(f"unknown norm {self.norm!r}", key="architecture.norm")
        return self

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown architecture keys: {sorted(unknown)}", key=sorted(unknown)[0])
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


# Desk-scale preset used by the toy corpus acceptance runs.
TOY_ARCHITECTURE = ArchitectureConfig(
    face_size=64,
    embed_dim=64,
    encoder_widths=(8, 16, 24, 32, 48, 64),
    decoder_widths=(64, 48, 32, 24, 16, 8),
    audio_widths=(16, 32, 64),
    res_blocks=1,
    res_from_scale=2,
)


_ACTIVATIONS = {
    "relu": nn.ReLU,
    "leaky_relu": lambda: nn.LeakyReLU(0.2),
    "elu": nn.ELU,
    "softplus": nn.Softplus,
    "tanh": nn.Tanh,
}


def _act(name):
    return _ACTIVATIONS[name]()


def _norm(name, channels):
    if name == "group":
        return nn.GroupNorm(min(8, channels), channels)
    return nn.Identity()


class ConvAct(nn.Sequential):
    def __init__(self, cin, cout, stride=1, kernel=3, act="relu", norm="none"):
        super().__init__(
            nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2),
            _norm(norm, cout),
            _act(act),
        )


class ResBlock(nn.Module):
    def __init__(self, channels, act="relu", norm="none"):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm1 = _norm(norm, channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm2 = _norm(norm, channels)
        self.act1 = _act(act)
        self.act2 = _act(act)

    def forward(self, x):
        y = self.act1(self.norm1(self.conv1(x)))
        return self.act2(x + self.norm2(self.conv2(y)))


def _stage(cin, cout, stride, cfg, scale=None):
    """Conv + activation, then residual blocks unless ``scale`` is finer than ``res_from_scale``."""
    layers = [ConvAct(cin, cout, stride, act=cfg.activation, norm=cfg.norm)]
    if scale is None or scale >= cfg.res_from_scale:
        layers += [ResBlock(cout, cfg.activation, cfg.norm) for _ in range(cfg.res_blocks)]
    return nn.Sequential(*layers)


def _downsampled(size, times):
    for _ in range(times):
        size = (size + 1) // 2
    return size


class FaceEncoder(nn.Module):
    """Residual stages with stride-2 downsampling; one skip map per scale.

    Skip maps come out at H, H/2, ..., H/32 (rounded up); a final stride-2
    convolution feeds the bottleneck that is flattened into the embedding.
    """

    def __init__(self, cfg: ArchitectureConfig, in_channels: int):
        super().__init__()
        w = cfg.encoder_widths
        self.stages = nn.ModuleList(
            [_stage(in_channels if i == 0 else w[i - 1], w[i], 1 if i == 0 else 2, cfg, scale=i)
             for i in range(len(w))]
        )
        self.bottleneck = ConvAct(w[-1], w[-1], stride=2, act=cfg.activation, norm=cfg.norm)
        side = _downsampled(cfg.face_size, len(w))
        self.to_embedding = nn.Linear(w[-1] * side * side, cfg.embed_dim)

    def forward(self, x):
        skips = []
        for stage in self.stages:
            x = stage(x)
            skips.append(x)
        z = self.bottleneck(x)
        return self.to_embedding(z.flatten(1)), skips


class AudioEncoder(nn.Module):
    def __init__(self, cfg: ArchitectureConfig):
        super().__init__()
        w = cfg.audio_widths
        self.shape = (1, cfg.mfcc_bins, cfg.mfcc_frames)
        self.scale = cfg.audio_scale
        self.stages = nn.Sequential(
            *[_stage(1 if i == 0 else w[i - 1], w[i], 1 if i == 0 else 2, cfg) for i in range(len(w))]
        )
        m = _downsampled(cfg.mfcc_bins, len(w) - 1)
        t = _downsampled(cfg.mfcc_frames, len(w) - 1)
        self.to_embedding = nn.Linear(w[-1] * m * t, cfg.embed_dim)

    def forward(self, a):
        if tuple(a.shape[1:]) != self.shape:
            raise ShapeError(f"audio heatmap must be (B, {', '.join(map(str, self.shape))}), got {tuple(a.shape)}")
        return self.to_embedding(self.stages(a * self.scale).flatten(1))


class FaceDecoder(nn.Module):
    """Upsample the joint embedding back to H x H, fusing one skip map after every upsampling."""

    def __init__(self, cfg: ArchitectureConfig):
        super().__init__()
        enc = list(reversed(cfg.encoder_widths))
        dec = cfg.decoder_widths
        self.up = nn.ModuleList()
        self.fuse = nn.ModuleList()
        cin = 2 * cfg.embed_dim
        for i, width in enumerate(dec):
            self.up.append(ConvAct(cin, width, act=cfg.activation, norm=cfg.norm))
            self.fuse.append(_stage(width + enc[i], width, 1, cfg, scale=len(dec) - 1 - i))
            cin = width
        self.out = nn.Conv2d(dec[-1], 3, kernel_size=1)

    def forward(self, joint, skips):
        x = joint[:, :, None, None]
        for up, fuse, skip in zip(self.up, self.fuse, reversed(skips)):
            # resize-convolution upsampling to the skip map's resolution
            x = up(F.interpolate(x, size=skip.shape[-2:], mode="nearest"))
            x = fuse(torch.cat([x, skip], dim=1))
        logits = self.out(x)
        return torch.sigmoid(logits).clamp(OUTPUT_EPS, 1.0 - OUTPUT_EPS), x


class Generator(nn.Module):
    def __init__(self, cfg: ArchitectureConfig):
        super().__init__()
        self.cfg = cfg
        self.face_encoder = FaceEncoder(cfg, in_channels=6)
        self.audio_encoder = AudioEncoder(cfg)
        self.decoder = FaceDecoder(cfg)

    def forward(self, faces, audio, return_features=False):
        if faces.shape[1] != 6 or faces.shape[-1] != self.cfg.face_size or faces.shape[-2] != self.cfg.face_size:
            raise ShapeError(f"generator face input must be (B, 6, {self.cfg.face_size}, {self.cfg.face_size}), "
                             f"got {tuple(faces.shape)}")
        face_emb, skips = self.face_encoder(faces)
        audio_emb = self.audio_encoder(audio)
        out, penultimate = self.decoder(torch.cat([face_emb, audio_emb], dim=1), skips)
        return (out, penultimate) if return_features else out


class SyncDiscriminator(nn.Module):
    """Embeds a face (B, 3, H, H) and an audio heatmap; returns their L2 distance."""

    def __init__(self, cfg: ArchitectureConfig):
        super().__init__()
        self.cfg = cfg
        self.face_encoder = FaceEncoder(cfg, in_channels=3)
        self.audio_encoder = AudioEncoder(cfg)

    def embed(self, faces, audio):
        if faces.shape[1] != 3 or faces.shape[-1] != self.cfg.face_size:
            raise ShapeError(f"discriminator face input must be (B, 3, {self.cfg.face_size}, "
                             f"{self.cfg.face_size}), got {tuple(faces.shape)}")
        f, _ = self.face_encoder(faces)
        a = self.audio_encoder(audio)
        if self.cfg.unit_embeddings:
            f, a = F.normalize(f, dim=1), F.normalize(a, dim=1)
        return f, a

    def forward(self, faces, audio):
        f, a = self.embed(faces, audio)
        return torch.linalg.vector_norm(f - a, dim=1)


class LipGAN(nn.Module):
    """Container holding both networks; state-dict keys split into ``generator.*`` and ``discriminator.*``."""

    def __init__(self, cfg: ArchitectureConfig):
        super().__init__()
        self.cfg = cfg.validate()
        self.generator = Generator(cfg)
        self.discriminator = SyncDiscriminator(cfg)


def init_params(cfg: ArchitectureConfig, seed: int) -> LipGAN:
    """Build both networks with fan-in scaled normal weights and zero biases.

    Convolutions use the ReLU gain sqrt(2 / fan_in); linear projections use sqrt(1 / fan_in).
    """
    cfg.validate()
    model = LipGAN(cfg)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("bias"):
                p.zero_()
            elif p.dim() > 1:
                fan_in = p[0].numel()
                gain = 1.0 if p.dim() == 2 else 2.0
                p.copy_(torch.randn(p.shape, generator=gen) * np.sqrt(gain / fan_in))
            else:  # normalization scales
                p.fill_(1.0)
    return model


# --- numpy-facing helpers ------------------------------------------------------


def faces_to_tensor(x, dtype=torch.float32) -> torch.Tensor:
    """(H, W, C) or (B, H, W, C) array -> (B, C, H, W) tensor."""
    if isinstance(x, torch.Tensor):
        return x
    arr = np.asarray(x)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def audio_to_tensor(a, dtype=torch.float32) -> torch.Tensor:
    """(M, T, 1) or (B, M, T, 1) heatmap values -> (B, 1, M, T) tensor."""
    if isinstance(a, torch.Tensor):
        return a
    arr = np.asarray(getattr(a, "values", a))
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 1:
        raise ShapeError(f"audio heatmap must be (M, T, 1), got {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def tensor_to_faces(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().transpose(0, 2, 3, 1)


def _dtype(params: nn.Module):
    return next(params.parameters()).dtype


def encode_face(x, params: LipGAN):
    """Face embedding and the six skip maps for a generator input."""
    single = not isinstance(x, torch.Tensor)
    with torch.no_grad() if single else torch.enable_grad():
        emb, skips = params.generator.face_encoder(faces_to_tensor(x, _dtype(params)))
    if single:
        return emb[0].numpy(), [s[0].numpy() for s in skips]
    return emb, skips


def encode_audio(a, params: LipGAN):
    single = not isinstance(a, torch.Tensor)
    t = audio_to_tensor(a, _dtype(params))
    with torch.no_grad() if single else torch.enable_grad():
        emb = params.generator.audio_encoder(t)
    return emb[0].numpy() if single else emb


def generator_forward(x, a, params: LipGAN):
    single = not isinstance(x, torch.Tensor)
    dt = _dtype(params)
    with torch.no_grad() if single else torch.enable_grad():
        out = params.generator(faces_to_tensor(x, dt), audio_to_tensor(a, dt))
    return tensor_to_faces(out)[0] if single else out


def discriminator_forward(s, a, params: LipGAN):
    single = not isinstance(s, torch.Tensor)
    dt = _dtype(params)
    with torch.no_grad() if single else torch.enable_grad():
        d = params.discriminator(faces_to_tensor(s, dt), audio_to_tensor(a, dt))
    return float(d[0]) if single else d


# --- checkpoints -----------------------------------------------------------------

_FIXED_DATE = (1980, 1, 1, 0, 0, 0)


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, arr, allow_pickle=False)
    return buf.getvalue()


def save_checkpoint(model: LipGAN, path, step: int = 0, seed: int | None = None,
                    extra: dict | None = None, optimizer_state: dict | None = None) -> Path:
    """Zip archive: one little-endian float32 .npy per parameter path plus meta.json."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"architecture": model.cfg.to_dict(), "step": int(step), "seed": seed, "extra": extra or {}}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, tensor in model.state_dict().items():
            arr = tensor.detach().cpu().numpy().astype("<f4")
            zf.writestr(zipfile.ZipInfo(f"params/{name}.npy", _FIXED_DATE), _npy_bytes(arr))
        zf.writestr(zipfile.ZipInfo("meta.json", _FIXED_DATE), json.dumps(meta, sort_keys=True))
        if optimizer_state is not None:
            buf = io.BytesIO()
            torch.save(optimizer_state, buf)
            zf.writestr(zipfile.ZipInfo("optimizer.pt", _FIXED_DATE), buf.getvalue())
    return path


def load_checkpoint(path, with_optimizer: bool = False):
    """Returns ``(model, meta)`` (and the optimizer state when requested)."""
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        cfg = ArchitectureConfig.from_dict(meta["architecture"])
        model = LipGAN(cfg)
        state = {}
        for info in zf.infolist():
            if info.filename.startswith("params/"):
                name = info.filename[len("params/"):-len(".npy")]
                arr = np.lib.format.read_array(io.BytesIO(zf.read(info)))
                state[name] = torch.from_numpy(arr.astype(np.float32))
        model.load_state_dict(state)
        opt = None
        if with_optimizer and "optimizer.pt" in zf.namelist():
            opt = torch.load(io.BytesIO(zf.read("optimizer.pt")), weights_only=False)
    model.eval()
    return (model, meta, opt) if with_optimizer else (model, meta)


def param_arrays(model: nn.Module) -> dict:
    """Parameter path -> numpy copy; handy for equality checks."""
    return {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}
