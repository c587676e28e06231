"""Training samples, losses, the adversarial update and gradient verification."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .audio_features import MfccConfig, MfccHeatmap, mfcc_at
from .errors import SamplingError, ShapeError, TrainingError
from .media_io import VideoClip, crop_resize, detect_face, mask_lower_half
from .model import LipGAN, audio_to_tensor, faces_to_tensor, save_checkpoint, tensor_to_faces

log = logging.getLogger(__name__)

GENERATED, SYNCED, UNSYNCED = "generated", "synced", "unsynced"
SAMPLE_KINDS = (GENERATED, SYNCED, UNSYNCED)


@dataclass(frozen=True)
class LossConfig:
    margin: float = 2.0
    adv_weight: float = 1.0
    recon_weight: float = 1.0

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.adv_weight < 0 or self.recon_weight < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-3
    betas: tuple = (0.9, 0.999)
    epochs: int = 1
    steps: int | None = None
    seed: int = 0
    use_discriminator: bool = True
    exclusion_ms: float = 500.0
    log_every: int = 50
    checkpoint_every: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


# Full-size regime for real footage; the toy runs use the defaults above.
LARGE_SCALE_TRAIN_CONFIG = TrainConfig(batch_size=512, learning_rate=1e-3, epochs=20)

# Toy runs: the sync loss is per sample while L1 is averaged over pixels, so the
# adversarial term gets a small weight to keep it from swamping reconstruction.
TOY_LOSS_CONFIG = LossConfig(adv_weight=0.001)


@dataclass
class TrainingTuple:
    S: np.ndarray
    S_m: np.ndarray
    S_prime: np.ndarray
    A: MfccHeatmap
    s_index: int = -1
    s_prime_index: int = -1


@dataclass
class SyncSample:
    face: np.ndarray
    audio: np.ndarray
    y: int
    kind: str = ""


@dataclass
class LossReport:
    step: int
    L_Re: float
    L_real: float = float("nan")
    L_fake: float = float("nan")
    L_a: float = float("nan")
    d_loss: float = float("nan")
    g_adv: float = float("nan")
    g_loss: float = float("nan")


# --- samples -------------------------------------------------------------------


class PreparedClip:
    """A clip with every frame's face crop cached as uint8, ready for repeated sampling."""

    def __init__(self, clip: VideoClip, size: int = 96, detector=None, crops: np.ndarray | None = None):
        if clip.audio is None:
            raise SamplingError("training clips need an audio track")
        self.fps = clip.fps
        self.audio = clip.audio
        self.size = size
        self.times_ms = clip.frame_times_ms
        if crops is None:
            crops = np.stack([
                np.round(crop_resize(f, detect_face(f, detector), size) * 255.0).astype(np.uint8)
                for f in clip.frames
            ])
        self.crops = crops

    def __len__(self):
        return len(self.crops)

    def crop(self, i: int) -> np.ndarray:
        return self.crops[i].astype(np.float32) / 255.0


def prepare_clip(clip: VideoClip, size: int = 96, detector=None) -> PreparedClip:
    return PreparedClip(clip, size, detector)


def sample_tuple(clip, rng: np.random.Generator, size: int = 96, detector=None,
                 exclusion_ms: float = 500.0, mfcc_cfg: MfccConfig | None = None) -> TrainingTuple:
    """Draw (S, S_m, S', A): S uniform over frames, A the 350 ms window centred on S,
    S' uniform over frames at least ``exclusion_ms`` away from S."""
    n = len(clip.frames) if isinstance(clip, VideoClip) else len(clip)
    fps = clip.fps
    if n < math.ceil(0.35 * fps) + 2:
        raise SamplingError(f"clip has {n} frames; need at least {math.ceil(0.35 * fps) + 2}")
    if clip.audio is None:
        raise SamplingError("clip has no audio")
    times = np.arange(n) * 1000.0 / fps
    far = np.abs(times[:, None] - times[None, :]) >= exclusion_ms
    candidates = np.flatnonzero(far.any(axis=1))
    if len(candidates) == 0:
        raise SamplingError(f"no frame pair is {exclusion_ms} ms apart in a {n}-frame clip")
    i = int(rng.choice(candidates))
    j = int(rng.choice(np.flatnonzero(far[i])))

    if isinstance(clip, PreparedClip):
        s, s_prime = clip.crop(i), clip.crop(j)
    else:
        fi, fj = clip.frames[i], clip.frames[j]
        s = crop_resize(fi, detect_face(fi, detector), size)
        s_prime = crop_resize(fj, detect_face(fj, detector), size)
    a = mfcc_at(clip.audio, times[i], cfg=mfcc_cfg)
    return TrainingTuple(s, mask_lower_half(s), s_prime, a, i, j)


def sample_batch(clips: Sequence, batch_size: int, rng: np.random.Generator, **kwargs) -> list:
    picks = rng.integers(0, len(clips), size=batch_size)
    return [sample_tuple(clips[k], rng, **kwargs) for k in picks]


def tuples_to_tensors(tuples: Sequence[TrainingTuple], dtype=torch.float32):
    S = faces_to_tensor(np.stack([t.S for t in tuples]), dtype)
    S_m = faces_to_tensor(np.stack([t.S_m for t in tuples]), dtype)
    S_prime = faces_to_tensor(np.stack([t.S_prime for t in tuples]), dtype)
    A = audio_to_tensor(np.stack([t.A.values for t in tuples]), dtype)
    return S, S_m, S_prime, A


def generator_input(identity: torch.Tensor, masked: torch.Tensor) -> torch.Tensor:
    return torch.cat([identity, masked], dim=1)


# --- losses ----------------------------------------------------------------------


def _as_tensor(x, dtype=torch.float64):
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=dtype)


def contrastive_loss(d, y, margin: float = 2.0) -> torch.Tensor:
    """(1/2N) sum_i [ y_i d_i^2 + (1 - y_i) max(0, m - d_i)^2 ]."""
    d = _as_tensor(d).reshape(-1)
    y = _as_tensor(y, d.dtype).reshape(-1).to(d.dtype)
    if d.shape != y.shape:
        raise ShapeError(f"distance/label length mismatch: {d.numel()} vs {y.numel()}")
    if d.numel() == 0:
        raise ShapeError("contrastive loss of an empty batch")
    if bool((d < 0).any()):
        raise ValueError("distances must be non-negative")
    hinge = torch.clamp(margin - d, min=0.0)
    return (y * d ** 2 + (1.0 - y) * hinge ** 2).sum() / (2.0 * d.numel())


def reconstruction_loss(s_hat, s) -> torch.Tensor:
    """Mean absolute pixel difference over the batch."""
    s_hat, s = _as_tensor(s_hat), _as_tensor(s)
    if s_hat.shape != s.shape:
        raise ShapeError(f"shape mismatch: {tuple(s_hat.shape)} vs {tuple(s.shape)}")
    return (s_hat - s.to(s_hat.dtype)).abs().mean()


@dataclass
class SyncBatch:
    """Discriminator batch of the three sample kinds; indexable as SyncSample items."""

    faces: torch.Tensor  # (3B, 3, H, H)
    audio: torch.Tensor  # (3B, 1, M, T)
    y: torch.Tensor  # (3B,)
    kinds: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.kinds)

    def __getitem__(self, i) -> SyncSample:
        face = self.faces[i].detach().cpu().numpy().transpose(1, 2, 0)
        audio = self.audio[i].detach().cpu().numpy().transpose(1, 2, 0)
        return SyncSample(face, audio, int(self.y[i]), str(self.kinds[i]))

    def mask(self, *kinds) -> torch.Tensor:
        return torch.from_numpy(np.isin(self.kinds, kinds))


def build_discriminator_batch(tuples: Sequence[TrainingTuple], generated, rng: np.random.Generator | None = None,
                              dtype=torch.float32) -> SyncBatch:
    """Three samples per tuple: (G(.), A) y=1, (S, A) y=0, (S', A) y=1, shuffled by ``rng``."""
    if generated is None:
        raise ValueError("generated faces are required for every tuple")
    gen = faces_to_tensor(generated if isinstance(generated, torch.Tensor) else np.stack(generated), dtype)
    if len(gen) != len(tuples):
        raise ShapeError(f"{len(gen)} generated faces for {len(tuples)} tuples")
    S, _, S_prime, A = tuples_to_tensors(tuples, gen.dtype)
    b = len(tuples)
    faces = torch.cat([gen.detach(), S, S_prime])
    audio = torch.cat([A, A, A])
    y = torch.cat([torch.ones(b), torch.zeros(b), torch.ones(b)]).to(gen.dtype)
    kinds = np.array([GENERATED] * b + [SYNCED] * b + [UNSYNCED] * b)
    if rng is not None:
        perm = rng.permutation(3 * b)
        faces, audio, y, kinds = faces[perm], audio[perm], y[perm], kinds[perm]
    return SyncBatch(faces, audio, y, kinds)


def adversarial_losses(params: LipGAN, batch: SyncBatch, loss_cfg: LossConfig, d: torch.Tensor | None = None):
    """(L_real, L_fake, L_a): real pairs with their labels, generated pairs with y = 1."""
    if d is None:
        d = params.discriminator(batch.faces, batch.audio)
    real = batch.mask(SYNCED, UNSYNCED)
    fake = batch.mask(GENERATED)
    l_real = contrastive_loss(d[real], batch.y[real], loss_cfg.margin)
    l_fake = contrastive_loss(d[fake], torch.ones_like(d[fake]), loss_cfg.margin)
    return l_real, l_fake, l_real + l_fake


def discriminator_objective(d: torch.Tensor, batch: SyncBatch, loss_cfg: LossConfig) -> torch.Tensor:
    """Label-flipped L_a: pulls synced pairs to d = 0 and pushes the rest past the margin."""
    real = batch.mask(SYNCED, UNSYNCED)
    fake = batch.mask(GENERATED)
    return (contrastive_loss(d[real], 1.0 - batch.y[real], loss_cfg.margin)
            + contrastive_loss(d[fake], torch.zeros_like(d[fake]), loss_cfg.margin))


def generator_objective(model: LipGAN, S, S_m, S_prime, A, loss_cfg: LossConfig, use_discriminator=True):
    """adv_weight * L_c(D(G([S'; S_m], A), A), y=1) + recon_weight * L_Re; returns (total, adv, recon, generated)."""
    generated = model.generator(generator_input(S_prime, S_m), A)
    recon = reconstruction_loss(generated, S)
    if use_discriminator and loss_cfg.adv_weight > 0:
        d_fake = model.discriminator(generated, A)
        adv = contrastive_loss(d_fake, torch.ones_like(d_fake), loss_cfg.margin)
    else:
        adv = torch.zeros((), dtype=recon.dtype)
    return loss_cfg.adv_weight * adv + loss_cfg.recon_weight * recon, adv, recon, generated


# --- optimisation ----------------------------------------------------------------


def set_deterministic(seed: int, enabled: bool = True) -> None:
    torch.manual_seed(seed)
    if enabled:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


@dataclass
class OptimizerState:
    generator: torch.optim.Optimizer
    discriminator: torch.optim.Optimizer | None
    step: int = 0

    def state_dict(self) -> dict:
        return {
            "generator": self.generator.state_dict(),
            "discriminator": self.discriminator.state_dict() if self.discriminator else None,
            "step": self.step,
        }

    def load_state_dict(self, state: dict) -> None:
        self.generator.load_state_dict(state["generator"])
        if self.discriminator is not None and state.get("discriminator"):
            self.discriminator.load_state_dict(state["discriminator"])
        self.step = state.get("step", 0)


def make_optimizers(model: LipGAN, cfg: TrainConfig) -> OptimizerState:
    g = torch.optim.Adam(model.generator.parameters(), lr=cfg.learning_rate, betas=tuple(cfg.betas))
    d = torch.optim.Adam(model.discriminator.parameters(), lr=cfg.learning_rate, betas=tuple(cfg.betas))
    return OptimizerState(g, d if cfg.use_discriminator else None)


def train_step(model: LipGAN, tuples: Sequence[TrainingTuple], opt: OptimizerState, cfg: TrainConfig,
               loss_cfg: LossConfig, rng: np.random.Generator | None = None):
    """One discriminator update followed by one generator update.

    Returns ``(model, opt, LossReport)``; the model and optimizers are updated in place.
    """
    dtype = next(model.parameters()).dtype
    S, S_m, S_prime, A = tuples_to_tensors(tuples, dtype)
    report = LossReport(step=opt.step, L_Re=float("nan"))
    use_d = cfg.use_discriminator and opt.discriminator is not None

    with torch.no_grad():
        generated = model.generator(generator_input(S_prime, S_m), A)

    if use_d:
        batch = build_discriminator_batch(tuples, generated, rng, dtype)
        d = model.discriminator(batch.faces, batch.audio)
        l_real, l_fake, l_a = adversarial_losses(model, batch, loss_cfg, d=d)
        d_loss = discriminator_objective(d, batch, loss_cfg)
        opt.discriminator.zero_grad(set_to_none=True)
        d_loss.backward()
        opt.discriminator.step()
        report.L_real, report.L_fake, report.L_a = l_real.item(), l_fake.item(), l_a.item()
        report.d_loss = d_loss.item()

    g_loss, adv, recon, _ = generator_objective(model, S, S_m, S_prime, A, loss_cfg, use_d)
    opt.generator.zero_grad(set_to_none=True)
    g_loss.backward()
    opt.generator.step()
    if use_d:
        # generator backward also deposits gradients in D; they are stale after this step
        opt.discriminator.zero_grad(set_to_none=True)
    report.L_Re, report.g_adv, report.g_loss = recon.item(), adv.item(), g_loss.item()
    if not math.isfinite(report.g_loss) or (use_d and not math.isfinite(report.d_loss)):
        raise TrainingError(f"non-finite loss at step {report.step}", diagnostics=asdict(report))
    opt.step += 1
    return model, opt, report


LOG_FIELDS = ("step", "L_Re", "L_real", "L_fake", "L_a")


def steps_for(cfg: TrainConfig, clips: Sequence) -> int:
    if cfg.steps is not None:
        return cfg.steps
    frames = sum(len(c) if not isinstance(c, VideoClip) else len(c.frames) for c in clips)
    return cfg.epochs * max(1, math.ceil(frames / cfg.batch_size))


def train(model: LipGAN, clips: Sequence, cfg: TrainConfig, loss_cfg: LossConfig = LossConfig(),
          log_path=None, checkpoint_dir=None, opt: OptimizerState | None = None,
          callback: Callable[[LossReport], None] | None = None, **sample_kwargs) -> list:
    """Run the adversarial loop; batch ``k`` is drawn from ``default_rng([seed, k])``."""
    set_deterministic(cfg.seed, cfg.deterministic)
    opt = opt or make_optimizers(model, cfg)
    sample_kwargs.setdefault("size", model.cfg.face_size)
    sample_kwargs.setdefault("exclusion_ms", cfg.exclusion_ms)
    total = steps_for(cfg, clips)
    reports = []
    writer = fh = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(LOG_FIELDS)
    try:
        model.train()
        while opt.step < total:
            rng = np.random.default_rng([cfg.seed, opt.step])
            tuples = sample_batch(clips, cfg.batch_size, rng, **sample_kwargs)
            _, _, report = train_step(model, tuples, opt, cfg, loss_cfg, rng)
            reports.append(report)
            if writer is not None:
                writer.writerow([getattr(report, k) for k in LOG_FIELDS])
            if cfg.log_every and report.step % cfg.log_every == 0:
                log.info("step %d L_Re %.4f L_a %.4f d_loss %.4f", report.step, report.L_Re, report.L_a,
                         report.d_loss)
            if callback is not None:
                callback(report)
            if checkpoint_dir and cfg.checkpoint_every and opt.step % cfg.checkpoint_every == 0:
                save_checkpoint(model, Path(checkpoint_dir) / f"step_{opt.step:07d}.ckpt", opt.step, cfg.seed,
                                optimizer_state=opt.state_dict())
    finally:
        if fh is not None:
            fh.close()
        model.eval()
    if checkpoint_dir:
        save_checkpoint(model, Path(checkpoint_dir) / "final.ckpt", opt.step, cfg.seed,
                        optimizer_state=opt.state_dict())
    return reports


# --- gradient verification --------------------------------------------------------


def finite_difference_check(loss: Callable[[torch.nn.Module], torch.Tensor], params: torch.nn.Module,
                            eps: float = 1e-4, n_coords: int = 64, seed: int = 0,
                            abs_floor: float = 1e-6) -> float:
    """Max relative error between autograd and central differences on random coordinates.

    The relative error is ``|g_fd - g_ad| / max(|g_fd|, |g_ad|, abs_floor * max(1, |L|))``.
    Central differences carry roundoff of about ulp(L) / eps, so the floor scales with
    the loss value. ``params`` must hold float64 parameters.
    """
    tensors = [p for p in params.parameters() if p.requires_grad]
    if any(p.dtype != torch.float64 for p in tensors):
        raise ValueError("finite_difference_check needs double-precision parameters")
    for p in tensors:
        p.grad = None
    value = loss(params)
    value.backward()
    floor = abs_floor * max(1.0, abs(value.item()))
    grads = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in tensors]
    sizes = np.array([p.numel() for p in tensors])
    rng = np.random.default_rng(seed)
    flat = rng.choice(sizes.sum(), size=min(n_coords, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    with torch.no_grad():
        for idx in flat:
            k = int(np.searchsorted(offsets, idx, side="right") - 1)
            p, j = tensors[k].view(-1), int(idx - offsets[k])
            original = p[j].item()
            p[j] = original + eps
            plus = loss(params).item()
            p[j] = original - eps
            minus = loss(params).item()
            p[j] = original
            numeric = (plus - minus) / (2 * eps)
            analytic = grads[k].view(-1)[j].item()
            err = abs(numeric - analytic) / max(abs(numeric), abs(analytic), floor)
            worst = max(worst, err)
    return worst


# --- convenience --------------------------------------------------------------------


def generate_faces(model: LipGAN, identity: np.ndarray, pose: np.ndarray, audio: np.ndarray,
                   batch_size: int = 64) -> np.ndarray:
    """Batched generator forward on numpy inputs: (B,H,H,3) x2 + (B,M,T,1) -> (B,H,H,3)."""
    dtype = next(model.parameters()).dtype
    out = []
    with torch.no_grad():
        for s in range(0, len(identity), batch_size):
            x = generator_input(faces_to_tensor(identity[s:s + batch_size], dtype),
                                faces_to_tensor(mask_lower_half(pose[s:s + batch_size]), dtype))
            out.append(tensor_to_faces(model.generator(x, audio_to_tensor(audio[s:s + batch_size], dtype))))
    return np.concatenate(out)
