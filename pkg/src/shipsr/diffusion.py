"""Noise schedules, forward noising, the epsilon-matching objective, and
reverse-process sampling.

Timestep indices run over [0, T). Samplers may additionally target the
fully-denoised boundary ``t_prev = -1`` where the cumulative signal
coefficient is exactly 1, i.e. the step returns the current x0 estimate.
"""

from dataclasses import dataclass, field

import numpy as np
import torch

from .degradation import bicubic_upsample
from .seeding import derive_seed


@dataclass
class NoiseSchedule:
    betas: np.ndarray
    alpha_bars: np.ndarray = field(init=False)
    snr: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty 1-D array")
        if not ((betas > 0) & (betas < 1)).all():
            raise ValueError("betas must lie in (0, 1)")
        self.betas = betas
        self.alpha_bars = np.cumprod(1.0 - betas)
        if not ((self.alpha_bars > 0) & (self.alpha_bars < 1)).all():
            raise ValueError("cumulative alpha products left (0, 1); schedule too aggressive")
        self.snr = self.alpha_bars / (1.0 - self.alpha_bars)

    @property
    def T(self) -> int:
        return int(self.betas.size)


def make_schedule(kind: str, T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Build a noise schedule. ``linear`` interpolates betas between the
    given bounds; ``cosine`` derives betas from the squared-cosine signal
    curve (bounds ignored)."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if kind == "linear":
        if not 0 < beta_start <= beta_end < 1:
            raise ValueError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    elif kind == "cosine":
        s = 0.008
        steps = np.arange(T + 1, dtype=np.float64) / T
        f = np.cos((steps + s) / (1 + s) * np.pi / 2.0) ** 2
        alpha_bars = f / f[0]
        betas = np.clip(1.0 - alpha_bars[1:] / alpha_bars[:-1], 1e-8, 0.999)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(betas=betas)


def snr_at(s: NoiseSchedule, t: int) -> float:
    """Signal-to-noise ratio alpha_bar / (1 - alpha_bar) at timestep t."""
    if not 0 <= t < s.T:
        raise IndexError(f"timestep {t} out of range [0, {s.T})")
    return float(s.snr[t])


def _gather(values: np.ndarray, t, like: torch.Tensor) -> torch.Tensor:
    """Alpha-bar lookup broadcast against a (B, ...) tensor."""
    vt = torch.as_tensor(values, dtype=like.dtype, device=like.device)
    if isinstance(t, int) or (torch.is_tensor(t) and t.ndim == 0):
        return vt[int(t)]
    t = torch.as_tensor(t, dtype=torch.long, device=like.device)
    out = vt[t]
    return out.view(-1, *([1] * (like.ndim - 1)))


def q_sample(z0: torch.Tensor, t, eps: torch.Tensor, s: NoiseSchedule) -> torch.Tensor:
    """Forward noising: sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps."""
    if z0.shape != eps.shape:
        raise ValueError(f"z0 shape {tuple(z0.shape)} != eps shape {tuple(eps.shape)}")
    a = _gather(s.alpha_bars, t, z0)
    return a.sqrt() * z0 + (1.0 - a).sqrt() * eps


@dataclass
class DiffusionBatch:
    """One training batch: clean target latents plus everything the
    conditional objective needs to rebuild the condition vector."""

    z0: torch.Tensor                 # (B, C, H, W) target latents, diffusion space
    t: torch.Tensor                  # (B,) long
    eps: torch.Tensor                # (B, C, H, W) standard normal
    class_probs: torch.Tensor        # (B, K)
    lr_latent: torch.Tensor          # (B, C, H, W) LR-conditioning latents
    text: torch.Tensor | None = None  # (B, L, D) embeddings, training only


def training_loss(batch: DiffusionBatch, nets) -> torch.Tensor:
    """Mean squared error between injected and predicted noise."""
    z_t = q_sample(batch.z0, batch.t, batch.eps, nets.schedule)
    cond = nets.encode_conditions(batch.class_probs, batch.t, batch.lr_latent)
    eps_hat = nets.predict_eps(z_t, batch.t, cond, batch.text)
    loss = ((batch.eps - eps_hat) ** 2).mean()
    if not torch.isfinite(loss):
        raise RuntimeError(
            "non-finite training loss "
            f"(z_t mean {z_t.mean().item():.3g}, eps_hat mean {eps_hat.mean().item():.3g})"
        )
    return loss


def ddim_step(z_t: torch.Tensor, eps_hat: torch.Tensor, t: int, t_prev: int,
              s: NoiseSchedule, eta: float = 0.0,
              generator: torch.Generator | None = None) -> torch.Tensor:
    """One deterministic-or-stochastic reverse step from t to t_prev.

    ``t_prev = -1`` is the fully-denoised boundary (alpha_bar treated as 1),
    at which the step returns the x0 estimate exactly.
    """
    if not 0 <= t < s.T:
        raise IndexError(f"timestep {t} out of range [0, {s.T})")
    if t_prev >= t:
        raise ValueError(f"t_prev ({t_prev}) must be < t ({t})")
    if t_prev < -1:
        raise ValueError(f"t_prev must be >= -1, got {t_prev}")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must be in [0, 1], got {eta}")

    a_t = float(s.alpha_bars[t])
    a_p = 1.0 if t_prev < 0 else float(s.alpha_bars[t_prev])
    x0 = (z_t - (1.0 - a_t) ** 0.5 * eps_hat) / a_t ** 0.5
    sigma = eta * ((1.0 - a_p) / (1.0 - a_t)) ** 0.5 * max(1.0 - a_t / a_p, 0.0) ** 0.5
    z_prev = a_p ** 0.5 * x0 + max(1.0 - a_p - sigma**2, 0.0) ** 0.5 * eps_hat
    if sigma > 0:
        noise = torch.randn(z_t.shape, generator=generator, dtype=z_t.dtype, device=z_t.device)
        z_prev = z_prev + sigma * noise
    return z_prev


def sample_timesteps(T: int, steps: int) -> list[int]:
    """Descending, deduplicated subset of [0, T) with ``steps`` entries max."""
    ts = np.unique(np.linspace(0, T - 1, steps).round().astype(int))[::-1]
    return [int(t) for t in ts]


def sample(lr: np.ndarray, nets, steps: int = 50, eta: float = 0.0, seed: int = 0,
           class_probs: np.ndarray | None = None) -> np.ndarray:
    """Super-resolve one LR image: classify, condition, run the reverse chain.

    Deterministic given (seed, eta=0). Returns an HR image in [0, 1] at
    ``nets.factor`` times the LR resolution.
    """
    out = sample_batch(lr[None], nets, steps=steps, eta=eta, seed=seed,
                       class_probs=None if class_probs is None else np.asarray(class_probs)[None])
    return out[0]


def sample_batch(lrs: np.ndarray, nets, steps: int = 50, eta: float = 0.0, seed: int = 0,
                 class_probs: np.ndarray | None = None) -> np.ndarray:
    """Batched reverse-process sampling; per-image seeds derive from ``seed``."""
    s = nets.schedule
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if steps > s.T:
        raise ValueError(f"steps ({steps}) exceed schedule length ({s.T})")
    lrs = np.asarray(lrs, dtype=np.float32)
    if lrs.ndim != 4 or lrs.shape[3] != 3:
        raise ValueError(f"expected N x h x w x 3 LR batch, got shape {lrs.shape}")

    n = lrs.shape[0]
    factor = nets.factor
    if class_probs is None:
        probs = np.stack([nets.classify(lrs[i]) for i in range(n)])
    else:
        probs = np.asarray(class_probs, dtype=np.float32)
        if probs.shape[0] != n:
            raise ValueError("class_probs batch size mismatch")

    refs = np.stack([bicubic_upsample(lrs[i], factor) for i in range(n)])
    device = nets.device
    z_lr = nets.encode_for_diffusion(refs).to(device)
    probs_t = torch.as_tensor(probs, dtype=z_lr.dtype, device=device)

    # Per-image initial noise so results do not depend on batch composition.
    z = torch.empty_like(z_lr)
    gens = []
    for i in range(n):
        g = torch.Generator(device="cpu").manual_seed(derive_seed(seed, "sample", i))
        gens.append(g)
        z[i] = torch.randn(z_lr.shape[1:], generator=g, dtype=z_lr.dtype)

    ts = sample_timesteps(s.T, steps)
    clip_x0 = nets.pixel_space_latents
    with torch.no_grad():
        for i, t in enumerate(ts):
            t_prev = ts[i + 1] if i + 1 < len(ts) else -1
            tb = torch.full((n,), t, dtype=torch.long, device=device)
            cond = nets.encode_conditions(probs_t, tb, z_lr)
            eps_hat = nets.predict_eps(z, tb, cond, None)
            if clip_x0:
                # Pixel-space latents live in [-1, 1]; clamping the x0
                # estimate stabilizes early steps without touching ddim_step.
                a_t = float(s.alpha_bars[t])
                x0 = (z - (1.0 - a_t) ** 0.5 * eps_hat) / a_t ** 0.5
                x0 = x0.clamp(-1.0, 1.0)
                eps_hat = (z - a_t ** 0.5 * x0) / (1.0 - a_t) ** 0.5
            if eta > 0 and t_prev >= 0:
                z_next = torch.empty_like(z)
                for j in range(n):
                    z_next[j] = ddim_step(z[j], eps_hat[j], t, t_prev, s, eta, generator=gens[j])
                z = z_next
            else:
                z = ddim_step(z, eps_hat, t, t_prev, s, eta=0.0)

    return nets.decode_from_diffusion(z)
