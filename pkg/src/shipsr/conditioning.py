"""Class- and time-aware conditioning.

A condition vector b = concat(class part, time part) is built from category
probabilities and the timestep, then a U-Net-encoder-shaped network maps
(b, LR latent) to per-scale SFT (gamma, beta) pairs that modulate the
denoiser's residual-block features.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sin/cos position embedding of timesteps, shape (B, dim)."""
    if dim % 2:
        raise ValueError(f"embedding dim must be even, got {dim}")
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    freqs = freqs.to(device=t.device)
    args = t[:, None].to(torch.float64) * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    return emb


def _num_groups(channels: int) -> int:
    for g in (8, 4, 2):
        if channels % g == 0:
            return g
    return 1


def sft_modulate(feat: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    """Spatial feature transform: gamma * feat + beta, elementwise."""
    if gamma.shape != beta.shape:
        raise ValueError(f"gamma shape {tuple(gamma.shape)} != beta shape {tuple(beta.shape)}")
    try:
        return gamma * feat + beta
    except RuntimeError as exc:
        raise ValueError(
            f"feature shape {tuple(feat.shape)} not broadcastable with "
            f"modulation shape {tuple(gamma.shape)}"
        ) from exc


@dataclass
class MultiScaleFeatures:
    """Per-denoiser-scale SFT pairs; scale s halves the spatial dims s times."""

    pairs: list[tuple[torch.Tensor, torch.Tensor]]

    def __len__(self) -> int:
        return len(self.pairs)

    def __getitem__(self, i: int) -> tuple[torch.Tensor, torch.Tensor]:
        return self.pairs[i]


class ConditionEmbedder(nn.Module):
    """Builds b = concat(probability-weighted class embedding, mapped
    sinusoidal timestep embedding)."""

    def __init__(self, num_classes: int, class_dim: int, time_dim: int, max_timestep: int):
        super().__init__()
        self.num_classes = num_classes
        self.class_dim = class_dim
        self.time_dim = time_dim
        self.max_timestep = max_timestep
        self.class_table = nn.Parameter(torch.randn(num_classes, class_dim) * 0.02)
        self.time_map = nn.Sequential(
            nn.Linear(time_dim, time_dim),
            nn.SiLU(),
            nn.Linear(time_dim, time_dim),
        )

    @property
    def dim(self) -> int:
        return self.class_dim + self.time_dim

    def forward(self, class_probs: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        if class_probs.ndim != 2 or class_probs.shape[1] != self.num_classes:
            raise ValueError(
                f"class_probs must be (B, {self.num_classes}), got {tuple(class_probs.shape)}"
            )
        sums = class_probs.sum(dim=1)
        if not torch.isfinite(class_probs).all() or (sums - 1.0).abs().max() > 1e-5:
            raise ValueError("class probabilities must be finite and sum to 1 within 1e-5")
        t = torch.as_tensor(t, dtype=torch.long, device=class_probs.device).reshape(-1)
        if ((t < 0) | (t >= self.max_timestep)).any():
            raise ValueError(f"timesteps must lie in [0, {self.max_timestep})")
        class_part = class_probs @ self.class_table
        sin = sinusoidal_embedding(t, self.time_dim).to(self.class_table.dtype)
        time_part = self.time_map(sin)
        return torch.cat([class_part, time_part], dim=-1)


def build_condition_vector(class_probs: torch.Tensor, t, embedder: ConditionEmbedder) -> torch.Tensor:
    return embedder(class_probs, t)


class _EncoderBlock(nn.Module):
    """Residual conv block with the condition vector added after projection."""

    def __init__(self, cin: int, cout: int, cond_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_num_groups(cin), cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.cond_proj = nn.Linear(cond_dim, cout)
        self.norm2 = nn.GroupNorm(_num_groups(cout), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.cond_proj(b)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class ClassTimeEncoder(nn.Module):
    """Maps (condition vector, LR latent) to per-scale SFT pairs.

    Mirrors the denoiser encoder: one residual block per scale with the
    condition vector injected at every scale, stride-2 downsampling between
    scales. The (gamma, beta) heads are zero-initialized so training starts
    from identity modulation (``head_init="random"`` for sensitivity probes).
    """

    def __init__(self, latent_channels: int, scale_channels: tuple[int, ...],
                 cond_dim: int, head_init: str = "zero"):
        super().__init__()
        if len(scale_channels) < 1:
            raise ValueError("need at least one scale")
        if head_init not in ("zero", "random"):
            raise ValueError(f"unknown head_init {head_init!r}")
        self.scale_channels = tuple(scale_channels)
        self.stem = nn.Conv2d(latent_channels, scale_channels[0], 3, padding=1)
        self.blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        self.gamma_heads = nn.ModuleList()
        self.beta_heads = nn.ModuleList()
        prev = scale_channels[0]
        for i, ch in enumerate(scale_channels):
            self.blocks.append(_EncoderBlock(prev, ch, cond_dim))
            gamma = nn.Conv2d(ch, ch, 3, padding=1)
            beta = nn.Conv2d(ch, ch, 3, padding=1)
            if head_init == "zero":
                nn.init.zeros_(gamma.weight)
                nn.init.zeros_(gamma.bias)
                nn.init.zeros_(beta.weight)
                nn.init.zeros_(beta.bias)
            self.gamma_heads.append(gamma)
            self.beta_heads.append(beta)
            if i < len(scale_channels) - 1:
                self.downs.append(nn.Conv2d(ch, scale_channels[i + 1], 3, stride=2, padding=1))
            prev = scale_channels[i + 1] if i < len(scale_channels) - 1 else ch

    def forward(self, b: torch.Tensor, z_lr: torch.Tensor) -> MultiScaleFeatures:
        pairs = []
        h = self.stem(z_lr)
        for i, block in enumerate(self.blocks):
            h = block(h, b)
            gamma = 1.0 + self.gamma_heads[i](h)
            beta = self.beta_heads[i](h)
            pairs.append((gamma, beta))
            if i < len(self.downs):
                h = self.downs[i](h)
        return MultiScaleFeatures(pairs)


def encode_conditions(b: torch.Tensor, z_lr: torch.Tensor, encoder: ClassTimeEncoder) -> MultiScaleFeatures:
    return encoder(b, z_lr)
