"""Frozen latent autoencoder and the SFT-modulated noise-prediction U-Net.

The U-Net is time-conditional; every encoder/decoder residual block accepts
an SFT (gamma, beta) pair for its scale, and text embeddings enter through
one cross-attention layer at the bottleneck (training only; inference uses
a registered null embedding).
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .conditioning import MultiScaleFeatures, _num_groups, sft_modulate, sinusoidal_embedding


@dataclass
class DenoiserConfig:
    depth: int = 3
    base_channels: int = 32
    channel_mults: tuple[int, ...] = (1, 2, 2)
    latent_mode: str = "identity"    # "identity" (pixel space) or "learned"
    latent_channels: int = 3
    ae_down: int = 1
    ae_base_channels: int = 32
    temb_dim: int = 128
    text_len: int = 16
    text_dim: int = 64

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if len(self.channel_mults) != self.depth:
            raise ValueError("channel_mults length must equal depth")
        if self.latent_mode == "identity":
            # Pixel-space diffusion: latent grid is the image grid.
            self.latent_channels = 3
            self.ae_down = 1
        elif self.latent_mode != "learned":
            raise ValueError(f"unknown latent_mode {self.latent_mode!r}")

    @property
    def scale_channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels * m for m in self.channel_mults)


# ---------------------------------------------------------------------------
# latent autoencoders (frozen during SR training)
# ---------------------------------------------------------------------------

class IdentityAutoencoder(nn.Module):
    """Pixel-space stand-in: z = x, parameter-free."""

    down = 1
    latent_channels = 3

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return x

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return z.clamp(0.0, 1.0)


class ConvAutoencoder(nn.Module):
    """Small convolutional autoencoder with tanh-bounded latents.

    Pre-trained on the target corpus, then frozen for SR training.
    """

    def __init__(self, down: int = 2, base_channels: int = 32, latent_channels: int = 4):
        super().__init__()
        if down < 2 or down & (down - 1):
            raise ValueError(f"down must be a power of two >= 2, got {down}")
        self.down = down
        self.latent_channels = latent_channels
        n_halvings = down.bit_length() - 1

        enc = [nn.Conv2d(3, base_channels, 3, padding=1), nn.SiLU()]
        for _ in range(n_halvings):
            enc += [nn.Conv2d(base_channels, base_channels, 3, stride=2, padding=1), nn.SiLU()]
        enc += [nn.Conv2d(base_channels, latent_channels, 3, padding=1), nn.Tanh()]
        self.encoder = nn.Sequential(*enc)

        dec = [nn.Conv2d(latent_channels, base_channels, 3, padding=1), nn.SiLU()]
        for _ in range(n_halvings):
            dec += [nn.Upsample(scale_factor=2, mode="nearest"),
                    nn.Conv2d(base_channels, base_channels, 3, padding=1), nn.SiLU()]
        dec += [nn.Conv2d(base_channels, 3, 3, padding=1), nn.Sigmoid()]
        self.decoder = nn.Sequential(*dec)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return self.decoder(z)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(x))


def _to_batched_chw(x: np.ndarray, dtype: torch.dtype) -> torch.Tensor:
    arr = torch.as_tensor(np.asarray(x, dtype=np.float32), dtype=dtype)
    if arr.ndim == 3:
        arr = arr[None]
    return arr.permute(0, 3, 1, 2).contiguous()


def encode_latent(x: np.ndarray, ae: nn.Module) -> torch.Tensor:
    """Image (H, W, 3) in [0,1] -> latent (C, h, w); frozen, deterministic."""
    if x.ndim != 3 or x.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got shape {x.shape}")
    if x.shape[0] % ae.down or x.shape[1] % ae.down:
        raise ValueError(f"image dims {x.shape[:2]} not divisible by autoencoder factor {ae.down}")
    with torch.no_grad():
        return ae.encode(_to_batched_chw(x, torch.float32))[0]


def decode_latent(z: torch.Tensor, ae: nn.Module) -> np.ndarray:
    """Latent (C, h, w) -> image (H, W, 3) clamped to [0,1]."""
    if z.ndim != 3:
        raise ValueError(f"expected C x h x w latent, got shape {tuple(z.shape)}")
    with torch.no_grad():
        img = ae.decode(z[None]).clamp(0.0, 1.0)[0]
    return img.detach().cpu().permute(1, 2, 0).numpy().astype(np.float32)


# ---------------------------------------------------------------------------
# denoiser building blocks
# ---------------------------------------------------------------------------

class ResidualBlock(nn.Module):
    """GN/SiLU/conv residual block; timestep embedding added after the first
    conv and SFT modulation applied to the same intermediate features."""

    def __init__(self, cin: int, cout: int, temb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_num_groups(cin), cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.temb_proj = nn.Linear(temb_dim, cout)
        self.norm2 = nn.GroupNorm(_num_groups(cout), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor,
                sft: tuple[torch.Tensor, torch.Tensor] | None = None) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb_proj(temb)[:, :, None, None]
        if sft is not None:
            h = sft_modulate(h, sft[0], sft[1])
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class CrossAttention(nn.Module):
    """Single-head cross-attention from spatial features to a text sequence;
    zero-initialized output projection makes it a no-op at init."""

    def __init__(self, channels: int, ctx_dim: int):
        super().__init__()
        self.scale = channels ** -0.5
        self.norm = nn.GroupNorm(_num_groups(channels), channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(ctx_dim, channels, bias=False)
        self.to_v = nn.Linear(ctx_dim, channels, bias=False)
        self.to_out = nn.Linear(channels, channels)
        nn.init.zeros_(self.to_out.weight)
        nn.init.zeros_(self.to_out.bias)

    def forward(self, x: torch.Tensor, ctx: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        q = self.to_q(self.norm(x).flatten(2).transpose(1, 2))   # (B, hw, C)
        k = self.to_k(ctx)
        v = self.to_v(ctx)
        attn = torch.softmax(q @ k.transpose(1, 2) * self.scale, dim=-1)
        out = self.to_out(attn @ v).transpose(1, 2).reshape(b, c, h, w)
        return x + out


class UNetDenoiser(nn.Module):
    """Noise-prediction U-Net with per-scale SFT hooks.

    forward(z_t, t, cond, text): ``cond`` is a MultiScaleFeatures with one
    (gamma, beta) pair per scale or None (unconditioned pass); ``text`` is a
    (B, L, D) embedding batch or None, in which case the registered null
    embedding feeds the attention.
    """

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        chans = cfg.scale_channels
        temb = cfg.temb_dim
        self.time_mlp = nn.Sequential(
            nn.Linear(temb, temb), nn.SiLU(), nn.Linear(temb, temb),
        )
        self.stem = nn.Conv2d(cfg.latent_channels, chans[0], 3, padding=1)

        self.enc_blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        prev = chans[0]
        for i, ch in enumerate(chans):
            self.enc_blocks.append(ResidualBlock(prev, ch, temb))
            if i < len(chans) - 1:
                self.downs.append(nn.Conv2d(ch, chans[i + 1], 3, stride=2, padding=1))
                prev = chans[i + 1]
            else:
                prev = ch

        self.mid_block1 = ResidualBlock(chans[-1], chans[-1], temb)
        self.text_attn = CrossAttention(chans[-1], cfg.text_dim)
        self.mid_block2 = ResidualBlock(chans[-1], chans[-1], temb)
        self.register_buffer("null_text", torch.zeros(cfg.text_len, cfg.text_dim))

        self.ups = nn.ModuleList()
        self.dec_blocks = nn.ModuleList()
        for i in reversed(range(len(chans))):
            src = chans[i + 1] if i + 1 < len(chans) else chans[-1]
            self.ups.append(nn.Conv2d(src, chans[i], 3, padding=1))
            self.dec_blocks.append(ResidualBlock(chans[i] * 2, chans[i], temb))

        self.out_norm = nn.GroupNorm(_num_groups(chans[0]), chans[0])
        self.out_conv = nn.Conv2d(chans[0], cfg.latent_channels, 3, padding=1)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    def forward(self, z_t: torch.Tensor, t: torch.Tensor,
                cond: MultiScaleFeatures | None = None,
                text: torch.Tensor | None = None) -> torch.Tensor:
        depth = self.cfg.depth
        if cond is not None and len(cond) != depth:
            raise ValueError(f"conditioning has {len(cond)} scales, denoiser depth is {depth}")
        t = torch.as_tensor(t, dtype=torch.long, device=z_t.device).reshape(-1)
        if t.numel() == 1 and z_t.shape[0] > 1:
            t = t.expand(z_t.shape[0])
        temb = self.time_mlp(sinusoidal_embedding(t, self.cfg.temb_dim).to(z_t.dtype))
        if text is None:
            text = self.null_text[None].expand(z_t.shape[0], -1, -1).to(z_t.dtype)

        h = self.stem(z_t)
        skips = []
        for i, block in enumerate(self.enc_blocks):
            h = block(h, temb, cond[i] if cond is not None else None)
            skips.append(h)
            if i < len(self.downs):
                h = self.downs[i](h)

        h = self.mid_block1(h, temb)
        h = self.text_attn(h, text)
        h = self.mid_block2(h, temb)

        for j, (up, block) in enumerate(zip(self.ups, self.dec_blocks)):
            i = depth - 1 - j
            if i < depth - 1:
                h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = up(h)
            h = block(torch.cat([h, skips[i]], dim=1), temb, cond[i] if cond is not None else None)

        return self.out_conv(F.silu(self.out_norm(h)))
