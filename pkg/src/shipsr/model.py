"""Super-resolution model bundle: frozen autoencoder and text encoder, the
class- and time-aware conditioning path, and the SFT-modulated denoiser.

Only the conditioning path (embedding tables, encoder, SFT heads) and, unless
strict mode is requested, the denoiser are trainable; the autoencoder, text
encoder, and classifier stay frozen throughout SR training.
"""

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn

from . import diffusion
from .checkpoint import load_container, save_container
from .classifier import ClassifierModel, classify_lr
from .conditioning import ClassTimeEncoder, ConditionEmbedder, MultiScaleFeatures
from .denoiser import ConvAutoencoder, DenoiserConfig, IdentityAutoencoder, UNetDenoiser
from .prompts import HashTextEncoder


@dataclass
class ModelConfig:
    factor: int = 8
    num_classes: int = 4
    depth: int = 3
    base_channels: int = 32
    channel_mults: tuple[int, ...] = (1, 2, 2)
    latent_mode: str = "identity"
    latent_channels: int = 3
    ae_down: int = 1
    ae_base_channels: int = 32
    class_dim: int = 64
    time_dim: int = 64
    temb_dim: int = 128
    text_len: int = 16
    text_dim: int = 64
    text_seed: int = 0
    schedule_kind: str = "linear"
    timesteps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.05
    head_init: str = "zero"

    def denoiser_config(self) -> DenoiserConfig:
        return DenoiserConfig(
            depth=self.depth, base_channels=self.base_channels,
            channel_mults=tuple(self.channel_mults), latent_mode=self.latent_mode,
            latent_channels=self.latent_channels, ae_down=self.ae_down,
            ae_base_channels=self.ae_base_channels, temb_dim=self.temb_dim,
            text_len=self.text_len, text_dim=self.text_dim,
        )


class SuperResolutionModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        dcfg = cfg.denoiser_config()
        # __post_init__ may normalize latent fields (identity mode).
        cfg.latent_channels = dcfg.latent_channels
        cfg.ae_down = dcfg.ae_down

        self.schedule = diffusion.make_schedule(
            cfg.schedule_kind, cfg.timesteps, cfg.beta_start, cfg.beta_end)
        if cfg.latent_mode == "identity":
            self.autoencoder = IdentityAutoencoder()
        else:
            self.autoencoder = ConvAutoencoder(
                down=cfg.ae_down, base_channels=cfg.ae_base_channels,
                latent_channels=cfg.latent_channels)
        self.denoiser = UNetDenoiser(dcfg)
        self.cond_embedder = ConditionEmbedder(
            cfg.num_classes, cfg.class_dim, cfg.time_dim, cfg.timesteps)
        self.cond_encoder = ClassTimeEncoder(
            cfg.latent_channels, dcfg.scale_channels,
            self.cond_embedder.dim, head_init=cfg.head_init)
        self.text_encoder = HashTextEncoder(cfg.text_len, cfg.text_dim, cfg.text_seed)
        self.classifier: ClassifierModel | None = None

        self.autoencoder.requires_grad_(False)

    # -- plumbing ----------------------------------------------------------

    @property
    def factor(self) -> int:
        return self.cfg.factor

    @property
    def device(self) -> torch.device:
        return next(self.denoiser.parameters()).device

    @property
    def pixel_space_latents(self) -> bool:
        return self.cfg.latent_mode == "identity"

    def attach_classifier(self, classifier: ClassifierModel) -> None:
        if classifier.num_classes != self.cfg.num_classes:
            raise ValueError(
                f"classifier has {classifier.num_classes} classes, "
                f"model expects {self.cfg.num_classes}")
        self.classifier = classifier

    def classify(self, lr: np.ndarray) -> np.ndarray:
        if self.classifier is None:
            raise ValueError("no classifier attached; cannot derive class evidence at inference")
        return classify_lr(lr, self.classifier)

    # -- latent space ------------------------------------------------------

    def _images_to_chw(self, images: np.ndarray) -> torch.Tensor:
        arr = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32))
        if arr.ndim == 3:
            arr = arr[None]
        return arr.permute(0, 3, 1, 2).contiguous()

    def encode_for_diffusion(self, images: np.ndarray) -> torch.Tensor:
        """Images (N, H, W, 3) in [0,1] -> latents in the diffusion working
        range (identity mode maps [0,1] to [-1,1]; learned latents are
        already tanh-bounded)."""
        with torch.no_grad():
            z = self.autoencoder.encode(self._images_to_chw(images).to(self.device))
        if self.pixel_space_latents:
            z = z * 2.0 - 1.0
        return z

    def decode_from_diffusion(self, z: torch.Tensor) -> np.ndarray:
        if self.pixel_space_latents:
            z = (z + 1.0) / 2.0
        with torch.no_grad():
            imgs = self.autoencoder.decode(z).clamp(0.0, 1.0)
        return imgs.detach().cpu().permute(0, 2, 3, 1).numpy().astype(np.float32)

    # -- conditional denoising ---------------------------------------------

    def encode_conditions(self, class_probs: torch.Tensor, t: torch.Tensor,
                          lr_latent: torch.Tensor) -> MultiScaleFeatures:
        b = self.cond_embedder(class_probs, t)
        return self.cond_encoder(b, lr_latent)

    def predict_eps(self, z_t: torch.Tensor, t: torch.Tensor,
                    cond: MultiScaleFeatures | None,
                    text: torch.Tensor | None) -> torch.Tensor:
        return self.denoiser(z_t, t, cond, text)

    def trainable_modules(self, strict_paper: bool = False) -> list[nn.Module]:
        mods = [self.cond_embedder, self.cond_encoder]
        if not strict_paper:
            mods.append(self.denoiser)
        return mods

    def configure_freezing(self, strict_paper: bool = False) -> None:
        self.autoencoder.requires_grad_(False)
        self.denoiser.requires_grad_(not strict_paper)
        self.cond_embedder.requires_grad_(True)
        self.cond_encoder.requires_grad_(True)
        if self.classifier is not None:
            self.classifier.net.requires_grad_(False)

    def trainable_parameter_count(self, strict_paper: bool = False) -> int:
        return sum(p.numel() for m in self.trainable_modules(strict_paper)
                   for p in m.parameters())

    def sample(self, lr: np.ndarray, steps: int = 50, eta: float = 0.0, seed: int = 0,
               class_probs: np.ndarray | None = None) -> np.ndarray:
        self.eval()
        return diffusion.sample(lr, self, steps=steps, eta=eta, seed=seed,
                                class_probs=class_probs)

    def sample_batch(self, lrs: np.ndarray, steps: int = 50, eta: float = 0.0,
                     seed: int = 0, class_probs: np.ndarray | None = None) -> np.ndarray:
        self.eval()
        return diffusion.sample_batch(lrs, self, steps=steps, eta=eta, seed=seed,
                                      class_probs=class_probs)

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        cfg = asdict(self.cfg)
        cfg["channel_mults"] = list(self.cfg.channel_mults)
        save_container(path, "sr", cfg, self.state_dict(),
                       schedule={"kind": self.cfg.schedule_kind,
                                 "T": self.cfg.timesteps,
                                 "beta_start": self.cfg.beta_start,
                                 "beta_end": self.cfg.beta_end,
                                 "betas": self.schedule.betas})

    @classmethod
    def load(cls, path) -> "SuperResolutionModel":
        payload = load_container(path, "sr")
        cfg_dict = dict(payload["config"])
        cfg_dict["channel_mults"] = tuple(cfg_dict["channel_mults"])
        model = cls(ModelConfig(**cfg_dict))
        model.load_state_dict(payload["state"])
        model.eval()
        return model
