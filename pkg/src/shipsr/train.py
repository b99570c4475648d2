"""Training loops: SR diffusion training and autoencoder pre-training.

SR training optimizes the conditioning path (and the denoiser unless strict
mode freezes it) against the noise-matching objective; frozen components are
asserted to have zero gradient every epoch.
"""

from dataclasses import dataclass, field

import numpy as np
import torch

from . import diffusion
from .degradation import bicubic_upsample
from .denoiser import ConvAutoencoder
from .model import SuperResolutionModel
from .prompts import TextProvider


@dataclass
class SRTrainData:
    """In-memory training arrays: HR targets, LR observations, labels, and
    the (name, category) metadata prompts are rendered from."""

    hr: np.ndarray                      # (N, H, W, 3)
    lr: np.ndarray                      # (N, h, w, 3)
    labels: np.ndarray                  # (N,) taxonomy indices
    names: list[str] = field(default_factory=list)
    categories: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.hr) != len(self.lr) or len(self.hr) != len(self.labels):
            raise ValueError("hr/lr/labels lengths differ")


def frozen_gradient_norm(model: SuperResolutionModel) -> float:
    """Total gradient norm over all frozen components; must be exactly 0."""
    total = 0.0
    frozen = [model.autoencoder]
    if model.classifier is not None:
        frozen.append(model.classifier.net)
    if not any(p.requires_grad for p in model.denoiser.parameters()):
        frozen.append(model.denoiser)
    for mod in frozen:
        for p in mod.parameters():
            if p.grad is not None:
                total += float(p.grad.norm())
    return total


def train_super_resolution(model: SuperResolutionModel, data: SRTrainData, *,
                           epochs: int = 6, batch_size: int = 16, lr: float = 2e-3,
                           seed: int = 0, strict_paper: bool = False,
                           text_provider: TextProvider | None = None,
                           log=None) -> list[float]:
    """Train the SR model; returns per-epoch mean losses.

    Class evidence during training is the ground-truth one-hot label; text
    conditioning (when a provider is given) is rendered fresh every step.
    """
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model.configure_freezing(strict_paper)
    model.train()

    params = [p for m in model.trainable_modules(strict_paper) for p in m.parameters()]
    opt = torch.optim.Adam(params, lr=lr)

    n = len(data.hr)
    k = model.cfg.num_classes
    z0_all = model.encode_for_diffusion(data.hr)
    refs = np.stack([bicubic_upsample(data.lr[i], model.factor) for i in range(n)])
    zlr_all = model.encode_for_diffusion(refs)
    labels = torch.as_tensor(np.asarray(data.labels), dtype=torch.long)
    onehot = torch.zeros(n, k)
    onehot[torch.arange(n), labels] = 1.0

    T = model.schedule.T
    device = model.device
    epoch_losses: list[float] = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        running = 0.0
        for start in range(0, n, batch_size):
            sel = torch.as_tensor(order[start:start + batch_size], dtype=torch.long)
            bsz = len(sel)
            t = torch.as_tensor(rng.integers(0, T, size=bsz), dtype=torch.long, device=device)
            eps = torch.randn(bsz, *z0_all.shape[1:]).to(device)
            text = None
            if text_provider is not None:
                text = torch.stack([
                    text_provider.embed_record(data.names[i], data.categories[i])
                    for i in sel.tolist()]).to(device)
            batch = diffusion.DiffusionBatch(
                z0=z0_all[sel], t=t, eps=eps, class_probs=onehot[sel].to(device),
                lr_latent=zlr_all[sel], text=text)
            loss = diffusion.training_loss(batch, model)
            opt.zero_grad()
            loss.backward()
            opt.step()
            running += loss.item() * bsz
            if log is not None:
                entry = {"stage": "train-sr", "epoch": epoch,
                         "step": start // batch_size, "loss": loss.item()}
                if text_provider is not None:
                    entry["prompts"] = text_provider.take_prompt_log()
                log(entry)
        epoch_losses.append(running / n)
        bad = frozen_gradient_norm(model)
        if bad != 0.0:
            raise RuntimeError(f"frozen components accumulated gradient norm {bad}")
        if log is not None:
            log({"stage": "train-sr", "epoch": epoch, "epoch_loss": epoch_losses[-1]})

    model.eval()
    return epoch_losses


def train_autoencoder(ae: ConvAutoencoder, images: np.ndarray, *,
                      steps: int = 400, batch_size: int = 16, lr: float = 2e-3,
                      seed: int = 0, log=None) -> list[float]:
    """Pre-train the latent autoencoder on the corpus, then freeze it."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    ae.requires_grad_(True)
    ae.train()
    opt = torch.optim.Adam(ae.parameters(), lr=lr)
    x_all = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32)).permute(0, 3, 1, 2)
    losses = []
    n = len(images)
    for step in range(steps):
        sel = torch.as_tensor(rng.integers(0, n, size=batch_size), dtype=torch.long)
        xb = x_all[sel]
        recon = ae(xb)
        loss = ((recon - xb) ** 2).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
        if log is not None and step % 50 == 0:
            log({"stage": "train-ae", "step": step, "loss": loss.item()})
    ae.eval()
    ae.requires_grad_(False)
    return losses
