"""Frozen ship-category classifier.

Pre-trained on HR images before SR training (optionally with noisy copies,
since it is applied to degraded inputs at inference), then frozen. Supplies
the class evidence for conditioning and the penultimate-layer features used
as the desk-scale FID embedder.
"""

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_container, save_container
from .conditioning import _num_groups
from .degradation import resize_bicubic

# Ship-type taxonomy shipped as the default configuration.
DEFAULT_TAXONOMY = (
    "Bulkers", "Containerships", "Cruise ships", "Dredgers",
    "Fire Fighting Vessels", "Floating Sheerlegs", "General Cargo", "Inland",
    "Livestock Carriers", "Passenger Vessels", "Patrol Forces", "Reefers",
    "Ro-ro", "Supply ships", "Tankers", "Training ships", "Tugs",
    "Vehicle Carriers", "Wood Chip Carriers",
)


def validate_taxonomy(names) -> tuple[str, ...]:
    names = tuple(names)
    if len(names) != len(set(names)):
        raise ValueError("taxonomy names must be unique")
    if not names:
        raise ValueError("taxonomy must be non-empty")
    return names


@dataclass
class ClassifierConfig:
    input_side: int = 64
    base_channels: int = 16
    num_blocks: int = 4
    epochs: int = 6
    batch_size: int = 32
    lr: float = 2e-3
    val_fraction: float = 0.15
    augment_sigmas: tuple[float, ...] = (0.0,)
    seed: int = 0


class ShipClassifierNet(nn.Module):
    """Compact strided CNN: blocks of conv/GN/SiLU, global average pooling,
    linear head. ``features`` exposes the pooled penultimate activations."""

    def __init__(self, num_classes: int, cfg: ClassifierConfig):
        super().__init__()
        chans = [cfg.base_channels * min(2 ** i, 4) for i in range(cfg.num_blocks)]
        layers = []
        prev = 3
        for ch in chans:
            layers += [nn.Conv2d(prev, ch, 3, stride=2, padding=1),
                       nn.GroupNorm(_num_groups(ch), ch), nn.SiLU()]
            prev = ch
        self.body = nn.Sequential(*layers)
        self.feature_dim = prev
        self.head = nn.Linear(prev, num_classes)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x).mean(dim=(2, 3))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))


@dataclass
class ClassifierModel:
    net: ShipClassifierNet
    taxonomy: tuple[str, ...]
    config: ClassifierConfig
    val_accuracy: float = float("nan")
    history: list[float] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return len(self.taxonomy)

    @property
    def embedder_id(self) -> str:
        blob = b"".join(p.detach().cpu().numpy().tobytes() for p in self.net.parameters())
        return f"classifier-penultimate-{self.net.feature_dim}d-{hashlib.sha256(blob).hexdigest()[:12]}"


def _to_input_batch(images: np.ndarray, side: int) -> torch.Tensor:
    out = []
    for img in images:
        if img.shape[0] != side or img.shape[1] != side:
            img = resize_bicubic(img, side, side)
        out.append(img)
    arr = np.stack(out).astype(np.float32)
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()


def train_classifier(images: np.ndarray, labels: np.ndarray, taxonomy,
                     config: ClassifierConfig | None = None,
                     log=None) -> ClassifierModel:
    """Train and freeze the category classifier; reports validation accuracy.

    ``images``: (N, H, W, 3) floats in [0,1]; ``labels``: (N,) taxonomy
    indices. Requires >= 2 categories with >= 10 samples each.
    """
    config = config or ClassifierConfig()
    taxonomy = validate_taxonomy(taxonomy)
    labels = np.asarray(labels, dtype=np.int64)
    present, counts = np.unique(labels, return_counts=True)
    if len(present) < 2 or counts.min() < 10:
        raise ValueError("need at least 2 categories with at least 10 samples each")
    if labels.min() < 0 or labels.max() >= len(taxonomy):
        raise ValueError("labels out of taxonomy range")

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    # Stratified train/val split.
    val_idx, train_idx = [], []
    for k in present:
        idx = np.flatnonzero(labels == k)
        rng.shuffle(idx)
        n_val = max(1, int(round(len(idx) * config.val_fraction)))
        val_idx.extend(idx[:n_val])
        train_idx.extend(idx[n_val:])
    train_idx = np.array(sorted(train_idx))
    val_idx = np.array(sorted(val_idx))

    x_train = _to_input_batch(images[train_idx], config.input_side)
    y_train = torch.from_numpy(labels[train_idx])
    x_val = _to_input_batch(images[val_idx], config.input_side)
    y_val = torch.from_numpy(labels[val_idx])

    net = ShipClassifierNet(len(taxonomy), config)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    sigmas = tuple(config.augment_sigmas) or (0.0,)
    history = []
    n = len(train_idx)
    for epoch in range(config.epochs):
        order = torch.from_numpy(rng.permutation(n))
        epoch_loss = 0.0
        net.train()
        for start in range(0, n, config.batch_size):
            sel = order[start:start + config.batch_size]
            xb = x_train[sel]
            sigma = sigmas[int(rng.integers(len(sigmas)))]
            if sigma > 0:
                xb = (xb + sigma * torch.randn(xb.shape)).clamp(0.0, 1.0)
            logits = net(xb)
            loss = F.cross_entropy(logits, y_train[sel])
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += loss.item() * len(sel)
        history.append(epoch_loss / n)
        if log is not None:
            log({"stage": "train-classifier", "epoch": epoch, "loss": history[-1]})

    net.eval()
    with torch.no_grad():
        preds = net(x_val).argmax(dim=1)
        val_acc = float((preds == y_val).float().mean())
    if log is not None:
        log({"stage": "train-classifier", "val_accuracy": val_acc})

    net.requires_grad_(False)
    return ClassifierModel(net=net, taxonomy=taxonomy, config=config,
                           val_accuracy=val_acc, history=history)


def classify_lr(lr: np.ndarray, m: ClassifierModel) -> np.ndarray:
    """Softmax category probabilities for one (possibly low-res) image."""
    if lr.ndim != 3 or lr.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got shape {lr.shape}")
    m.net.eval()
    with torch.no_grad():
        logits = m.net(_to_input_batch(lr[None], m.config.input_side))[0]
        probs = torch.softmax(logits.double(), dim=0)
    return probs.numpy().astype(np.float64)


def classify_batch(images: np.ndarray, m: ClassifierModel, batch_size: int = 64) -> np.ndarray:
    """Argmax predictions for an (N, H, W, 3) stack."""
    m.net.eval()
    preds = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            xb = _to_input_batch(images[start:start + batch_size], m.config.input_side)
            preds.append(m.net(xb).argmax(dim=1).numpy())
    return np.concatenate(preds)


def feature_embedder(m: ClassifierModel, batch_size: int = 64):
    """Image-set -> penultimate-feature matrix callable for FID."""
    def embed(images: np.ndarray) -> np.ndarray:
        m.net.eval()
        feats = []
        with torch.no_grad():
            for start in range(0, len(images), batch_size):
                xb = _to_input_batch(images[start:start + batch_size], m.config.input_side)
                feats.append(m.net.features(xb).numpy())
        return np.concatenate(feats).astype(np.float64)
    return embed


def save_classifier(path, m: ClassifierModel) -> None:
    save_container(path, "classifier", asdict(m.config), m.net.state_dict(),
                   taxonomy=list(m.taxonomy), val_accuracy=m.val_accuracy)


def load_classifier(path) -> ClassifierModel:
    payload = load_container(path, "classifier")
    cfg_dict = dict(payload["config"])
    cfg_dict["augment_sigmas"] = tuple(cfg_dict.get("augment_sigmas", (0.0,)))
    config = ClassifierConfig(**cfg_dict)
    taxonomy = validate_taxonomy(payload["taxonomy"])
    net = ShipClassifierNet(len(taxonomy), config)
    net.load_state_dict(payload["state"])
    net.eval()
    net.requires_grad_(False)
    return ClassifierModel(net=net, taxonomy=taxonomy, config=config,
                           val_accuracy=payload.get("val_accuracy", float("nan")))
