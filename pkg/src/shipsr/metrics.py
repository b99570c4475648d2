"""Evaluation: PSNR, SSIM, Fréchet distance over a pluggable embedder, and
downstream classification accuracy, with a comparison-report writer.

FID numbers are only comparable for matching embedder ids, so every report
is stamped with the embedder identity.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .classifier import ClassifierModel, classify_batch
from .image_io import save_image

PSNR_CAP_DB = 100.0
_LUMA = np.array([0.299, 0.587, 0.114])


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise ValueError(f"expected 2-D or H x W x 3 images, got ndim {a.ndim}")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) for [0,1] images; identical images report the cap."""
    _check_pair(a, b)
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


def _to_gray(img: np.ndarray) -> np.ndarray:
    if img.ndim == 3:
        return img.astype(np.float64) @ _LUMA
    return img.astype(np.float64)


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11,
         c1: float = 1e-4, c2: float = 9e-4) -> float:
    """Mean local SSIM over Gaussian windows on the luma channel."""
    _check_pair(a, b)
    if min(a.shape[:2]) < window:
        raise ValueError(f"image dims {a.shape[:2]} smaller than window {window}")
    x, y = _to_gray(a), _to_gray(b)
    radius = (window - 1) // 2
    blur = lambda im: gaussian_filter(im, sigma=1.5, radius=radius, mode="reflect")
    mu_x, mu_y = blur(x), blur(y)
    var_x = blur(x * x) - mu_x**2
    var_y = blur(y * y) - mu_y**2
    cov = blur(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


@dataclass
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.mu.ndim != 1 or self.sigma.shape != (self.mu.size, self.mu.size):
            raise ValueError("need mu (D,) and sigma (D, D)")
        if np.abs(self.sigma - self.sigma.T).max() > 1e-8:
            raise ValueError("covariance must be symmetric within 1e-8")

    @classmethod
    def from_features(cls, feats: np.ndarray) -> "GaussianStats":
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 2:
            raise ValueError("need at least two feature rows")
        mu = feats.mean(axis=0)
        # Fixed-order two-pass covariance.
        centered = feats - mu
        sigma = centered.T @ centered / (feats.shape[0] - 1)
        return cls(mu=mu, sigma=(sigma + sigma.T) / 2.0)


def _psd_sqrt_eigh(sym: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh(sym)
    if vals.min() < -1e-8:
        raise RuntimeError(f"matrix not PSD within tolerance (min eigenvalue {vals.min():.3e})")
    vals = np.clip(vals, 0.0, None)
    return vals, vecs


def frechet_distance(g1: GaussianStats, g2: GaussianStats) -> float:
    """||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)), matrix root by
    eigendecomposition with negative eigenvalues clipped at -1e-8."""
    if g1.mu.size != g2.mu.size:
        raise ValueError("dimension mismatch between Gaussian stats")
    vals1, vecs1 = _psd_sqrt_eigh(g1.sigma)
    root1 = (vecs1 * np.sqrt(vals1)) @ vecs1.T
    inner = root1 @ g2.sigma @ root1
    vals_inner, _ = _psd_sqrt_eigh((inner + inner.T) / 2.0)
    mean_term = float(np.sum((g1.mu - g2.mu) ** 2))
    trace_term = float(np.trace(g1.sigma) + np.trace(g2.sigma) - 2.0 * np.sum(np.sqrt(vals_inner)))
    return mean_term + trace_term


def fid(images_a: np.ndarray, images_b: np.ndarray, embedder) -> float:
    """Fréchet distance between Gaussian fits of embedder features."""
    feats_a = np.asarray(embedder(images_a), dtype=np.float64)
    feats_b = np.asarray(embedder(images_b), dtype=np.float64)
    d = feats_a.shape[1]
    if feats_a.shape[0] < d + 1 or feats_b.shape[0] < d + 1:
        raise ValueError(
            f"need at least D+1 = {d + 1} images per set for a stable covariance "
            f"(got {feats_a.shape[0]} and {feats_b.shape[0]})")
    return frechet_distance(GaussianStats.from_features(feats_a),
                            GaussianStats.from_features(feats_b))


def downstream_eval(images: np.ndarray, labels: np.ndarray, m: ClassifierModel) -> float:
    """Top-1 classification accuracy of the frozen classifier on a set."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if len(images) == 0:
        raise ValueError("empty evaluation set")
    if len(images) != len(labels):
        raise ValueError(f"{len(images)} images vs {len(labels)} labels")
    preds = classify_batch(images, m)
    return float((preds == labels).mean())


@dataclass
class MetricsReport:
    methods: dict[str, dict[str, float]]
    config_fingerprint: str
    embedder_id: str
    extras: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "config_fingerprint": self.config_fingerprint,
            "embedder_id": self.embedder_id,
            "methods": self.methods,
            **({"extras": self.extras} if self.extras else {}),
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        data = json.loads(text)
        return cls(methods=data["methods"],
                   config_fingerprint=data["config_fingerprint"],
                   embedder_id=data["embedder_id"],
                   extras=data.get("extras", {}))


def comparison_report(methods: dict[str, np.ndarray], gt: np.ndarray,
                      labels: np.ndarray, m: ClassifierModel, embedder,
                      embedder_id: str = "unspecified",
                      config_fingerprint: str = "unconfigured",
                      out_dir=None, grid_rows: int = 6) -> MetricsReport:
    """Per-method PSNR/SSIM/FID/accuracy against ground truth, plus a
    side-by-side sample grid (one row per sample, one column per method
    plus ground truth)."""
    gt = np.asarray(gt)
    labels = np.asarray(labels)
    if len(gt) != len(labels):
        raise ValueError("ground truth and labels misaligned")
    results: dict[str, dict[str, float]] = {}
    for name, images in methods.items():
        images = np.asarray(images)
        if images.shape != gt.shape:
            raise ValueError(f"method {name!r} shape {images.shape} misaligned with gt {gt.shape}")
        results[name] = {
            "psnr": float(np.mean([psnr(images[i], gt[i]) for i in range(len(gt))])),
            "ssim": float(np.mean([ssim(images[i], gt[i]) for i in range(len(gt))])),
            "fid": fid(images, gt, embedder),
            "accuracy": downstream_eval(images, labels, m),
        }
    report = MetricsReport(methods=results, config_fingerprint=config_fingerprint,
                           embedder_id=embedder_id)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
        save_image(_sample_grid(methods, gt, grid_rows), out_dir / "grid.png")
    return report


def _sample_grid(methods: dict[str, np.ndarray], gt: np.ndarray, rows: int) -> np.ndarray:
    rows = min(rows, len(gt))
    pad = 2
    columns = list(methods.values()) + [gt]
    h, w = gt.shape[1:3]
    grid = np.ones((rows * (h + pad) - pad, len(columns) * (w + pad) - pad, 3), dtype=np.float32)
    for r in range(rows):
        for c, images in enumerate(columns):
            y, x = r * (h + pad), c * (w + pad)
            grid[y:y + h, x:x + w] = images[r]
    return grid
