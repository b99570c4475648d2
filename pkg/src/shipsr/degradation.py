"""HR -> LR degradation model and bicubic reference upsampling.

The forward model is blur (2-D convolution, reflect padding), stride
decimation, additive Gaussian sensor noise on the LR observation, and an
optional block-DCT quantization stage standing in for codec artifacts.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.fft import dctn, idctn

from .seeding import derive_seed


# ---------------------------------------------------------------------------
# blur kernels
# ---------------------------------------------------------------------------

def gaussian_kernel(size: int = 21, sigma: float = 1.0) -> np.ndarray:
    """Normalized isotropic Gaussian blur kernel with odd side length."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd and positive, got {size}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-0.5 * (ax / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def identity_kernel(size: int = 1) -> np.ndarray:
    """Delta kernel: blur stage becomes a no-op."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd and positive, got {size}")
    k = np.zeros((size, size), dtype=np.float64)
    k[size // 2, size // 2] = 1.0
    return k


def sample_kernel(rng: np.random.Generator, size: int = 21,
                  sigma_range: tuple[float, float] = (0.2, 3.0)) -> np.ndarray:
    """Draw an isotropic Gaussian kernel with sigma uniform in sigma_range."""
    lo, hi = sigma_range
    return gaussian_kernel(size, float(rng.uniform(lo, hi)))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class DegradationConfig:
    kernel: np.ndarray
    downscale_factor: int
    noise_sigma: float
    compression_quality: int | None = None
    seed: int = 0

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=np.float64)
        if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
            raise ValueError(f"kernel must be square with odd side, got {k.shape}")
        if not np.isfinite(k).all() or abs(k.sum() - 1.0) > 1e-6:
            raise ValueError("kernel entries must be finite and sum to 1 within 1e-6")
        self.kernel = k
        if int(self.downscale_factor) != self.downscale_factor or self.downscale_factor < 1:
            raise ValueError(f"downscale_factor must be a positive integer, got {self.downscale_factor}")
        self.downscale_factor = int(self.downscale_factor)
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.compression_quality is not None and not 1 <= self.compression_quality <= 100:
            raise ValueError(f"compression_quality must be in [1, 100], got {self.compression_quality}")


@dataclass
class DegradationPolicy:
    """Per-record degradation recipe: samples a fresh kernel per record id.

    Seeds are derived from (seed, record_id), so materializing records in
    any order or worker count yields identical outputs.
    """

    downscale_factor: int = 8
    kernel_size: int = 21
    sigma_range: tuple[float, float] = (0.2, 3.0)
    noise_sigma: float = 0.01
    compression_quality: int | None = None
    seed: int = 0

    def config_for(self, record_id: str) -> DegradationConfig:
        rec_seed = derive_seed(self.seed, "degrade", record_id)
        rng = np.random.default_rng(rec_seed)
        kernel = sample_kernel(rng, self.kernel_size, self.sigma_range)
        return DegradationConfig(
            kernel=kernel,
            downscale_factor=self.downscale_factor,
            noise_sigma=self.noise_sigma,
            compression_quality=self.compression_quality,
            seed=rec_seed,
        )


@dataclass
class ImagePair:
    hr: np.ndarray
    lr: np.ndarray
    reference: np.ndarray


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def center_crop(x: np.ndarray, side: int) -> np.ndarray:
    """Centered side x side window of the first two axes."""
    if side < 1:
        raise ValueError(f"side must be positive, got {side}")
    h, w = x.shape[:2]
    if side > h or side > w:
        raise ValueError(f"crop side {side} exceeds image dims {h}x{w}")
    top = (h - side) // 2
    left = (w - side) // 2
    return np.ascontiguousarray(x[top:top + side, left:left + side])


def apply_degradation(x: np.ndarray, cfg: DegradationConfig, clip: bool = True) -> np.ndarray:
    """Blur, decimate, add sensor noise, optionally quantize DCT blocks.

    Deterministic given cfg.seed. ``clip=False`` skips the final [0,1]
    clamp (used to measure raw noise statistics).
    """
    if x.ndim != 3 or x.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got shape {x.shape}")
    h, w = x.shape[:2]
    f = cfg.downscale_factor
    if h % f or w % f:
        raise ValueError(f"image dims {h}x{w} not divisible by factor {f}")

    out = np.empty_like(x, dtype=np.float32)
    for c in range(3):
        out[:, :, c] = ndimage.convolve(x[:, :, c].astype(np.float64), cfg.kernel, mode="reflect")
    out = out[::f, ::f]

    if cfg.noise_sigma > 0:
        rng = np.random.default_rng(cfg.seed)
        out = out + rng.normal(0.0, cfg.noise_sigma, out.shape).astype(np.float32)

    if cfg.compression_quality is not None:
        out = _dct_quantize(out, cfg.compression_quality)

    if clip:
        out = np.clip(out, 0.0, 1.0)
    return out.astype(np.float32)


def _dct_quantize(img: np.ndarray, quality: int) -> np.ndarray:
    """Quantize 8x8 block-DCT coefficients; coarser steps at lower quality."""
    step = (101 - quality) / 400.0
    h, w = img.shape[:2]
    ph, pw = (-h) % 8, (-w) % 8
    padded = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="edge")
    hh, ww = padded.shape[:2]
    blocks = padded.transpose(2, 0, 1).reshape(3, hh // 8, 8, ww // 8, 8).transpose(0, 1, 3, 2, 4)
    coeffs = dctn(blocks, axes=(-2, -1), norm="ortho")
    coeffs = np.round(coeffs / step) * step
    blocks = idctn(coeffs, axes=(-2, -1), norm="ortho")
    padded = blocks.transpose(0, 1, 3, 2, 4).reshape(3, hh, ww).transpose(1, 2, 0)
    return padded[:h, :w].astype(np.float32)


def _cubic(t: np.ndarray) -> np.ndarray:
    # Catmull-Rom (a = -0.5); weights sum to 1 and vanish at integer taps.
    t = np.abs(t)
    w = np.where(t <= 1.0, 1.5 * t**3 - 2.5 * t**2 + 1.0,
                 np.where(t < 2.0, -0.5 * t**3 + 2.5 * t**2 - 4.0 * t + 2.0, 0.0))
    return w


def _resize_weights(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out, n_in) bicubic weight matrix, edge-clamped taps."""
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(np.int64)
    frac = src - base
    weights = np.zeros((n_out, n_in), dtype=np.float64)
    for k in range(-1, 3):
        idx = np.clip(base + k, 0, n_in - 1)
        w = _cubic(frac - k)
        np.add.at(weights, (np.arange(n_out), idx), w)
    return weights


def resize_bicubic(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bicubic resize of an H x W x 3 image, clamped to [0,1]."""
    if x.ndim != 3 or x.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got shape {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError("output dims must be positive")
    wr = _resize_weights(x.shape[0], out_h)
    wc = _resize_weights(x.shape[1], out_w)
    tmp = np.tensordot(wr, x.astype(np.float64), axes=(1, 0))       # (out_h, W, 3)
    out = np.tensordot(tmp, wc, axes=(1, 1)).transpose(0, 2, 1)     # (out_h, out_w, 3)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def bicubic_upsample(lr: np.ndarray, factor: int) -> np.ndarray:
    """Upscale by an integer factor with edge-clamped bicubic interpolation."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor}")
    if lr.ndim != 3 or lr.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got shape {lr.shape}")
    if factor == 1:
        return lr.astype(np.float32).copy()
    return resize_bicubic(lr, lr.shape[0] * int(factor), lr.shape[1] * int(factor))
