"""8-bit PNG i/o around the float [0,1] internal image representation."""

from pathlib import Path

import numpy as np
from PIL import Image


def load_image(path) -> np.ndarray:
    """Read an image file as float32 H x W x 3 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def quantize(img: np.ndarray) -> np.ndarray:
    """Map [0,1] floats to uint8 with round-half-up (not banker's rounding)."""
    return np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)


def save_image(img: np.ndarray, path) -> None:
    """Write a [0,1] float image as 8-bit PNG."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got shape {img.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(quantize(img), mode="RGB").save(path, format="PNG")
