"""Procedural four-category ship corpus for desk-scale runs.

Scenes are smooth gradients (sky, sea) plus a flat-shaded ship whose shape,
palette, and fine markings depend on the category. Images are drawn
supersampled and box-averaged down, so edges are subpixel-smooth and the
HR content stays predictable from the LR observation.
"""

import argparse
from pathlib import Path

import numpy as np

from .image_io import save_image
from .seeding import derive_seed

CATEGORIES = ("cargo", "patrol", "tanker", "tug")

_SYLLABLES = ("al", "be", "cor", "dan", "el", "far", "gal", "hel", "is", "jor",
              "kal", "lu", "mar", "nor", "or", "pol", "qui", "ros", "sal",
              "tor", "ul", "ver", "wil", "yar", "zel")

_CONTAINER_PALETTE = (
    (0.75, 0.20, 0.15), (0.85, 0.55, 0.10), (0.15, 0.55, 0.55),
    (0.80, 0.75, 0.20), (0.25, 0.55, 0.25), (0.30, 0.35, 0.65),
)


def make_ship_name(rng: np.random.Generator) -> str:
    n = int(rng.integers(2, 4))
    return "mv-" + "".join(rng.choice(_SYLLABLES) for _ in range(n))


def _vertical_gradient(h: int, w: int, top, bottom) -> np.ndarray:
    t = np.linspace(0.0, 1.0, h)[:, None, None]
    top = np.asarray(top)[None, None, :]
    bottom = np.asarray(bottom)[None, None, :]
    return top * (1 - t) + bottom * t + np.zeros((h, w, 3))


def _jitter(rng, color, amount=0.06):
    return np.clip(np.asarray(color) + rng.uniform(-amount, amount, 3), 0.0, 1.0)


def synthesize_image(category: str, rng: np.random.Generator,
                     side: int = 64, supersample: int = 2) -> np.ndarray:
    """One (side, side, 3) scene in [0,1] for the given category."""
    if category not in CATEGORIES:
        raise ValueError(f"unknown category {category!r}; choose from {CATEGORIES}")
    ss = supersample
    S = side * ss
    img = np.zeros((S, S, 3))

    horizon = int(S * rng.uniform(0.42, 0.58))
    img[:horizon] = _vertical_gradient(horizon, S,
                                       _jitter(rng, (0.55, 0.70, 0.88), 0.10),
                                       _jitter(rng, (0.78, 0.86, 0.94), 0.06))
    img[horizon:] = _vertical_gradient(S - horizon, S,
                                       _jitter(rng, (0.16, 0.32, 0.46)),
                                       _jitter(rng, (0.07, 0.17, 0.28)))

    waterline = horizon + int(S * rng.uniform(0.10, 0.22))

    if category == "cargo":
        length = int(S * rng.uniform(0.55, 0.72))
        hull_h = int(S * rng.uniform(0.10, 0.14))
        hull_color = _jitter(rng, (0.20, 0.24, 0.33))
    elif category == "tanker":
        length = int(S * rng.uniform(0.66, 0.84))
        hull_h = int(S * rng.uniform(0.07, 0.10))
        hull_color = _jitter(rng, (0.42, 0.12, 0.10))
    elif category == "patrol":
        length = int(S * rng.uniform(0.42, 0.58))
        hull_h = int(S * rng.uniform(0.08, 0.11))
        hull_color = _jitter(rng, (0.58, 0.61, 0.64))
    else:  # tug
        length = int(S * rng.uniform(0.28, 0.40))
        hull_h = int(S * rng.uniform(0.11, 0.15))
        hull_color = _jitter(rng, (0.12, 0.38, 0.22))

    x0 = int(rng.uniform(0.06 * S, S - length - 0.06 * S))
    x1 = x0 + length
    deck = waterline - hull_h
    keel = waterline + max(1, int(0.02 * S))
    flip = bool(rng.integers(2))

    # Hull with a linearly rising bow edge.
    bow_len = max(2 * ss, int(length * rng.uniform(0.12, 0.2)))
    cols = np.arange(x0, x1)
    rel = np.ones_like(cols, dtype=np.float64)
    if flip:
        ramp = np.minimum(1.0, (cols - x0) / bow_len)
    else:
        ramp = np.minimum(1.0, (x1 - 1 - cols) / bow_len)
    bottoms = (keel - (keel - deck - hull_h * 0.4) * (1 - ramp) * rel).astype(int)
    for c, bot in zip(cols, bottoms):
        img[deck:bot, c] = hull_color

    white = _jitter(rng, (0.90, 0.90, 0.92), 0.04)
    dark = _jitter(rng, (0.10, 0.10, 0.12), 0.03)

    def rect(y0, y1, xa, xb, color):
        y0, y1 = max(0, int(y0)), min(S, int(y1))
        xa, xb = max(0, int(xa)), min(S, int(xb))
        if y1 > y0 and xb > xa:
            img[y0:y1, xa:xb] = color

    stern = x0 if flip else x1
    fwd = 1 if flip else -1

    if category == "cargo":
        # Bridge at the stern, colored container stacks along the deck.
        bw = int(length * 0.14)
        bx = stern if flip else stern - bw
        rect(deck - int(hull_h * 1.3), deck, bx, bx + bw, white)
        n_boxes = int(rng.integers(3, 6))
        box_w = int(length * 0.62 / n_boxes)
        bh = int(S * rng.uniform(0.05, 0.08))
        start = (x0 + int(length * 0.18)) if flip else (x0 + int(length * 0.16))
        for i in range(n_boxes):
            color = _jitter(rng, _CONTAINER_PALETTE[int(rng.integers(len(_CONTAINER_PALETTE)))], 0.05)
            rect(deck - bh, deck, start + i * box_w, start + (i + 1) * box_w - ss, color)
    elif category == "tanker":
        # Thin silver deck pipe, vertical pipe stubs, small aft cabin.
        pipe_y = deck + int(hull_h * 0.2)
        rect(pipe_y, pipe_y + ss, x0 + bow_len // 2, x1 - bow_len // 2, (0.78, 0.80, 0.82))
        for frac in (0.3, 0.5, 0.7):
            px = int(x0 + length * frac)
            rect(deck - int(0.03 * S), deck, px, px + ss, (0.70, 0.72, 0.74))
        cw = int(length * 0.12)
        cx = stern if flip else stern - cw
        rect(deck - int(hull_h * 1.1), deck, cx, cx + cw, white)
    elif category == "patrol":
        # Stepped superstructure, thin mast, diagonal bow stripe.
        sw = int(length * 0.34)
        sx = x0 + int(length * (0.38 if flip else 0.28))
        rect(deck - int(hull_h * 0.9), deck, sx, sx + sw, white)
        rect(deck - int(hull_h * 1.5), deck - int(hull_h * 0.9),
             sx + sw // 4, sx + 3 * sw // 4, white)
        mast_x = sx + sw // 2
        rect(deck - int(hull_h * 2.6), deck - int(hull_h * 1.5), mast_x, mast_x + ss, (0.35, 0.37, 0.40))
        stripe = _jitter(rng, (0.75, 0.12, 0.12), 0.04)
        bow_x = (x0 + int(0.08 * length)) if flip else (x1 - int(0.20 * length))
        for k in range(hull_h):
            xx = bow_x + fwd * (-k // 2)
            rect(deck + k, deck + k + 1, xx, xx + 2 * ss, stripe)
    else:  # tug
        # Tall forward cabin with a window band, fender stripe, chimney.
        cw = int(length * 0.5)
        cx = x0 + int(length * (0.12 if not flip else 0.38))
        rect(deck - int(hull_h * 1.4), deck, cx, cx + cw, _jitter(rng, (0.88, 0.86, 0.78), 0.04))
        rect(deck - int(hull_h * 1.15), deck - int(hull_h * 0.9), cx + ss, cx + cw - ss, dark)
        rect(deck, deck + 2 * ss, x0, x1, dark)  # fender band
        ch_x = cx + cw + (ss if not flip else -3 * ss)
        rect(deck - int(hull_h * 1.2), deck, ch_x, ch_x + 2 * ss, _jitter(rng, (0.82, 0.70, 0.15), 0.04))
        rect(deck - int(hull_h * 1.2), deck - int(hull_h * 1.0), ch_x, ch_x + 2 * ss, dark)

    # Wake line at the waterline under the hull.
    rect(waterline, waterline + ss, x0 - 2 * ss, x1 + 2 * ss, _jitter(rng, (0.80, 0.86, 0.90), 0.05))

    img = np.clip(img, 0.0, 1.0)
    out = img.reshape(side, ss, side, ss, 3).mean(axis=(1, 3))
    return out.astype(np.float32)


def make_synthetic_corpus(root, per_category: int = 500, side: int = 64,
                          seed: int = 0, categories=CATEGORIES) -> int:
    """Write a category-per-subdirectory PNG corpus; returns image count."""
    root = Path(root)
    count = 0
    for category in categories:
        for i in range(per_category):
            rng = np.random.default_rng(derive_seed(seed, "synthetic", category, i))
            img = synthesize_image(category, rng, side=side)
            name = make_ship_name(rng)
            save_image(img, root / category / f"{name}_{i:04d}.png")
            count += 1
    return count


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Generate a synthetic ship corpus")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--per-category", type=int, default=500)
    parser.add_argument("--side", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    n = make_synthetic_corpus(args.out, args.per_category, args.side, args.seed)
    print(f"wrote {n} images under {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
