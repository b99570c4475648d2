"""Conditional diffusion toolkit for ship image super resolution.

Pipeline stages: degrade HR sources into LR/reference pairs, pre-train a
category classifier, train the class- and time-aware SR diffusion model,
sample, and evaluate (PSNR/SSIM/FID plus downstream classification).
"""

__version__ = "0.1.0"
