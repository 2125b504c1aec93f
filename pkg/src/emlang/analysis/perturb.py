"""Test-time image corruptions: Gaussian blur and salt-and-pepper noise."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from ..corpus import Dataset


def gaussian_kernel(kernel_size: int = 11, sigma: float = 1.0) -> np.ndarray:
    """Normalized 2-D Gaussian tap matrix; kernel_size must be odd."""
    if kernel_size % 2 == 0 or kernel_size < 1:
        raise ValueError(f"kernel size must be odd and positive, got {kernel_size}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    half = kernel_size // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    one_d = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    kernel = np.outer(one_d, one_d)
    return (kernel / kernel.sum()).astype(np.float64)


def perturb_gaussian(
    image: np.ndarray, kernel_size: int = 11, sigma: float = 1.0
) -> np.ndarray:
    """Blur by convolution with a normalized Gaussian, reflect padding."""
    kernel = torch.tensor(gaussian_kernel(kernel_size, sigma), dtype=torch.float32)
    arr = torch.tensor(np.array(image, dtype=np.float32, copy=True))
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr.unsqueeze(0)
    half = kernel_size // 2
    x = F.pad(arr.unsqueeze(1), (half, half, half, half), mode="reflect")
    out = F.conv2d(x, kernel.view(1, 1, kernel_size, kernel_size)).squeeze(1)
    out = out.clamp(0.0, 1.0).numpy()
    return out[0] if squeeze else out


def perturb_salt_pepper(
    image: np.ndarray, density: float = 0.1, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Replace each pixel, independently with probability `density`, by 0 or 1."""
    if not (0.0 <= density <= 1.0):
        raise ValueError(f"density must lie in [0, 1], got {density}")
    if rng is None:
        rng = np.random.default_rng()
    out = np.array(image, dtype=np.float32, copy=True)
    hit = rng.random(out.shape) < density
    grains = rng.integers(0, 2, size=out.shape).astype(np.float32)
    out[hit] = grains[hit]
    return out


def perturb_dataset(
    data: Dataset, kind: str, seed: int = 0, **params
) -> Dataset:
    """Apply one corruption to every image under a single seeded generator.

    A fixed (kind, seed, params) triple yields byte-identical output, which
    is what makes cross-representation comparisons fair.
    """
    if kind == "none":
        return Dataset(data.images.copy(), None if data.labels is None
                       else data.labels.copy(), data.split)
    if kind == "gaussian":
        images = perturb_gaussian(data.images, **params)
    elif kind == "salt_pepper":
        rng = np.random.default_rng(seed)
        images = np.stack(
            [perturb_salt_pepper(img, rng=rng, **params) for img in data.images]
        )
    else:
        raise ValueError(f"unknown perturbation {kind!r}")
    labels = None if data.labels is None else data.labels.copy()
    return Dataset(images, labels, data.split)
