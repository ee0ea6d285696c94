"""Normalization, training augmentation and test-time corruptions."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .synthetic import Sample

PATCH = 10


def normalize(image: np.ndarray) -> np.ndarray:
    """Zero mean, unit standard deviation over the whole image."""
    image = np.asarray(image, dtype=np.float64)
    std = image.std()
    if not std > 0:
        raise ValueError("cannot normalize an image with zero intensity variance")
    out = (image - image.mean()) / std
    # one refinement pass removes the rounding left by the first
    return (out - out.mean()) / out.std()


@dataclass(frozen=True)
class GeometricAug:
    flip_h: bool = False
    flip_v: bool = False
    rot90: int = 0

    def apply(self, arr: np.ndarray) -> np.ndarray:
        if self.flip_h:
            arr = arr[..., :, ::-1]
        if self.flip_v:
            arr = arr[..., ::-1, :]
        return np.ascontiguousarray(np.rot90(arr, self.rot90, axes=(-2, -1)))

    def invert(self, arr: np.ndarray) -> np.ndarray:
        arr = np.rot90(arr, -self.rot90, axes=(-2, -1))
        if self.flip_v:
            arr = arr[..., ::-1, :]
        if self.flip_h:
            arr = arr[..., :, ::-1]
        return np.ascontiguousarray(arr)


def random_geometric(rng: np.random.Generator) -> GeometricAug:
    return GeometricAug(bool(rng.random() < 0.5), bool(rng.random() < 0.5), int(rng.integers(4)))


def swap_patches(image: np.ndarray, rng: np.random.Generator, size: int = PATCH) -> np.ndarray:
    """Exchange two non-overlapping ``size`` x ``size`` patches."""
    h, w = image.shape[-2:]
    if h < 2 * size and w < 2 * size:
        return image.copy()
    while True:
        y0, y1 = rng.integers(0, h - size + 1, size=2)
        x0, x1 = rng.integers(0, w - size + 1, size=2)
        if abs(int(y0) - int(y1)) >= size or abs(int(x0) - int(x1)) >= size:
            break
    out = image.copy()
    a = image[..., y0:y0 + size, x0:x0 + size].copy()
    out[..., y0:y0 + size, x0:x0 + size] = image[..., y1:y1 + size, x1:x1 + size]
    out[..., y1:y1 + size, x1:x1 + size] = a
    return out


def augment(sample: Sample, rng: np.random.Generator) -> Sample:
    """Random flips and 90-degree rotation on image and mask, then a patch swap on the image."""
    geo = random_geometric(rng)
    image = swap_patches(geo.apply(sample.image), rng)
    return replace(sample, image=image, mask=geo.apply(sample.mask))


def corrupt_gaussian(image: np.ndarray, rng: np.random.Generator, mean: float = 0.3,
                     std: float = 0.7) -> np.ndarray:
    if std < 0:
        raise ValueError(f"noise std must be non-negative, got {std}")
    image = np.asarray(image, dtype=np.float64)
    return image + rng.normal(mean, std, size=image.shape)


def convolve_reflect(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """2-d correlation of the trailing axes with reflect padding."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        return np.stack([ndimage.correlate(ch, kernel, mode="reflect") for ch in image])
    return ndimage.correlate(image, kernel, mode="reflect")


def random_kernel(rng: np.random.Generator, size: int) -> np.ndarray:
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {size}")
    while True:
        k = rng.standard_normal((size, size))
        total = k.sum()
        if abs(total) > 1e-3:
            return k / total


def corrupt_random_convolution(image: np.ndarray, rng: np.random.Generator, kernel_size: int = 9) -> np.ndarray:
    """Convolve with a random sum-one kernel, then re-normalize."""
    kernel = random_kernel(rng, kernel_size)
    return normalize(convolve_reflect(image, kernel))
