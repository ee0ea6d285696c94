"""Deterministic synthetic segmentation datasets.

Binary samples are a single centred ellipse on a textured background.
Three-class samples mimic a short-axis cardiac slice: a bright disc
(class 1) inside a dark ring (class 2) with a bright crescent-shaped blob
to one side (class 3).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

SPLITS = ("train", "val", "test")


@dataclass
class Sample:
    image: np.ndarray  # [C, H, W]
    mask: np.ndarray  # [H, W] int
    id: str
    tags: frozenset[str] = frozenset()


@dataclass
class DatasetSpec:
    train: int = 500
    val: int = 100
    test: int = 120
    image_size: int = 64
    num_classes: int = 1
    low_contrast_fraction: float = 0.2
    contrast: tuple[float, float] = (0.9, 1.6)
    low_contrast: tuple[float, float] = (0.4, 0.75)
    noise: float = 0.12
    seed: int = 0

    def __post_init__(self):
        self.contrast = tuple(float(v) for v in self.contrast)
        self.low_contrast = tuple(float(v) for v in self.low_contrast)
        if self.num_classes not in (1, 3):
            raise ValueError(f"num_classes must be 1 or 3, got {self.num_classes}")
        if self.image_size < 16:
            raise ValueError("image_size must be at least 16")
        if not 0.0 <= self.low_contrast_fraction <= 1.0:
            raise ValueError("low_contrast_fraction must lie in [0, 1]")
        if min(self.train, self.val, self.test) < 0:
            raise ValueError("split counts must be non-negative")

    def count(self, split: str) -> int:
        return getattr(self, split)


@dataclass
class Dataset:
    spec: DatasetSpec
    splits: dict[str, list[Sample]] = field(default_factory=dict)

    def __getitem__(self, split: str) -> list[Sample]:
        return self.splits[split]


def _grid(n: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    return yy, xx


def _ellipse(n: int, cy: float, cx: float, ry: float, rx: float, theta: float) -> np.ndarray:
    yy, xx = _grid(n)
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(theta), np.sin(theta)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _texture(rng: np.random.Generator, n: int, sigma: float) -> np.ndarray:
    t = ndimage.gaussian_filter(rng.standard_normal((n, n)), sigma, mode="reflect")
    return t / (t.std() + 1e-12)


def _binary_sample(rng: np.random.Generator, spec: DatasetSpec, low: bool) -> tuple[np.ndarray, np.ndarray]:
    n = spec.image_size
    scale = n / 64.0
    cy = n / 2 + rng.uniform(-3, 3) * scale
    cx = n / 2 + rng.uniform(-3, 3) * scale
    ry = rng.uniform(12, 22) * scale
    rx = rng.uniform(12, 22) * scale
    mask = _ellipse(n, cy, cx, ry, rx, rng.uniform(0, np.pi))
    lo, hi = spec.low_contrast if low else spec.contrast
    contrast = rng.uniform(lo, hi)
    soft = ndimage.gaussian_filter(mask.astype(np.float64), 1.0 + 1.5 * low)
    image = contrast * soft
    image += 0.35 * _texture(rng, n, 4.0 * scale)
    image += spec.noise * rng.standard_normal((n, n))
    return image, mask.astype(np.int64)


def _cardiac_sample(rng: np.random.Generator, spec: DatasetSpec, low: bool) -> tuple[np.ndarray, np.ndarray]:
    n = spec.image_size
    scale = n / 64.0
    yy, xx = _grid(n)
    cy = n / 2 + rng.uniform(-3, 3) * scale
    cx = n / 2 + rng.uniform(-3, 3) * scale - 4 * scale
    r_lv = rng.uniform(6, 10) * scale
    r_myo = r_lv + rng.uniform(3, 5) * scale
    dist = np.hypot(yy - cy, xx - cx)
    lv = dist <= r_lv
    myo = (dist > r_lv) & (dist <= r_myo)
    ang = rng.uniform(-0.4, 0.4)
    off = r_myo + rng.uniform(4, 7) * scale
    rv_blob = _ellipse(n, cy + off * np.sin(ang), cx + off * np.cos(ang),
                       rng.uniform(8, 12) * scale, rng.uniform(5, 8) * scale, ang + np.pi / 2)
    rv = rv_blob & (dist > r_myo + 1.0 * scale)
    mask = np.zeros((n, n), dtype=np.int64)
    mask[lv] = 1
    mask[myo] = 2
    mask[rv] = 3
    lo, hi = spec.low_contrast if low else spec.contrast
    c = rng.uniform(lo, hi)
    levels = np.array([0.0, 1.0, -0.6, 0.8]) * c
    image = ndimage.gaussian_filter(levels[mask], 1.0 + 1.5 * low)
    image += 0.3 * _texture(rng, n, 4.0 * scale)
    image += spec.noise * rng.standard_normal((n, n))
    return image, mask


def sample_seed(spec_seed: int, split: str, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([spec_seed, SPLITS.index(split), index])


def make_sample(spec: DatasetSpec, split: str, index: int) -> Sample:
    rng = np.random.default_rng(sample_seed(spec.seed, split, index))
    low = bool(rng.random() < spec.low_contrast_fraction)
    maker = _binary_sample if spec.num_classes == 1 else _cardiac_sample
    image, mask = maker(rng, spec, low)
    tags = frozenset({"low-contrast"}) if low else frozenset()
    return Sample(image=image[None], mask=mask, id=f"{split}-{index:05d}", tags=tags)


def generate(spec: DatasetSpec) -> Dataset:
    """Every sample depends only on (spec, split, index)."""
    ds = Dataset(spec)
    for split in SPLITS:
        ds.splits[split] = [make_sample(spec, split, i) for i in range(spec.count(split))]
    return ds
