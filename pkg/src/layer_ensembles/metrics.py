"""Segmentation, calibration and rank-correlation metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from scipy.stats import rankdata

CLAMP = 1e-7


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"label maps differ in shape: {a.shape} vs {b.shape}")
    return a, b


def dice(a: np.ndarray, b: np.ndarray, c: int = 1) -> float:
    """Dice of class ``c``; 1 when both are empty, 0 when only one is."""
    a, b = _check_pair(a, b)
    ma = a == c
    mb = b == c
    total = int(ma.sum()) + int(mb.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(ma, mb).sum()) / total


def boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with a 4-neighbour outside the mask (or the image)."""
    mask = np.asarray(mask, dtype=bool)
    interior = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(2, 1),
                                      border_value=0)
    return mask & ~interior


def mhd(a: np.ndarray, b: np.ndarray, c: int = 1, spacing: Sequence[float] = (1.0, 1.0)) -> float:
    """Modified Hausdorff distance between the class-``c`` boundaries.

    ``max(mean_x min_y d, mean_y min_x d)`` over boundary pixels. Returns
    NaN when either side has no class-``c`` pixel.
    """
    a, b = _check_pair(a, b)
    ba = boundary(a == c)
    bb = boundary(b == c)
    if not ba.any() or not bb.any():
        return math.nan
    sp = np.asarray(spacing, dtype=np.float64)
    xa = np.argwhere(ba) * sp
    xb = np.argwhere(bb) * sp
    d_ab = cKDTree(xb).query(xa)[0].mean()
    d_ba = cKDTree(xa).query(xb)[0].mean()
    return float(max(d_ab, d_ba))


def nll(prob: np.ndarray, target: np.ndarray) -> float:
    """Mean negative log-probability of the target class per pixel.

    ``prob`` is [K', H, W]; a single channel is the foreground probability.
    """
    prob = np.asarray(prob, dtype=np.float64)
    target = np.asarray(target)
    if prob.shape[1:] != target.shape:
        raise ValueError(f"prob {prob.shape} does not match target {target.shape}")
    if prob.shape[0] == 1:
        pt = np.where(target == 1, prob[0], 1.0 - prob[0])
    else:
        pt = np.take_along_axis(prob, target[None].astype(np.int64), axis=0)[0]
    return float(-np.log(np.clip(pt, CLAMP, 1.0 - CLAMP)).mean())


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of average ranks; NaN when a rank vector is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("spearman needs two 1-d sequences of equal length")
    if x.size < 3:
        raise ValueError("spearman needs at least 3 pairs")
    rx = rankdata(x) - (x.size + 1) / 2.0
    ry = rankdata(y) - (y.size + 1) / 2.0
    den = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if den == 0.0:
        return math.nan
    return float(np.clip((rx @ ry) / den, -1.0, 1.0))


@dataclass
class MetricRecord:
    dsc: float
    mhd: float
    nll: float
    class_dsc: list[float] = field(default_factory=list)
    class_mhd: list[float] = field(default_factory=list)


def foreground_classes(num_classes: int) -> list[int]:
    return [1] if num_classes <= 1 else list(range(1, num_classes))


def evaluate(label: np.ndarray, prob: np.ndarray, target: np.ndarray, num_classes: int,
             spacing: Sequence[float] = (1.0, 1.0)) -> MetricRecord:
    """DSC and MHD of ``label`` plus NLL of ``prob`` against ``target``.

    Multi-class DSC/MHD are means over foreground classes; MHD is NaN if
    any class distance is undefined.
    """
    classes = foreground_classes(num_classes)
    dscs = [dice(label, target, c) for c in classes]
    mhds = [mhd(label, target, c, spacing) for c in classes]
    return MetricRecord(
        dsc=float(np.mean(dscs)),
        mhd=float(np.mean(mhds)),
        nll=nll(prob, target),
        class_dsc=dscs if len(classes) > 1 else [],
        class_mhd=mhds if len(classes) > 1 else [],
    )
