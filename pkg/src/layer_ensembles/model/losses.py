"""Training losses on probability maps, with hand-written gradients."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..nn import ShapeError, Tensor
from ..nn.ops import linear_combination
from ..nn.tensor import make_node

SMOOTH = 1e-5
CLAMP = 1e-7


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Integer maps [..., H, W] -> targets [..., K', H, W].

    With a single output channel the target is the foreground indicator.
    """
    labels = np.asarray(labels)
    if num_classes == 1:
        return (labels == 1).astype(np.float64)[..., None, :, :]
    eye = (labels[..., None, :, :] == np.arange(num_classes).reshape(-1, 1, 1))
    return eye.astype(np.float64)


def _batched(probs: Tensor, target: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    p = probs.data
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"probs {p.shape} and target {t.shape} differ in shape")
    if p.ndim == 3:
        return p[None], t[None], True
    if p.ndim != 4:
        raise ShapeError(f"expected [K,H,W] or [B,K,H,W], got {p.shape}")
    return p, t, False


def _gdl_weights(t: np.ndarray) -> np.ndarray:
    vol = t.sum(axis=(2, 3))
    with np.errstate(divide="ignore"):
        w = 1.0 / vol ** 2
    for row in w:
        finite = np.isfinite(row)
        row[~finite] = row[finite].max() if finite.any() else 1.0
    return w


def generalized_dice_loss(probs: Tensor, target: np.ndarray) -> Tensor:
    """Generalized Dice loss with inverse squared-volume class weights.

    Classes absent from the target get the largest finite weight of the
    image (or 1 when every class is absent). Batched input is averaged
    over images.
    """
    p, t, _ = _batched(probs, target)
    w = _gdl_weights(t)[:, :, None, None]
    num = 2.0 * (w * p * t).sum(axis=(1, 2, 3)) + SMOOTH
    den = (w * (p + t)).sum(axis=(1, 2, 3)) + SMOOTH
    loss = float(np.mean(1.0 - num / den))
    b = p.shape[0]
    shape = probs.shape

    def backward(g):
        n = num[:, None, None, None]
        d = den[:, None, None, None]
        grad = -(2.0 * w * t * d - n * w) / d ** 2 / b
        return ((g * grad).reshape(shape),)

    return make_node(np.array(loss), (probs,), backward, "generalized-dice")


def weighted_cross_entropy_loss(probs: Tensor, target: np.ndarray, weights: Sequence[float]) -> Tensor:
    """Mean over pixels of -w[class] * log p[class].

    For a single sigmoid channel the weights are (background, foreground).
    """
    p, t, _ = _batched(probs, target)
    weights = np.asarray(weights, dtype=np.float64)
    k = p.shape[1]
    if len(weights) != max(k, 2):
        raise ShapeError(f"need {max(k, 2)} class weights, got {len(weights)}")
    npix = p.shape[0] * p.shape[2] * p.shape[3]
    shape = probs.shape
    if k == 1:
        pc = np.clip(p, CLAMP, 1 - CLAMP)
        wfg, wbg = weights[1], weights[0]
        loss = -(wfg * t * np.log(pc) + wbg * (1 - t) * np.log(1 - pc)).sum() / npix
        inside = (p > CLAMP) & (p < 1 - CLAMP)

        def backward(g):
            grad = -(wfg * t / pc - wbg * (1 - t) / (1 - pc)) * inside / npix
            return ((g * grad).reshape(shape),)
    else:
        pc = np.clip(p, CLAMP, 1 - CLAMP)
        wmap = weights.reshape(1, -1, 1, 1) * t
        loss = -(wmap * np.log(pc)).sum() / npix
        inside = (p > CLAMP) & (p < 1 - CLAMP)

        def backward(g):
            grad = -wmap / pc * inside / npix
            return ((g * grad).reshape(shape),)

    return make_node(np.array(float(loss)), (probs,), backward, "weighted-cross-entropy")


def head_loss(probs: Tensor, target: np.ndarray, kind: str, weights: Sequence[float] = ()) -> Tensor:
    if kind == "generalized-dice":
        return generalized_dice_loss(probs, target)
    if kind == "weighted-cross-entropy":
        k = probs.shape[-3]
        if not len(weights):
            weights = (1.0,) * max(k, 2)
        return weighted_cross_entropy_loss(probs, target, weights)
    raise ValueError(f"unknown loss kind {kind!r}")


def multi_head_loss(head_probs: Sequence[Tensor], target: np.ndarray, kind: str = "generalized-dice",
                    weights: Sequence[float] = ()) -> Tensor:
    """Unweighted mean of the per-head losses."""
    losses = [head_loss(p, target, kind, weights) for p in head_probs]
    n = len(losses)
    return linear_combination(losses, [1.0 / n] * n)
