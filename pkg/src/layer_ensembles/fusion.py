"""Combining head outputs: probability averaging and STAPLE voting."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model.network import HeadOutputs

# posteriors this close to 0.5 are ties, decided for foreground; exact ties
# (e.g. two symmetric raters) otherwise land on either side by rounding
TIE_TOL = 1e-9


@dataclass
class FusedPrediction:
    prob: np.ndarray
    label: np.ndarray
    skip: int


@dataclass
class StapleResult:
    """Binary STAPLE estimate.

    ``sensitivity`` and ``specificity`` hold one value per rater;
    ``posterior`` is the per-pixel probability of true foreground.
    """

    sensitivity: np.ndarray
    specificity: np.ndarray
    posterior: np.ndarray
    iterations: int
    converged: bool

    @property
    def label(self) -> np.ndarray:
        return (self.posterior >= 0.5 - TIE_TOL).astype(np.int64)


def check_skip(num_heads: int, skip: int) -> None:
    if not 0 <= skip <= num_heads - 2:
        raise ValueError(f"skip must be in [0, {num_heads - 2}] for {num_heads} heads, got {skip}")


def labels_from_probs(prob: np.ndarray) -> np.ndarray:
    """[K',H,W] probabilities -> integer map; >= 0.5 for one channel, argmax otherwise."""
    if prob.shape[0] == 1:
        return (prob[0] >= 0.5).astype(np.int64)
    return prob.argmax(axis=0).astype(np.int64)


def average_fuse(outputs: HeadOutputs, skip: int = 0) -> FusedPrediction:
    check_skip(len(outputs), skip)
    prob = outputs.stack(skip).mean(axis=0)
    return FusedPrediction(prob=prob, label=labels_from_probs(prob), skip=skip)


def staple_fuse(masks: Sequence[np.ndarray], tol: float = 1e-6, max_iter: int = 100) -> StapleResult:
    """Binary STAPLE by expectation maximisation.

    The prior is spatially uniform and fixed at the mean foreground
    fraction over raters. Raters start at sensitivity = specificity =
    0.99999. Iteration stops when the largest per-rater
    ``|d sensitivity| + |d specificity|`` drops below ``tol``.
    """
    if len(masks) < 2:
        raise ValueError("STAPLE needs at least two raters")
    d = np.stack([np.asarray(m) for m in masks]).astype(bool)
    shape = d.shape[1:]
    d = d.reshape(len(masks), -1).astype(np.float64)
    j = d.shape[0]

    if not d.any() or d.all():
        full = 1.0 if d.all() else 0.0
        return StapleResult(np.ones(j), np.ones(j), np.full(shape, full), 0, True)

    prior = d.mean()
    p = np.full(j, 0.99999)
    q = np.full(j, 0.99999)
    converged = False
    it = 0
    w = None
    for it in range(1, max_iter + 1):
        a = prior * np.prod(np.where(d > 0, p[:, None], 1.0 - p[:, None]), axis=0)
        b = (1.0 - prior) * np.prod(np.where(d > 0, 1.0 - q[:, None], q[:, None]), axis=0)
        denom = a + b
        w = np.divide(a, denom, out=np.full_like(a, prior), where=denom > 0)
        sw = w.sum()
        sv = (1.0 - w).sum()
        p_new = (d @ w) / sw if sw > 0 else p
        q_new = ((1.0 - d) @ (1.0 - w)) / sv if sv > 0 else q
        delta = np.max(np.abs(p_new - p) + np.abs(q_new - q))
        p, q = p_new, q_new
        if delta < tol:
            converged = True
            break
    return StapleResult(p, q, w.reshape(shape), it, converged)


def staple_multiclass(label_maps: Sequence[np.ndarray], num_classes: int, tol: float = 1e-6,
                      max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """One-vs-rest STAPLE per foreground class.

    Returns (label map, class posteriors [K, H, W]) where class 0 is
    background with posterior ``1 - max`` over foreground posteriors.
    """
    maps = [np.asarray(m) for m in label_maps]
    post = np.zeros((num_classes,) + maps[0].shape)
    for c in range(1, num_classes):
        post[c] = staple_fuse([m == c for m in maps], tol, max_iter).posterior
    post[0] = 1.0 - post[1:].max(axis=0)
    return post.argmax(axis=0).astype(np.int64), post


def staple_heads(outputs: HeadOutputs, skip: int = 0, tol: float = 1e-6, max_iter: int = 100) -> FusedPrediction:
    """STAPLE over the binarised labels of the retained heads."""
    check_skip(len(outputs), skip)
    labels = [labels_from_probs(p) for p in outputs.probs[skip:]]
    k = outputs.num_classes
    if k == 1:
        res = staple_fuse(labels, tol, max_iter)
        return FusedPrediction(prob=res.posterior[None], label=res.label, skip=skip)
    label, post = staple_multiclass(labels, k, tol, max_iter)
    return FusedPrediction(prob=post, label=label, skip=skip)
