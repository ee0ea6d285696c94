"""Pixel-wise and image-level uncertainty from head outputs."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fusion import check_skip, labels_from_probs
from .metrics import dice
from .model.network import HeadOutputs

CLAMP = 1e-7
DEFAULT_TAU = 0.90


def _class_probs(stack: np.ndarray) -> np.ndarray:
    """[M, K', H, W] -> [M, C, H, W] with explicit background for K' = 1."""
    if stack.shape[1] == 1:
        return np.concatenate([1.0 - stack, stack], axis=1)
    return stack


def _entropy(p: np.ndarray, axis: int) -> np.ndarray:
    p = np.clip(p, CLAMP, 1.0 - CLAMP)
    return -(p * np.log(p)).sum(axis=axis)


def pixel_variance(outputs: HeadOutputs, skip: int = 0) -> np.ndarray:
    """Population variance across heads; averaged over classes when K' >= 2."""
    check_skip(len(outputs), skip)
    return outputs.stack(skip).var(axis=0).mean(axis=0)


def pixel_entropy(outputs: HeadOutputs, skip: int = 0) -> np.ndarray:
    """Entropy (nats) of the head-averaged class distribution."""
    check_skip(len(outputs), skip)
    mean = _class_probs(outputs.stack(skip)).mean(axis=0)
    return _entropy(mean, axis=0)


def pixel_mutual_information(outputs: HeadOutputs, skip: int = 0) -> np.ndarray:
    """Entropy of the mean minus mean entropy of the heads, floored at 0."""
    check_skip(len(outputs), skip)
    probs = _class_probs(outputs.stack(skip))
    total = _entropy(probs.mean(axis=0), axis=0)
    expected = _entropy(probs, axis=1).mean(axis=0)
    return np.maximum(total - expected, 0.0)


@dataclass
class LayerAgreementCurve:
    agreements: np.ndarray
    skip: int = 0
    tau: float = DEFAULT_TAU

    def __len__(self) -> int:
        return len(self.agreements)


def label_agreement(a: np.ndarray, b: np.ndarray, num_classes: int) -> float:
    """Mean Dice over foreground classes of two label maps."""
    classes = [1] if num_classes == 1 else range(1, num_classes)
    return float(np.mean([dice(a, b, c) for c in classes]))


def layer_agreement_curve(outputs: HeadOutputs, skip: int = 0, tau: float = DEFAULT_TAU) -> LayerAgreementCurve:
    """Dice between the labels of adjacent heads skip..N-1."""
    check_skip(len(outputs), skip)
    labels = [labels_from_probs(p) for p in outputs.probs[skip:]]
    k = outputs.num_classes
    agr = [label_agreement(labels[i], labels[i + 1], k) for i in range(len(labels) - 1)]
    return LayerAgreementCurve(np.asarray(agr), skip, tau)


def aula(curve: LayerAgreementCurve | Sequence[float]) -> float:
    """Trapezoidal area under the agreement curve, scaled to [0, 1].

    High values mean the heads settle early, i.e. low uncertainty.
    """
    a = np.asarray(curve.agreements if isinstance(curve, LayerAgreementCurve) else curve, dtype=np.float64)
    if a.size < 2:
        raise ValueError(f"AULA needs at least two agreement values, got {a.size}")
    area = float(np.sum((a[1:] + a[:-1]) / 2.0))
    return area / (a.size - 1)


def prediction_depth(curve: LayerAgreementCurve, tau: float | None = None) -> int:
    """Absolute index of the head after the last adjacent pair agreeing below ``tau``.

    Returns ``curve.skip`` when every pair agrees at least ``tau``.
    """
    tau = curve.tau if tau is None else tau
    below = np.flatnonzero(np.asarray(curve.agreements) < tau)
    if below.size == 0:
        return curve.skip
    return curve.skip + int(below[-1]) + 1


@dataclass
class UncertaintyReport:
    variance_map: np.ndarray
    entropy_map: np.ndarray
    mi_map: np.ndarray
    variance_sum: float
    entropy_sum: float
    mi_sum: float
    aula: float
    prediction_depth: int
    agreements: list[float] = field(default_factory=list)

    def scalars(self) -> dict[str, float]:
        return {
            "variance_sum": self.variance_sum,
            "entropy_sum": self.entropy_sum,
            "mi_sum": self.mi_sum,
            "aula": self.aula,
            "prediction_depth": self.prediction_depth,
        }


def build_report(outputs: HeadOutputs, skip: int = 0, tau: float = DEFAULT_TAU) -> UncertaintyReport:
    var = pixel_variance(outputs, skip)
    ent = pixel_entropy(outputs, skip)
    mi = pixel_mutual_information(outputs, skip)
    curve = layer_agreement_curve(outputs, skip, tau)
    return UncertaintyReport(
        variance_map=var,
        entropy_map=ent,
        mi_map=mi,
        variance_sum=float(var.sum()),
        entropy_sum=float(ent.sum()),
        mi_sum=float(mi.sum()),
        aula=aula(curve),
        prediction_depth=prediction_depth(curve, tau),
        agreements=[float(a) for a in curve.agreements],
    )
