"""Desk-scale versions of the evaluation analyses.

Everything here works on a frozen network: per-image evaluation, quality
control curves, uncertainty/accuracy rank correlations, the skipped-heads
calibration sweep and prediction-depth histograms under corruption.
"""
from __future__ import annotations

import math
import warnings
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data.synthetic import Sample
from .data.transforms import corrupt_gaussian, corrupt_random_convolution, normalize
from .fusion import average_fuse, staple_heads
from .metrics import dice, evaluate, foreground_classes, nll, spearman
from .model.network import HeadOutputs, LayerEnsembleNet, forward_all_heads
from .uncertainty import DEFAULT_TAU, build_report

UNCERTAINTY_COLUMNS = ("entropy_sum", "mi_sum", "variance_sum", "aula")
SEGMENTATION_COLUMNS = ("dsc", "mhd")
DEFAULT_GRID = np.round(np.linspace(0.0, 1.0, 101), 10)


@dataclass
class ImageResult:
    id: str
    tags: str
    dsc: float
    mhd: float
    nll: float
    variance_sum: float
    entropy_sum: float
    mi_sum: float
    aula: float
    prediction_depth: int
    corrupted: bool = False
    class_dsc: list[float] = field(default_factory=list)
    class_mhd: list[float] = field(default_factory=list)

    def row(self) -> dict:
        out = {
            "id": self.id,
            "tags": self.tags,
            "corrupted": int(self.corrupted),
            "dsc": self.dsc,
            "mhd": self.mhd,
            "nll": self.nll,
            "variance_sum": self.variance_sum,
            "entropy_sum": self.entropy_sum,
            "mi_sum": self.mi_sum,
            "aula": self.aula,
            "prediction_depth": self.prediction_depth,
        }
        for i, v in enumerate(self.class_dsc, start=1):
            out[f"dsc_c{i}"] = v
        for i, v in enumerate(self.class_mhd, start=1):
            out[f"mhd_c{i}"] = v
        return out


def score_image(outputs: HeadOutputs, sample: Sample, skip: int, tau: float = DEFAULT_TAU,
                corrupted: bool = False) -> ImageResult:
    """STAPLE labels for DSC/MHD, head-averaged probabilities for NLL."""
    k = outputs.num_classes
    fused = staple_heads(outputs, skip)
    avg = average_fuse(outputs, skip)
    rec = evaluate(fused.label, avg.prob, sample.mask, k)
    rep = build_report(outputs, skip, tau)
    return ImageResult(
        id=sample.id,
        tags=";".join(sorted(sample.tags)),
        dsc=rec.dsc,
        mhd=rec.mhd,
        nll=rec.nll,
        variance_sum=rep.variance_sum,
        entropy_sum=rep.entropy_sum,
        mi_sum=rep.mi_sum,
        aula=rep.aula,
        prediction_depth=rep.prediction_depth,
        corrupted=corrupted,
        class_dsc=rec.class_dsc,
        class_mhd=rec.class_mhd,
    )


def _chunks(n: int, size: int) -> list[range]:
    return [range(i, min(i + size, n)) for i in range(0, n, size)]


def infer(net: LayerEnsembleNet, images: Sequence[np.ndarray], threads: int = 1,
          batch_size: int = 16) -> list[HeadOutputs]:
    """Head outputs for already-preprocessed images, in input order."""
    net.eval()
    chunks = _chunks(len(images), batch_size)

    def run(r: range) -> list[HeadOutputs]:
        return forward_all_heads(net, np.stack([images[i] for i in r]))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(r) for r in chunks]
    return [o for part in parts for o in part]


def preprocess(samples: Sequence[Sample]) -> list[np.ndarray]:
    return [normalize(s.image) for s in samples]


def evaluate_model(net: LayerEnsembleNet, samples: Sequence[Sample], skip: int, tau: float = DEFAULT_TAU,
                   threads: int = 1, images: Sequence[np.ndarray] | None = None,
                   corrupted: Sequence[bool] | None = None) -> list[ImageResult]:
    images = preprocess(samples) if images is None else images
    outputs = infer(net, images, threads)
    flags = corrupted or [False] * len(samples)
    args = list(zip(outputs, samples, flags))

    def score(a):
        return score_image(a[0], a[1], skip, tau, a[2])

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(score, args))
    return [score(a) for a in args]


# -- quality control ---------------------------------------------------------

@dataclass
class QcCurve:
    fractions: np.ndarray
    remaining: np.ndarray
    auc: float
    random: np.ndarray
    ideal: np.ndarray
    ideal_auc: float
    poor_threshold: float
    num_poor: int
    no_poor_cases: bool = False

    @property
    def random_auc(self) -> float:
        return _trapezoid(self.fractions, self.random)


def _trapezoid(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


def flag_count(fraction: float, n: int) -> int:
    """ceil(fraction * n), robust to binary rounding of the grid."""
    return min(n, int(math.ceil(round(fraction * n, 9))))


def flag_order(uncertainty: Sequence[float], ids: Sequence[str] | None = None) -> np.ndarray:
    """Indices from most to least uncertain; ties broken by image id."""
    u = np.asarray(uncertainty, dtype=np.float64)
    keys = ids if ids is not None else [f"{i:012d}" for i in range(len(u))]
    id_rank = np.argsort(np.argsort(np.asarray(keys, dtype=object), kind="stable"), kind="stable")
    return np.lexsort((id_rank, -u))


def qc_curve(uncertainty: Sequence[float], dsc: Sequence[float], poor_threshold: float = 0.90,
             grid: Sequence[float] | None = None, ids: Sequence[str] | None = None) -> QcCurve:
    """Fraction of poor segmentations left after flagging the most uncertain images."""
    dsc = np.asarray(dsc, dtype=np.float64)
    n = dsc.size
    grid = DEFAULT_GRID if grid is None else np.asarray(grid, dtype=np.float64)
    poor = dsc < poor_threshold
    n_poor = int(poor.sum())
    random = 1.0 - grid
    if n_poor == 0:
        warnings.warn("no poor segmentations; QC curve is identically zero", RuntimeWarning, stacklevel=2)
        zeros = np.zeros_like(grid)
        return QcCurve(grid, zeros, 0.0, random, zeros.copy(), 0.0, poor_threshold, 0, True)
    order = flag_order(uncertainty, ids)
    caught = np.concatenate([[0], np.cumsum(poor[order])])
    counts = np.array([flag_count(f, n) for f in grid])
    remaining = (n_poor - caught[counts]) / n_poor
    ideal = np.maximum(n_poor - counts, 0) / n_poor
    return QcCurve(grid, remaining, _trapezoid(grid, remaining), random, ideal,
                   _trapezoid(grid, ideal), poor_threshold, n_poor)


def aula_uncertainty(aula_values: Sequence[float]) -> np.ndarray:
    """High AULA means low uncertainty, so negate."""
    return -np.asarray(aula_values, dtype=np.float64)


# -- correlations ------------------------------------------------------------

@dataclass
class CorrelationTable:
    rho: dict[tuple[str, str], float]
    counts: dict[tuple[str, str], int]

    def get(self, uncertainty: str, segmentation: str) -> float:
        return self.rho[(uncertainty, segmentation)]

    def rows(self) -> list[dict]:
        return [
            {"uncertainty": u, "segmentation": s, "rho": self.rho[(u, s)], "n": self.counts[(u, s)]}
            for (u, s) in self.rho
        ]


def correlation_table(results: Sequence[ImageResult | dict],
                      uncertainty_columns: Sequence[str] = UNCERTAINTY_COLUMNS,
                      segmentation_columns: Sequence[str] = SEGMENTATION_COLUMNS) -> CorrelationTable:
    """Spearman rho for every (uncertainty, segmentation) column pair.

    Images with an undefined value in either column are dropped pairwise;
    NaN marks pairs with fewer than three images or constant ranks.
    """
    rows = [r.row() if isinstance(r, ImageResult) else r for r in results]
    rho: dict[tuple[str, str], float] = {}
    counts: dict[tuple[str, str], int] = {}
    for s in segmentation_columns:
        for u in uncertainty_columns:
            x = np.array([float(r[u]) for r in rows])
            y = np.array([float(r[s]) for r in rows])
            ok = np.isfinite(x) & np.isfinite(y)
            counts[(u, s)] = int(ok.sum())
            rho[(u, s)] = spearman(x[ok], y[ok]) if ok.sum() >= 3 else math.nan
    return CorrelationTable(rho, counts)


# -- calibration vs. skipped heads ------------------------------------------

@dataclass
class SweepRow:
    skip: int
    nll_mean: float
    nll_std: float
    dsc_mean: float
    dsc_std: float
    plain: bool = False

    def row(self) -> dict:
        return {"skip": self.skip, "plain": int(self.plain), "nll_mean": self.nll_mean,
                "nll_std": self.nll_std, "dsc_mean": self.dsc_mean, "dsc_std": self.dsc_std}


def _fused_at(outputs: HeadOutputs, skip: int) -> tuple[np.ndarray, np.ndarray]:
    """(probability, label) from heads skip..N-1; skip = N-1 is the last head alone."""
    n = len(outputs)
    if skip == n - 1:
        prob = outputs.probs[-1]
        label = (prob[0] >= 0.5).astype(np.int64) if prob.shape[0] == 1 else prob.argmax(axis=0)
        return prob, label
    f = average_fuse(outputs, skip)
    return f.prob, f.label


def calibration_sweep(outputs: Sequence[HeadOutputs], samples: Sequence[Sample],
                      skips: Sequence[int] | None = None) -> list[SweepRow]:
    """NLL and DSC of averaging fusion for each number of skipped heads.

    ``skip = N - 1`` evaluates the last head on its own, i.e. the plain
    single-output network.
    """
    n = len(outputs[0])
    skips = range(n) if skips is None else skips
    rows = []
    for skip in skips:
        if not 0 <= skip <= n - 1:
            raise ValueError(f"skip must be in [0, {n - 1}], got {skip}")
        nlls, dscs = [], []
        for o, s in zip(outputs, samples):
            prob, label = _fused_at(o, skip)
            nlls.append(nll(prob, s.mask))
            dscs.append(np.mean([dice(label, s.mask, c) for c in foreground_classes(o.num_classes)]))
        rows.append(SweepRow(skip, float(np.mean(nlls)), float(np.std(nlls)),
                             float(np.mean(dscs)), float(np.std(dscs)), plain=skip == n - 1))
    return rows


# -- prediction depth under corruption ----------------------------------------

@dataclass
class PdHistogram:
    fraction: float
    counts: dict[int, int]
    depths: list[int]

    @property
    def mean(self) -> float:
        return float(np.mean(self.depths)) if self.depths else math.nan

    @property
    def total(self) -> int:
        return sum(self.counts.values())


Corruption = Callable[[np.ndarray, np.random.Generator], np.ndarray]


def make_corruption(kind: str = "gaussian", mean: float = 0.3, std: float = 0.7,
                    kernel_size: int = 9) -> Corruption:
    if kind == "gaussian":
        return lambda img, rng: corrupt_gaussian(img, rng, mean, std)
    if kind == "random-conv":
        return lambda img, rng: corrupt_random_convolution(img, rng, kernel_size)
    raise ValueError(f"unknown corruption {kind!r}")


def corrupted_inputs(samples: Sequence[Sample], fraction: float, corruption: Corruption,
                     seed: int = 0) -> tuple[list[np.ndarray], list[bool]]:
    """Normalized images with the first ``round(fraction * n)`` of a seeded
    permutation corrupted.

    Each image draws its corruption from its own seed stream, so a larger
    fraction corrupts a superset of images with identical noise.
    """
    n = len(samples)
    perm = np.random.default_rng(np.random.SeedSequence([seed, 1])).permutation(n)
    chosen = set(perm[: int(round(fraction * n))].tolist())
    images, flags = [], []
    for i, s in enumerate(samples):
        img = normalize(s.image)
        if i in chosen:
            img = corruption(img, np.random.default_rng(np.random.SeedSequence([seed, 2, i])))
        images.append(img)
        flags.append(i in chosen)
    return images, flags


def pd_shift(net: LayerEnsembleNet, samples: Sequence[Sample], corruption: Corruption,
             fractions: Sequence[float] = (0.0, 0.5, 1.0), skip: int = 0, tau: float = DEFAULT_TAU,
             seed: int = 0, threads: int = 1) -> tuple[list[PdHistogram], list[list[ImageResult]]]:
    hists, per_fraction = [], []
    for f in fractions:
        images, flags = corrupted_inputs(samples, f, corruption, seed)
        results = evaluate_model(net, samples, skip, tau, threads, images, flags)
        depths = [r.prediction_depth for r in results]
        counts = Counter(depths)
        full = {d: counts.get(d, 0) for d in range(skip, len(net.heads))}
        hists.append(PdHistogram(float(f), full, depths))
        per_fraction.append(results)
    return hists, per_fraction


# -- summary -----------------------------------------------------------------

def _mean_std(values: Sequence[float]) -> tuple[float, float, int]:
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return math.nan, math.nan, 0
    return float(v.mean()), float(v.std()), int(v.size)


def summary_table(results: Sequence[ImageResult]) -> dict[str, float]:
    """Mean/std of DSC, MHD and NLL; MHD over defined cases only."""
    out: dict[str, float] = {"n": len(results)}
    for key in ("dsc", "mhd", "nll"):
        m, s, k = _mean_std([getattr(r, key) for r in results])
        out[f"{key}_mean"] = m
        out[f"{key}_std"] = s
        if key == "mhd":
            out["mhd_undefined"] = len(results) - k
    n_classes = len(results[0].class_dsc) if results else 0
    for c in range(n_classes):
        for key in ("class_dsc", "class_mhd"):
            m, s, k = _mean_std([getattr(r, key)[c] for r in results])
            name = key.split("_")[1]
            out[f"{name}_c{c + 1}_mean"] = m
            out[f"{name}_c{c + 1}_std"] = s
            if name == "mhd":
                out[f"mhd_c{c + 1}_undefined"] = len(results) - k
    return out
