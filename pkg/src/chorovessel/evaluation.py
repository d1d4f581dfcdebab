"""Pixel-level agreement metrics between predicted and reference vessel maps.

Point estimates pool pixels across images; uncertainty comes from a seeded
percentile bootstrap over images (the resampling unit is the image, since
pixels within an image are strongly clustered). Dice of two empty masks is
1.0 by convention, which also makes F1 equal Dice on every binary input.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .raster import Mask, ProbabilityGrid

REPORT_SCHEMA = "evalreport/1"
METRIC_NAMES = ("dice", "f1_score", "auc", "accuracy", "sensitivity", "specificity")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total

    def sensitivity(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else float("nan")

    def specificity(self) -> float:
        d = self.tn + self.fp
        return self.tn / d if d else float("nan")

    def dice(self) -> float:
        d = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / d if d else 1.0

    def f1(self) -> float:
        return self.dice()

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


def confusion(pred: Mask, truth: Mask) -> ConfusionCounts:
    """Exact pixel tallies; masks must have identical dimensions."""
    if pred.bits.shape != truth.bits.shape:
        raise ValueError(f"dimension mismatch: {pred.bits.shape} vs {truth.bits.shape}")
    p = pred.bits.astype(bool)
    t = truth.bits.astype(bool)
    tp = int((p & t).sum())
    fp = int((p & ~t).sum())
    fn = int((~p & t).sum())
    tn = int((~p & ~t).sum())
    return ConfusionCounts(tp, fp, fn, tn)


def dice(a: Mask, b: Mask) -> float:
    """2|A∩B| / (|A|+|B|); two empty masks agree perfectly (1.0)."""
    if a.bits.shape != b.bits.shape:
        raise ValueError(f"dimension mismatch: {a.bits.shape} vs {b.bits.shape}")
    inter = int((a.bits & b.bits).sum())
    size = int(a.bits.sum()) + int(b.bits.sum())
    return 2 * inter / size if size else 1.0


def auc(grid: ProbabilityGrid, truth: Mask) -> float:
    """Probability a random vessel pixel outranks a random background pixel.

    Rank-based (Mann-Whitney) with ties counted half, identical to the
    trapezoidal ROC area.
    """
    if grid.values.shape != truth.bits.shape:
        raise ValueError(f"dimension mismatch: {grid.values.shape} vs {truth.bits.shape}")
    return _auc_flat(grid.values.ravel(), truth.bits.ravel())


def _auc_flat(scores: np.ndarray, labels: np.ndarray) -> float:
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("single-class truth: AUC undefined")
    ranks = rankdata(scores)
    return (float(ranks[pos].sum()) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class MetricEstimate:
    point: float
    ci_lo: float
    ci_hi: float


@dataclass(frozen=True)
class EvalReport:
    metrics: dict[str, MetricEstimate]
    n_images: int
    n_bootstrap: int
    seed: int
    ci_method: str = "percentile bootstrap over images (method not stated upstream)"

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "n_images": self.n_images,
            "n_bootstrap": self.n_bootstrap,
            "seed": self.seed,
            "ci_method": self.ci_method,
            "metrics": {
                name: None if est is None else
                {"point": _jsonf(est.point), "ci_lo": _jsonf(est.ci_lo),
                 "ci_hi": _jsonf(est.ci_hi)}
                for name, est in self.metrics.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def _jsonf(x: float):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else float(x)


def _pooled_metrics(pairs, indices) -> dict[str, float]:
    """Pooled-pixel metrics for the image multiset selected by `indices`."""
    counts = ConfusionCounts(0, 0, 0, 0)
    for i in indices:
        counts = counts + pairs[i][3]
    out = {
        "dice": counts.dice(),
        "f1_score": counts.f1(),
        "accuracy": counts.accuracy(),
        "sensitivity": counts.sensitivity(),
        "specificity": counts.specificity(),
    }
    if all(p[2] is not None for p in pairs):
        scores = np.concatenate([pairs[i][2].values.ravel() for i in indices])
        labels = np.concatenate([pairs[i][1].bits.ravel() for i in indices])
        out["auc"] = _auc_flat(scores, labels)
    else:
        out["auc"] = float("nan")
    return out


def bootstrap_report(pairs, n_boot: int = 1000, seed: int = 0,
                     _indices: np.ndarray | None = None) -> EvalReport:
    """Evaluate (pred, truth[, grid]) image pairs with bootstrap 95% CIs.

    `pairs` is a sequence of (Mask, Mask) or (Mask, Mask, ProbabilityGrid).
    Replicates resample whole images with replacement; the resample index
    table is generated up front from `seed`, so results are reproducible and
    independent of any execution order. `_indices` overrides the table (used
    by exhaustive-enumeration tests).
    """
    if len(pairs) == 0:
        raise ValueError("no image pairs to evaluate")
    if _indices is None and len(pairs) < 2:
        raise ValueError("need at least two images for a bootstrap")
    prep = []
    for item in pairs:
        pred, truth = item[0], item[1]
        grid = item[2] if len(item) > 2 else None
        prep.append((pred, truth, grid, confusion(pred, truth)))

    n = len(prep)
    if _indices is None:
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, n, size=(n_boot, n))
    else:
        idx = np.asarray(_indices)
        n_boot = idx.shape[0]

    point = _pooled_metrics(prep, range(n))
    reps = {name: np.empty(n_boot) for name in METRIC_NAMES}
    for b in range(n_boot):
        m = _pooled_metrics(prep, idx[b])
        for name in METRIC_NAMES:
            reps[name][b] = m[name]

    metrics = {}
    for name in METRIC_NAMES:
        vals = reps[name]
        if math.isnan(point[name]) or np.isnan(vals).all():
            metrics[name] = MetricEstimate(point[name], float("nan"), float("nan"))
        else:
            lo, hi = np.percentile(vals[~np.isnan(vals)], [2.5, 97.5])
            # the interval always brackets the pooled point estimate
            metrics[name] = MetricEstimate(point[name],
                                           min(float(lo), point[name]),
                                           max(float(hi), point[name]))
    return EvalReport(metrics=metrics, n_images=n, n_bootstrap=n_boot, seed=seed)
