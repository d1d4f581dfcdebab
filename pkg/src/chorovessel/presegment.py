"""Vessel probability maps and proposal masks, plus refitting on corrections.

The proposer is a pluggable backend. The builtin is a classical multiscale
Hessian ridge filter (bright tubes on a dark field) whose "retraining" is an
exhaustive hyperparameter grid search against accumulated human corrections;
an external HTTP service can stand in for any stronger model. Both produce
the same artifacts: a probability grid and a thresholded high-sensitivity
proposal mask.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import requests
from scipy.ndimage import gaussian_filter

from .raster import (
    GrayImage,
    Mask,
    ProbabilityGrid,
    image_to_png_bytes,
    probability_from_bytes,
)

GAMMA_HALF_MAX = "half-max-hessian-norm"

FIT_SCALE_POOL = (1.0, 2.0, 4.0, 8.0, 16.0)
FIT_MAX_SUBSET = 4
FIT_THRESHOLDS = tuple(round(0.05 * k, 2) for k in range(1, 20))


class BackendError(RuntimeError):
    """External segmentation service failed or returned a bad payload."""


@dataclass(frozen=True)
class VesselnessParams:
    """Ridge-filter settings; `threshold` is the proposal cutoff.

    The round-1 default threshold of 0.10 is deliberately low: proposals
    should over-call vessels (high sensitivity) and let the human erase.
    """

    scales: tuple[float, ...] = (2.0, 4.0, 8.0, 16.0)
    beta: float = 0.5
    threshold: float = 0.10
    gamma_mode: str = GAMMA_HALF_MAX

    def __post_init__(self):
        s = tuple(float(x) for x in self.scales)
        if not s or any(b <= a for a, b in zip(s, s[1:])) or s[0] < 1.0:
            raise ValueError("scales must be nonempty, strictly increasing, all >= 1")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if self.gamma_mode != GAMMA_HALF_MAX:
            raise ValueError(f"unsupported gamma_mode {self.gamma_mode!r}")
        object.__setattr__(self, "scales", s)


@dataclass(frozen=True)
class BuiltinBackend:
    kind: str = "builtin-vesselness"
    params: VesselnessParams = field(default_factory=VesselnessParams)


@dataclass(frozen=True)
class ExternalBackend:
    url: str
    auth_header: str | None = None
    timeout_s: float = 30.0
    threshold: float = 0.5
    kind: str = "external-service"


def scale_response(img: GrayImage, scale: float, beta: float = 0.5) -> np.ndarray:
    """Single-scale bright-ridge response in [0, 1].

    Gaussian smoothing at sigma = scale/2, scale-normalized Hessian,
    eigenvalues ordered |l1| <= |l2|. Bright tubes have l2 < 0; elsewhere the
    response is zero. Structureness is normalized by half the max Hessian
    norm over the image, which makes the response invariant to positive
    affine intensity maps.
    """
    src = img.pixels.astype(np.float64)
    if src.shape[0] < 3 or src.shape[1] < 3:
        raise ValueError("image must be at least 3x3")
    # zero-mean input: the truncated derivative kernels leak a small DC
    # response, which would make flat images score nonzero
    src = src - src.mean()
    sig = scale / 2.0
    s2 = sig * sig
    hxx = gaussian_filter(src, sig, order=(0, 2)) * s2
    hyy = gaussian_filter(src, sig, order=(2, 0)) * s2
    hxy = gaussian_filter(src, sig, order=(1, 1)) * s2

    half_tr = (hxx + hyy) / 2.0
    root = np.sqrt(((hxx - hyy) / 2.0) ** 2 + hxy ** 2)
    la, lb = half_tr - root, half_tr + root
    swap = np.abs(la) > np.abs(lb)
    l1 = np.where(swap, lb, la)
    l2 = np.where(swap, la, lb)

    s_norm = np.sqrt(l1 ** 2 + l2 ** 2)
    smax = float(s_norm.max())
    if smax <= 1e-8 * max(1.0, float(np.abs(src).max())):
        return np.zeros_like(src)  # flat image: no structure anywhere
    c = smax / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        rb = np.where(l2 != 0, l1 / np.where(l2 == 0, 1.0, l2), 0.0)
    resp = np.exp(-rb ** 2 / (2.0 * beta ** 2)) * (1.0 - np.exp(-s_norm ** 2 / (2.0 * c * c)))
    return np.where(l2 < 0, resp, 0.0)


def vesselness(img: GrayImage, params: VesselnessParams) -> ProbabilityGrid:
    """Multiscale ridge response: pointwise max over the configured scales."""
    best = None
    for s in params.scales:
        r = scale_response(img, s, params.beta)
        best = r if best is None else np.maximum(best, r)
    return ProbabilityGrid(np.clip(best, 0.0, 1.0).astype(np.float32))


def propose(img: GrayImage, backend) -> tuple[ProbabilityGrid, Mask]:
    """Probability grid plus its thresholded proposal mask."""
    if isinstance(backend, BuiltinBackend):
        grid = vesselness(img, backend.params)
        thr = backend.params.threshold
    elif isinstance(backend, ExternalBackend):
        grid = _external_grid(img, backend)
        thr = backend.threshold
    else:
        raise TypeError(f"unknown backend {type(backend).__name__}")
    mask = Mask((grid.values >= thr).astype(np.uint8))
    return grid, mask


def _external_grid(img: GrayImage, backend: ExternalBackend) -> ProbabilityGrid:
    url = backend.url.rstrip("/")
    if not url.endswith("/segment"):
        url += "/segment"
    headers = {"Content-Type": "image/png"}
    if backend.auth_header:
        headers["Authorization"] = backend.auth_header
    try:
        resp = requests.post(url, data=image_to_png_bytes(img), headers=headers,
                             timeout=backend.timeout_s)
    except requests.RequestException as e:
        raise BackendError(f"segmentation service unreachable: {e}") from e
    if resp.status_code != 200:
        raise BackendError(f"segmentation service returned HTTP {resp.status_code}")
    try:
        grid = probability_from_bytes(resp.content)
    except ValueError as e:
        raise BackendError(f"bad probability payload: {e}") from e
    if (grid.height, grid.width) != img.pixels.shape:
        raise BackendError(
            f"dimension mismatch: service returned {grid.width}x{grid.height} "
            f"for a {img.width}x{img.height} image")
    return grid


@dataclass(frozen=True)
class FitGrid:
    """Search space for refitting; the default mirrors the deployed grid."""

    scale_pool: tuple[float, ...] = FIT_SCALE_POOL
    max_subset_size: int = FIT_MAX_SUBSET
    thresholds: tuple[float, ...] = FIT_THRESHOLDS


@dataclass(frozen=True)
class FitResult:
    params: VesselnessParams
    mean_dice: float
    n_pairs: int


def _dice_bits(a_count, b_count, inter):
    s = a_count + b_count
    return 2.0 * inter / s if s else 1.0


def fit_on_corrections(pairs, grid: FitGrid = FitGrid(),
                       beta: float = 0.5) -> FitResult:
    """Exhaustive grid search maximizing mean Dice(proposal, correction).

    Ties break toward the lower threshold, then the smaller scale subset, so
    the result is deterministic no matter how the sweep is scheduled.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("empty training set")
    for img, m in pairs:
        if img.pixels.shape != m.bits.shape:
            raise ValueError("image/mask dimension mismatch in training pair")

    thr = np.asarray(grid.thresholds)
    n_thr = len(thr)
    # single-scale responses once per (image, scale); subsets combine by max
    responses = [{s: scale_response(img, s, beta) for s in grid.scale_pool}
                 for img, _ in pairs]
    truth_counts = [int(m.bits.sum()) for _, m in pairs]

    subsets = []
    for k in range(1, grid.max_subset_size + 1):
        subsets.extend(itertools.combinations(sorted(grid.scale_pool), k))

    best = None  # (mean_dice, threshold, n_scales, subset, FitResult fields)
    for subset in subsets:
        per_thr_dice = np.zeros(n_thr)
        for (img, m), resp_map, tcount in zip(pairs, responses, truth_counts):
            resp = resp_map[subset[0]]
            for s in subset[1:]:
                resp = np.maximum(resp, resp_map[s])
            # float32 cast mirrors the ProbabilityGrid produced by propose(),
            # so the fitted threshold reproduces proposals bit-exactly
            resp = resp.astype(np.float32)
            # bucket pixels by how many grid thresholds they meet
            idx = np.searchsorted(thr, resp.ravel(), side="right")
            total_h = np.bincount(idx, minlength=n_thr + 1)
            truth_h = np.bincount(idx[m.bits.ravel() == 1], minlength=n_thr + 1)
            # proposal at thr[k] = pixels with idx >= k+1
            prop_sizes = total_h[::-1].cumsum()[::-1]
            inter_sizes = truth_h[::-1].cumsum()[::-1]
            for k in range(n_thr):
                per_thr_dice[k] += _dice_bits(int(prop_sizes[k + 1]), tcount,
                                              int(inter_sizes[k + 1]))
        per_thr_dice /= len(pairs)
        for k in range(n_thr):
            cand = (-per_thr_dice[k], thr[k], len(subset), subset)
            if best is None or cand < best:
                best = cand
    neg_dice, threshold, _n, subset = best
    params = VesselnessParams(scales=subset, beta=beta,
                              threshold=float(threshold))
    return FitResult(params=params, mean_dice=-neg_dice, n_pairs=len(pairs))
