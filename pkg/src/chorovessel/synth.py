"""Synthetic vascular scenes with exact ground truth.

Trees are grown generation by generation from analytic curves (straight axes
with optional sinusoidal wiggle), so every segment carries its true arc
length, tangents, and width. Rendering mimics early-phase angiography:
bright vessels (200) on a dark field (30) with mild Gaussian noise.

Scene bundles are directories of ``image.png`` + ``mask.png`` +
``gtruth.json`` (schema ``gtruth/1``).
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .raster import GrayImage, Mask, read_image, read_mask, write_image, write_mask

GTRUTH_SCHEMA = "gtruth/1"

VESSEL_LEVEL = 200.0
BACKGROUND_LEVEL = 30.0
NOISE_SIGMA = 8.0


@dataclass(frozen=True)
class TreeSpec:
    """Recipe for one synthetic tree; deterministic given the seed."""

    width: int = 512
    height: int = 512
    root: tuple[float, float] = (60.0, 256.0)
    heading_deg: float = 0.0
    generations: int = 3
    length_range: tuple[float, float] = (120.0, 180.0)
    branch_angles_deg: tuple[float, ...] = (35.0, -35.0)
    root_width: float = 12.0
    taper: float = 0.7
    wiggle_amp: float = 0.0
    wiggle_period: float = 120.0
    seed: int = 0

    def __post_init__(self):
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        leaf_w = self.root_width * self.taper ** (self.generations - 1)
        if leaf_w < 2.0:
            raise ValueError(f"leaf width {leaf_w:.2f} px below the 2 px floor")
        if self.length_range[0] > self.length_range[1] or self.length_range[0] <= 0:
            raise ValueError("bad length range")


@dataclass(frozen=True)
class SegmentTruth:
    id: int
    parent: int | None
    generation: int
    start: tuple[float, float]
    end: tuple[float, float]
    base_heading_deg: float
    tangent_start_deg: float
    tangent_end_deg: float
    width: float
    arc_length: float
    chord_length: float
    wiggle_amp: float
    wiggle_period: float
    truncated: bool


@dataclass(frozen=True)
class JunctionTruth:
    at: tuple[float, float]
    parent_segment: int
    child_segments: tuple[int, ...]


@dataclass(frozen=True)
class GroundTruth:
    segments: tuple[SegmentTruth, ...]
    junctions: tuple[JunctionTruth, ...]
    junction_count: int
    terminal_count: int
    depth: int
    seed: int
    polylines: dict[int, np.ndarray] = field(default_factory=dict, compare=False)

    def total_arc_length(self) -> float:
        return sum(s.arc_length for s in self.segments)


def _curve_points(p0, heading_deg, length, amp, period, step):
    """Sample the analytic segment curve at parameter steps of `step` px."""
    phi = math.radians(heading_deg)
    u = np.array([math.cos(phi), math.sin(phi)])
    n = np.array([-math.sin(phi), math.cos(phi)])
    t = np.arange(0.0, length + step / 2, step)
    t[-1] = min(t[-1], length)
    pts = (np.asarray(p0)[None, :]
           + t[:, None] * u[None, :]
           + (amp * np.sin(2 * np.pi * t / period))[:, None] * n[None, :])
    return t, pts


def _tangent_angle(heading_deg, amp, period, t):
    phi = math.radians(heading_deg)
    u = np.array([math.cos(phi), math.sin(phi)])
    n = np.array([-math.sin(phi), math.cos(phi)])
    d = u + amp * (2 * np.pi / period) * math.cos(2 * np.pi * t / period) * n
    return math.degrees(math.atan2(d[1], d[0]))


def _arc_length(length, amp, period, dt=0.01):
    """Dense quadrature of the curve speed; exact to ~1e-6 relative."""
    t = np.concatenate([np.arange(0.0, length, dt), [length]])
    w = 2 * np.pi / period
    speed = np.sqrt(1.0 + (amp * w * np.cos(w * t)) ** 2)
    return float(np.trapezoid(speed, t))


def stamp_tube(bits: np.ndarray, pts: np.ndarray, w_start: float, w_end: float) -> None:
    """Union a tube (linearly tapering width) along `pts` into a uint8 grid.

    A pixel belongs to the tube iff its center lies strictly within the local
    half-width of the polyline (strict `<` keeps odd widths exact on-grid).
    """
    h, w = bits.shape
    seg_len = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = max(cum[-1], 1e-9)
    for k in range(len(pts) - 1):
        a, b = pts[k], pts[k + 1]
        ra = (w_start + (w_end - w_start) * cum[k] / total) / 2.0
        rb = (w_start + (w_end - w_start) * cum[k + 1] / total) / 2.0
        rmax = max(ra, rb)
        x0 = max(0, int(math.floor(min(a[0], b[0]) - rmax - 1)))
        x1 = min(w - 1, int(math.ceil(max(a[0], b[0]) + rmax + 1)))
        y0 = max(0, int(math.floor(min(a[1], b[1]) - rmax - 1)))
        y1 = min(h - 1, int(math.ceil(max(a[1], b[1]) + rmax + 1)))
        if x1 < x0 or y1 < y0:
            continue
        xx, yy = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
        ab = b - a
        denom = float(ab @ ab)
        if denom < 1e-12:
            t = np.zeros_like(xx, dtype=float)
        else:
            t = ((xx - a[0]) * ab[0] + (yy - a[1]) * ab[1]) / denom
            t = np.clip(t, 0.0, 1.0)
        cxp = a[0] + t * ab[0]
        cyp = a[1] + t * ab[1]
        d2 = (xx - cxp) ** 2 + (yy - cyp) ** 2
        r = ra + (rb - ra) * t
        inside = d2 < r ** 2
        bits[y0:y1 + 1, x0:x1 + 1] |= inside.astype(np.uint8)


def _clip_length(p0, heading_deg, length, amp, period, width, canvas_w, canvas_h):
    """Longest prefix of the curve whose tube stays fully on canvas."""
    margin = width / 2.0 + 1.0
    t, pts = _curve_points(p0, heading_deg, length, amp, period, 0.5)
    ok = ((pts[:, 0] >= margin) & (pts[:, 0] <= canvas_w - 1 - margin)
          & (pts[:, 1] >= margin) & (pts[:, 1] <= canvas_h - 1 - margin))
    if not ok[0]:
        return 0.0, True
    bad = np.nonzero(~ok)[0]
    if bad.size == 0:
        return length, False
    return float(t[bad[0] - 1]), True


def generate(spec: TreeSpec) -> tuple[Mask, GrayImage, GroundTruth]:
    """Grow, rasterize, and render one tree; all randomness from spec.seed."""
    rng = np.random.default_rng(spec.seed)
    bits = np.zeros((spec.height, spec.width), dtype=np.uint8)

    segments: list[SegmentTruth] = []
    junctions: list[JunctionTruth] = []
    polylines: dict[int, np.ndarray] = {}
    children: dict[int, list[int]] = {}

    # frontier entries: (parent_id, generation, start_point, base_heading)
    frontier = [(None, 0, np.asarray(spec.root, float), spec.heading_deg)]
    next_id = 0
    while frontier:
        parent_id, gen, p0, heading = frontier.pop(0)
        width = spec.root_width * spec.taper ** gen
        length = float(rng.uniform(*spec.length_range))
        amp = float(rng.uniform(0.0, spec.wiggle_amp)) if spec.wiggle_amp > 0 else 0.0
        period = spec.wiggle_period
        length, truncated = _clip_length(p0, heading, length, amp, period, width,
                                         spec.width, spec.height)
        if length < 2.0 * width:
            continue  # fully clipped; subtree dropped
        sid = next_id
        next_id += 1
        _, pts = _curve_points(p0, heading, length, amp, period, 2.0)
        stamp_tube(bits, pts, width, width)
        _, dense = _curve_points(p0, heading, length, amp, period, 1.0)
        polylines[sid] = dense
        end = tuple(pts[-1])
        arc = _arc_length(length, amp, period)
        segments.append(SegmentTruth(
            id=sid, parent=parent_id, generation=gen,
            start=tuple(p0), end=end,
            base_heading_deg=heading,
            tangent_start_deg=_tangent_angle(heading, amp, period, 0.0),
            tangent_end_deg=_tangent_angle(heading, amp, period, length),
            width=width, arc_length=arc,
            chord_length=float(np.linalg.norm(np.asarray(end) - p0)),
            wiggle_amp=amp, wiggle_period=period, truncated=truncated,
        ))
        children.setdefault(parent_id, []).append(sid)
        if gen + 1 < spec.generations and not truncated:
            for off in spec.branch_angles_deg:
                frontier.append((sid, gen + 1, np.asarray(end), heading + off))

    if not segments:
        raise ValueError("spec produced zero on-canvas segments")

    for s in segments:
        kids = children.get(s.id, [])
        if len(kids) >= 2:
            junctions.append(JunctionTruth(at=s.end, parent_segment=s.id,
                                           child_segments=tuple(kids)))
    terminal_count = sum(1 for s in segments if not children.get(s.id))
    gt = GroundTruth(
        segments=tuple(segments),
        junctions=tuple(junctions),
        junction_count=len(junctions),
        terminal_count=terminal_count,
        depth=max(s.generation for s in segments),
        seed=spec.seed,
        polylines=polylines,
    )

    noise_rng = np.random.default_rng([spec.seed, 0xA01])
    img = np.full(bits.shape, BACKGROUND_LEVEL, dtype=np.float64)
    img[bits == 1] = VESSEL_LEVEL
    img += noise_rng.normal(0.0, NOISE_SIGMA, bits.shape)
    image = GrayImage(np.clip(img, 0, 255).astype(np.float32))
    return Mask(bits), image, gt


def perturb(mask: Mask, dropout_rate: float, dilation_noise: float, seed: int) -> Mask:
    """Degrade a mask: erase random spans, jitter boundaries. Seeded, pure."""
    if not (0.0 <= dropout_rate <= 1.0 and 0.0 <= dilation_noise <= 1.0):
        raise ValueError("rates must lie in [0, 1]")
    bits = mask.bits.copy()
    rng = np.random.default_rng(seed)
    n_fg = int(bits.sum())
    if n_fg and dropout_rate > 0:
        target = int(round(dropout_rate * n_fg))
        erased = 0
        guard = 0
        while erased < target and guard < 100000:
            guard += 1
            ys, xs = np.nonzero(bits)
            if ys.size == 0:
                break
            k = int(rng.integers(0, ys.size))
            r = float(rng.uniform(2.0, 8.0))
            cy, cx = int(ys[k]), int(xs[k])
            y0, y1 = max(0, cy - 9), min(bits.shape[0], cy + 10)
            x0, x1 = max(0, cx - 9), min(bits.shape[1], cx + 10)
            yy, xx = np.mgrid[y0:y1, x0:x1]
            disk = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
            erased += int((bits[y0:y1, x0:x1] & disk).sum())
            bits[y0:y1, x0:x1] &= ~disk.astype(np.uint8) & 1
    if dilation_noise > 0:
        from scipy.ndimage import binary_dilation, binary_erosion

        n_spots = int(round(dilation_noise * 30))
        for _ in range(n_spots):
            cy = int(rng.integers(0, bits.shape[0]))
            cx = int(rng.integers(0, bits.shape[1]))
            r = int(rng.integers(4, 12))
            y0, y1 = max(0, cy - r), min(bits.shape[0], cy + r + 1)
            x0, x1 = max(0, cx - r), min(bits.shape[1], cx + r + 1)
            patch = bits[y0:y1, x0:x1].astype(bool)
            if rng.random() < 0.5:
                patch = binary_dilation(patch)
            else:
                patch = binary_erosion(patch)
            bits[y0:y1, x0:x1] = patch.astype(np.uint8)
    return Mask(bits)


def write_scene_bundle(dirpath, mask: Mask, image: GrayImage, gt: GroundTruth) -> None:
    os.makedirs(dirpath, exist_ok=True)
    write_mask(mask, os.path.join(dirpath, "mask.png"))
    write_image(image, os.path.join(dirpath, "image.png"))
    doc = {
        "schema": GTRUTH_SCHEMA,
        "seed": gt.seed,
        "junction_count": gt.junction_count,
        "terminal_count": gt.terminal_count,
        "depth": gt.depth,
        "segments": [asdict(s) for s in gt.segments],
        "junctions": [asdict(j) for j in gt.junctions],
        "polylines": {str(k): v.tolist() for k, v in gt.polylines.items()},
    }
    with open(os.path.join(dirpath, "gtruth.json"), "w") as f:
        json.dump(doc, f, indent=1)


def read_scene_bundle(dirpath) -> tuple[Mask, GrayImage, GroundTruth]:
    mask = read_mask(os.path.join(dirpath, "mask.png"))
    image = read_image(os.path.join(dirpath, "image.png"))
    with open(os.path.join(dirpath, "gtruth.json")) as f:
        doc = json.load(f)
    if doc.get("schema") != GTRUTH_SCHEMA:
        raise ValueError(f"unsupported ground-truth schema {doc.get('schema')!r}")
    segments = tuple(SegmentTruth(**{**s, "start": tuple(s["start"]),
                                     "end": tuple(s["end"])})
                     for s in doc["segments"])
    junctions = tuple(JunctionTruth(at=tuple(j["at"]),
                                    parent_segment=j["parent_segment"],
                                    child_segments=tuple(j["child_segments"]))
                      for j in doc["junctions"])
    gt = GroundTruth(
        segments=segments, junctions=junctions,
        junction_count=doc["junction_count"],
        terminal_count=doc["terminal_count"],
        depth=doc["depth"], seed=doc["seed"],
        polylines={int(k): np.asarray(v) for k, v in doc["polylines"].items()},
    )
    return mask, image, gt
