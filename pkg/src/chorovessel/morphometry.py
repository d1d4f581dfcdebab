"""Per-segment and per-image vessel measurements in five families.

Families follow the reporting convention of vessel-measurement pipelines:
density (lengths and coverage), complexity (orders, depth, fractality),
tortuosity, caliber, and branching angles. Per-segment values are
consolidated per image with mean/sd/max/min; undefined quantities are
missing (NaN), never zero, so downstream missingness filters stay honest.

All definitions are deterministic: polylines are resampled at a fixed
arc-length step (default 5 px) before any angular quantity is computed, and
the catalog of measurement names is versioned.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
from skimage.draw import line as _draw_line

from .raster import Mask
from .vesselgraph import GraphEdge, Skeleton, VesselGraph, segment_calibers, skeletonize

CATALOG_SCHEMA = "metrics/1"
RESAMPLE_STEP = 5.0
INFLECTION_EPS = 1e-3
NAN = float("nan")


@dataclass(frozen=True)
class SegmentMetrics:
    arc_length: float
    chord_length: float
    tortuosity: float
    tortuosity_density: float
    inflection_count: float
    inflection_tortuosity: float
    curve_angle: float
    curve_angle_tortuosity: float
    angle_tortuosity: float
    fractal_tortuosity: float
    mean_caliber: float
    min_caliber: float
    max_caliber: float
    caliber_range: float
    terminal_caliber: float
    surface_area: float
    length_diameter_ratio: float
    strahler: float
    level: float
    is_terminal: float


SEGMENT_FAMILIES = {
    "arc_length": "density",
    "chord_length": "density",
    "tortuosity": "tortuosity",
    "tortuosity_density": "tortuosity",
    "inflection_count": "tortuosity",
    "inflection_tortuosity": "tortuosity",
    "curve_angle": "tortuosity",
    "curve_angle_tortuosity": "tortuosity",
    "angle_tortuosity": "tortuosity",
    "fractal_tortuosity": "tortuosity",
    "mean_caliber": "caliber",
    "min_caliber": "caliber",
    "max_caliber": "caliber",
    "caliber_range": "caliber",
    "terminal_caliber": "caliber",
    "surface_area": "caliber",
    "length_diameter_ratio": "caliber",
    "strahler": "complexity",
    "level": "complexity",
    "is_terminal": "complexity",
}

JUNCTION_FAMILIES = {
    "branching_angle": "branching",
    "angular_asymmetry": "branching",
    "asymmetry_ratio": "branching",
}

SCALAR_FAMILIES = {
    "vessel_area_density": "density",
    "vessel_skeleton_density": "density",
    "branching_density": "branching",
    "fractal_dimension": "complexity",
    "n_terminal_points": "complexity",
    "n_components": "complexity",
}

STATS = ("mean", "sd", "max", "min")


def resample_polyline(poly: np.ndarray, step: float) -> np.ndarray:
    """Resample to uniform arc spacing; endpoints always retained."""
    poly = np.asarray(poly, dtype=float)
    if len(poly) < 2:
        return poly.copy()
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0:
        return poly[[0, -1]].copy()
    n = max(2, int(round(total / step)) + 1)
    t = np.linspace(0.0, total, n)
    x = np.interp(t, cum, poly[:, 0])
    y = np.interp(t, cum, poly[:, 1])
    return np.column_stack([x, y])


def _smooth3(pts: np.ndarray) -> np.ndarray:
    """3-point moving average of interior points; endpoints pinned.

    Rasterized curves carry lattice staircase kinks whose turn signs
    alternate; one smoothing pass removes them so angular quantities see the
    underlying curve, not the pixel grid. Lengths are still measured on the
    raw resampled points.
    """
    if len(pts) < 3:
        return pts
    out = pts.copy()
    out[1:-1] = (pts[:-2] + pts[1:-1] + pts[2:]) / 3.0
    return out


def box_count_dimension(bits: np.ndarray) -> float:
    """Least-squares box-counting dimension of a binary grid.

    Box sizes are the powers of two from 2 up to min(h, w)/4; the dimension
    is the slope of log N against log(1/s). NaN when fewer than two usable
    sizes exist or the grid is empty.
    """
    bits = np.asarray(bits).astype(bool)
    if not bits.any():
        return NAN
    h, w = bits.shape
    smax = min(h, w) // 4
    sizes = []
    s = 2
    while s <= smax:
        sizes.append(s)
        s *= 2
    if len(sizes) < 2:
        return NAN
    counts = []
    for s in sizes:
        rows = np.add.reduceat(bits, np.arange(0, h, s), axis=0)
        boxes = np.add.reduceat(rows, np.arange(0, w, s), axis=1)
        counts.append(int((boxes > 0).sum()))
    sizes = np.asarray(sizes, dtype=float)
    counts = np.asarray(counts, dtype=float)
    keep = counts > 0
    if keep.sum() < 2:
        return NAN
    slope = np.polyfit(np.log(1.0 / sizes[keep]), np.log(counts[keep]), 1)[0]
    return float(slope)


def _polyline_fractal(resampled: np.ndarray) -> float:
    """Box-count dimension of the rasterized polyline, clamped to [1, 2]."""
    xi = np.rint(resampled[:, 0]).astype(int)
    yi = np.rint(resampled[:, 1]).astype(int)
    x0, y0 = xi.min(), yi.min()
    side = max(xi.max() - x0, yi.max() - y0) + 3
    if side < 16:
        return NAN
    grid = np.zeros((side, side), dtype=np.uint8)
    for k in range(len(xi) - 1):
        rr, cc = _draw_line(yi[k] - y0 + 1, xi[k] - x0 + 1,
                            yi[k + 1] - y0 + 1, xi[k + 1] - x0 + 1)
        grid[rr, cc] = 1
    d = box_count_dimension(grid)
    if math.isnan(d):
        return NAN
    return float(min(2.0, max(1.0, d)))


def segment_metrics(edge: GraphEdge, resample_step: float = RESAMPLE_STEP, *,
                    is_terminal: bool = False,
                    terminal_caliber: float = NAN) -> SegmentMetrics:
    """All per-segment measurements for one traced edge."""
    pts = resample_polyline(edge.polyline, resample_step)
    d = np.diff(pts, axis=0)
    steps = np.linalg.norm(d, axis=1)
    arc = float(steps.sum())
    chord = float(np.linalg.norm(pts[-1] - pts[0]))
    tort = arc / chord if chord >= 1.0 else NAN

    # turn angles between consecutive direction vectors (lattice-smoothed)
    sm = _smooth3(pts)
    dsm = np.diff(sm, axis=0)
    ssm = np.linalg.norm(dsm, axis=1)
    ok = ssm > 1e-12
    dirs = dsm[ok] / ssm[ok][:, None]
    if len(dirs) >= 2:
        cross = dirs[:-1, 0] * dirs[1:, 1] - dirs[:-1, 1] * dirs[1:, 0]
        dot = np.clip((dirs[:-1] * dirs[1:]).sum(axis=1), -1.0, 1.0)
        theta = np.degrees(np.abs(np.arctan2(cross, dot)))
        curve_angle = float(theta.sum())
        curve_angle_tort = float(theta.mean())
        sig = cross[np.abs(cross) > INFLECTION_EPS]
        inflections = int((np.sign(sig[1:]) != np.sign(sig[:-1])).sum()) if len(sig) > 1 else 0
        # subsegment boundaries sit at the vertices where the sign flips
        flip_vertex = []
        signed_idx = np.nonzero(np.abs(cross) > INFLECTION_EPS)[0]
        for a, b in zip(signed_idx[:-1], signed_idx[1:]):
            if np.sign(cross[a]) != np.sign(cross[b]):
                flip_vertex.append(b + 1)  # index into pts
    else:
        curve_angle = 0.0
        curve_angle_tort = 0.0
        inflections = 0
        flip_vertex = []
    angle_tort = curve_angle / arc if arc > 0 else NAN

    n_sub = inflections + 1
    if n_sub > 1 and arc > 0:
        bounds = [0] + flip_vertex + [len(pts) - 1]
        excess = 0.0
        for a, b in zip(bounds[:-1], bounds[1:]):
            sub = pts[a:b + 1]
            sub_arc = float(np.linalg.norm(np.diff(sub, axis=0), axis=1).sum())
            sub_chord = float(np.linalg.norm(sub[-1] - sub[0]))
            if sub_chord > 1e-12:
                excess += sub_arc / sub_chord - 1.0
        tort_density = ((n_sub - 1) / n_sub) * (excess / arc)
    else:
        tort_density = 0.0

    infl_tort = (inflections + 1) * tort if not math.isnan(tort) else NAN

    cal = segment_calibers(edge)
    if cal.size:
        mean_c = float(np.mean(cal))
        min_c = float(np.min(cal))
        max_c = float(np.max(cal))
    else:
        mean_c = min_c = max_c = NAN

    return SegmentMetrics(
        arc_length=arc,
        chord_length=chord,
        tortuosity=tort,
        tortuosity_density=tort_density,
        inflection_count=float(inflections),
        inflection_tortuosity=infl_tort,
        curve_angle=curve_angle,
        curve_angle_tortuosity=curve_angle_tort,
        angle_tortuosity=angle_tort,
        fractal_tortuosity=_polyline_fractal(pts),
        mean_caliber=mean_c,
        min_caliber=min_c,
        max_caliber=max_c,
        caliber_range=max_c - min_c if not math.isnan(max_c) else NAN,
        terminal_caliber=terminal_caliber if is_terminal else NAN,
        surface_area=arc * mean_c if not math.isnan(mean_c) else NAN,
        length_diameter_ratio=arc / mean_c if (not math.isnan(mean_c) and mean_c > 0) else NAN,
        strahler=float(edge.strahler),
        level=float(edge.level),
        is_terminal=1.0 if is_terminal else 0.0,
    )


def _direction_from(poly: np.ndarray, resample_step: float) -> np.ndarray | None:
    """Heading leaving poly[0], from the first 10 resampled points."""
    pts = resample_polyline(poly, resample_step)[:10]
    if len(pts) < 2:
        return None
    centered = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    d = vt[0]
    if np.dot(d, pts[-1] - pts[0]) < 0:
        d = -d
    n = np.linalg.norm(d)
    return d / n if n > 0 else None


def _angle_between(u: np.ndarray, v: np.ndarray) -> float:
    dot = float(np.clip(np.dot(u, v), -1.0, 1.0))
    return math.degrees(math.acos(dot))


def branching_metrics(graph: VesselGraph,
                      resample_step: float = RESAMPLE_STEP) -> list[dict]:
    """Per-junction branching geometry.

    Requires an identifiable parent (an edge on the path to the component
    root); root junctions yield no record. Child headings are taken from the
    first 10 resampled polyline points leaving the node; junctions of degree
    above 3 use the two largest-caliber children.
    """
    out = []
    for node in graph.nodes:
        if node.kind != "junction":
            continue
        edges = graph.node_edges(node.id)
        levels = [e.level for e in edges]
        lmin = min(levels)
        parents = [e for e in edges if e.level == lmin]
        children = [e for e in edges if e.level == lmin + 1]
        if len(parents) != 1 or len(children) < 2:
            continue  # root junction or degenerate layout
        parent = parents[0]

        def leaving(e):
            poly = e.polyline if e.node_a == node.id else e.polyline[::-1]
            return _direction_from(poly, resample_step)

        p_dir = leaving(parent)
        kid_dirs = []
        for k in sorted(children, key=lambda e: -np.mean(segment_calibers(e)))[:2]:
            kd = leaving(k)
            if kd is not None:
                kid_dirs.append(kd)
        if p_dir is None or len(kid_dirs) < 2:
            continue
        continuation = -p_dir
        a1 = _angle_between(continuation, kid_dirs[0])
        a2 = _angle_between(continuation, kid_dirs[1])
        rec = {
            "node_id": node.id,
            "branching_angle": _angle_between(kid_dirs[0], kid_dirs[1]),
            "angular_asymmetry": abs(a1 - a2),
            "asymmetry_ratio": (min(a1, a2) / max(a1, a2)) if max(a1, a2) > 0 else NAN,
        }
        out.append(rec)
    return out


def consolidate(values: list[float]) -> dict[str, float]:
    """mean/sd/max/min over the non-missing entries of one metric."""
    vals = np.asarray([v for v in values if not math.isnan(v)], dtype=float)
    if vals.size == 0:
        return {"mean": NAN, "sd": NAN, "max": NAN, "min": NAN}
    return {
        "mean": float(vals.mean()),
        "sd": float(vals.std(ddof=1)) if vals.size >= 2 else NAN,
        "max": float(vals.max()),
        "min": float(vals.min()),
    }


def metrics_catalog() -> list[tuple[str, str]]:
    """Versioned, ordered list of (measurement name, family)."""
    cat = list(SCALAR_FAMILIES.items())
    for name, fam in SEGMENT_FAMILIES.items():
        for stat in STATS:
            cat.append((f"{name}_{stat}", fam))
    for name, fam in JUNCTION_FAMILIES.items():
        for stat in STATS:
            cat.append((f"{name}_{stat}", fam))
    return cat


def image_metrics(mask: Mask, graph: VesselGraph,
                  skeleton: Skeleton | None = None,
                  resample_step: float = RESAMPLE_STEP) -> dict[str, float]:
    """One row of per-image measurements, keyed by catalog name."""
    if skeleton is None:
        skeleton = skeletonize(mask)
    total = mask.width * mask.height
    roots = {c["root_node"] for c in graph.components}
    terminals = set(graph.terminal_ids())
    junctions = graph.junction_ids()

    row: dict[str, float] = {
        "vessel_area_density": mask.count() / total,
        "vessel_skeleton_density": float(skeleton.bits.sum()) / total,
        "branching_density": 1e6 * len(junctions) / total,
        "fractal_dimension": box_count_dimension(skeleton.bits),
        "n_terminal_points": float(len(terminals)),
        "n_components": float(len(graph.components)),
    }

    node_deg1 = {n.id for n in graph.nodes if n.degree <= 1}
    seg_rows: list[SegmentMetrics] = []
    for e in graph.edges:
        endpoints = {e.node_a, e.node_b}
        term_nodes = endpoints & node_deg1 & terminals
        is_term = bool(term_nodes)
        t_cal = NAN
        if is_term:
            t_node = term_nodes.pop()
            cal = segment_calibers(e)
            if cal.size:
                t_cal = float(cal[-1] if t_node == e.node_b else cal[0])
        seg_rows.append(segment_metrics(e, resample_step,
                                        is_terminal=is_term, terminal_caliber=t_cal))

    for name in SEGMENT_FAMILIES:
        stats = consolidate([getattr(s, name) for s in seg_rows])
        for stat, v in stats.items():
            row[f"{name}_{stat}"] = v

    branch = branching_metrics(graph, resample_step)
    for name in JUNCTION_FAMILIES:
        stats = consolidate([b[name] for b in branch])
        for stat, v in stats.items():
            row[f"{name}_{stat}"] = v
    return row


def write_metrics_csv(rows: list[tuple[str, dict[str, float]]], path) -> None:
    """Rows of (image_id, metrics dict) -> CSV; missing cells stay empty."""
    names = [name for name, _fam in metrics_catalog()]
    lines = ["image_id," + ",".join(names)]
    for image_id, row in rows:
        cells = [image_id]
        for n in names:
            v = row.get(n, NAN)
            cells.append("" if (isinstance(v, float) and math.isnan(v)) else f"{v:.10g}")
        lines.append(",".join(cells))
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")
