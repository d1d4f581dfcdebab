"""Tiny deterministic SVG emitters for result figures.

Hand-rolled on purpose: byte-identical output for identical inputs is part
of the CLI contract, which rules out plotting libraries that embed
generated ids or timestamps.
"""
from __future__ import annotations

import math

from .evaluation import EvalReport
from .stats import AssociationResult


def _esc(s: str) -> str:
    return (s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))


def _svg(width: int, height: int, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">')
    style = ("<style>text{font-family:Helvetica,Arial,sans-serif;font-size:11px}"
             ".t{font-size:14px;font-weight:bold}</style>")
    return "\n".join([head, style, *body, "</svg>"]) + "\n"


def forest_plot(results: list[AssociationResult], title: str = "Associations",
                max_rows: int = 40) -> str:
    """Odds ratios with 95% CIs on a log axis, most significant first."""
    rows = [r for r in results if r.converged and r.odds_ratio > 0
            and math.isfinite(r.ci_lo) and math.isfinite(r.ci_hi)]
    rows.sort(key=lambda r: (r.p_fdr if not math.isnan(r.p_fdr) else 2.0,
                             r.p_value if not math.isnan(r.p_value) else 2.0,
                             r.metric))
    rows = rows[:max_rows]
    left, right, row_h, top = 260, 560, 18, 50
    height = top + row_h * max(len(rows), 1) + 40
    lo = min([r.ci_lo for r in rows] + [0.5])
    hi = max([r.ci_hi for r in rows] + [2.0])
    lo = max(lo, 1e-3)
    span = math.log(hi) - math.log(lo) or 1.0

    def x(v):
        return left + (math.log(max(v, 1e-3)) - math.log(lo)) / span * (right - left)

    body = [f'<text class="t" x="20" y="24">{_esc(title)}</text>',
            f'<line x1="{x(1.0):.1f}" y1="{top - 10}" x2="{x(1.0):.1f}" '
            f'y2="{height - 30}" stroke="#999" stroke-dasharray="4 3"/>']
    for tick in (0.25, 0.5, 1.0, 2.0, 4.0):
        if lo <= tick <= hi:
            body.append(f'<text x="{x(tick) - 8:.1f}" y="{height - 12}">{tick:g}</text>')
    for i, r in enumerate(rows):
        y = top + i * row_h
        color = "#b2182b" if r.significant else "#555555"
        body.append(f'<text x="10" y="{y + 4}">{_esc(r.metric)}</text>')
        body.append(f'<line x1="{x(r.ci_lo):.1f}" y1="{y}" x2="{x(r.ci_hi):.1f}" '
                    f'y2="{y}" stroke="{color}" stroke-width="1.5"/>')
        body.append(f'<rect x="{x(r.odds_ratio) - 3:.1f}" y="{y - 3}" width="6" '
                    f'height="6" fill="{color}"/>')
        body.append(f'<text x="{right + 8}" y="{y + 4}">'
                    f'{r.odds_ratio:.2f} [{r.ci_lo:.2f}-{r.ci_hi:.2f}]</text>')
    return _svg(right + 160, height, body)


def eval_bar_plot(report: EvalReport, title: str = "Segmentation accuracy") -> str:
    """Bar chart of the headline metrics with bootstrap CI whiskers."""
    names = ["dice", "f1_score", "auc", "accuracy", "sensitivity", "specificity"]
    usable = [(n, report.metrics[n]) for n in names
              if n in report.metrics and not math.isnan(report.metrics[n].point)]
    left, bottom, bar_w, gap, h = 60, 230, 56, 24, 170
    width = left + len(usable) * (bar_w + gap) + 40

    def y(v):
        return bottom - v * h

    body = [f'<text class="t" x="20" y="24">{_esc(title)}</text>',
            f'<line x1="{left - 10}" y1="{y(0)}" x2="{width - 20}" y2="{y(0)}" '
            f'stroke="#333"/>']
    for g in (0.0, 0.25, 0.5, 0.75, 1.0):
        body.append(f'<text x="{left - 50}" y="{y(g) + 4}">{g:.2f}</text>')
        body.append(f'<line x1="{left - 10}" y1="{y(g)}" x2="{width - 20}" '
                    f'y2="{y(g)}" stroke="#eee"/>')
    for i, (name, est) in enumerate(usable):
        xb = left + i * (bar_w + gap)
        body.append(f'<rect x="{xb}" y="{y(est.point):.1f}" width="{bar_w}" '
                    f'height="{(bottom - y(est.point)):.1f}" fill="#4393c3"/>')
        cx = xb + bar_w / 2
        body.append(f'<line x1="{cx}" y1="{y(est.ci_lo):.1f}" x2="{cx}" '
                    f'y2="{y(est.ci_hi):.1f}" stroke="#111" stroke-width="1.5"/>')
        body.append(f'<text x="{xb}" y="{bottom + 16}">{_esc(name)}</text>')
        body.append(f'<text x="{xb}" y="{y(est.point) - 6:.1f}">{est.point:.3f}</text>')
    return _svg(width, bottom + 40, body)
