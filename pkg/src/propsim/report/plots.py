"""Power curves and zipper plots as deterministic SVG text."""

from __future__ import annotations

import math

from ..harness import ALPHA, SummaryTable, ZipperRow
from .svg import SVG, Axis, fmt_tick, nice_ticks

MODEL_STYLE = {
    "proportional": ("#c0392b", None, "proportional model"),
    "ttest": ("#1f4e9c", "6,3", "two-sample t-test"),
}
RED = "#d62728"
GREY = "#555555"


def power_svg(summary: SummaryTable) -> str:
    """One panel per beta_c: rejection rate against delta for each model."""
    if not summary.rows:
        raise ValueError("summary has no rows")
    if "delta" not in summary.columns:
        raise ValueError("power plots need a cross-sectional summary with a delta grid")
    betas = list(dict.fromkeys(r["beta_c"] for r in summary.rows))
    deltas = sorted(set(r["delta"] for r in summary.rows))
    models = list(dict.fromkeys(r["model"] for r in summary.rows))
    pw, ph, ml, mt = 240.0, 220.0, 50.0, 40.0
    svg = SVG(ml + len(betas) * (pw + 20) + 10, mt + ph + 90)
    x_lo, x_hi = deltas[0], deltas[-1]
    for k, b in enumerate(betas):
        x0 = ml + k * (pw + 20)
        ax = Axis(x_lo, x_hi, x0, x0 + pw)
        ay = Axis(0.0, 1.0, mt + ph, mt)
        svg.open_group(id=f"panel-{k}")
        svg.rect(x0, mt, pw, ph, stroke=GREY)
        svg.text(x0 + pw / 2, mt - 10, f"beta_C = {b:g}", size=12, anchor="middle")
        for t in nice_ticks(x_lo, x_hi, 4):
            svg.line(ax(t), mt + ph, ax(t), mt + ph + 4, stroke=GREY)
            svg.text(ax(t), mt + ph + 16, fmt_tick(t), size=10, anchor="middle")
        for t in (0.0, 0.25, 0.5, 0.75, 1.0):
            svg.line(x0 - 4, ay(t), x0, ay(t), stroke=GREY)
            if k == 0:
                svg.text(x0 - 6, ay(t) + 3, fmt_tick(t), size=10, anchor="end")
        svg.line(x0, ay(ALPHA), x0 + pw, ay(ALPHA), stroke=GREY, dash="4,4", class_="alpha-line")
        for mdl in models:
            color, dash, _ = MODEL_STYLE.get(mdl, ("#000", None, mdl))
            pts = [
                (ax(r["delta"]), ay(r["rejection_rate"] / 100.0))
                for r in sorted((r for r in summary.rows if r["beta_c"] == b and r["model"] == mdl), key=lambda r: r["delta"])
                if not math.isnan(r["rejection_rate"])
            ]
            svg.polyline(pts, stroke=color, dash=dash, class_=f"curve-{mdl}")
            for x, y in pts:
                svg.circle(x, y, 2.2, fill=color)
        svg.close_group()
    svg.text(ml + (svg.width - ml) / 2, mt + ph + 36, "delta (active minus control mean)", size=12, anchor="middle")
    svg.text(14, mt + ph / 2, "rejection rate", size=12, anchor="middle", transform=f"rotate(-90 14 {mt + ph / 2:.2f})")
    ly = mt + ph + 60
    for i, mdl in enumerate(models):
        color, dash, label = MODEL_STYLE.get(mdl, ("#000", None, mdl))
        lx = ml + i * 200
        svg.line(lx, ly, lx + 30, ly, stroke=color, width=1.5, dash=dash)
        svg.text(lx + 36, ly + 4, label, size=11)
    return svg.render()


def zipper_svg(rows: list[ZipperRow], truth: float, n_total: int, title: str = "") -> str:
    """Ranked intervals, top rank first.

    With ``truth == 0`` an interval is highlighted when its p-value is below
    0.05; otherwise when it fails to cover ``truth``.
    """
    if not rows:
        raise ValueError("nothing to plot")
    lows = [r.record.ci_low for r in rows if math.isfinite(r.record.ci_low)]
    highs = [r.record.ci_high for r in rows if math.isfinite(r.record.ci_high)]
    ests = [r.record.estimate for r in rows if math.isfinite(r.record.estimate)]
    vals = lows + highs + ests + [truth]
    lo, hi = min(vals), max(vals)
    pad = 0.05 * (hi - lo) if hi > lo else 0.5
    lo, hi = lo - pad, hi + pad
    w, h, ml, mt, mb = 520.0, 560.0, 60.0, 40.0, 50.0
    svg = SVG(w, h)
    ax = Axis(lo, hi, ml, w - 20)
    ay = Axis(0.5, len(rows) + 0.5, mt, h - mb)
    svg.rect(ml, mt, w - 20 - ml, h - mb - mt, stroke=GREY)
    if title:
        svg.text(w / 2, mt - 14, title, size=12, anchor="middle")
    for t in nice_ticks(lo, hi, 5):
        svg.line(ax(t), h - mb, ax(t), h - mb + 4, stroke=GREY)
        svg.text(ax(t), h - mb + 16, fmt_tick(t), size=10, anchor="middle")
    svg.text((ml + w - 20) / 2, h - 14, "estimate and 95% interval", size=12, anchor="middle")
    lw = max(0.3, min(2.0, 0.8 * (h - mb - mt) / len(rows)))
    svg.open_group(id="intervals")
    for r in rows:
        rec = r.record
        if not (rec.converged and math.isfinite(rec.estimate)):
            continue
        if truth == 0:
            flagged = rec.p_value < ALPHA
        else:
            flagged = not (rec.ci_low <= truth <= rec.ci_high)
        color = RED if flagged else "#7f7f7f"
        y = ay(r.rank)
        cl = rec.ci_low if not math.isnan(rec.ci_low) else rec.estimate
        ch = rec.ci_high if not math.isnan(rec.ci_high) else rec.estimate
        svg.line(ax(cl), y, ax(ch), y, stroke=color, width=lw, class_="flag" if flagged else "ok")
        svg.circle(ax(rec.estimate), y, max(0.4, lw), fill="#000")
    svg.close_group()
    svg.line(ax(truth), mt, ax(truth), h - mb, stroke="#000", dash="5,4", class_="truth-line")
    rank5 = ALPHA * n_total
    if rank5 <= len(rows) + 0.5:
        svg.line(ml, ay(rank5), w - 20, ay(rank5), stroke="#000", dash="5,4", class_="alpha-rank-line")
    svg.text(ml - 6, mt + 8, "rank 1", size=10, anchor="end")
    svg.text(ml - 6, h - mb, f"rank {len(rows)}", size=10, anchor="end")
    return svg.render()
