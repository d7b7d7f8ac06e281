"""Curve tables (CSV), run manifests (JSON) and SVG power plots."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from .power import PowerCurve, recommend_sample_size

CSV_COLUMNS = ("n", "gamma", "smoothed", "ci_low", "ci_high", "rejections", "K", "errors_excluded")


class ReportError(ValueError):
    pass


def _num(x) -> str:
    return repr(float(x))


def curve_to_csv(curve: PowerCurve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    smoothed = curve.smoothed or [None] * len(curve.points)
    for p, s in zip(curve.points, smoothed):
        w.writerow([p.n, _num(p.gamma), "" if s is None else _num(s), _num(p.ci_low), _num(p.ci_high),
                    p.rejections, p.trials, p.errors_excluded])
    return buf.getvalue()


def write_curve_csv(curve: PowerCurve, path) -> None:
    Path(path).write_text(curve_to_csv(curve), encoding="utf-8")


@dataclass
class CurveTable:
    name: str
    n: List[int]
    gamma: List[float]
    smoothed: Optional[List[float]]
    ci_low: Optional[List[float]]
    ci_high: Optional[List[float]]


def read_curve_csv(path) -> CurveTable:
    path = Path(path)
    try:
        rows = list(csv.DictReader(io.StringIO(path.read_text(encoding="utf-8"))))
    except (OSError, UnicodeDecodeError) as exc:
        raise ReportError(f"cannot read curve table {path}: {exc}") from exc
    if not rows:
        raise ReportError(f"curve table {path} has no data rows")
    missing = {"n", "gamma"} - set(rows[0])
    if missing:
        raise ReportError(f"curve table {path} lacks columns {sorted(missing)}")

    def column(name, cast):
        if name not in rows[0]:
            return None
        vals = [r[name] for r in rows]
        if any(v in ("", None) for v in vals):
            return None
        return [cast(v) for v in vals]

    try:
        n = [int(r["n"]) for r in rows]
        gamma = [float(r["gamma"]) for r in rows]
        return CurveTable(path.stem, n, gamma, column("smoothed", float),
                          column("ci_low", float), column("ci_high", float))
    except (TypeError, ValueError) as exc:
        raise ReportError(f"malformed value in {path}: {exc}") from exc


def table_from_curve(curve: PowerCurve) -> CurveTable:
    return CurveTable(curve.name, curve.ns, curve.gammas, curve.smoothed,
                      [p.ci_low for p in curve.points], [p.ci_high for p in curve.points])


def write_json(doc, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def recommendation_dict(curve: PowerCurve, target: float) -> dict:
    rec = recommend_sample_size(curve, target)
    return {"target": rec.target, "n_required": rec.n_required, "basis": rec.basis, "max_gamma": rec.max_gamma}


def recommend_from_table(table: CurveTable, target: float) -> dict:
    values = table.smoothed if table.smoothed is not None else table.gamma
    n_req = next((n for n, v in zip(table.n, values) if v >= target), None)
    return {"target": target, "n_required": n_req,
            "basis": "smoothed" if table.smoothed is not None else "raw", "max_gamma": max(values)}


# ---------------------------------------------------------------- SVG

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf")


@dataclass(frozen=True)
class PlotFrame:
    """Linear mapping from (sample size, power) to SVG pixels."""

    x_min: float
    x_max: float
    left: float = 70.0
    top: float = 30.0
    width: float = 480.0
    height: float = 320.0
    y_min: float = 0.0
    y_max: float = 1.0

    def x(self, n: float) -> float:
        span = self.x_max - self.x_min or 1.0
        return self.left + (n - self.x_min) / span * self.width

    def y(self, p: float) -> float:
        return self.top + (self.y_max - p) / (self.y_max - self.y_min) * self.height


def _f(v: float) -> str:
    return f"{v:.2f}"


def render_svg(tables: Sequence[CurveTable], title: str = "", target: float = 0.8,
               x_range: Optional[Tuple[float, float]] = None) -> str:
    """Power curves (smoothed values when present), CI bands and the target line."""
    if not tables:
        raise ReportError("nothing to plot")
    all_n = [n for t in tables for n in t.n]
    x_min, x_max = x_range if x_range else (0.0, float(max(all_n)))
    fr = PlotFrame(x_min, x_max)
    W, H = 760, 410
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
           'font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>']
    if title:
        out.append(f'<text x="{_f(fr.left + fr.width / 2)}" y="18" text-anchor="middle" '
                   f'font-size="14">{_esc(title)}</text>')
    # axes and ticks
    x0, x1 = fr.left, fr.left + fr.width
    y0, y1 = fr.top + fr.height, fr.top
    out.append(f'<line x1="{_f(x0)}" y1="{_f(y0)}" x2="{_f(x1)}" y2="{_f(y0)}" stroke="black"/>')
    out.append(f'<line x1="{_f(x0)}" y1="{_f(y0)}" x2="{_f(x0)}" y2="{_f(y1)}" stroke="black"/>')
    for i in range(6):
        p = i / 5
        y = fr.y(p)
        out.append(f'<line x1="{_f(x0 - 4)}" y1="{_f(y)}" x2="{_f(x0)}" y2="{_f(y)}" stroke="black"/>')
        out.append(f'<text x="{_f(x0 - 8)}" y="{_f(y + 4)}" text-anchor="end">{p:.1f}</text>')
    for i in range(6):
        n = x_min + (x_max - x_min) * i / 5
        x = fr.x(n)
        out.append(f'<line x1="{_f(x)}" y1="{_f(y0)}" x2="{_f(x)}" y2="{_f(y0 + 4)}" stroke="black"/>')
        out.append(f'<text x="{_f(x)}" y="{_f(y0 + 18)}" text-anchor="middle">{n:g}</text>')
    out.append(f'<text x="{_f(fr.left + fr.width / 2)}" y="{_f(y0 + 38)}" text-anchor="middle">'
               'sample size per group (n)</text>')
    out.append(f'<text x="18" y="{_f(fr.top + fr.height / 2)}" text-anchor="middle" '
               f'transform="rotate(-90 18 {_f(fr.top + fr.height / 2)})">power</text>')

    for i, t in enumerate(tables):
        color = PALETTE[i % len(PALETTE)]
        dashed = "synthetic" in t.name
        if t.ci_low is not None and t.ci_high is not None:
            upper = [f"{_f(fr.x(n))},{_f(fr.y(h))}" for n, h in zip(t.n, t.ci_high)]
            lower = [f"{_f(fr.x(n))},{_f(fr.y(lo))}" for n, lo in zip(reversed(t.n), reversed(t.ci_low))]
            out.append(f'<polygon class="band" points="{" ".join(upper + lower)}" fill="{color}" '
                       'fill-opacity="0.15" stroke="none"/>')
        values = t.smoothed if t.smoothed is not None else t.gamma
        pts = " ".join(f"{_f(fr.x(n))},{_f(fr.y(v))}" for n, v in zip(t.n, values))
        dash = ' stroke-dasharray="6,4"' if dashed else ""
        out.append(f'<polyline class="curve" points="{pts}" fill="none" stroke="{color}" stroke-width="2"{dash}/>')
        ly = fr.top + 14 + 18 * i
        lx = x1 + 20
        out.append(f'<line x1="{_f(lx)}" y1="{_f(ly)}" x2="{_f(lx + 24)}" y2="{_f(ly)}" '
                   f'stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{_f(lx + 30)}" y="{_f(ly + 4)}">{_esc(t.name)}</text>')

    ty = fr.y(target)
    out.append(f'<line class="target" x1="{_f(x0)}" y1="{_f(ty)}" x2="{_f(x1)}" y2="{_f(ty)}" '
               'stroke="red" stroke-width="1.5"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_curve_plot(curves: Sequence[PowerCurve], path, title: str = "", target: float = 0.8) -> None:
    Path(path).write_text(render_svg([table_from_curve(c) for c in curves], title, target), encoding="utf-8")


def write_loss_trace(trace: dict, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("iteration", "critic_loss", "generator_loss"))
    for it, c, g in zip(trace["iteration"], trace["critic"], trace["generator"]):
        w.writerow((it, _num(c), _num(g)))
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
