"""Static SVG figures for sweep reports.

The SVG is written by hand: a figure is a handful of polylines, tick marks
and text, and a plain emitter keeps the output byte-stable and easy to test
structurally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .metrics import theorem_bound

__all__ = ["EmptyReport", "Axis", "Figure", "emit_plots", "PLOT_NAMES"]

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf",
           "#7f7f7f")
PLOT_NAMES = ("tv_vs_T", "tv_vs_delta", "khat_vs_k")


class EmptyReport(ValueError):
    pass


@dataclass
class Axis:
    lo: float
    hi: float
    px0: float
    px1: float
    log: bool = False

    def __post_init__(self):
        if self.log and not (self.lo > 0 and self.hi > 0):
            raise ValueError("log axis needs positive limits")
        if self.hi == self.lo:
            # widen a degenerate range so the map stays finite
            if self.log:
                self.lo, self.hi = self.lo / 2, self.hi * 2
            else:
                pad = abs(self.lo) * 0.1 or 1.0
                self.lo, self.hi = self.lo - pad, self.hi + pad

    def _f(self, v):
        return math.log(v) if self.log else v

    def map(self, v: float) -> float:
        frac = (self._f(v) - self._f(self.lo)) / (self._f(self.hi) - self._f(self.lo))
        return self.px0 + frac * (self.px1 - self.px0)

    def ticks(self, data=()):
        if self.log:
            lo, hi = math.floor(math.log10(self.lo)), math.ceil(math.log10(self.hi))
            decades = [10.0**e for e in range(lo, hi + 1) if self.lo <= 10.0**e <= self.hi]
            extra = [v for v in data if self.lo <= v <= self.hi]
            vals = sorted(set(decades) | set(extra))
            return vals or [self.lo, self.hi]
        if data and len(set(data)) <= 8:
            return sorted(set(data))
        return list(np.linspace(self.lo, self.hi, 5))


def _fmt_tick(v):
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-2:
        return f"{v:.0e}"
    return f"{v:g}"


@dataclass
class _Series:
    label: str
    xs: list
    ys: list
    color: str
    dashed: bool = False
    kind: str = "data"
    markers: bool = True


@dataclass
class Figure:
    title: str
    xlabel: str
    ylabel: str
    xlog: bool = False
    ylog: bool = False
    width: int = 640
    height: int = 440
    series: list = field(default_factory=list)

    margin_l = 80
    margin_r = 190
    margin_t = 40
    margin_b = 60

    def add(self, label, xs, ys, color=None, dashed=False, kind="data", markers=True):
        color = color or PALETTE[len([s for s in self.series if s.kind == "data"]) % len(PALETTE)]
        self.series.append(_Series(label, [float(x) for x in xs], [float(y) for y in ys],
                                   color, dashed, kind, markers))

    def add_bound(self, label, xs, ys, color):
        """Overlay curve; stretches where the value exceeds 1 are dashed (vacuous)."""
        runs = []
        for x, y in zip(xs, ys):
            vac = y > 1.0
            if runs and runs[-1][0] == vac:
                runs[-1][1].append((x, y))
            else:
                if runs:
                    # share the boundary vertex so the curve stays connected
                    runs.append((vac, [runs[-1][1][-1], (x, y)]))
                else:
                    runs.append((vac, [(x, y)]))
        for vac, pts in runs:
            self.add(label, [p[0] for p in pts], [p[1] for p in pts], color=color,
                     dashed=vac, kind="bound-vacuous" if vac else "bound", markers=False)

    def axes(self):
        xs = [x for s in self.series for x in s.xs]
        ys = [y for s in self.series for y in s.ys]
        if not xs:
            raise EmptyReport(f"figure {self.title!r} has no data")
        x = Axis(min(xs), max(xs), self.margin_l, self.width - self.margin_r, self.xlog)
        y = Axis(min(ys), max(ys), self.height - self.margin_b, self.margin_t, self.ylog)
        return x, y

    def render(self) -> str:
        xa, ya = self.axes()
        data_x = sorted({x for s in self.series if s.kind == "data" for x in s.xs})
        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
               f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">',
               '<rect width="100%" height="100%" fill="white"/>',
               f'<text x="{self.width / 2:.1f}" y="22" text-anchor="middle" '
               f'font-size="15" font-family="sans-serif">{escape(self.title)}</text>']
        x0, x1 = self.margin_l, self.width - self.margin_r
        y0, y1 = self.height - self.margin_b, self.margin_t
        out.append(f'<g class="axes" stroke="black" stroke-width="1">'
                   f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/>'
                   f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>')
        for v in xa.ticks(data_x):
            px = xa.map(v)
            out.append(f'<g class="xtick" data-value="{v!r}"><line x1="{px:.3f}" y1="{y0}" '
                       f'x2="{px:.3f}" y2="{y0 + 5}" stroke="black"/>'
                       f'<text x="{px:.3f}" y="{y0 + 18}" text-anchor="middle" font-size="11" '
                       f'font-family="sans-serif">{_fmt_tick(v)}</text></g>')
        for v in ya.ticks():
            py = ya.map(v)
            out.append(f'<g class="ytick" data-value="{v!r}"><line x1="{x0 - 5}" y1="{py:.3f}" '
                       f'x2="{x0}" y2="{py:.3f}" stroke="black"/>'
                       f'<text x="{x0 - 8}" y="{py + 4:.3f}" text-anchor="end" font-size="11" '
                       f'font-family="sans-serif">{_fmt_tick(v)}</text></g>')
        out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{self.height - 15}" text-anchor="middle" '
                   f'font-size="13" font-family="sans-serif">{escape(self.xlabel)}</text>')
        out.append(f'<text transform="translate(18,{(y0 + y1) / 2:.1f}) rotate(-90)" '
                   f'text-anchor="middle" font-size="13" font-family="sans-serif">'
                   f'{escape(self.ylabel)}</text>')
        for s in self.series:
            pts = " ".join(f"{xa.map(x):.3f},{ya.map(y):.3f}" for x, y in zip(s.xs, s.ys))
            dash = ' stroke-dasharray="6,4"' if s.dashed else ""
            out.append(f'<polyline class="{s.kind}" data-label="{escape(s.label)}" '
                       f'points="{pts}" fill="none" stroke="{s.color}" stroke-width="1.6"{dash}/>')
            if s.markers:
                for x, y in zip(s.xs, s.ys):
                    out.append(f'<circle cx="{xa.map(x):.3f}" cy="{ya.map(y):.3f}" r="2.5" '
                               f'fill="{s.color}"/>')
        seen = []
        for s in self.series:
            if (s.label, s.kind != "data") not in seen:
                seen.append((s.label, s.kind != "data"))
        lx = self.width - self.margin_r + 12
        out.append('<g class="legend" font-size="11" font-family="sans-serif">')
        for i, (label, is_bound) in enumerate(seen):
            s = next(t for t in self.series if t.label == label and (t.kind != "data") == is_bound)
            ly = self.margin_t + 16 * i
            dash = ' stroke-dasharray="6,4"' if is_bound else ""
            out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 22}" y2="{ly}" stroke="{s.color}" '
                       f'stroke-width="1.6"{dash}/><text x="{lx + 28}" y="{ly + 4}">'
                       f'{escape(label)}</text>')
        out.append("</g></svg>\n")
        return "\n".join(out)


def _rows_by(rows, key):
    out = {}
    for r in rows:
        out.setdefault(key(r), []).append(r)
    return out


def tv_vs_T_figure(report, c=1.0) -> Figure:
    rows = [r for r in report.ok_rows() if r["kind"] == "none" or float(r["delta"]) == 0.0]
    rows = rows or report.ok_rows()
    fig = Figure("TV vs T", "T", "TV", xlog=True, ylog=True)
    groups = _rows_by(rows, lambda r: (int(r["k_nominal"]), r["coeff"], r["kind"],
                                       float(r["delta"])))
    by_k = {}
    for (k, coeff, kind, delta), grp in sorted(groups.items()):
        grp = sorted((r for r in grp if float(r["tv"]) > 0), key=lambda r: int(r["T"]))
        if not grp:
            continue
        label = f"k={k} {coeff}" + (f" {kind} {delta:g}" if kind != "none" else "")
        fig.add(label, [int(r["T"]) for r in grp], [float(r["tv"]) for r in grp])
        by_k.setdefault(k, (int(grp[0]["d"]), set()))[1].update(int(r["T"]) for r in grp)
    if not fig.series:
        raise EmptyReport("no positive TV values to plot against T")
    for i, (k, (d, Ts)) in enumerate(sorted(by_k.items())):
        Ts = sorted(Ts)
        vals = [theorem_bound(k, d, T, c=c).value for T in Ts]
        fig.add_bound(f"bound k={k}", Ts, vals, PALETTE[(i + 4) % len(PALETTE)])
    return fig


def tv_vs_delta_figure(report, T=None, c=1.0) -> Figure:
    ok = report.ok_rows()
    pert = [r for r in ok if r["kind"] != "none"]
    if not pert:
        raise EmptyReport("report has no perturbed runs")
    T = max(int(r["T"]) for r in pert) if T is None else int(T)
    at_T = [r for r in ok if int(r["T"]) == T]
    fig = Figure(f"TV vs delta at T={T}", "delta", "TV")
    for (k, coeff, kind), grp in sorted(_rows_by(
            [r for r in at_T if r["kind"] != "none"],
            lambda r: (int(r["k_nominal"]), r["coeff"], r["kind"])).items()):
        base = [r for r in at_T if r["kind"] == "none" and int(r["k_nominal"]) == k
                and r["coeff"] == coeff]
        grp = sorted(base + grp, key=lambda r: float(r["delta"]))
        fig.add(f"k={k} {coeff} {kind}", [float(r["delta"]) for r in grp],
                [float(r["tv"]) for r in grp])
        bound = [theorem_bound(k, int(r["d"]), T, float(r["eps_score"]),
                               float(r["eps_jacobi"]), c=c).value for r in grp]
        fig.add_bound(f"bound k={k} {kind}", [float(r["delta"]) for r in grp], bound,
                      PALETTE[(len(fig.series) + 3) % len(PALETTE)])
    if not any(s.kind == "data" for s in fig.series):
        raise EmptyReport(f"no perturbed runs at T={T}")
    return fig


def khat_vs_k_figure(report) -> Figure:
    rows = [r for r in report.ok_rows() if math.isfinite(float(r["k_hat"]))]
    if not rows:
        raise EmptyReport("report has no dimension estimates")
    pairs = sorted({(int(r["k_nominal"]), float(r["k_hat"])) for r in rows})
    fig = Figure("estimated vs nominal dimension", "k", "k_hat")
    fig.add("k_hat", [p[0] for p in pairs], [p[1] for p in pairs])
    ks = sorted({p[0] for p in pairs})
    fig.add("k_hat = k", ks, ks, color="#7f7f7f", dashed=True, kind="reference", markers=False)
    return fig


def emit_plots(report, path, which=None, c: float = 1.0, T=None):
    """Write SVG files into directory ``path``; returns the written paths.

    ``which`` picks from :data:`PLOT_NAMES`. Requested plots without data
    raise :class:`EmptyReport`; with ``which=None`` every plot the report has
    data for is written, and an empty report raises.
    """
    if not report.ok_rows():
        raise EmptyReport("report has no successful rows")
    makers = {"tv_vs_T": lambda: tv_vs_T_figure(report, c),
              "tv_vs_delta": lambda: tv_vs_delta_figure(report, T, c),
              "khat_vs_k": lambda: khat_vs_k_figure(report)}
    explicit = which is not None
    names = PLOT_NAMES if which is None else tuple(which)
    out_dir = Path(path)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in names:
        if name not in makers:
            raise ValueError(f"unknown plot {name!r}")
        try:
            fig = makers[name]()
        except EmptyReport:
            if explicit:
                raise
            continue
        target = out_dir / f"{name}.svg"
        target.write_text(fig.render())
        written.append(target)
    if not written:
        raise EmptyReport("nothing to plot")
    return written
