"""Tiny dependency-free SVG plots for the experiment figures.

Charts are conveniences for eyeballing results; every plotted number
comes from a CSV the experiment also writes.  Output is deterministic:
no timestamps, fixed float formatting.
"""

from __future__ import annotations

from .reports import atomic_write_text

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 64, 16, 28, 46
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(x: float) -> str:
    return f"{x:.6g}"


class Figure:
    def __init__(self, title: str, xlabel: str, ylabel: str):
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.series = []          # (kind, label, xs, ys, extra)

    def line(self, xs, ys, label: str = ""):
        self.series.append(("line", label, [float(x) for x in xs],
                            [float(y) for y in ys], None))
        return self

    def scatter(self, xs, ys, label: str = ""):
        self.series.append(("scatter", label, [float(x) for x in xs],
                            [float(y) for y in ys], None))
        return self

    def bars(self, xs, ys, label: str = ""):
        self.series.append(("bars", label, [float(x) for x in xs],
                            [float(y) for y in ys], None))
        return self

    def errorbars(self, xs, ys, errs, label: str = ""):
        self.series.append(("errorbars", label, [float(x) for x in xs],
                            [float(y) for y in ys], [float(e) for e in errs]))
        return self

    # -- rendering ------------------------------------------------------

    def _limits(self):
        xs = [x for s in self.series for x in s[2]]
        ys = [y for s in self.series for y in s[3]]
        for s in self.series:
            if s[0] == "errorbars":
                ys += [y + e for y, e in zip(s[3], s[4])]
                ys += [y - e for y, e in zip(s[3], s[4])]
        if not xs:
            xs, ys = [0.0, 1.0], [0.0, 1.0]
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys + [0.0]) if any(s[0] == "bars" for s in self.series) else min(ys), max(ys)
        if x1 == x0:
            x1 = x0 + 1.0
        if y1 == y0:
            y1 = y0 + 1.0
        pad = 0.05 * (y1 - y0)
        return x0, x1, y0 - pad, y1 + pad

    def _ticks(self, lo, hi, n=5):
        step = (hi - lo) / (n - 1)
        return [lo + i * step for i in range(n)]

    def render(self) -> str:
        x0, x1, y0, y1 = self._limits()
        pw, ph = _W - _ML - _MR, _H - _MT - _MB

        def X(x):
            return _ML + (x - x0) / (x1 - x0) * pw

        def Y(y):
            return _MT + (1.0 - (y - y0) / (y1 - y0)) * ph

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
               f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
               f'<rect width="{_W}" height="{_H}" fill="white"/>',
               f'<text x="{_W/2}" y="18" text-anchor="middle" font-size="14">{self.title}</text>']
        # axes
        out.append(f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H-_MB}" stroke="black"/>')
        out.append(f'<line x1="{_ML}" y1="{_H-_MB}" x2="{_W-_MR}" y2="{_H-_MB}" stroke="black"/>')
        for t in self._ticks(x0, x1):
            out.append(f'<line x1="{_fmt(X(t))}" y1="{_H-_MB}" x2="{_fmt(X(t))}" y2="{_H-_MB+4}" stroke="black"/>')
            out.append(f'<text x="{_fmt(X(t))}" y="{_H-_MB+17}" text-anchor="middle">{_fmt(t)}</text>')
        for t in self._ticks(y0, y1):
            out.append(f'<line x1="{_ML-4}" y1="{_fmt(Y(t))}" x2="{_ML}" y2="{_fmt(Y(t))}" stroke="black"/>')
            out.append(f'<text x="{_ML-7}" y="{_fmt(Y(t)+4)}" text-anchor="end">{_fmt(t)}</text>')
        out.append(f'<text x="{_W/2}" y="{_H-10}" text-anchor="middle">{self.xlabel}</text>')
        out.append(f'<text x="16" y="{_H/2}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {_H/2})">{self.ylabel}</text>')

        for i, (kind, label, xs, ys, extra) in enumerate(self.series):
            color = _COLORS[i % len(_COLORS)]
            if kind == "line":
                pts = " ".join(f"{_fmt(X(x))},{_fmt(Y(y))}" for x, y in zip(xs, ys))
                out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
            elif kind == "scatter":
                for x, y in zip(xs, ys):
                    out.append(f'<circle cx="{_fmt(X(x))}" cy="{_fmt(Y(y))}" r="2" '
                               f'fill="{color}" fill-opacity="0.6"/>')
            elif kind == "bars":
                w = pw / max(len(xs), 1) * 0.8 / max(sum(1 for s in self.series if s[0] == "bars"), 1)
                off = (i - 0.5) * w
                for x, y in zip(xs, ys):
                    out.append(f'<rect x="{_fmt(X(x)+off-w/2)}" y="{_fmt(min(Y(y), Y(0)))}" '
                               f'width="{_fmt(w)}" height="{_fmt(abs(Y(y)-Y(0)))}" '
                               f'fill="{color}" fill-opacity="0.7"/>')
            elif kind == "errorbars":
                for x, y, e in zip(xs, ys, extra):
                    out.append(f'<line x1="{_fmt(X(x))}" y1="{_fmt(Y(y-e))}" '
                               f'x2="{_fmt(X(x))}" y2="{_fmt(Y(y+e))}" stroke="{color}"/>')
                    out.append(f'<circle cx="{_fmt(X(x))}" cy="{_fmt(Y(y))}" r="2.5" fill="{color}"/>')
            if label:
                ly = _MT + 14 + 16 * i
                out.append(f'<rect x="{_W-_MR-130}" y="{ly-9}" width="10" height="10" fill="{color}"/>')
                out.append(f'<text x="{_W-_MR-116}" y="{ly}">{label}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path) -> None:
        atomic_write_text(path, self.render())
