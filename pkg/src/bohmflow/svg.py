"""Minimal SVG output: polylines, heat maps, marching-squares contours and
arrow glyphs. Coordinates are written with fixed precision so reruns are
byte-identical."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np


def _f(v):
    return f"{v:.2f}"


class Panel:
    """Maps a data rectangle onto a pixel box of the parent figure."""

    def __init__(self, fig, box, xlim, ylim, title=None, xlabel=None, ylabel=None):
        self.fig = fig
        self.x0, self.y0, self.w, self.h = box
        self.xlim, self.ylim = xlim, ylim
        fig.elements.append(f'<rect x="{_f(self.x0)}" y="{_f(self.y0)}" width="{_f(self.w)}" '
                            f'height="{_f(self.h)}" fill="none" stroke="black" stroke-width="1"/>')
        if title:
            fig.text(self.x0 + self.w / 2, self.y0 - 6, title, anchor="middle", size=13)
        if xlabel:
            fig.text(self.x0 + self.w / 2, self.y0 + self.h + 32, xlabel, anchor="middle")
        if ylabel:
            fig.text(self.x0 - 40, self.y0 + self.h / 2, ylabel, anchor="middle", rotate=True)
        for frac in (0.0, 0.5, 1.0):
            xv = xlim[0] + frac * (xlim[1] - xlim[0])
            yv = ylim[0] + frac * (ylim[1] - ylim[0])
            fig.text(self.x0 + frac * self.w, self.y0 + self.h + 15, f"{xv:.3g}", anchor="middle", size=10)
            fig.text(self.x0 - 5, self.y0 + self.h - frac * self.h + 4, f"{yv:.3g}", anchor="end", size=10)

    def px(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        X = self.x0 + (x - self.xlim[0]) / (self.xlim[1] - self.xlim[0]) * self.w
        Y = self.y0 + self.h - (y - self.ylim[0]) / (self.ylim[1] - self.ylim[0]) * self.h
        return X, Y

    def polyline(self, x, y, color="blue", width=1.0, dash=None):
        X, Y = self.px(x, y)
        ok = np.isfinite(X) & np.isfinite(Y)
        # split at NaNs so halted paths do not draw spurious segments
        runs = np.split(np.arange(len(X)), np.flatnonzero(np.diff(ok.astype(int)) != 0) + 1)
        for run in runs:
            if len(run) < 2 or not ok[run[0]]:
                continue
            pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(X[run], Y[run]))
            extra = f' stroke-dasharray="{dash}"' if dash else ""
            self.fig.elements.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                                     f'stroke-width="{width}"{extra}/>')

    def heatmap(self, x, y, values, cmap=None):
        """Filled cells; ``values`` indexed [ix, iy], scaled to [0, 1] by the caller or here."""
        v = np.asarray(values, float)
        finite = np.isfinite(v)
        lo, hi = (np.min(v[finite]), np.max(v[finite])) if finite.any() else (0.0, 1.0)
        span = hi - lo if hi > lo else 1.0
        dx = (x[-1] - x[0]) / max(len(x) - 1, 1)
        dy = (y[-1] - y[0]) / max(len(y) - 1, 1)
        cw = dx / (self.xlim[1] - self.xlim[0]) * self.w
        ch = dy / (self.ylim[1] - self.ylim[0]) * self.h
        for i, xv in enumerate(x):
            for j, yv in enumerate(y):
                if not finite[i, j]:
                    continue
                X, Y = self.px(xv - dx / 2, yv + dy / 2)
                self.fig.elements.append(
                    f'<rect x="{_f(X)}" y="{_f(Y)}" width="{_f(cw + 0.3)}" height="{_f(ch + 0.3)}" '
                    f'fill="{_color((v[i, j] - lo) / span)}"/>')

    def contour(self, x, y, values, levels, color="red", width=1.0):
        for level in levels:
            for (xa, ya), (xb, yb) in marching_squares(x, y, values, level):
                (Xa, Xb), (Ya, Yb) = self.px([xa, xb], [ya, yb])
                self.fig.elements.append(f'<line x1="{_f(Xa)}" y1="{_f(Ya)}" x2="{_f(Xb)}" y2="{_f(Yb)}" '
                                         f'stroke="{color}" stroke-width="{width}"/>')

    def arrows(self, x, y, u, v, scale, color="blue"):
        for xv, yv, uv, vv in zip(np.ravel(x), np.ravel(y), np.ravel(u), np.ravel(v)):
            if not (np.isfinite(uv) and np.isfinite(vv)) or uv == vv == 0:
                continue
            X0, Y0 = self.px(xv, yv)
            X1, Y1 = self.px(xv + scale * uv, yv + scale * vv)
            ang = np.arctan2(Y1 - Y0, X1 - X0)
            head = 4.0
            hx = [X1 - head * np.cos(ang - 0.4), X1 - head * np.cos(ang + 0.4)]
            hy = [Y1 - head * np.sin(ang - 0.4), Y1 - head * np.sin(ang + 0.4)]
            self.fig.elements.append(
                f'<path d="M{_f(X0)},{_f(Y0)} L{_f(X1)},{_f(Y1)} M{_f(hx[0])},{_f(hy[0])} '
                f'L{_f(X1)},{_f(Y1)} L{_f(hx[1])},{_f(hy[1])}" fill="none" stroke="{color}" stroke-width="0.8"/>')


def _color(s):
    """Blue to red ramp for s in [0, 1]."""
    s = float(np.clip(s, 0.0, 1.0))
    r = int(255 * min(1.0, 2 * s))
    b = int(255 * min(1.0, 2 * (1 - s)))
    g = int(255 * (1 - abs(2 * s - 1)) * 0.8)
    return f"#{r:02x}{g:02x}{b:02x}"


# edge index pairs crossed for each of the 16 corner configurations
_CASES = {
    1: [(3, 0)], 2: [(0, 1)], 3: [(3, 1)], 4: [(1, 2)], 5: [(3, 0), (1, 2)], 6: [(0, 2)],
    7: [(3, 2)], 8: [(2, 3)], 9: [(0, 2)], 10: [(0, 1), (2, 3)], 11: [(1, 2)], 12: [(3, 1)],
    13: [(0, 1)], 14: [(3, 0)],
}


def marching_squares(x, y, values, level):
    """Line segments of the ``level`` iso-line of values[ix, iy]."""
    v = np.asarray(values, float)
    c = np.stack([v[:-1, :-1], v[1:, :-1], v[1:, 1:], v[:-1, 1:]], axis=-1)
    code = np.sum((c > level) << np.arange(4), axis=-1)
    code[~np.all(np.isfinite(c), axis=-1)] = 0
    segs = []
    for i, j in zip(*np.nonzero((code > 0) & (code < 15))):
        cc = c[i, j]
        corners = ((x[i], y[j]), (x[i + 1], y[j]), (x[i + 1], y[j + 1]), (x[i], y[j + 1]))

        def edge(e):
            a, b = e, (e + 1) % 4
            t = (level - cc[a]) / (cc[b] - cc[a])
            return (float(corners[a][0] + t * (corners[b][0] - corners[a][0])),
                    float(corners[a][1] + t * (corners[b][1] - corners[a][1])))

        for ea, eb in _CASES[int(code[i, j])]:
            segs.append((edge(ea), edge(eb)))
    return segs


class Figure:
    def __init__(self, width=640, height=480):
        self.width, self.height = width, height
        self.elements: list[str] = []

    def panel(self, box, xlim, ylim, **kw) -> Panel:
        return Panel(self, box, xlim, ylim, **kw)

    def text(self, x, y, s, anchor="start", size=12, rotate=False):
        rot = f' transform="rotate(-90 {_f(x)} {_f(y)})"' if rotate else ""
        self.elements.append(f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" font-family="sans-serif" '
                             f'text-anchor="{anchor}"{rot}>{escape(str(s))}</text>')

    def to_string(self) -> str:
        body = "\n".join(self.elements)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
                f'viewBox="0 0 {self.width} {self.height}">\n'
                f'<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n')

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_string())
