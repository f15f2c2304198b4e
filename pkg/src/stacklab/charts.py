"""Minimal standalone SVG charts rendered from the CSV outputs.

Every chart is a pure function of its input CSV and arguments, so
regenerating from the CSV alone reproduces the file byte for byte.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

KINDS = ("trajectory-lines", "density-stack", "beeswarm-by-cohort")
WIDTH, HEIGHT = 720, 420
MARGIN = (60, 20, 30, 45)  # left, right, top, bottom
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf")


@dataclass(frozen=True)
class ChartSpec:
    kind: str
    input: str
    output: str
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown chart kind {self.kind!r}")


def _f(v) -> str:
    return f"{v:.2f}"


class _Canvas:
    def __init__(self, xlim, ylim, title, xlabel, ylabel):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        if self.x1 == self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 == self.y0:
            self.y1 = self.y0 + 1.0
        left, right, top, bottom = MARGIN
        self.pw = WIDTH - left - right
        self.ph = HEIGHT - top - bottom
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2}" y="18" text-anchor="middle" font-size="13">{title}</text>',
            f'<text x="{left + self.pw / 2}" y="{HEIGHT - 8}" text-anchor="middle">{xlabel}</text>',
            f'<text x="14" y="{top + self.ph / 2}" text-anchor="middle" '
            f'transform="rotate(-90 14 {top + self.ph / 2})">{ylabel}</text>',
            f'<rect x="{left}" y="{top}" width="{self.pw}" height="{self.ph}" fill="none" '
            f'stroke="black"/>',
        ]
        for t in np.linspace(self.y0, self.y1, 5):
            y = self.py(t)
            self.parts.append(f'<text x="{left - 4}" y="{_f(y + 4)}" text-anchor="end">{t:.3g}</text>')

    def px(self, x):
        return MARGIN[0] + (np.asarray(x, dtype=float) - self.x0) / (self.x1 - self.x0) * self.pw

    def py(self, y):
        return MARGIN[2] + (1 - (np.asarray(y, dtype=float) - self.y0) / (self.y1 - self.y0)) * self.ph

    def polyline(self, xs, ys, color, width=1.0, opacity=0.8):
        pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(self.px(xs), self.py(ys)))
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                          f'stroke-width="{width}" stroke-opacity="{opacity}"/>')

    def hline(self, y, color="black", dash="4 3"):
        yy = _f(self.py(y))
        self.parts.append(f'<line x1="{MARGIN[0]}" x2="{MARGIN[0] + self.pw}" y1="{yy}" '
                          f'y2="{yy}" stroke="{color}" stroke-dasharray="{dash}"/>')

    def circle(self, x, y, r, color, opacity=0.6):
        self.parts.append(f'<circle cx="{_f(self.px(x))}" cy="{_f(self.py(y))}" r="{r}" '
                          f'fill="{color}" fill-opacity="{opacity}"/>')

    def text(self, x, y, s, anchor="middle"):
        self.parts.append(f'<text x="{_f(x)}" y="{_f(y)}" text-anchor="{anchor}">{s}</text>')

    def svg(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _read(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def trajectory_lines(csv_path, out_path, field_name: str = "rho_true", max_samples: int = 50,
                     reference=(), title: str = "Risk trajectories") -> str:
    """One line per tracked sample of ``field_name`` against epoch.

    ``reference`` values are drawn as dashed horizontal lines.
    """
    rows = _read(csv_path)
    e = np.array([int(r["epoch"]) for r in rows])
    s = np.array([int(r["sample_id"]) for r in rows])
    v = np.array([float(r[field_name]) for r in rows])
    ids = sorted(set(s.tolist()))[:max_samples]
    keep = np.isin(s, ids)
    span = np.concatenate([v[keep], np.asarray(reference, dtype=float)])
    lo, hi = float(span.min()), float(span.max())
    c = _Canvas((e.min(), e.max()), (lo, hi), title, "epoch", field_name)
    for k, i in enumerate(ids):
        m = s == i
        order = np.argsort(e[m], kind="stable")
        c.polyline(e[m][order], v[m][order], PALETTE[k % len(PALETTE)], 0.8, 0.6)
    for r in reference:
        c.hline(r)
    return _write(out_path, c.svg())


def density_stack(csv_path, out_path, bins: int = 40, title: str = "Distribution by epoch") -> str:
    """Histogram density of the sampled coordinate, one curve per epoch."""
    rows = _read(csv_path)
    e = np.array([int(r["epoch"]) for r in rows])
    v = np.array([float(r["value"]) for r in rows])
    edges = np.linspace(v.min(), v.max() if v.max() > v.min() else v.min() + 1, bins + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    epochs = sorted(set(e.tolist()))
    dens = {ep: np.histogram(v[e == ep], bins=edges, density=True)[0] for ep in epochs}
    top = max(float(d.max()) for d in dens.values())
    c = _Canvas((edges[0], edges[-1]), (0.0, top), title, "value", "density")
    for k, ep in enumerate(epochs):
        color = PALETTE[k % len(PALETTE)]
        c.polyline(mids, dens[ep], color, 1.5, 0.9)
        c.text(MARGIN[0] + c.pw - 6, MARGIN[2] + 14 * (k + 1), f"e={ep}", "end")
        c.parts[-1] = c.parts[-1].replace("<text ", f'<text fill="{color}" ', 1)
    return _write(out_path, c.svg())


def _swarm_offsets(values, width: float, n_bins: int = 60) -> np.ndarray:
    """Deterministic horizontal offsets: points sharing a value bin fan out."""
    if values.size == 0:
        return values
    lo, hi = values.min(), values.max()
    b = np.zeros(values.size, dtype=int) if hi == lo else \
        np.minimum(((values - lo) / (hi - lo) * n_bins).astype(int), n_bins - 1)
    off = np.zeros(values.size)
    counts = np.bincount(b)
    scale = width / max(int(counts.max()), 1)
    seen = np.zeros_like(counts)
    for i in np.argsort(values, kind="stable"):
        k = seen[b[i]]
        seen[b[i]] += 1
        off[i] = (k // 2 + 1) * scale * (1 if k % 2 else -1) if k else 0.0
    return off


def beeswarm_by_cohort(csv_path, out_path, epochs=None, max_points: int = 300,
                       title: str = "Risk by cohort") -> str:
    """Pre and post risk distributions per cohort with mean (black) and
    target (dashed) markers.

    ``epochs`` defaults to the first and last epoch in the CSV.
    """
    rows = _read(csv_path)
    ep = np.array([int(r["epoch"]) for r in rows])
    co = np.array([int(r["cohort"]) for r in rows])
    risk = np.array([float(r["risk"]) for r in rows])
    target = np.array([float(r["rho_eq"]) for r in rows])
    epochs = (int(ep.min()), int(ep.max())) if epochs is None else tuple(epochs)
    cohorts = sorted(set(co.tolist()))
    c = _Canvas((-0.5, len(cohorts) - 0.5), (0.0, float(max(risk.max(), target.max()))), title,
                "cohort", "true risk")
    slot = 0.8 / len(epochs)
    for j, coh in enumerate(cohorts):
        for k, e in enumerate(epochs):
            vals = np.sort(risk[(co == coh) & (ep == e)])
            if vals.size > max_points:
                vals = vals[np.linspace(0, vals.size - 1, max_points).astype(int)]
            centre = j - 0.4 + slot * (k + 0.5)
            off = _swarm_offsets(vals, slot * 0.45)
            for v, o in zip(vals, off):
                c.circle(centre + o, v, 1.5, PALETTE[k % len(PALETTE)], 0.5)
            if vals.size:
                c.circle(centre, float(risk[(co == coh) & (ep == e)].mean()), 3.5, "black", 1.0)
        t = target[co == coh][0]
        x0, x1 = c.px(j - 0.45), c.px(j + 0.45)
        c.parts.append(f'<line x1="{_f(x0)}" x2="{_f(x1)}" y1="{_f(c.py(t))}" y2="{_f(c.py(t))}" '
                       f'stroke="black" stroke-dasharray="3 2"/>')
        c.text(c.px(j), HEIGHT - MARGIN[3] + 14, str(coh))
    for k, e in enumerate(epochs):
        c.text(MARGIN[0] + 8, MARGIN[2] + 14 * (k + 1), f"epoch {e}", "start")
        c.parts[-1] = c.parts[-1].replace("<text ", f'<text fill="{PALETTE[k % len(PALETTE)]}" ', 1)
    return _write(out_path, c.svg())


def _write(path, text: str) -> str:
    with open(path, "w") as fh:
        fh.write(text)
    return str(path)


def render(spec: ChartSpec) -> str:
    fn = {"trajectory-lines": trajectory_lines, "density-stack": density_stack,
          "beeswarm-by-cohort": beeswarm_by_cohort}[spec.kind]
    return fn(spec.input, spec.output, **spec.options)
