"""SVG figures: a hypnogram with optional reference overlay, and one-epoch traces."""

from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .annotators import Kind, MicroAnnotation
from .errors import EpochIndexError
from .evalkit import Hypnogram
from .signal_io import EPOCH_SECONDS, Recording, Role
from .stager import Stage

__all__ = ["render_hypnogram_svg", "render_epoch_svg", "KIND_COLORS"]

# Top to bottom, as clinicians draw them.
_ROW = {Stage.Wake: 0, Stage.R: 1, Stage.N1: 2, Stage.N2: 3, Stage.N3: 4}

KIND_COLORS = {
    Kind.Alpha: "#e41a1c",
    Kind.LAMF: "#984ea3",
    Kind.Spindle: "#377eb8",
    Kind.SWA: "#4daf4a",
    Kind.REM: "#ff7f00",
    Kind.KComplex: "#a65628",
    Kind.LowEmgTone: "#999999",
    Kind.HighEmgTone: "#f781bf",
    Kind.EyeBlink: "#dede00",
}

_TRACE_ORDER = (Role.F4M1, Role.F3M2, Role.C4M1, Role.C3M2, Role.O2M1, Role.O1M2, Role.E1M2, Role.E2M1, Role.ChinEMG)


def _svg(width: float, height: float, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:g}" height="{height:g}" '
            f'viewBox="0 0 {width:g} {height:g}" font-family="sans-serif" font-size="11">')
    return "\n".join([head, *body, "</svg>"]) + "\n"


def _f(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def render_hypnogram_svg(predicted: Hypnogram, reference: Hypnogram | None = None,
                         agreement: Sequence[float] | None = None, width: float = 900.0,
                         row_height: float = 22.0) -> str:
    """Step-plot hypnogram.

    With a ``reference``, every epoch where the two disagree gets one
    ``class="disagreement"`` rectangle. With ``agreement`` ratios, epochs are
    shaded darker where human agreement was lower.
    """
    n = len(predicted)
    if reference is not None and len(reference) != n:
        raise ValueError("reference and predicted hypnograms differ in length")
    left, top = 40.0, 10.0
    plot_w = width - left - 10.0
    plot_h = row_height * 5
    height = top + plot_h + 30.0
    dx = plot_w / max(n, 1)
    body = []
    if agreement is not None:
        ratio = np.asarray(agreement, dtype=np.float64)
        body.append('<g class="agreement-shading">')
        for t, r in enumerate(ratio):
            body.append(f'<rect class="agreement" x="{_f(left + t * dx)}" y="{_f(top)}" width="{_f(dx)}" '
                        f'height="{_f(plot_h)}" fill="#000000" fill-opacity="{_f(0.3 * (1 - r))}"/>')
        body.append("</g>")
    if reference is not None:
        body.append('<g class="disagreements">')
        for t, (p, r) in enumerate(zip(predicted.stages, reference.stages)):
            if p is not r:
                body.append(f'<rect class="disagreement" x="{_f(left + t * dx)}" y="{_f(top)}" width="{_f(dx)}" '
                            f'height="{_f(plot_h)}" fill="#ff0000" fill-opacity="0.3"/>')
        body.append("</g>")
    for stage, row in _ROW.items():
        y = top + row * row_height + row_height / 2
        body.append(f'<text x="{_f(left - 6)}" y="{_f(y + 4)}" text-anchor="end">{stage.value}</text>')

    def path(hyp: Hypnogram) -> str:
        pts = []
        for t, s in enumerate(hyp.stages):
            y = top + _ROW[s] * row_height + row_height / 2
            pts.append(f"{_f(left + t * dx)},{_f(y)}")
            pts.append(f"{_f(left + (t + 1) * dx)},{_f(y)}")
        return " ".join(pts)

    if reference is not None:
        body.append(f'<polyline class="reference" points="{path(reference)}" fill="none" '
                    f'stroke="#888888" stroke-width="1"/>')
    body.append(f'<polyline class="predicted" points="{path(predicted)}" fill="none" '
                f'stroke="#000000" stroke-width="1.2"/>')
    hours = n * EPOCH_SECONDS / 3600
    for h in range(int(hours) + 1):
        x = left + h * 3600 / EPOCH_SECONDS * dx
        body.append(f'<text x="{_f(x)}" y="{_f(top + plot_h + 16)}" text-anchor="middle">{h} h</text>')
    return _svg(width, height, body)


def render_epoch_svg(recording: Recording, epoch_index: int, annotations: Sequence[MicroAnnotation],
                     stage: Stage | None = None, width: float = 900.0, trace_height: float = 60.0) -> str:
    """Channel traces of one epoch with coloured annotation overlays and a legend."""
    if not 0 <= epoch_index < recording.epoch_count:
        raise EpochIndexError(f"epoch {epoch_index} outside 0..{recording.epoch_count - 1}")
    t0 = epoch_index * EPOCH_SECONDS
    t1 = t0 + EPOCH_SECONDS
    channels = [recording.channel(r) for r in _TRACE_ORDER]
    channels = [c for c in channels if c is not None]
    left, top = 80.0, 24.0
    plot_w = width - left - 140.0
    height = top + trace_height * max(len(channels), 1) + 20.0
    sx = plot_w / EPOCH_SECONDS
    rows = {c.role: i for i, c in enumerate(channels)}
    body = []
    title = f"Epoch {epoch_index}" + (f": {stage.value}" if stage is not None else "")
    body.append(f'<text x="{_f(left)}" y="14" font-weight="bold">{escape(title)}</text>')

    inside = [a for a in annotations if a.start < t1 and a.end > t0]
    body.append('<g class="annotations">')
    for a in inside:
        s, e = max(a.start, t0), min(a.end, t1)
        row = rows.get(a.channel_role)
        y, h = (top + row * trace_height, trace_height) if row is not None else (top, trace_height * len(channels))
        body.append(f'<rect class="annotation" data-kind="{a.kind.value}" x="{_f(left + (s - t0) * sx)}" '
                    f'y="{_f(y)}" width="{_f((e - s) * sx)}" height="{_f(h)}" '
                    f'fill="{KIND_COLORS[a.kind]}" fill-opacity="0.25"/>')
    body.append("</g>")

    for i, ch in enumerate(channels):
        x = ch.segment(t0, t1)
        mid = top + i * trace_height + trace_height / 2
        scale = (trace_height * 0.45) / max(float(np.max(np.abs(x - x.mean()))) if x.size else 1.0, 1e-9)
        tt = np.arange(x.size) / ch.sample_rate
        # Thin to at most two points per pixel column.
        step = max(1, int(x.size / (2 * plot_w)))
        pts = " ".join(f"{_f(left + u * sx)},{_f(mid - (v - x.mean()) * scale)}"
                       for u, v in zip(tt[::step], x[::step]))
        body.append(f'<text x="{_f(left - 6)}" y="{_f(mid + 4)}" text-anchor="end">{escape(ch.role.display)}</text>')
        body.append(f'<polyline class="trace" points="{pts}" fill="none" stroke="#222222" stroke-width="0.6"/>')

    kinds = [k for k in Kind if any(a.kind is k for a in inside)]
    body.append('<g class="legend">')
    for j, k in enumerate(kinds):
        y = top + j * 16
        lx = left + plot_w + 12
        body.append(f'<g class="legend-entry"><rect x="{_f(lx)}" y="{_f(y)}" width="10" height="10" '
                    f'fill="{KIND_COLORS[k]}"/><text x="{_f(lx + 14)}" y="{_f(y + 9)}">{k.value}</text></g>')
    body.append("</g>")
    return _svg(width, height, body)
