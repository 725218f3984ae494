"""Hand-written SVG views: a stroke's speed with its lognormal components,
and the pen trajectory coloured by speed."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .lognormal import lognormal_value, synthesize_on

SPEED_MAX = 300.0  # mm/s, top of the colour ramp
RAMP_START = (0, 0, 255)
RAMP_END = (255, 0, 0)
WIDTH, HEIGHT, PAD = 640, 360, 48


def speed_color(v: float, vmax: float = SPEED_MAX) -> str:
    """Blue at 0, red at ``vmax`` and above, linear in between."""
    f = min(max(float(v) / vmax, 0.0), 1.0)
    rgb = [round(a + f * (b - a)) for a, b in zip(RAMP_START, RAMP_END)]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _scale(values, lo, hi, out_lo, out_hi):
    span = hi - lo if hi > lo else 1.0
    return out_lo + (np.asarray(values, dtype=float) - lo) / span * (out_hi - out_lo)


def _points(xs, ys) -> str:
    return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(xs, ys))


def _frame(title: str, body: list, xlabel: str, ylabel: str) -> str:
    head = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
            f'<line x1="{PAD}" y1="{HEIGHT - PAD}" x2="{WIDTH - PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
            f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
            f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
            f'<text x="14" y="{HEIGHT / 2}" font-size="12" transform="rotate(-90 14 {HEIGHT / 2})" '
            f'text-anchor="middle">{escape(ylabel)}</text>']
    return "\n".join(head + body + ["</svg>"]) + "\n"


def reconstruction_svg(t, decomposition, speed=None, title: str | None = None) -> str:
    """Observed speed (black), each component's D * Lambda (yellow), and the
    reconstructed speed (dashed). ``speed`` may be omitted."""
    t = np.asarray(t, dtype=float)
    comps = decomposition.components
    curves = [c.D * lognormal_value(t, c) for c in comps]
    recon = synthesize_on(t, comps).speed if comps else np.zeros_like(t)
    top = max([float(np.max(c)) for c in curves] + [float(recon.max()),
              float(np.max(speed)) if speed is not None else 0.0, 1e-9]) * 1.05
    xs = _scale(t, t[0], t[-1], PAD, WIDTH - PAD)

    def y(v):
        return _scale(v, 0.0, top, HEIGHT - PAD, PAD)

    body = []
    if speed is not None:
        body.append(f'<polyline class="curve observed" fill="none" stroke="black" stroke-width="2" '
                    f'points="{_points(xs, y(speed))}"/>')
    for c in curves:
        body.append(f'<polyline class="curve component" fill="none" stroke="#e6b800" stroke-width="1.5" '
                    f'points="{_points(xs, y(c))}"/>')
    body.append(f'<polyline class="curve sum" fill="none" stroke="#555555" stroke-dasharray="6 4" '
                f'stroke-width="1.5" points="{_points(xs, y(recon))}"/>')
    title = title or f"{decomposition.stroke_id}  nblog={decomposition.nblog}  SNR={decomposition.snr_db:.1f} dB"
    return _frame(title, body, "time (s)", "speed (mm/s)")


def trajectory_svg(x, y, speed, vmax: float = SPEED_MAX, title: str = "") -> str:
    """Pen path as short segments coloured by speed, with a colour legend."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    speed = np.asarray(speed, dtype=float)
    span = max(x.max() - x.min(), y.max() - y.min(), 1e-9)
    # equal scaling on both axes, pen y grows downwards on the page
    size = min(WIDTH - 3 * PAD - 40, HEIGHT - 2 * PAD)
    px = PAD + (x - x.min()) / span * size
    py = PAD + (y - y.min()) / span * size
    body = []
    for i in range(len(x) - 1):
        v = 0.5 * (speed[i] + speed[i + 1])
        body.append(f'<line class="segment" x1="{px[i]:.2f}" y1="{py[i]:.2f}" x2="{px[i + 1]:.2f}" '
                    f'y2="{py[i + 1]:.2f}" stroke="{speed_color(v, vmax)}" stroke-width="2.5" '
                    f'stroke-linecap="round"/>')
    lx = WIDTH - PAD - 20
    body += ['<defs><linearGradient id="ramp" x1="0" y1="1" x2="0" y2="0">',
             f'<stop offset="0" stop-color="{speed_color(0, vmax)}"/>',
             f'<stop offset="1" stop-color="{speed_color(vmax, vmax)}"/>',
             '</linearGradient></defs>',
             f'<rect class="legend" x="{lx}" y="{PAD}" width="14" height="{HEIGHT - 2 * PAD}" fill="url(#ramp)"/>',
             f'<text x="{lx - 4}" y="{HEIGHT - PAD}" text-anchor="end" font-size="11">0</text>',
             f'<text x="{lx - 4}" y="{PAD + 10}" text-anchor="end" font-size="11">{vmax:g} mm/s</text>']
    return _frame(title, body, "x (mm)", "y (mm)")
