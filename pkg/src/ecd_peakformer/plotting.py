"""Standalone SVG line charts of spectra."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .spectra import GRID, INTENSITY_LIMIT, validate_spectrum

WIDTH, HEIGHT = 640, 360
MARGIN = {"left": 60, "right": 20, "top": 30, "bottom": 45}


def spectrum_svg(spectrum, title: str = "") -> str:
    """Wavelength (nm) against intensity (mdeg) with the zero line drawn."""
    y = validate_spectrum(spectrum)
    x0, x1 = float(GRID[0]), float(GRID[-1])
    top = max(float(np.max(np.abs(y))), 1.0)
    top = min(INTENSITY_LIMIT, float(np.ceil(top / 10.0) * 10.0))
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(v):
        return MARGIN["left"] + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return MARGIN["top"] + (top - v) / (2 * top) * ph

    points = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(GRID, y))
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
        'fill="none" stroke="black" stroke-width="1"/>',
        f'<line x1="{sx(x0):.2f}" y1="{sy(0):.2f}" x2="{sx(x1):.2f}" y2="{sy(0):.2f}" '
        'stroke="gray" stroke-width="1" stroke-dasharray="4,3"/>',
    ]
    for t in range(100, 451, 50):
        parts.append(f'<text x="{sx(t):.2f}" y="{HEIGHT - MARGIN["bottom"] + 16}" font-size="11" '
                     f'text-anchor="middle">{t}</text>')
    for v in (-top, 0.0, top):
        parts.append(f'<text x="{MARGIN["left"] - 6}" y="{sy(v) + 4:.2f}" font-size="11" '
                     f'text-anchor="end">{v:g}</text>')
    parts += [
        f'<text x="{MARGIN["left"] + pw / 2:.2f}" y="{HEIGHT - 8}" font-size="12" '
        'text-anchor="middle">Wavelength (nm)</text>',
        f'<text x="14" y="{MARGIN["top"] + ph / 2:.2f}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {MARGIN["top"] + ph / 2:.2f})">mdeg</text>',
        f'<polyline points="{points}" fill="none" stroke="#1f4e9c" stroke-width="1.5"/>',
    ]
    if title:
        parts.append(f'<text x="{WIDTH / 2:.0f}" y="18" font-size="13" text-anchor="middle">'
                     f'{escape(title)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
