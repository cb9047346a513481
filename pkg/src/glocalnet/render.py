"""Deterministic SVG stick-figure frames.

3-D skeletons are drawn with a fixed orthographic XY projection; depth (Z)
sets stroke opacity, nearer is more opaque.
"""

from __future__ import annotations

from pathlib import Path
from typing import List

import numpy as np

from .data import MotionFile


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def frame_svg(joints: np.ndarray, bones, frame_index: int, size: int, bounds, points_only: bool = False) -> str:
    """SVG text for one ``(J, D)`` pose inside the shared ``bounds``."""
    (xmin, ymin), span = bounds
    pad = 0.08 * size
    s = (size - 2 * pad) / span

    def xy(p):
        # flip y so +y points up
        return pad + (p[0] - xmin) * s, size - pad - (p[1] - ymin) * s

    if joints.shape[1] == 3:
        z = joints[:, 2]
        zr = float(z.max() - z.min())
        opacity = 0.35 + 0.65 * ((z - z.min()) / zr if zr > 0 else np.ones_like(z))
    else:
        opacity = np.ones(len(joints))

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    if not points_only:
        for a, b in bones:
            x1, y1 = xy(joints[a])
            x2, y2 = xy(joints[b])
            op = 0.5 * (opacity[a] + opacity[b])
            lines.append(
                f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
                f'stroke="black" stroke-width="2" stroke-opacity="{_fmt(op)}"/>'
            )
    r = max(2.0, size / 80)
    for j, p in enumerate(joints):
        cx, cy = xy(p)
        lines.append(
            f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(r)}" fill="crimson" '
            f'fill-opacity="{_fmt(opacity[j])}"/>'
        )
    lines.append(f'<text x="6" y="16" font-family="monospace" font-size="12">frame {frame_index}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def render_motion(m: MotionFile, out_dir, size: int = 256, stride: int = 1,
                  points_only: bool = False) -> List[Path]:
    """Write ``frame_NNNNN.svg`` for frames ``0, stride, 2*stride, ...`` plus ``index.html``."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if not m.skeleton.bones and not points_only:
        raise ValueError("skeleton has no bones to draw; use --points-only to draw joints only")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    joints = m.skeleton.joints(m.frames)
    xy = joints[..., :2].reshape(-1, 2)
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    span = float(max(hi - lo)) or 1.0
    bounds = (tuple(lo - 0.5 * (span - (hi - lo))), span)
    written = []
    for i in range(0, len(m), stride):
        p = out_dir / f"frame_{i:05d}.svg"
        p.write_text(frame_svg(joints[i], m.skeleton.bones, i, size, bounds, points_only))
        written.append(p)
    items = "\n".join(f'<img src="{p.name}" alt="{p.stem}" width="{size // 2}">' for p in written)
    title = m.name or "motion"
    (out_dir / "index.html").write_text(
        f"<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{title}</title></head>\n"
        f"<body>\n<h1>{title}</h1>\n{items}\n</body></html>\n"
    )
    return written
