"""Static SVG filmstrip of a gesture clip."""
from __future__ import annotations

import numpy as np

from .skeleton import BONES, N_KEYPOINTS


def _panel(kp, x0: float, size: float, bones) -> list[str]:
    half = size / 2
    cx, cy = x0 + half, half
    scale = 0.45 * size          # [-1, 1] fills most of the panel
    px = cx + scale * kp[:, 0]
    py = cy - scale * kp[:, 1]
    out = [f'<rect x="{x0:.1f}" y="0" width="{size:.1f}" height="{size:.1f}" '
           'fill="white" stroke="#ccc"/>']
    for a, b in bones:
        out.append(f'<line x1="{px[a]:.2f}" y1="{py[a]:.2f}" x2="{px[b]:.2f}" y2="{py[b]:.2f}"/>')
    return out


def render_svg(frames, every: int = 8, bones=BONES, panel: float = 160.0) -> str:
    """One panel per ``every``-th frame, each a connected skeleton."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != 2 * N_KEYPOINTS:
        raise ValueError(f"expected (N, {2 * N_KEYPOINTS}) frames, got {frames.shape}")
    if every < 1:
        raise ValueError("every must be >= 1")
    if not np.all(np.isfinite(frames)):
        raise ValueError("frames contain non-finite values")
    picked = frames[::every].reshape(-1, N_KEYPOINTS, 2)
    width = panel * len(picked)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
             f'height="{panel:.0f}" viewBox="0 0 {width:.0f} {panel:.0f}">',
             '<g stroke="#222" stroke-width="1.5" stroke-linecap="round">']
    for i, kp in enumerate(picked):
        parts.append(f'<g class="panel" data-frame="{i * every}">')
        parts += _panel(kp, i * panel, panel, bones)
        parts.append("</g>")
    parts += ["</g>", "</svg>", ""]
    return "\n".join(parts)


def parse_bones(text: str) -> tuple[tuple[int, int], ...]:
    """``"0-1,1-2"`` as stored in dataset manifests."""
    out = []
    for item in text.split(","):
        a, b = item.split("-")
        out.append((int(a), int(b)))
    return tuple(out)
