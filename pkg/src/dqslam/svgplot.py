"""Minimal deterministic SVG emitter for trial maps.

Top-down x-y view with the Fig.-style color scheme: blue = odometry
initialization, green = ground truth, red = SLAM estimate. Each estimate
set also contributes one centroid marker per landmark. Output is plain
text with fixed formatting, so identical inputs give identical bytes.
"""

from __future__ import annotations

import numpy as np

__all__ = ["trial_svg"]

_COLORS = {"initial": "#1f4fd8", "ground_truth": "#1f9e45", "slam": "#d82f2f"}


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def _polyline(points, color: str, width: float = 1.5) -> str:
    pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
    return (
        f'<polyline fill="none" stroke="{color}" stroke-width="{width}" '
        f'points="{pts}" />'
    )


def _markers(points, color: str, radius: float = 4.0) -> list:
    return [
        f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="{radius}" fill="{color}" '
        f'fill-opacity="0.85" />'
        for x, y in points
    ]


def trial_svg(
    gt_xy: np.ndarray,
    init_xy: np.ndarray,
    slam_xy: np.ndarray,
    gt_landmarks_xy: np.ndarray,
    init_landmarks_xy: np.ndarray,
    slam_landmarks_xy: np.ndarray,
    size: int = 640,
) -> str:
    """Render three trajectories plus three landmark marker sets.

    All inputs are (n, 2) world-coordinate arrays; the world y axis points
    up in the plot.
    """
    arrays = [gt_xy, init_xy, slam_xy, gt_landmarks_xy, init_landmarks_xy,
              slam_landmarks_xy]
    arrays = [np.asarray(a, dtype=float).reshape(-1, 2) for a in arrays]
    stacked = np.vstack(arrays)
    lo = stacked.min(axis=0)
    hi = stacked.max(axis=0)
    span = max(float(np.max(hi - lo)), 1e-9)
    margin = 0.05 * span
    scale = size / (span + 2 * margin)

    def to_px(a):
        # Flip y: SVG's y axis points down.
        x = (a[:, 0] - lo[0] + margin) * scale
        y = (hi[1] - a[:, 1] + margin) * scale
        return np.stack([x, y], axis=1)

    gt_t, init_t, slam_t, gt_lm, init_lm, slam_lm = (to_px(a) for a in arrays)
    height = int(round((hi[1] - lo[1] + 2 * margin) * scale))
    width = int(round((hi[0] - lo[0] + 2 * margin) * scale))

    body = [
        _polyline(init_t, _COLORS["initial"]),
        _polyline(gt_t, _COLORS["ground_truth"]),
        _polyline(slam_t, _COLORS["slam"]),
    ]
    body += _markers(init_lm, _COLORS["initial"])
    body += _markers(gt_lm, _COLORS["ground_truth"])
    body += _markers(slam_lm, _COLORS["slam"])

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white" />',
        *body,
        "</svg>",
    ]
    return "\n".join(lines) + "\n"
