"""Keypoint overlay rendering: circles at source points, squares at targets,
lines showing where each source moves."""

from __future__ import annotations

import numpy as np
from PIL import Image as PILImage
from PIL import ImageDraw

from .keypoints import KeypointSet
from .validation import as_image

_PALETTE = [
    (230, 25, 75),
    (60, 180, 75),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
    (0, 128, 128),
    (170, 110, 40),
]


def render_overlay(img, kps: KeypointSet, radius: int = 3) -> PILImage.Image:
    """Draw the displacement overlay on a copy of ``img``."""
    arr = as_image(img).clamp(0, 1).numpy()
    data = np.floor(arr * 255.0 + 0.5).clip(0, 255).astype(np.uint8)
    if data.shape[2] == 1:
        data = np.repeat(data, 3, axis=2)
    canvas = PILImage.fromarray(data)
    draw = ImageDraw.Draw(canvas)
    for i in range(kps.k):
        color = _PALETTE[i % len(_PALETTE)]
        sx, sy = kps.source[i]
        tx, ty = kps.target[i]
        draw.line([(sx, sy), (tx, ty)], fill=color, width=1)
        draw.ellipse(
            [sx - radius, sy - radius, sx + radius, sy + radius],
            outline=color,
            width=1,
        )
        draw.rectangle(
            [tx - radius, ty - radius, tx + radius, ty + radius],
            outline=color,
            width=1,
        )
    return canvas


def save_overlay(img, kps: KeypointSet, path, radius: int = 3) -> None:
    render_overlay(img, kps, radius=radius).save(path)
