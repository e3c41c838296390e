"""Input validation helpers shared by every module.

All public entry points funnel array-likes through these so that shape and
finiteness errors surface with a consistent message instead of deep inside
torch ops.
"""

from __future__ import annotations

import numpy as np
import torch

DTYPE = torch.float64


class NumericalFailure(RuntimeError):
    """Raised when an optimization quantity leaves the finite range."""


def as_image(data, name: str = "image") -> torch.Tensor:
    """Coerce to an (H, W, C) float64 tensor and validate it.

    Accepts numpy arrays, torch tensors, and nested sequences. A 2-D input
    is promoted to a single-channel image.
    """
    img = torch.as_tensor(data, dtype=DTYPE)
    if img.ndim == 2:
        img = img.unsqueeze(-1)
    if img.ndim != 3:
        raise ValueError(f"{name} must have shape (H, W, C), got {tuple(img.shape)}")
    h, w, c = img.shape
    if h < 1 or w < 1 or c < 1:
        raise ValueError(f"{name} has a degenerate dimension: {tuple(img.shape)}")
    if not torch.isfinite(img).all():
        raise ValueError(f"{name} contains non-finite values")
    return img


def as_points(data, name: str = "points") -> torch.Tensor:
    """Coerce to an (N, 2) float64 tensor of (x, y) coordinates."""
    pts = torch.as_tensor(data, dtype=DTYPE)
    if pts.ndim == 1 and pts.numel() == 0:
        return pts.reshape(0, 2)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"{name} must have shape (N, 2), got {tuple(pts.shape)}")
    if not torch.isfinite(pts).all():
        raise ValueError(f"{name} contains non-finite values")
    return pts


def as_points_np(data, name: str = "points") -> np.ndarray:
    """Numpy twin of :func:`as_points` for the non-differentiable helpers."""
    pts = np.asarray(data, dtype=np.float64)
    if pts.ndim == 1 and pts.size == 0:
        return pts.reshape(0, 2)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"{name} must have shape (N, 2), got {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError(f"{name} contains non-finite values")
    return pts


def check_positive(value, name: str) -> None:
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")


def check_count(value: int, name: str, minimum: int = 1) -> None:
    if int(value) != value or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value}")
