"""Laplacian-pyramid decomposition used to parameterize the optimized image.

The residual scheme is exact by construction: each band stores
``level - upsample(downsample(level))``, and reconstruction replays the same
upsample path, so round trips are bit-faithful up to float addition. The
blur is the 5-tap binomial [1, 4, 6, 4, 1] / 16 with replicated borders.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .image import resize_to
from .validation import DTYPE, as_image

_BINOMIAL5 = torch.tensor([1.0, 4.0, 6.0, 4.0, 1.0], dtype=DTYPE) / 16.0


@dataclass
class LaplacianPyramid:
    """Residual bands ordered coarse -> fine, plus the low-pass base."""

    levels: list = field(default_factory=list)
    base: torch.Tensor = None

    @property
    def n_levels(self) -> int:
        return len(self.levels) + 1


def blur(img: torch.Tensor) -> torch.Tensor:
    """Separable binomial blur with replicate padding."""
    h, w, c = img.shape
    x = img.permute(2, 0, 1).unsqueeze(0)
    kx = _BINOMIAL5.reshape(1, 1, 1, 5).expand(c, 1, 1, 5)
    ky = _BINOMIAL5.reshape(1, 1, 5, 1).expand(c, 1, 5, 1)
    x = F.pad(x, (2, 2, 0, 0), mode="replicate")
    x = F.conv2d(x, kx, groups=c)
    x = F.pad(x, (0, 0, 2, 2), mode="replicate")
    x = F.conv2d(x, ky, groups=c)
    return x.squeeze(0).permute(1, 2, 0)


def downsample(img: torch.Tensor) -> torch.Tensor:
    """Blur then keep every other pixel; dims go to ceil(n / 2)."""
    return blur(img)[::2, ::2, :].contiguous()


def max_levels(height: int, width: int) -> int:
    """Largest level count keeping the coarsest level at least 2x2."""
    n = 1
    h, w = height, width
    while (h + 1) // 2 >= 2 and (w + 1) // 2 >= 2:
        h, w = (h + 1) // 2, (w + 1) // 2
        n += 1
    return n


def decompose(img, n_levels: int) -> LaplacianPyramid:
    """Split an image into ``n_levels`` bands (n_levels - 1 residuals + base)."""
    img = img if torch.is_tensor(img) else as_image(img)
    h, w, _ = img.shape
    if n_levels < 1:
        raise ValueError(f"n_levels must be >= 1, got {n_levels}")
    if n_levels > max_levels(h, w):
        raise ValueError(
            f"{n_levels} pyramid levels requested but a {h}x{w} image supports "
            f"at most {max_levels(h, w)} (coarsest level must be >= 2x2)"
        )
    residuals = []
    current = img
    for _ in range(n_levels - 1):
        down = downsample(current)
        up = resize_to(down, current.shape[0], current.shape[1])
        residuals.append(current - up)
        current = down
    residuals.reverse()
    return LaplacianPyramid(levels=residuals, base=current)


def reconstruct(pyr: LaplacianPyramid) -> torch.Tensor:
    """Invert :func:`decompose`. Linear in the coefficients, so autograd
    provides the adjoint for gradient routing onto the bands."""
    img = pyr.base
    for band in pyr.levels:
        img = resize_to(img, band.shape[0], band.shape[1]) + band
    return img
