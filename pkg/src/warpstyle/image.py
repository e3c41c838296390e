"""Image representation, file IO, resampling, and bilinear sampling.

Convention used everywhere in this package: images are (H, W, C) float64
tensors with values nominally in [0, 1]; coordinates are (x, y) with x the
column index and y the row index, origin at the top-left, and pixel centers
at integer coordinates. Out-of-bounds coordinates clamp to the border pixel.
"""

from __future__ import annotations

import numpy as np
import torch
from PIL import Image as PILImage

from .validation import DTYPE, as_image, as_points


def load_image(path) -> torch.Tensor:
    """Read an 8-bit PNG/JPEG into an (H, W, 3) float64 tensor in [0, 1]."""
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return torch.from_numpy(arr)


def save_image(img, path) -> None:
    """Write an image to PNG/JPEG, mapping [0, 1] to 8-bit with round-half-up."""
    img = as_image(img).clamp(0.0, 1.0).numpy()
    data = np.floor(img * 255.0 + 0.5).clip(0, 255).astype(np.uint8)
    if data.shape[2] == 1:
        data = data[:, :, 0]
    PILImage.fromarray(data).save(path)


def bilinear_sample(img: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
    """Sample ``img`` at continuous (x, y) positions.

    Returns an (N, C) tensor of bilinearly interpolated values. Coordinates
    outside the image clamp to the border. Differentiable w.r.t. both the
    image values and the coordinates.
    """
    img = img if torch.is_tensor(img) else as_image(img)
    coords = coords if torch.is_tensor(coords) else as_points(coords)
    if coords.numel() == 0:
        return img.new_zeros((0, img.shape[2]))

    h, w, _ = img.shape
    x = coords[:, 0].clamp(0.0, float(w - 1))
    y = coords[:, 1].clamp(0.0, float(h - 1))

    x0 = x.floor().clamp(max=float(w - 1) if w == 1 else float(w - 2))
    y0 = y.floor().clamp(max=float(h - 1) if h == 1 else float(h - 2))
    wx = (x - x0).unsqueeze(1)
    wy = (y - y0).unsqueeze(1)

    ix0 = x0.long()
    iy0 = y0.long()
    ix1 = (ix0 + 1).clamp(max=w - 1)
    iy1 = (iy0 + 1).clamp(max=h - 1)

    flat = img.reshape(h * w, -1)
    v00 = flat[iy0 * w + ix0]
    v01 = flat[iy0 * w + ix1]
    v10 = flat[iy1 * w + ix0]
    v11 = flat[iy1 * w + ix1]

    # (1-w)*a + w*b rather than a + w*(b-a): exact at w == 0 and w == 1,
    # which makes integer-lattice sampling reproduce stored pixels bit-for-bit.
    top = (1.0 - wx) * v00 + wx * v01
    bottom = (1.0 - wx) * v10 + wx * v11
    return (1.0 - wy) * top + wy * bottom


def _resize_to(img: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    """Bilinear resample to an explicit (out_h, out_w) grid.

    Output pixel (xo, yo) reads input coordinate ((xo+0.5)*W/Wo - 0.5,
    (yo+0.5)*H/Ho - 0.5), so same-size resizes are exact passthroughs.
    """
    h, w, _ = img.shape
    if out_h < 1 or out_w < 1:
        raise ValueError(f"degenerate resize target ({out_h}, {out_w})")
    if out_h == h and out_w == w:
        return img

    xs = (torch.arange(out_w, dtype=DTYPE) + 0.5) * (w / out_w) - 0.5
    ys = (torch.arange(out_h, dtype=DTYPE) + 0.5) * (h / out_h) - 0.5
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    coords = torch.stack([gx.reshape(-1), gy.reshape(-1)], dim=1)
    return bilinear_sample(img, coords).reshape(out_h, out_w, img.shape[2])


def resize(img, long_side: int) -> torch.Tensor:
    """Resize so the longer side equals ``long_side``, keeping aspect ratio.

    The shorter side is rounded to the nearest pixel; a target that would
    collapse either dimension below one pixel is rejected.
    """
    img = img if torch.is_tensor(img) else as_image(img)
    if long_side < 8:
        raise ValueError(f"long_side must be >= 8, got {long_side}")
    h, w, _ = img.shape
    scale = long_side / max(h, w)
    out_h = int(round(h * scale))
    out_w = int(round(w * scale))
    if out_h < 1 or out_w < 1:
        raise ValueError(
            f"resize of {h}x{w} image to long side {long_side} collapses a "
            f"dimension ({out_h}x{out_w})"
        )
    return _resize_to(img, out_h, out_w)


def resize_to(img, out_h: int, out_w: int) -> torch.Tensor:
    """Resize to explicit dimensions (used by pyramids and the scale schedule)."""
    img = img if torch.is_tensor(img) else as_image(img)
    return _resize_to(img, out_h, out_w)


def mean_color(img) -> torch.Tensor:
    """Per-channel mean as a (C,) tensor."""
    img = img if torch.is_tensor(img) else as_image(img)
    return img.mean(dim=(0, 1))
