"""Feature backends: a built-in differentiable extractor and the DSTF loader.

A feature pyramid is a list of (C, H, W) maps, each tagged with the rational
scale factor that maps source-image coordinates into that level's pixel grid.
The built-in extractor is hand-crafted (color, gradients, local deviation over
a blur-and-downsample stack) so the whole engine runs without any external
network; production-grade pyramids are imported through DSTF files instead.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .image import bilinear_sample
from .pyramid import downsample
from .validation import DTYPE, as_image, as_points

DSTF_MAGIC = b"DSTF"
DSTF_VERSION = 1


@dataclass
class FeaturePyramid:
    levels: list  # (C, H, W) tensors, finest first
    scales: list  # (num, den) per level: source coord * num/den -> level coord
    source_dims: tuple  # (H, W) of the image the features describe

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def hypercolumn_dim(self) -> int:
        return sum(int(lvl.shape[0]) for lvl in self.levels)


def _gradient_x(x: torch.Tensor) -> torch.Tensor:
    # central difference with replicated borders; x is (N, C, H, W)
    p = F.pad(x, (1, 1, 0, 0), mode="replicate")
    return 0.5 * (p[:, :, :, 2:] - p[:, :, :, :-2])


def _gradient_y(x: torch.Tensor) -> torch.Tensor:
    p = F.pad(x, (0, 0, 1, 1), mode="replicate")
    return 0.5 * (p[:, :, 2:, :] - p[:, :, :-2, :])


def _local_std(x: torch.Tensor) -> torch.Tensor:
    # 3x3 standard deviation, epsilon-shifted so it is smooth (and has zero
    # gradient) on exactly-constant patches. eps = 2^-27 makes sqrt(eps^2)
    # exact, so constant regions map to exactly zero.
    eps = 2.0**-27
    c = x.shape[1]
    kernel = torch.full((c, 1, 3, 3), 1.0 / 9.0, dtype=x.dtype)
    p = F.pad(x, (1, 1, 1, 1), mode="replicate")
    mean = F.conv2d(p, kernel, groups=c)
    sq = F.conv2d(p * p, kernel, groups=c)
    var = (sq - mean * mean).clamp_min(0.0)
    return torch.sqrt(var + eps * eps) - eps


def builtin_extract(img, n_levels: int) -> FeaturePyramid:
    """Hand-crafted feature pyramid: per level and color channel, the value,
    x-gradient, y-gradient, and 3x3 local standard deviation (4C channels).

    Level l is the image blurred and downsampled l times. Differentiable
    w.r.t. the input image and deterministic.
    """
    img = img if torch.is_tensor(img) else as_image(img)
    h, w, _ = img.shape
    if n_levels < 1:
        raise ValueError(f"n_levels must be >= 1, got {n_levels}")
    min_dim = min(h, w)
    if min_dim < 2 ** (n_levels - 1) * 2:
        raise ValueError(
            f"{h}x{w} image is too small for {n_levels} feature levels"
        )
    levels = []
    scales = []
    current = img
    for lvl in range(n_levels):
        x = current.permute(2, 0, 1).unsqueeze(0)
        feats = torch.cat([x, _gradient_x(x), _gradient_y(x), _local_std(x)], dim=1)
        levels.append(feats.squeeze(0))
        scales.append((1, 2**lvl))
        if lvl + 1 < n_levels:
            current = downsample(current)
    return FeaturePyramid(levels=levels, scales=scales, source_dims=(h, w))


def sample_hypercolumns(pyr: FeaturePyramid, coords) -> torch.Tensor:
    """Bilinearly sample every level at source-image coordinates and
    concatenate in level order; returns (N, sum C_l)."""
    coords = coords if torch.is_tensor(coords) else as_points(coords)
    if coords.numel() == 0:
        return torch.zeros((0, pyr.hypercolumn_dim), dtype=DTYPE)
    parts = []
    for level, (num, den) in zip(pyr.levels, pyr.scales):
        lvl_coords = coords * (num / den)
        img_like = level.permute(1, 2, 0)
        parts.append(bilinear_sample(img_like, lvl_coords))
    return torch.cat(parts, dim=1)


def save_features(pyr: FeaturePyramid, path) -> None:
    """Write the DSTF binary format (float32 LE, channel-major per level)."""
    with open(path, "wb") as f:
        f.write(DSTF_MAGIC)
        f.write(struct.pack("<II", DSTF_VERSION, len(pyr.levels)))
        for level, (num, den) in zip(pyr.levels, pyr.scales):
            c, h, w = level.shape
            f.write(struct.pack("<IIIII", c, h, w, num, den))
            data = level.detach().numpy().astype("<f4", copy=False)
            f.write(np.ascontiguousarray(data).tobytes())


def load_features(path) -> FeaturePyramid:
    """Read a DSTF file, validating the header against the payload.

    Values are returned byte-exact as float32 (promote with ``.to()`` when
    mixing with float64 math). Malformed files are rejected with the byte
    offset where parsing failed.
    """
    with open(path, "rb") as f:
        blob = f.read()

    def need(offset: int, n: int, what: str) -> bytes:
        if offset + n > len(blob):
            raise ValueError(
                f"truncated DSTF file: needed {n} bytes for {what} at offset "
                f"{offset}, file has {len(blob)}"
            )
        return blob[offset : offset + n]

    if need(0, 4, "magic") != DSTF_MAGIC:
        raise ValueError(
            f"bad magic {blob[:4]!r} at offset 0, expected {DSTF_MAGIC!r}"
        )
    version, n_levels = struct.unpack("<II", need(4, 8, "version/level count"))
    if version != DSTF_VERSION:
        raise ValueError(f"unsupported DSTF version {version} at offset 4")
    offset = 12
    levels = []
    scales = []
    for i in range(n_levels):
        c, h, w, num, den = struct.unpack(
            "<IIIII", need(offset, 20, f"level {i} header")
        )
        offset += 20
        if c < 1 or h < 1 or w < 1 or num < 1 or den < 1:
            raise ValueError(
                f"level {i} header at offset {offset - 20} declares degenerate "
                f"shape C={c} H={h} W={w} scale={num}/{den}"
            )
        nbytes = c * h * w * 4
        raw = need(offset, nbytes, f"level {i} payload")
        offset += nbytes
        data = np.frombuffer(raw, dtype="<f4").reshape(c, h, w)
        levels.append(torch.from_numpy(data.copy()))
        scales.append((num, den))
    if offset != len(blob):
        raise ValueError(
            f"{len(blob) - offset} trailing bytes after level {n_levels - 1} "
            f"at offset {offset}"
        )
    if not levels:
        return FeaturePyramid(levels=[], scales=[], source_dims=(0, 0))
    h0, w0 = levels[0].shape[1], levels[0].shape[2]
    num0, den0 = scales[0]
    src_h = int(round(h0 * den0 / num0))
    src_w = int(round(w0 * den0 / num0))
    pyr = FeaturePyramid(levels=levels, scales=scales, source_dims=(src_h, src_w))
    for lvl in pyr.levels:
        if not torch.isfinite(lvl).all():
            raise ValueError("DSTF payload contains non-finite values")
    return pyr
