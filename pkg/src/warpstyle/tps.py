"""Thin-plate-spline deformation: parameter solve, dense inverse-mapping
field synthesis, and differentiable image warping.

The spline is solved in displacement form: the unknown map is
``flow(q) = q + g(q)`` where g interpolates g(p_i + theta_i) = -theta_i.
This is algebraically identical to solving for the absolute map with
``flow(p_i + theta_i) = p_i`` but makes theta = 0 produce an exactly-zero
correction, so the identity warp is bit-exact while gradients w.r.t. theta
still flow through the linear solve.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch

from .image import bilinear_sample
from .keypoints import KeypointSet
from .validation import DTYPE, NumericalFailure, as_image

DSTW_MAGIC = b"DSTW"
DSTW_VERSION = 1

RIDGE = 1e-8  # Tikhonov term on the kernel block
DEGENERATE_PRIOR = 1e-6  # weight pulling the affine part toward identity
COINCIDENT_TOL = 1e-9


@dataclass
class TpsSolution:
    """Parameters of ``flow(q) = sum_i w_i phi(|q - c_i|) + q @ v + b`` with
    centers c_i = p_i + theta_i and kernel phi(r) = r^2 log r, phi(0) = 0."""

    w: torch.Tensor  # (k, 2) kernel coefficients
    v: torch.Tensor  # (2, 2) affine matrix, rows index input dim
    b: torch.Tensor  # (2,) offset
    centers: torch.Tensor  # (k, 2)


def _phi_from_sq(d2: torch.Tensor) -> torch.Tensor:
    # r^2 log r = 0.5 * s * log s with s = r^2; the 1e-300 shift keeps the
    # log finite at s = 0 where the (exactly zero) s gradient annihilates it.
    return 0.5 * d2 * torch.log(d2 + 1e-300)


def _pairwise_sq(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    diff = a.unsqueeze(1) - b.unsqueeze(0)
    return (diff * diff).sum(-1)


def _as_theta(theta, k: int) -> torch.Tensor:
    t = theta if torch.is_tensor(theta) else torch.as_tensor(theta, dtype=DTYPE)
    t = t.to(DTYPE)
    if t.shape != (k, 2):
        raise ValueError(f"theta must have shape ({k}, 2), got {tuple(t.shape)}")
    if not torch.isfinite(t).all():
        raise ValueError("theta contains non-finite values")
    return t


def _is_degenerate(centers: np.ndarray) -> bool:
    if len(centers) < 3:
        return True
    centered = centers - centers.mean(axis=0)
    svals = np.linalg.svd(centered, compute_uv=False)
    return svals[-1] <= 1e-9 * max(svals[0], 1.0)


def tps_solve(kps: KeypointSet, theta) -> TpsSolution:
    """Solve for the spline carrying each center p_i + theta_i back to p_i.

    Differentiable w.r.t. theta. Configurations with fewer than 3 points or
    collinear centers get a weak prior pulling the affine part toward the
    identity map plus the mean displacement.
    """
    k = kps.k
    if k < 1:
        raise ValueError("keypoint set is empty")
    theta = _as_theta(theta, k)
    points = torch.from_numpy(kps.source).to(DTYPE)
    centers = points + theta

    d2 = _pairwise_sq(centers.detach(), centers.detach())
    off_diag = d2 + torch.eye(k, dtype=DTYPE)
    if (off_diag < COINCIDENT_TOL**2).any():
        i, j = divmod(int((off_diag < COINCIDENT_TOL**2).to(torch.int64).argmax()), k)
        raise ValueError(
            f"centers {i} and {j} coincide within {COINCIDENT_TOL}; "
            "the interpolation system is singular"
        )

    kernel = _phi_from_sq(_pairwise_sq(centers, centers))
    kernel = kernel + RIDGE * torch.eye(k, dtype=DTYPE)
    poly = torch.cat([torch.ones(k, 1, dtype=DTYPE), centers], dim=1)  # (k, 3)
    rhs_top = -theta  # displacement targets g(c_i) = p_i - c_i

    if _is_degenerate(centers.detach().numpy()):
        sqrt_mu = DEGENERATE_PRIOR**0.5
        rows = torch.cat(
            [
                torch.cat([kernel, poly], dim=1),
                torch.cat([poly.T, torch.zeros(3, 3, dtype=DTYPE)], dim=1),
                torch.cat(
                    [torch.zeros(3, k, dtype=DTYPE), sqrt_mu * torch.eye(3, dtype=DTYPE)],
                    dim=1,
                ),
            ],
            dim=0,
        )
        prior = torch.zeros(3, 2, dtype=DTYPE)
        prior[0] = rhs_top.mean(dim=0)
        rhs = torch.cat(
            [rhs_top, torch.zeros(3, 2, dtype=DTYPE), sqrt_mu * prior], dim=0
        )
        gram = rows.T @ rows
        try:
            solution = torch.linalg.solve(gram, rows.T @ rhs)
        except torch.linalg.LinAlgError as e:
            raise ValueError(f"TPS normal equations are singular: {e}") from e
    else:
        system = torch.cat(
            [
                torch.cat([kernel, poly], dim=1),
                torch.cat([poly.T, torch.zeros(3, 3, dtype=DTYPE)], dim=1),
            ],
            dim=0,
        )
        rhs = torch.cat([rhs_top, torch.zeros(3, 2, dtype=DTYPE)], dim=0)
        try:
            solution = torch.linalg.solve(system, rhs)
        except torch.linalg.LinAlgError as e:
            raise ValueError(
                f"TPS system is singular even with ridge {RIDGE}: {e}"
            ) from e

    w = solution[:k]
    affine = solution[k:]  # rows: offset, x coeff, y coeff (displacement form)
    v = torch.eye(2, dtype=DTYPE) + affine[1:]
    b = affine[0]
    return TpsSolution(w=w, v=v, b=b, centers=centers)


def synth_field(sol: TpsSolution, width: int, height: int) -> torch.Tensor:
    """Evaluate the inverse map at every output pixel; returns (H, W, 2)."""
    if width < 1 or height < 1:
        raise ValueError(f"degenerate field size {width}x{height}")
    xs = torch.arange(width, dtype=DTYPE)
    ys = torch.arange(height, dtype=DTYPE)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    grid = torch.stack([gx.reshape(-1), gy.reshape(-1)], dim=1)  # (HW, 2)
    phi = _phi_from_sq(_pairwise_sq(grid, sol.centers))
    flow = phi @ sol.w + grid @ sol.v + sol.b
    if not torch.isfinite(flow).all():
        raise NumericalFailure("warp field contains non-finite values")
    return flow.reshape(height, width, 2)


def warp(img, field: torch.Tensor) -> torch.Tensor:
    """Pull-back warp: output pixel q samples the input at field[q]."""
    img = img if torch.is_tensor(img) else as_image(img)
    h, w, c = img.shape
    if field.shape[:2] != (h, w) or field.shape[2] != 2:
        raise ValueError(
            f"field shape {tuple(field.shape)} does not match image {h}x{w}"
        )
    out = bilinear_sample(img, field.reshape(-1, 2))
    return out.reshape(h, w, c)


def naive_warp(img, kps: KeypointSet) -> torch.Tensor:
    """Single TPS warp moving source points to target points, no optimization."""
    img = img if torch.is_tensor(img) else as_image(img)
    theta = torch.from_numpy(kps.target - kps.source).to(DTYPE)
    sol = tps_solve(kps, theta)
    field = synth_field(sol, img.shape[1], img.shape[0])
    return warp(img, field)


def displacement(field: torch.Tensor) -> torch.Tensor:
    """Displacement field f(q) - q, the quantity the TV regularizer acts on."""
    h, w, _ = field.shape
    xs = torch.arange(w, dtype=field.dtype)
    ys = torch.arange(h, dtype=field.dtype)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return field - torch.stack([gx, gy], dim=2)


def save_warp_field(field: torch.Tensor, path) -> None:
    """Write the DSTW binary raster (header + H*W*2 float32 LE, x then y)."""
    h, w, two = field.shape
    if two != 2:
        raise ValueError(f"field must be (H, W, 2), got {tuple(field.shape)}")
    with open(path, "wb") as f:
        f.write(DSTW_MAGIC)
        f.write(struct.pack("<III", DSTW_VERSION, w, h))
        data = field.detach().numpy().astype("<f4", copy=False)
        f.write(np.ascontiguousarray(data).tobytes())


def load_warp_field(path) -> torch.Tensor:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16:
        raise ValueError(f"truncated DSTW file: {len(blob)} bytes, header needs 16")
    if blob[:4] != DSTW_MAGIC:
        raise ValueError(f"bad magic {blob[:4]!r} at offset 0, expected {DSTW_MAGIC!r}")
    version, w, h = struct.unpack("<III", blob[4:16])
    if version != DSTW_VERSION:
        raise ValueError(f"unsupported DSTW version {version} at offset 4")
    expected = 16 + h * w * 2 * 4
    if len(blob) != expected:
        raise ValueError(
            f"DSTW payload size mismatch at offset 16: expected {expected - 16} "
            f"bytes for {w}x{h}x2 float32, found {len(blob) - 16}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=16).reshape(h, w, 2)
    field = torch.from_numpy(data.copy()).to(DTYPE)
    if not torch.isfinite(field).all():
        raise ValueError("DSTW payload contains non-finite values")
    return field
