"""Objective terms: content and style losses for both base-method families,
the dual (unwarped + warped) style term, the keypoint deformation loss, the
total-variation regularizer, and the combined objective evaluator.

Everything here is a pure function of torch tensors and differentiable;
evaluation order and sampling are deterministic for a fixed generator state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .features import FeaturePyramid, builtin_extract, sample_hypercolumns
from .image import bilinear_sample
from .keypoints import KeypointSet
from .tps import displacement, synth_field, tps_solve, warp
from .validation import DTYPE

EPS = 1e-8
# Smoothing epsilon for square roots: 2^-27 squares to an exact power of two,
# so sqrt(0 + eps^2) - eps is exactly zero and identity cases stay exact.
SQRT_EPS = 2.0**-27

# Balancing constants for the gram family under first-order updates: the
# content and style terms are orders of magnitude larger than the deformation
# terms, so they are scaled down and the deformation parameters get a much
# smaller effective step.
GRAM_CONTENT_SCALE = 1.0 / 50000.0
GRAM_STYLE_SCALE = 1.0 / 100000.0
GRAM_THETA_GRAD_SCALE = 1e-6


@dataclass
class LossWeights:
    alpha: float = 32.0  # content weight
    beta: float = 0.5  # deformation weight
    gamma: float = 50.0  # TV regularizer weight
    family: str = "selfsim_remd"  # or "gram"
    style_term_weights: tuple = (1.0, 1.0, 1.0)  # REMD, moment, color
    content_scale: float = 1.0
    style_scale: float = 1.0
    theta_grad_scale: float = 1.0

    def __post_init__(self):
        if self.family not in ("gram", "selfsim_remd"):
            raise ValueError(f"unknown loss family {self.family!r}")
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if any(w < 0 for w in self.style_term_weights):
            raise ValueError("style_term_weights must be >= 0")

    @classmethod
    def for_family(cls, family: str, **kwargs) -> "LossWeights":
        """Family defaults; the gram family carries the down-scaling constants
        that keep its terms balanced under plain gradient descent."""
        if family == "gram":
            base = cls(
                family="gram",
                content_scale=GRAM_CONTENT_SCALE,
                style_scale=GRAM_STYLE_SCALE,
                theta_grad_scale=GRAM_THETA_GRAD_SCALE,
            )
        else:
            base = cls(family=family)
        return replace(base, **kwargs)


@dataclass
class LossReport:
    content: float
    style_unwarped: float
    style_warped: float
    match: float
    tv: float
    total: float

    def as_dict(self) -> dict:
        return {
            "content": self.content,
            "style_unwarped": self.style_unwarped,
            "style_warped": self.style_warped,
            "match": self.match,
            "tv": self.tv,
            "total": self.total,
        }


def _check_same_structure(a: FeaturePyramid, b: FeaturePyramid, spatial: bool) -> None:
    if a.n_levels != b.n_levels:
        raise ValueError(
            f"pyramids disagree on level count: {a.n_levels} vs {b.n_levels}"
        )
    for i, (la, lb) in enumerate(zip(a.levels, b.levels)):
        if la.numel() == 0 or lb.numel() == 0:
            raise ValueError(f"level {i} is empty")
        if la.shape[0] != lb.shape[0]:
            raise ValueError(
                f"level {i} channel mismatch: {la.shape[0]} vs {lb.shape[0]}"
            )
        if spatial and la.shape != lb.shape:
            raise ValueError(
                f"level {i} shape mismatch: {tuple(la.shape)} vs {tuple(lb.shape)}"
            )


def content_gram(ic_feats: FeaturePyramid, x_feats: FeaturePyramid, levels=None):
    """Squared-error content term: MSE between feature maps on the designated
    levels (deepest level only by default)."""
    _check_same_structure(ic_feats, x_feats, spatial=True)
    if levels is None:
        levels = [ic_feats.n_levels - 1]
    total = 0.0
    for l in levels:
        diff = x_feats.levels[l] - ic_feats.levels[l]
        total = total + (diff * diff).mean()
    return total / len(levels)


def gram_matrix(level: torch.Tensor) -> torch.Tensor:
    c, h, w = level.shape
    flat = level.reshape(c, h * w)
    return flat @ flat.T / (c * h * w)


def style_gram(is_feats: FeaturePyramid, x_feats: FeaturePyramid):
    """Frobenius mismatch of per-level Gram matrices, summed with uniform
    (unit) level weights. Spatial dims may differ between the two pyramids."""
    _check_same_structure(is_feats, x_feats, spatial=False)
    total = 0.0
    for ls, lx in zip(is_feats.levels, x_feats.levels):
        diff = gram_matrix(lx) - gram_matrix(ls)
        total = total + (diff * diff).sum()
    return total


def cosine_distance_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    an = a / a.norm(dim=1, keepdim=True).clamp_min(EPS)
    bn = b / b.norm(dim=1, keepdim=True).clamp_min(EPS)
    return (1.0 - an @ bn.T).clamp_min(0.0)


def content_selfsim(ic_cols: torch.Tensor, x_cols: torch.Tensor):
    """Self-similarity content term: absolute error between row-normalized
    pairwise cosine-distance matrices of co-located samples."""
    if ic_cols.shape != x_cols.shape:
        raise ValueError(
            f"sample sets differ in shape: {tuple(ic_cols.shape)} vs "
            f"{tuple(x_cols.shape)}"
        )
    n = ic_cols.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    d_ic = cosine_distance_matrix(ic_cols, ic_cols)
    d_x = cosine_distance_matrix(x_cols, x_cols)
    d_ic = d_ic / d_ic.sum(dim=1, keepdim=True).clamp_min(EPS)
    d_x = d_x / d_x.sum(dim=1, keepdim=True).clamp_min(EPS)
    return (d_x - d_ic).abs().sum() / (n * n)


def remd(cost: torch.Tensor):
    """Relaxed earth mover's distance of a pairwise cost matrix: the larger
    of the two one-sided mean-of-minima relaxations."""
    if cost.numel() == 0:
        raise ValueError("empty cost matrix")
    return torch.maximum(cost.min(dim=1).values.mean(), cost.min(dim=0).values.mean())


def moment_distance(a: torch.Tensor, b: torch.Tensor):
    """L1 mismatch of mean (scaled by 1/d) and covariance (scaled by 1/d^2)."""
    d = a.shape[1]
    mu_a = a.mean(dim=0)
    mu_b = b.mean(dim=0)
    ca = a - mu_a
    cb = b - mu_b
    cov_a = ca.T @ ca / a.shape[0]
    cov_b = cb.T @ cb / b.shape[0]
    return (mu_a - mu_b).abs().sum() / d + (cov_a - cov_b).abs().sum() / (d * d)


def euclidean_cost(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    diff = a.unsqueeze(1) - b.unsqueeze(0)
    return torch.sqrt((diff * diff).sum(-1) + SQRT_EPS * SQRT_EPS) - SQRT_EPS


def style_remd_family(
    is_cols: torch.Tensor,
    x_cols: torch.Tensor,
    is_colors: torch.Tensor,
    x_colors: torch.Tensor,
    weights=(1.0, 1.0, 1.0),
):
    """Relaxed-EMD style term plus moment matching plus color palette term."""
    if is_cols.shape[0] == 0 or x_cols.shape[0] == 0:
        raise ValueError("empty feature sample set")
    w_remd, w_moment, w_color = weights
    total = 0.0
    if w_remd:
        total = total + w_remd * remd(cosine_distance_matrix(x_cols, is_cols))
    if w_moment:
        total = total + w_moment * moment_distance(x_cols, is_cols)
    if w_color:
        if is_colors.shape[0] == 0 or x_colors.shape[0] == 0:
            raise ValueError("empty color sample set")
        total = total + w_color * remd(euclidean_cost(x_colors, is_colors))
    if isinstance(total, float):
        total = torch.zeros((), dtype=DTYPE)
    return total


def dual_style(style_loss_fn, is_arg, x, x_warped):
    """Style loss applied to both the unwarped and the warped output."""
    return style_loss_fn(is_arg, x) + style_loss_fn(is_arg, x_warped)


def _smooth_norm(sq: torch.Tensor) -> torch.Tensor:
    # sqrt(s + eps^2) - eps: exactly zero at s = 0, gradient the epsilon-
    # smoothed unit vector elsewhere.
    return torch.sqrt(sq + SQRT_EPS * SQRT_EPS) - SQRT_EPS


def match_loss(kps: KeypointSet, theta):
    """Mean Euclidean distance between displaced sources and targets."""
    if kps.k == 0:
        raise ValueError("keypoint set is empty")
    theta = theta if torch.is_tensor(theta) else torch.as_tensor(theta, dtype=DTYPE)
    if theta.shape != (kps.k, 2):
        raise ValueError(f"theta must have shape ({kps.k}, 2), got {tuple(theta.shape)}")
    src = torch.from_numpy(kps.source).to(theta.dtype)
    tgt = torch.from_numpy(kps.target).to(theta.dtype)
    resid = tgt - (src + theta)
    return _smooth_norm((resid * resid).sum(dim=1)).mean()


def tv_reg(disp: torch.Tensor):
    """Anisotropic total variation of a displacement field, normalized by the
    pixel count; only neighbor pairs inside the grid are summed."""
    if disp.ndim != 3 or disp.shape[2] != 2:
        raise ValueError(f"displacement field must be (H, W, 2), got {tuple(disp.shape)}")
    h, w, _ = disp.shape
    total = torch.zeros((), dtype=disp.dtype)
    if w >= 2:
        total = total + (disp[:, 1:, :] - disp[:, :-1, :]).abs().sum()
    if h >= 2:
        total = total + (disp[1:, :, :] - disp[:-1, :, :]).abs().sum()
    return total / (w * h)


def _scale_factors(ref_dims, work_dims):
    ref_h, ref_w = ref_dims
    work_h, work_w = work_dims
    return work_w / ref_w, work_h / ref_h


def scale_points(points: np.ndarray, ref_dims, work_dims) -> np.ndarray:
    """Map full-resolution pixel coordinates into a resized frame, consistent
    with the half-pixel-center resize convention."""
    sx, sy = _scale_factors(ref_dims, work_dims)
    out = np.empty_like(points)
    out[:, 0] = (points[:, 0] + 0.5) * sx - 0.5
    out[:, 1] = (points[:, 1] + 0.5) * sy - 0.5
    return out


class ObjectiveEvaluator:
    """Combined objective at one working scale.

    Holds the fixed per-scale state (content/style images and their feature
    pyramids, keypoints, weights, sampler) and evaluates the full loss for a
    candidate output image and deformation parameters.
    """

    def __init__(
        self,
        content_img: torch.Tensor,
        style_img: torch.Tensor,
        kps: KeypointSet,
        weights: LossWeights,
        ref_dims=None,
        n_samples: int = 1024,
        feature_levels: int = 3,
        extractor=builtin_extract,
        rng=None,
    ):
        self.content_img = content_img
        self.style_img = style_img
        self.kps = kps
        self.weights = weights
        self.n_samples = n_samples
        self.feature_levels = feature_levels
        self.extractor = extractor
        self.rng = rng if rng is not None else np.random.default_rng(0)
        h, w, _ = content_img.shape
        self.work_dims = (h, w)
        self.ref_dims = tuple(ref_dims) if ref_dims is not None else (h, w)

        self.content_feats = extractor(content_img, feature_levels)
        self.style_feats = extractor(style_img, feature_levels)

        if kps is not None and kps.k > 0:
            self.kps_work = KeypointSet(
                scale_points(kps.source, self.ref_dims, self.work_dims),
                scale_points(kps.target, self.ref_dims, self.work_dims),
                kps.activations,
            )
        else:
            self.kps_work = None

    def _style_active(self) -> bool:
        if self.weights.family == "gram":
            return self.weights.style_scale != 0
        return any(self.weights.style_term_weights)

    def _draw_coords(self, dims, rng) -> torch.Tensor:
        h, w = dims
        xs = rng.uniform(0.0, w - 1.0, size=self.n_samples)
        ys = rng.uniform(0.0, h - 1.0, size=self.n_samples)
        return torch.from_numpy(np.stack([xs, ys], axis=1))

    def evaluate(self, x_img: torch.Tensor, theta, rng=None):
        """Return (total, LossReport, flow field). ``total`` is the
        differentiable scalar; the report holds detached floats."""
        rng = rng if rng is not None else self.rng
        w = self.weights
        zero = torch.zeros((), dtype=DTYPE)

        deform = self.kps_work is not None and self.kps_work.k > 0
        if deform:
            theta_t = theta if torch.is_tensor(theta) else torch.as_tensor(theta, dtype=DTYPE)
            sx, sy = _scale_factors(self.ref_dims, self.work_dims)
            theta_work = theta_t * torch.tensor([sx, sy], dtype=DTYPE)
            sol = tps_solve(self.kps_work, theta_work)
            field = synth_field(sol, self.work_dims[1], self.work_dims[0])
            x_warped = warp(x_img, field)
        else:
            field = None
            x_warped = x_img

        style_on = self._style_active()
        need_x_feats = style_on or w.alpha != 0

        if w.family == "gram":
            x_feats = self.extractor(x_img, self.feature_levels) if need_x_feats else None
            content = (
                w.content_scale * content_gram(self.content_feats, x_feats)
                if w.alpha != 0
                else zero
            )
            if style_on:
                style_u = w.style_scale * style_gram(self.style_feats, x_feats)
                xw_feats = (
                    self.extractor(x_warped, self.feature_levels) if deform else x_feats
                )
                style_w = w.style_scale * style_gram(self.style_feats, xw_feats)
            else:
                style_u = style_w = zero
        else:
            if need_x_feats:
                coords = self._draw_coords(self.work_dims, rng)
                style_coords = self._draw_coords(
                    (self.style_img.shape[0], self.style_img.shape[1]), rng
                )
                x_feats = self.extractor(x_img, self.feature_levels)
                x_cols = sample_hypercolumns(x_feats, coords)
            content = (
                content_selfsim(
                    sample_hypercolumns(self.content_feats, coords), x_cols
                )
                if w.alpha != 0
                else zero
            )
            if style_on:
                is_cols = sample_hypercolumns(self.style_feats, style_coords)
                is_colors = bilinear_sample(self.style_img, style_coords)
                x_colors = bilinear_sample(x_img, coords)
                style_u = style_remd_family(
                    is_cols, x_cols, is_colors, x_colors, w.style_term_weights
                )
                if deform:
                    xw_feats = self.extractor(x_warped, self.feature_levels)
                    xw_cols = sample_hypercolumns(xw_feats, coords)
                    xw_colors = bilinear_sample(x_warped, coords)
                    style_w = style_remd_family(
                        is_cols, xw_cols, is_colors, xw_colors, w.style_term_weights
                    )
                else:
                    style_w = style_u
            else:
                style_u = style_w = zero

        if deform:
            match = match_loss(self.kps, theta_t) if w.beta != 0 else zero
            if w.gamma != 0:
                # the regularizer acts on displacements in normalized device
                # coordinates ([-1, 1] spans each axis); in raw pixel units
                # the published gamma presets would swamp the match term
                wh, ww = self.work_dims
                norm = torch.tensor(
                    [2.0 / max(ww - 1, 1), 2.0 / max(wh - 1, 1)], dtype=DTYPE
                )
                tv = tv_reg(displacement(field) * norm)
            else:
                tv = zero
        else:
            match = zero
            tv = zero

        total = w.alpha * content + style_u + style_w + w.beta * match + w.gamma * tv
        parts = [
            float(t.detach()) if torch.is_tensor(t) else float(t)
            for t in (content, style_u, style_w, match, tv)
        ]
        report = LossReport(
            content=parts[0],
            style_unwarped=parts[1],
            style_warped=parts[2],
            match=parts[3],
            tv=parts[4],
            total=w.alpha * parts[0]
            + parts[1]
            + parts[2]
            + w.beta * parts[3]
            + w.gamma * parts[4],
        )
        return total, report, field


def total_objective(
    content_img,
    style_img,
    x_img,
    kps: KeypointSet,
    theta,
    weights: LossWeights,
    seed: int = 0,
    n_samples: int = 1024,
    feature_levels: int = 3,
    ref_dims=None,
):
    """One-shot evaluation of the full objective; see ObjectiveEvaluator."""
    evaluator = ObjectiveEvaluator(
        content_img,
        style_img,
        kps,
        weights,
        ref_dims=ref_dims,
        n_samples=n_samples,
        feature_levels=feature_levels,
        rng=np.random.default_rng(seed),
    )
    return evaluator.evaluate(x_img, theta)
