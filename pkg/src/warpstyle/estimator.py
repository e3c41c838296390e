"""Scikit-learn style front door for the engine.

``DeformableStyleTransfer`` is a transformer-shaped estimator: ``fit`` takes
a content image and a style image and jointly optimizes the stylized output
and the warp; ``transform`` applies the learned warp to any image in the
content frame (e.g. to the content image itself for a deformation-only
rendition). Parameters follow the sklearn get_params/set_params contract so
the engine composes with that ecosystem's tooling.
"""

from __future__ import annotations

import torch
from sklearn.base import BaseEstimator, TransformerMixin

from .features import builtin_extract
from .keypoints import KeypointSet, align_targets, match, remove_crossings, select
from .losses import LossWeights, scale_points
from .optim import REGIME_PRESETS, RunResult, ScheduleConfig, run
from .tps import synth_field, tps_solve, warp
from .validation import DTYPE, as_image


class InsufficientKeypointsError(ValueError):
    """Fewer than two usable keypoint pairs survived matching/cleaning."""


class DeformableStyleTransfer(BaseEstimator, TransformerMixin):
    """Joint texture-and-geometry style transfer.

    Parameters mirror the engine configuration: the loss family, the
    deformation regime (or explicit alpha/beta/gamma overrides), and the
    multi-scale schedule. Fitted attributes carry the stylized output, the
    unwarped stylized image, the dense warp field, the cleaned keypoints,
    and the loss trace.
    """

    def __init__(
        self,
        family: str = "selfsim_remd",
        regime: str = "medium",
        alpha: float = None,
        beta: float = None,
        gamma: float = None,
        n_scales: int = 3,
        iters_per_scale: int = 350,
        learning_rate: float = 0.2,
        initial_long_side: int = 64,
        alpha_initial: float = 32.0,
        alpha_halving: bool = True,
        momentum: float = 0.0,
        n_samples: int = 1024,
        feature_levels: int = 3,
        seed: int = 0,
        match_radius: int = 8,
        max_pairs: int = 80,
        min_spacing: float = 10.0,
        min_activation: float = 1.0,
    ):
        self.family = family
        self.regime = regime
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.n_scales = n_scales
        self.iters_per_scale = iters_per_scale
        self.learning_rate = learning_rate
        self.initial_long_side = initial_long_side
        self.alpha_initial = alpha_initial
        self.alpha_halving = alpha_halving
        self.momentum = momentum
        self.n_samples = n_samples
        self.feature_levels = feature_levels
        self.seed = seed
        self.match_radius = match_radius
        self.max_pairs = max_pairs
        self.min_spacing = min_spacing
        self.min_activation = min_activation

    def resolve_weights(self) -> LossWeights:
        """Expand the regime preset, then apply explicit overrides."""
        if self.regime == "custom":
            beta, gamma = 0.0, 0.0
        else:
            try:
                beta, gamma = REGIME_PRESETS[self.family][self.regime]
            except KeyError:
                raise ValueError(
                    f"unknown family/regime {self.family!r}/{self.regime!r}"
                ) from None
        weights = LossWeights.for_family(self.family, beta=beta, gamma=gamma)
        if self.alpha is not None:
            weights.alpha = self.alpha
        else:
            weights.alpha = self.alpha_initial
        if self.beta is not None:
            weights.beta = self.beta
        if self.gamma is not None:
            weights.gamma = self.gamma
        return weights

    def resolve_schedule(self) -> ScheduleConfig:
        # with no deformation objective (beta = 0) theta stays frozen at zero,
        # reducing the run to the base style transfer with an identity warp
        return ScheduleConfig(
            n_scales=self.n_scales,
            iters_per_scale=self.iters_per_scale,
            learning_rate=self.learning_rate,
            initial_long_side=self.initial_long_side,
            alpha_halving=self.alpha_halving,
            momentum=self.momentum,
            seed=self.seed,
            n_samples=self.n_samples,
            feature_levels=self.feature_levels,
            optimize_theta=self.resolve_weights().beta > 0,
        )

    def find_keypoints(self, content, style, feats_content=None, feats_style=None) -> KeypointSet:
        """Automatic keypoint pipeline: match, select, align, remove crossings."""
        content = as_image(content, "content")
        style = as_image(style, "style")
        if feats_content is None:
            feats_content = builtin_extract(content, self.feature_levels)
        if feats_style is None:
            feats_style = builtin_extract(style, self.feature_levels)
        cands = match(feats_content, feats_style, radius=self.match_radius)
        chosen = select(
            cands,
            max_pairs=self.max_pairs,
            min_spacing=self.min_spacing,
            min_activation=self.min_activation,
        )
        if len(chosen) < 2:
            raise InsufficientKeypointsError(
                f"only {len(chosen)} keypoint pairs survived selection; "
                "need at least 2 (supply keypoints manually or relax thresholds)"
            )
        kps = align_targets(chosen)
        kps = remove_crossings(kps)
        if kps.k < 2:
            raise InsufficientKeypointsError(
                f"only {kps.k} keypoint pairs survived crossing removal"
            )
        return kps

    def fit(
        self,
        content,
        style,
        keypoints=None,
        align: bool = True,
        snapshot_dir=None,
        snapshot_every: int = 0,
    ):
        """Run the joint optimization.

        ``keypoints`` may be a KeypointSet with style-frame targets (aligned
        here unless ``align=False``) or None for automatic matching.
        """
        content = as_image(content, "content")
        style = as_image(style, "style")
        if keypoints is None:
            kps = self.find_keypoints(content, style)
        else:
            kps = keypoints
            if align and kps.k >= 2:
                from .keypoints import Correspondence

                pairs = [
                    Correspondence(tuple(s), tuple(t), float(a))
                    for s, t, a in zip(kps.source, kps.target, kps.activations)
                ]
                kps = align_targets(pairs)

        schedule = self.resolve_schedule()
        schedule.snapshot_every = snapshot_every
        result = run(
            content,
            style,
            kps,
            self.resolve_weights(),
            schedule,
            snapshot_dir=snapshot_dir,
        )
        self._store_result(content, result)
        return self

    def _store_result(self, content: torch.Tensor, result: RunResult) -> None:
        self.result_ = result
        self.output_image_ = result.output
        self.stylized_image_ = result.stylized
        self.warp_field_ = result.field
        self.theta_ = result.theta
        self.keypoints_ = result.kps
        self.loss_trace_ = result.trace
        self.scale_log_ = result.scale_log
        self.header_ = result.header
        self.reference_dims_ = (content.shape[0], content.shape[1])

    def transform(self, img) -> torch.Tensor:
        """Apply the learned deformation to an image in the content frame."""
        if not hasattr(self, "theta_"):
            raise RuntimeError("estimator is not fitted; call fit first")
        img = as_image(img, "img")
        kps = self.keypoints_
        if kps is None or kps.k == 0:
            return img
        h, w, _ = img.shape
        work = KeypointSet(
            scale_points(kps.source, self.reference_dims_, (h, w)),
            scale_points(kps.target, self.reference_dims_, (h, w)),
            kps.activations,
        )
        sx = w / self.reference_dims_[1]
        sy = h / self.reference_dims_[0]
        theta = self.theta_ * torch.tensor([sx, sy], dtype=DTYPE)
        sol = tps_solve(work, theta)
        return warp(img, synth_field(sol, w, h))

    def fit_transform(self, content, style, **fit_params) -> torch.Tensor:
        """Fit and return the final stylized, warped output image."""
        self.fit(content, style, **fit_params)
        return self.output_image_
