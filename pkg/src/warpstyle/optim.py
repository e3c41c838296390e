"""Joint minimization of the combined objective over the output image's
Laplacian-pyramid coefficients and the deformation parameters theta.

The schedule follows the multi-scale recipe: start at a small working
resolution, optimize a fixed number of plain-SGD steps per scale, upsample
the running output to seed the next scale, and halve the content weight at
each scale change.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import pyramid
from .image import mean_color, resize, resize_to
from .keypoints import KeypointSet
from .losses import LossWeights, ObjectiveEvaluator
from .tps import synth_field, tps_solve, warp
from .validation import DTYPE, NumericalFailure


@dataclass
class ScheduleConfig:
    n_scales: int = 3
    iters_per_scale: int = 350
    learning_rate: float = 0.2
    initial_long_side: int = 64
    alpha_halving: bool = True  # content weight starts at LossWeights.alpha
    momentum: float = 0.0
    seed: int = 0
    n_samples: int = 1024
    feature_levels: int = 3
    pyramid_levels: int = 5
    optimize_theta: bool = True
    snapshot_every: int = 0  # 0 disables debug snapshots

    def __post_init__(self):
        if self.n_scales < 1:
            raise ValueError(f"n_scales must be >= 1, got {self.n_scales}")
        if self.iters_per_scale < 1:
            raise ValueError(
                f"iters_per_scale must be >= 1, got {self.iters_per_scale}"
            )
        if self.learning_rate <= 0:
            raise ValueError(
                f"learning_rate must be > 0, got {self.learning_rate}"
            )


# (beta, gamma) regimes per loss family
REGIME_PRESETS = {
    "selfsim_remd": {"low": (0.3, 75.0), "medium": (0.5, 50.0), "high": (0.7, 10.0)},
    "gram": {"low": (3.0, 750.0), "medium": (7.0, 100.0), "high": (15.0, 100.0)},
}


def regime_weights(family: str, regime: str, **overrides) -> LossWeights:
    """LossWeights with (beta, gamma) filled in from the published regime table."""
    try:
        beta, gamma = REGIME_PRESETS[family][regime]
    except KeyError:
        raise ValueError(
            f"unknown family/regime {family!r}/{regime!r}; families: "
            f"{sorted(REGIME_PRESETS)}, regimes: low/medium/high"
        ) from None
    return LossWeights.for_family(family, beta=beta, gamma=gamma, **overrides)


def init_output(content_img: torch.Tensor, style_img: torch.Tensor) -> torch.Tensor:
    """Initial output: the low-frequency band of the content image recentered
    on the style image's mean color."""
    n_levels = min(5, pyramid.max_levels(*content_img.shape[:2]))
    base = pyramid.decompose(content_img, n_levels).base
    low = resize_to(base, content_img.shape[0], content_img.shape[1])
    return low - mean_color(low) + mean_color(style_img)


@dataclass
class SgdState:
    params: list  # tensors with requires_grad
    learning_rate: float
    momentum: float = 0.0
    grad_scales: list = None  # per-parameter gradient multiplier
    velocities: list = field(default_factory=list)

    def __post_init__(self):
        if self.grad_scales is None:
            self.grad_scales = [1.0] * len(self.params)
        if not self.velocities:
            self.velocities = [torch.zeros_like(p) for p in self.params]


def step(state: SgdState) -> None:
    """One SGD(+momentum) update in place; rejects non-finite gradients."""
    with torch.no_grad():
        for i, p in enumerate(state.params):
            if p.grad is None:
                continue
            if not torch.isfinite(p.grad).all():
                raise NumericalFailure(
                    f"non-finite gradient on parameter {i} "
                    f"(shape {tuple(p.shape)}); iteration aborted"
                )
            g = p.grad * state.grad_scales[i]
            if state.momentum:
                state.velocities[i].mul_(state.momentum).add_(g)
                g = state.velocities[i]
            p.add_(g, alpha=-state.learning_rate)


@dataclass
class RunResult:
    output: torch.Tensor  # warped stylized image W(X, theta)
    stylized: torch.Tensor  # unwarped stylized image X
    field: torch.Tensor  # final warp field (H, W, 2)
    theta: torch.Tensor  # final deformation parameters (k, 2)
    kps: KeypointSet
    trace: list  # per-iteration dicts
    scale_log: list  # per-scale schedule records
    header: dict  # resolved configuration echo


def _long_sides(schedule: ScheduleConfig) -> list:
    return [schedule.initial_long_side * 2**s for s in range(schedule.n_scales)]


def run(
    content_img,
    style_img,
    kps: KeypointSet,
    weights: LossWeights,
    schedule: ScheduleConfig,
    snapshot_dir=None,
) -> RunResult:
    """Optimize the full objective across the multi-scale schedule.

    Deterministic for fixed inputs and seed. Keypoints (and theta) live in
    the full-resolution content frame and are rescaled into each working
    scale. On a non-finite loss the last good state is snapshotted (when a
    snapshot directory is given) and NumericalFailure is raised.
    """
    content_img = content_img if torch.is_tensor(content_img) else torch.as_tensor(content_img, dtype=DTYPE)
    style_img = style_img if torch.is_tensor(style_img) else torch.as_tensor(style_img, dtype=DTYPE)
    ref_dims = (content_img.shape[0], content_img.shape[1])
    rng = np.random.default_rng(schedule.seed)
    torch.manual_seed(schedule.seed)

    k = kps.k if kps is not None else 0
    theta = torch.zeros((max(k, 1), 2), dtype=DTYPE, requires_grad=True)

    header = {
        "family": weights.family,
        "alpha": weights.alpha,
        "beta": weights.beta,
        "gamma": weights.gamma,
        "style_term_weights": list(weights.style_term_weights),
        "n_scales": schedule.n_scales,
        "iters_per_scale": schedule.iters_per_scale,
        "learning_rate": schedule.learning_rate,
        "initial_long_side": schedule.initial_long_side,
        "alpha_initial": weights.alpha,
        "alpha_halving": schedule.alpha_halving,
        "momentum": schedule.momentum,
        "seed": schedule.seed,
        "n_samples": schedule.n_samples,
        "feature_levels": schedule.feature_levels,
        "k": k,
    }
    trace = []
    scale_log = []
    x_img = None
    bands = None
    evaluator = None
    field = None
    global_iter = 0

    for s, long_side in enumerate(_long_sides(schedule)):
        ic = resize(content_img, long_side)
        is_ = resize(style_img, long_side)
        alpha = weights.alpha / 2**s if schedule.alpha_halving else weights.alpha
        scale_weights = replace(weights, alpha=alpha)

        if s == 0:
            x0 = init_output(ic, is_)
        else:
            x0 = resize_to(x_img.detach(), ic.shape[0], ic.shape[1])
        n_levels = min(schedule.pyramid_levels, pyramid.max_levels(*x0.shape[:2]))
        pyr = pyramid.decompose(x0, n_levels)
        bands = [b.detach().clone().requires_grad_(True) for b in pyr.levels]
        base = pyr.base.detach().clone().requires_grad_(True)
        params = bands + [base]

        opt_params = list(params)
        grad_scales = [1.0] * len(params)
        if k > 0 and schedule.optimize_theta:
            opt_params.append(theta)
            grad_scales.append(weights.theta_grad_scale)
        state = SgdState(
            params=opt_params,
            learning_rate=schedule.learning_rate,
            momentum=schedule.momentum,
            grad_scales=grad_scales,
        )

        evaluator = ObjectiveEvaluator(
            ic,
            is_,
            kps,
            scale_weights,
            ref_dims=ref_dims,
            n_samples=schedule.n_samples,
            feature_levels=schedule.feature_levels,
            rng=rng,
        )
        scale_log.append(
            {
                "scale": s,
                "long_side": long_side,
                "width": ic.shape[1],
                "height": ic.shape[0],
                "alpha": alpha,
                "iters": schedule.iters_per_scale,
                "learning_rate": schedule.learning_rate,
            }
        )

        last_good = None
        for it in range(schedule.iters_per_scale):
            for p in state.params:
                p.grad = None
            x_img = pyramid.reconstruct(pyramid.LaplacianPyramid(levels=bands, base=base))
            try:
                total, report, field = evaluator.evaluate(x_img, theta)
                if not torch.isfinite(total):
                    raise NumericalFailure(
                        f"non-finite total loss at scale {s} iteration {it}: "
                        f"{report.as_dict()}"
                    )
                total.backward()
                step(state)
            except NumericalFailure:
                if snapshot_dir is not None and last_good is not None:
                    _write_snapshot(snapshot_dir, "last_good", *last_good)
                raise
            last_good = (x_img.detach(), theta.detach().clone(), field)
            record = {"iter": global_iter, "scale": s}
            record.update(report.as_dict())
            trace.append(record)
            global_iter += 1
            if (
                snapshot_dir is not None
                and schedule.snapshot_every
                and (it + 1) % schedule.snapshot_every == 0
            ):
                _write_snapshot(
                    snapshot_dir, f"s{s}_i{it + 1}", x_img.detach(), theta, field
                )

        x_img = pyramid.reconstruct(
            pyramid.LaplacianPyramid(levels=bands, base=base)
        ).detach()

    theta_final = theta.detach()
    if k > 0:
        with torch.no_grad():
            sx = x_img.shape[1] / ref_dims[1]
            sy = x_img.shape[0] / ref_dims[0]
            kps_work = evaluator.kps_work
            sol = tps_solve(kps_work, theta_final * torch.tensor([sx, sy], dtype=DTYPE))
            field = synth_field(sol, x_img.shape[1], x_img.shape[0])
    else:
        field = _identity_field(x_img.shape[0], x_img.shape[1])
    output = warp(x_img, field)
    return RunResult(
        output=output,
        stylized=x_img,
        field=field,
        theta=theta_final[:k] if k > 0 else theta_final[:0],
        kps=kps,
        trace=trace,
        scale_log=scale_log,
        header=header,
    )


def _identity_field(h: int, w: int) -> torch.Tensor:
    xs = torch.arange(w, dtype=DTYPE)
    ys = torch.arange(h, dtype=DTYPE)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx, gy], dim=2)


def _write_snapshot(snapshot_dir, tag, x_img, theta, field) -> None:
    from pathlib import Path

    from .image import save_image
    from .tps import save_warp_field

    directory = Path(snapshot_dir)
    directory.mkdir(parents=True, exist_ok=True)
    save_image(x_img.detach().clamp(0, 1), directory / f"{tag}_x.png")
    np.save(directory / f"{tag}_theta.npy", theta.detach().numpy())
    if field is not None:
        save_warp_field(field.detach(), directory / f"{tag}_field.dstw")


def write_trace(path, header: dict, trace: list) -> None:
    """Newline-delimited JSON: one header record then one record per iteration."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"type": "header", **header}) + "\n")
        for record in trace:
            f.write(json.dumps(record) + "\n")
