"""warpstyle: joint texture-and-geometry style transfer.

The engine optimizes an output image (as Laplacian-pyramid coefficients) and
a sparse set of keypoint displacements together; a thin-plate spline turns
the displacements into a dense, differentiable warp.
"""

from .estimator import DeformableStyleTransfer, InsufficientKeypointsError
from .features import (
    FeaturePyramid,
    builtin_extract,
    load_features,
    sample_hypercolumns,
    save_features,
)
from .image import bilinear_sample, load_image, resize, resize_to, save_image
from .keypoints import (
    Correspondence,
    KeypointSet,
    SimilarityTransform,
    align_targets,
    load_keypoints,
    match,
    remove_crossings,
    save_keypoints,
    select,
    umeyama,
)
from .losses import (
    LossReport,
    LossWeights,
    ObjectiveEvaluator,
    content_gram,
    content_selfsim,
    dual_style,
    match_loss,
    remd,
    style_gram,
    style_remd_family,
    total_objective,
    tv_reg,
)
from .optim import (
    NumericalFailure,
    REGIME_PRESETS,
    RunResult,
    ScheduleConfig,
    SgdState,
    init_output,
    regime_weights,
    run,
    step,
)
from .pyramid import LaplacianPyramid, decompose, reconstruct
from .tps import (
    TpsSolution,
    load_warp_field,
    naive_warp,
    save_warp_field,
    synth_field,
    tps_solve,
    warp,
)

__version__ = "0.1.0"

__all__ = [
    "DeformableStyleTransfer",
    "InsufficientKeypointsError",
    "FeaturePyramid",
    "builtin_extract",
    "load_features",
    "sample_hypercolumns",
    "save_features",
    "bilinear_sample",
    "load_image",
    "resize",
    "resize_to",
    "save_image",
    "Correspondence",
    "KeypointSet",
    "SimilarityTransform",
    "align_targets",
    "load_keypoints",
    "match",
    "remove_crossings",
    "save_keypoints",
    "select",
    "umeyama",
    "LossReport",
    "LossWeights",
    "ObjectiveEvaluator",
    "content_gram",
    "content_selfsim",
    "dual_style",
    "match_loss",
    "remd",
    "style_gram",
    "style_remd_family",
    "total_objective",
    "tv_reg",
    "NumericalFailure",
    "REGIME_PRESETS",
    "RunResult",
    "ScheduleConfig",
    "SgdState",
    "init_output",
    "regime_weights",
    "run",
    "step",
    "LaplacianPyramid",
    "decompose",
    "reconstruct",
    "TpsSolution",
    "load_warp_field",
    "naive_warp",
    "save_warp_field",
    "synth_field",
    "tps_solve",
    "warp",
]
