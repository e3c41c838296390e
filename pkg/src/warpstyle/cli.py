"""Command-line surface: keypoint matching, naive warping, and full transfer.

Exit codes: 0 success, 2 bad configuration or input, 3 insufficient
keypoints, 4 numerical failure during optimization.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .estimator import DeformableStyleTransfer, InsufficientKeypointsError
from .features import load_features
from .image import load_image, save_image
from .keypoints import load_keypoints, save_keypoints
from .optim import NumericalFailure, write_trace
from .tps import naive_warp, save_warp_field, synth_field, tps_solve
from .viz import save_overlay

EXIT_OK = 0
EXIT_BAD_CONFIG = 2
EXIT_NO_KEYPOINTS = 3
EXIT_NUMERICAL = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="warpstyle",
        description="Deformation-aware style transfer: match keypoints, warp "
        "images, or run the full joint optimization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_match = sub.add_parser("match", help="find, clean, and save keypoint pairs")
    p_match.add_argument("--content", required=True)
    p_match.add_argument("--style", required=True)
    p_match.add_argument("--features-content", default=None, help="DSTF file")
    p_match.add_argument("--features-style", default=None, help="DSTF file")
    p_match.add_argument("--out", required=True, help="output directory")
    p_match.add_argument("--max-pairs", type=int, default=80)
    p_match.add_argument("--min-spacing", type=float, default=10.0)
    p_match.add_argument("--min-activation", type=float, default=1.0)

    p_warp = sub.add_parser("warp", help="naively warp an image with keypoints")
    p_warp.add_argument("--image", required=True)
    p_warp.add_argument("--keypoints", required=True)
    p_warp.add_argument("--out", required=True, help="output image path")
    p_warp.add_argument("--save-field", action="store_true")

    p_tr = sub.add_parser("transfer", help="run the full joint optimization")
    p_tr.add_argument("--content", required=True)
    p_tr.add_argument("--style", required=True)
    p_tr.add_argument("--keypoints", default=None)
    p_tr.add_argument("--features-content", default=None)
    p_tr.add_argument("--features-style", default=None)
    p_tr.add_argument("--family", choices=["gram", "selfsim_remd"], default="selfsim_remd")
    p_tr.add_argument("--regime", choices=["low", "medium", "high", "custom"], default="medium")
    p_tr.add_argument("--alpha", type=float, default=None)
    p_tr.add_argument("--beta", type=float, default=None)
    p_tr.add_argument("--gamma", type=float, default=None)
    p_tr.add_argument("--scales", type=int, default=3)
    p_tr.add_argument("--iters", type=int, default=350)
    p_tr.add_argument("--lr", type=float, default=0.2)
    p_tr.add_argument("--samples", type=int, default=1024)
    p_tr.add_argument("--feature-levels", type=int, default=3)
    p_tr.add_argument("--seed", type=int, default=0)
    p_tr.add_argument("--out", required=True, help="output directory")
    p_tr.add_argument("--naive", action="store_true", help="also write the naive-warp baseline")
    p_tr.add_argument("--save-field", action="store_true")
    p_tr.add_argument("--debug-snapshots", action="store_true")
    return parser


def cmd_match(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    content = load_image(args.content)
    style = load_image(args.style)
    feats_c = load_features(args.features_content) if args.features_content else None
    feats_s = load_features(args.features_style) if args.features_style else None
    engine = DeformableStyleTransfer(
        max_pairs=args.max_pairs,
        min_spacing=args.min_spacing,
        min_activation=args.min_activation,
    )
    kps = engine.find_keypoints(content, style, feats_c, feats_s)
    save_keypoints(kps, out_dir / "keypoints.json")
    save_overlay(content, kps, out_dir / "content_overlay.png")
    save_overlay(style, kps, out_dir / "style_overlay.png")
    print(f"wrote {kps.k} keypoint pairs to {out_dir / 'keypoints.json'}")
    return EXIT_OK


def cmd_warp(args) -> int:
    img = load_image(args.image)
    kps = load_keypoints(args.keypoints)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    warped = naive_warp(img, kps)
    save_image(warped, out_path)
    if args.save_field:
        import torch

        theta = torch.from_numpy(kps.target - kps.source)
        sol = tps_solve(kps, theta)
        field = synth_field(sol, img.shape[1], img.shape[0])
        save_warp_field(field, out_path.with_suffix(".dstw"))
    print(f"wrote {out_path}")
    return EXIT_OK


def cmd_transfer(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    content = load_image(args.content)
    style = load_image(args.style)

    engine = DeformableStyleTransfer(
        family=args.family,
        regime=args.regime,
        alpha=args.alpha,
        beta=args.beta,
        gamma=args.gamma,
        n_scales=args.scales,
        iters_per_scale=args.iters,
        learning_rate=args.lr,
        n_samples=args.samples,
        feature_levels=args.feature_levels,
        seed=args.seed,
    )
    snapshot_dir = out_dir / "snapshots" if args.debug_snapshots else None
    snapshot_every = 50 if args.debug_snapshots else 0
    if args.keypoints is not None:
        kps = load_keypoints(args.keypoints)
        engine.fit(
            content,
            style,
            keypoints=kps,
            snapshot_dir=snapshot_dir,
            snapshot_every=snapshot_every,
        )
    else:
        feats_c = load_features(args.features_content) if args.features_content else None
        feats_s = load_features(args.features_style) if args.features_style else None
        kps = engine.find_keypoints(content, style, feats_c, feats_s)
        engine.fit(
            content,
            style,
            keypoints=kps,
            align=False,
            snapshot_dir=snapshot_dir,
            snapshot_every=snapshot_every,
        )

    config_echo = dict(engine.header_)
    config_echo.update(
        {
            "content": str(args.content),
            "style": str(args.style),
            "keypoints": str(args.keypoints) if args.keypoints else None,
            "regime": args.regime,
            "out": str(out_dir),
        }
    )
    with open(out_dir / "config.json", "w", encoding="utf-8") as f:
        json.dump(config_echo, f, indent=2)
        f.write("\n")

    save_image(engine.output_image_, out_dir / "output.png")
    save_image(engine.stylized_image_, out_dir / "stylized.png")
    save_warp_field(engine.warp_field_, out_dir / "warp_field.dstw")
    save_keypoints(engine.keypoints_, out_dir / "keypoints.json")
    save_overlay(content, engine.keypoints_, out_dir / "keypoint_overlay.png")
    write_trace(out_dir / "trace.jsonl", config_echo, engine.loss_trace_)
    if args.naive:
        save_image(naive_warp(engine.stylized_image_, _scaled_kps(engine)), out_dir / "naive.png")
    print(f"wrote artifacts to {out_dir}")
    return EXIT_OK


def _scaled_kps(engine: DeformableStyleTransfer):
    from .keypoints import KeypointSet
    from .losses import scale_points

    kps = engine.keypoints_
    dims = (engine.stylized_image_.shape[0], engine.stylized_image_.shape[1])
    return KeypointSet(
        scale_points(kps.source, engine.reference_dims_, dims),
        scale_points(kps.target, engine.reference_dims_, dims),
        kps.activations,
    )


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_BAD_CONFIG if e.code not in (0, None) else 0
    handlers = {"match": cmd_match, "warp": cmd_warp, "transfer": cmd_transfer}
    try:
        return handlers[args.command](args)
    except InsufficientKeypointsError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NO_KEYPOINTS
    except NumericalFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_CONFIG


if __name__ == "__main__":
    sys.exit(main())
