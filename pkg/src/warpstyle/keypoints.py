"""Keypoint pipeline: cross-image matching, greedy selection, similarity
alignment of style points into the content frame, and crossing removal.

The matcher is a deliberately simple hierarchical mutual-nearest-neighbor
search over a feature pyramid; externally computed correspondences can be
imported through the JSON keypoint format instead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch

from .features import FeaturePyramid
from .validation import as_points_np


@dataclass
class Correspondence:
    src: tuple  # (x, y) in content-image pixels
    dst: tuple  # (x, y) in style-image pixels
    activation: float


@dataclass
class KeypointSet:
    """Paired source/target points, both in content-frame pixels."""

    source: np.ndarray
    target: np.ndarray
    activations: np.ndarray = None

    def __post_init__(self):
        self.source = as_points_np(self.source, "source")
        self.target = as_points_np(self.target, "target")
        if self.activations is None:
            self.activations = np.ones(len(self.source))
        self.activations = np.asarray(self.activations, dtype=np.float64).reshape(-1)
        if not (len(self.source) == len(self.target) == len(self.activations)):
            raise ValueError(
                f"source/target/activations lengths differ: "
                f"{len(self.source)}/{len(self.target)}/{len(self.activations)}"
            )

    @property
    def k(self) -> int:
        return len(self.source)

    def subset(self, keep) -> "KeypointSet":
        keep = np.asarray(keep)
        return KeypointSet(self.source[keep], self.target[keep], self.activations[keep])


@dataclass
class SimilarityTransform:
    scale: float
    rotation: np.ndarray  # 2x2, orthogonal, det +1
    translation: np.ndarray  # (2,)

    def apply(self, points) -> np.ndarray:
        pts = as_points_np(points)
        return self.scale * pts @ self.rotation.T + self.translation


def _level_vectors(level: torch.Tensor) -> torch.Tensor:
    # (C, H, W) -> (H*W, C)
    c = level.shape[0]
    return level.reshape(c, -1).T.contiguous()


def _mutual_nn(sim: torch.Tensor):
    """Indices (i, j) that are each other's nearest neighbor under `sim`."""
    if sim.numel() == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    best_j = sim.argmax(dim=1)
    best_i = sim.argmax(dim=0)
    rows = torch.arange(sim.shape[0])
    mutual = best_i[best_j] == rows
    i = rows[mutual]
    return i.numpy(), best_j[mutual].numpy()


def _cosine_sim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    an = a / a.norm(dim=1, keepdim=True).clamp_min(1e-8)
    bn = b / b.norm(dim=1, keepdim=True).clamp_min(1e-8)
    return an @ bn.T


def _grid_coords(h: int, w: int) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w]
    return np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1).astype(np.float64)


def match(
    content_feats: FeaturePyramid,
    style_feats: FeaturePyramid,
    radius: int = 8,
    max_candidates: int = 2000,
) -> list:
    """Coarse-to-fine mutual-nearest-neighbor matching under cosine similarity.

    Every coarse match restricts the next-finer search to a window of
    ``radius`` pixels around its projection. Activations are the product of
    the two matched features' L2 norms, each normalized by its level's mean
    norm so a value of 1 marks average saliency. Returns finest-level pairs
    with coordinates in source-image pixels.
    """
    if content_feats.n_levels != style_feats.n_levels:
        raise ValueError(
            f"feature pyramids disagree on level count: "
            f"{content_feats.n_levels} vs {style_feats.n_levels}"
        )
    if content_feats.n_levels == 0:
        return []
    for lvl_c, lvl_s in zip(content_feats.levels, style_feats.levels):
        if lvl_c.numel() == 0 or lvl_s.numel() == 0:
            return []

    n_levels = content_feats.n_levels

    def level_data(pyr, l):
        level = pyr.levels[l].detach().to(torch.float64)
        c, h, w = level.shape
        vecs = _level_vectors(level)
        num, den = pyr.scales[l]
        return vecs, (h, w), (num, den)

    # coarsest level: unrestricted mutual NN
    vec_c, (hc, wc), scale_c = level_data(content_feats, n_levels - 1)
    vec_s, (hs, ws), scale_s = level_data(style_feats, n_levels - 1)
    ii, jj = _mutual_nn(_cosine_sim(vec_c, vec_s))
    coords_c = _grid_coords(hc, wc)[ii] * (scale_c[1] / scale_c[0])
    coords_s = _grid_coords(hs, ws)[jj] * (scale_s[1] / scale_s[0])
    pairs = list(zip(map(tuple, coords_c), map(tuple, coords_s)))

    for l in range(n_levels - 2, -1, -1):
        vec_c, (hc, wc), scale_c = level_data(content_feats, l)
        vec_s, (hs, ws), scale_s = level_data(style_feats, l)
        fc = scale_c[0] / scale_c[1]  # source px -> level px
        fs = scale_s[0] / scale_s[1]
        refined = set()
        for (sx, sy), (tx, ty) in pairs:
            cx, cy = sx * fc, sy * fc
            dx, dy = tx * fs, ty * fs
            ax0, ax1 = _window(cx, wc, radius)
            ay0, ay1 = _window(cy, hc, radius)
            bx0, bx1 = _window(dx, ws, radius)
            by0, by1 = _window(dy, hs, radius)
            idx_a = _window_indices(ax0, ax1, ay0, ay1, wc)
            idx_b = _window_indices(bx0, bx1, by0, by1, ws)
            sim = _cosine_sim(vec_c[idx_a], vec_s[idx_b])
            mi, mj = _mutual_nn(sim)
            for a, b in zip(idx_a[mi], idx_b[mj]):
                refined.add((int(a), int(b)))
        if not refined:
            pairs = []
            break
        idx = np.array(sorted(refined), dtype=np.int64)
        norms_c = vec_c.norm(dim=1)
        norms_s = vec_s.norm(dim=1)
        act = _pair_activations(norms_c, norms_s, idx)
        if len(idx) > max_candidates:
            keep = np.argsort(-act, kind="stable")[:max_candidates]
            idx, act = idx[keep], act[keep]
        coords_c = _grid_coords(hc, wc)[idx[:, 0]] / fc
        coords_s = _grid_coords(hs, ws)[idx[:, 1]] / fs
        pairs = list(zip(map(tuple, coords_c), map(tuple, coords_s)))
        activations = act

    if not pairs:
        return []
    if n_levels == 1:
        norms_c = vec_c.norm(dim=1)
        norms_s = vec_s.norm(dim=1)
        idx = np.stack([ii, jj], axis=1)
        activations = _pair_activations(norms_c, norms_s, idx)
    return [
        Correspondence(src=tuple(p), dst=tuple(q), activation=float(a))
        for (p, q), a in zip(pairs, activations)
    ]


def _pair_activations(norms_c, norms_s, idx) -> np.ndarray:
    mean_c = float(norms_c.mean().clamp_min(1e-12))
    mean_s = float(norms_s.mean().clamp_min(1e-12))
    nc = norms_c.numpy()[idx[:, 0]] / mean_c
    ns = norms_s.numpy()[idx[:, 1]] / mean_s
    return nc * ns


def _window(center: float, size: int, radius: int):
    lo = max(0, int(np.floor(center)) - radius)
    hi = min(size - 1, int(np.ceil(center)) + radius)
    return lo, hi


def _window_indices(x0, x1, y0, y1, width) -> np.ndarray:
    xs = np.arange(x0, x1 + 1)
    ys = np.arange(y0, y1 + 1)
    return (ys[:, None] * width + xs[None, :]).reshape(-1)


def select(
    cands: list,
    max_pairs: int = 80,
    min_spacing: float = 10.0,
    min_activation: float = 1.0,
) -> list:
    """Greedy keypoint selection: repeatedly take the highest-activation
    candidate whose source point is at least ``min_spacing`` from every
    already-selected source, stop at ``max_pairs``, then drop selected pairs
    with activation below ``min_activation``."""
    if min_spacing <= 0:
        raise ValueError(f"min_spacing must be > 0, got {min_spacing}")
    order = sorted(range(len(cands)), key=lambda i: (-cands[i].activation, i))
    chosen = []
    chosen_src = []
    for i in order:
        if len(chosen) >= max_pairs:
            break
        src = np.asarray(cands[i].src, dtype=np.float64)
        if chosen_src:
            d = np.linalg.norm(np.asarray(chosen_src) - src, axis=1)
            if (d < min_spacing).any():
                continue
        chosen.append(cands[i])
        chosen_src.append(src)
    return [c for c in chosen if c.activation >= min_activation]


def umeyama(src_pts, dst_pts) -> SimilarityTransform:
    """Least-squares similarity transform T with T(src) ~= dst.

    Closed-form estimate over means, covariance SVD, and the determinant-sign
    correction that forbids reflections.
    """
    src = as_points_np(src_pts, "src_pts")
    dst = as_points_np(dst_pts, "dst_pts")
    if len(src) != len(dst):
        raise ValueError(f"point lists differ in length: {len(src)} vs {len(dst)}")
    if len(src) < 2:
        raise ValueError("need at least 2 point pairs")
    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    src_c = src - mu_src
    dst_c = dst - mu_dst
    var_src = (src_c**2).sum() / len(src)
    if var_src < 1e-18:
        raise ValueError("source points are all coincident; scale is undefined")

    cov = dst_c.T @ src_c / len(src)
    u, d, vt = np.linalg.svd(cov)
    s = np.ones(2)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[-1] = -1.0
    rotation = u @ np.diag(s) @ vt
    scale = float((d * s).sum() / var_src)
    translation = mu_dst - scale * rotation @ mu_src
    return SimilarityTransform(scale=scale, rotation=rotation, translation=translation)


def align_targets(pairs: list) -> KeypointSet:
    """Map style-frame matched points into the content frame.

    Fits the similarity transform from the style-side points onto the
    content-side points and applies it, so targets land near their sources
    with only the non-rigid residual left for the deformation to express.
    """
    if len(pairs) < 2:
        raise ValueError(f"need at least 2 pairs to align, got {len(pairs)}")
    src = np.asarray([c.src for c in pairs], dtype=np.float64)
    dst = np.asarray([c.dst for c in pairs], dtype=np.float64)
    act = np.asarray([c.activation for c in pairs], dtype=np.float64)
    transform = umeyama(dst, src)
    return KeypointSet(source=src, target=transform.apply(dst), activations=act)


def _properly_intersect(p1, p2, q1, q2) -> bool:
    """Strict segment intersection: one interior crossing point, shared
    endpoints and collinear overlap excluded."""

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    d1 = cross(q1, q2, p1)
    d2 = cross(q1, q2, p2)
    d3 = cross(p1, p2, q1)
    d4 = cross(p1, p2, q2)
    return ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    )


def crossing_matrix(kps: KeypointSet) -> np.ndarray:
    """Boolean (k, k) matrix of properly-intersecting displacement segments."""
    k = kps.k
    out = np.zeros((k, k), dtype=bool)
    for i in range(k):
        for j in range(i + 1, k):
            if _properly_intersect(
                kps.source[i], kps.target[i], kps.source[j], kps.target[j]
            ):
                out[i, j] = out[j, i] = True
    return out


def remove_crossings(kps: KeypointSet) -> KeypointSet:
    """Drop pairs until no two displacement segments properly intersect.

    Removal priority: most crossings first, ties broken by lower activation,
    then by lower index.
    """
    keep = list(range(kps.k))
    current = kps
    while True:
        crossings = crossing_matrix(current)
        counts = crossings.sum(axis=0)
        if counts.max(initial=0) == 0:
            return current
        order = sorted(
            range(current.k),
            key=lambda i: (-counts[i], current.activations[i], i),
        )
        victim = order[0]
        keep = [i for i in range(current.k) if i != victim]
        current = current.subset(keep)


def save_keypoints(kps: KeypointSet, path) -> None:
    payload = {
        "source": [[float(x), float(y)] for x, y in kps.source],
        "target": [[float(x), float(y)] for x, y in kps.target],
        "activations": [float(a) for a in kps.activations],
        "frame": "content",
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def load_keypoints(path) -> KeypointSet:
    with open(path, "r", encoding="utf-8") as f:
        try:
            payload = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    for key in ("source", "target"):
        if key not in payload:
            raise ValueError(f"{path}: missing required field '{key}'")
    frame = payload.get("frame", "content")
    if frame != "content":
        raise ValueError(f"{path}: unsupported frame {frame!r}, expected 'content'")
    activations = payload.get("activations")
    try:
        return KeypointSet(
            source=np.asarray(payload["source"], dtype=np.float64),
            target=np.asarray(payload["target"], dtype=np.float64),
            activations=None if activations is None else activations,
        )
    except ValueError as e:
        raise ValueError(f"{path}: {e}") from e
