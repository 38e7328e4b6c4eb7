"""Synthetic dense scenes: shapes over a background, planar depth, noisy features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..densemap import SEMANTIC_IGNORE, DenseMap
from ..depthq import DepthQuantizer, preset
from ..errors import DenseNTPError, GridMismatch

INVALID_FRACTION = 0.05


class DegenerateScene(DenseNTPError, ValueError):
    pass


@dataclass
class SyntheticScene:
    semantic: DenseMap
    depth_m: np.ndarray  # (H, W) meters, 0 where invalid
    features: np.ndarray  # (H, W, n_classes + 1)
    n_classes: int
    quantizer: DepthQuantizer

    @property
    def valid(self) -> np.ndarray:
        return self.semantic.valid

    def depth_bins(self) -> DenseMap:
        return DenseMap.depth(self.quantizer.quantize_array(self.depth_m))


def _planar(rng, h, w, lo, hi):
    """Depth ramp a + b*x + c*y spanning roughly [lo, hi] over the frame."""
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    base = rng.uniform(lo, hi)
    gx, gy = rng.uniform(-0.3, 0.3, size=2) * (hi - lo)
    return np.clip(base + gx * (xx - 0.5) + gy * (yy - 0.5), lo, hi)


def generate_scene(
    seed: int,
    width: int = 64,
    height: int = 64,
    n_classes: int = 8,
    n_shapes: int = 4,
    noise_sigma: float = 0.5,
    patch: int = 8,
    quantizer: DepthQuantizer = None,
    class_weights=None,
) -> SyntheticScene:
    """Rectangles and ellipses of classes 1..n_classes-1 over background class 0.

    ``class_weights`` (length n_classes - 1) skews which classes objects take;
    uniform by default.
    """
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    if width % patch or height % patch:
        raise GridMismatch(f"{width}x{height} is not divisible by patch {patch}")
    if n_shapes < 1:
        raise DegenerateScene("a scene needs at least one shape besides the background")
    q = quantizer or preset("nyuv2")
    lo = max(q.d_min, 1e-3) + 0.05 * (q.d_max - q.d_min)
    hi = q.d_max - 0.05 * (q.d_max - q.d_min)
    rng = np.random.default_rng(seed)
    labels = np.zeros((height, width), dtype=np.int64)
    depth = _planar(rng, height, width, (lo + hi) / 2, hi)
    yy, xx = np.mgrid[0:height, 0:width]
    p = None
    if class_weights is not None:
        p = np.asarray(class_weights, dtype=np.float64)
        p = p / p.sum()
    for _ in range(n_shapes):
        cls = 1 + int(rng.choice(n_classes - 1, p=p))
        cw = rng.uniform(0.15, 0.5) * width
        ch = rng.uniform(0.15, 0.5) * height
        cx = rng.uniform(0, width)
        cy = rng.uniform(0, height)
        if rng.random() < 0.5:
            inside = (np.abs(xx + 0.5 - cx) <= cw / 2) & (np.abs(yy + 0.5 - cy) <= ch / 2)
        else:
            inside = ((xx + 0.5 - cx) / (cw / 2)) ** 2 + ((yy + 0.5 - cy) / (ch / 2)) ** 2 <= 1.0
        labels[inside] = cls
        depth[inside] = _planar(rng, height, width, lo, (lo + hi) / 2)[inside]
    if len(np.unique(labels)) < 2:
        raise DegenerateScene(f"seed {seed} produced a single-class scene")

    invalid = rng.random((height, width)) < INVALID_FRACTION
    onehot = np.eye(n_classes)[labels]
    feats = np.concatenate([onehot, (depth / q.d_max)[..., None]], axis=-1)
    feats = feats + noise_sigma * rng.standard_normal(feats.shape)
    semantic = np.where(invalid, SEMANTIC_IGNORE, labels)
    depth = np.where(invalid, 0.0, depth)
    return SyntheticScene(DenseMap(semantic), depth, feats, n_classes, q)


def pool_features(scene: SyntheticScene, patch: int):
    """Mean feature per token over valid pixels.

    Returns ``(features (L, F), empty (L,) bool)``; an all-invalid patch
    yields a zero vector and is flagged in ``empty``.
    """
    h, w, f = scene.features.shape
    if h % patch or w % patch:
        raise GridMismatch(f"{w}x{h} is not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    valid = scene.valid.astype(np.float64)
    fs = (scene.features * valid[..., None]).reshape(gh, patch, gw, patch, f).sum(axis=(1, 3))
    cnt = valid.reshape(gh, patch, gw, patch).sum(axis=(1, 3))
    out = np.zeros((gh, gw, f))
    np.divide(fs, cnt[..., None], out=out, where=cnt[..., None] > 0)
    return out.reshape(gh * gw, f), (cnt == 0).reshape(-1)


def boundary_fraction(scene: SyntheticScene, patch: int) -> float:
    """Share of tokens whose patch holds two or more valid classes."""
    from ..targets import patch_class_counts

    counts = patch_class_counts(scene.semantic, patch, scene.n_classes)
    return float(np.mean((counts > 0).sum(axis=1) >= 2))
