"""From vocabulary-indexed token logits to pixel maps.

Semantic decode is ``argmax(bilinear(reshape(category_mean_logits)))``.
Bilinear resampling uses the half-pixel (align-corners false) convention
with edge clamping: output pixel ``o`` of an axis resized ``n -> m`` samples
source coordinate ``(o + 0.5) * n / m - 0.5`` clamped to ``[0, n - 1]``.
Argmax ties go to the smallest index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .densemap import SEMANTIC_IGNORE, DenseMap
from .errors import DenseNTPError, GridMismatch
from .loss import LogitsGrid
from .vocab import N_DEPTH_BINS, CategoryTokenMap, EmptyTokenSet, Vocabulary


class InvalidTemperature(DenseNTPError, ValueError):
    pass


class VocabularyMismatch(DenseNTPError, ValueError):
    pass


class DegenerateBox(DenseNTPError, ValueError):
    pass


@dataclass
class CategoryLogits:
    grid_w: int
    grid_h: int
    scores: np.ndarray  # (L, K)

    def grid(self) -> np.ndarray:
        """(K, grid_h, grid_w) view of the scores."""
        return self.scores.T.reshape(-1, self.grid_h, self.grid_w)


def aggregate_category_logits(logits: LogitsGrid, cat_map: CategoryTokenMap) -> CategoryLogits:
    z = logits.logits
    cols = []
    for name, ids in zip(cat_map.category_names, cat_map.token_sets):
        if not ids:
            raise EmptyTokenSet(f"category {name!r} has no tokens")
        idx = np.array(sorted(ids))
        if idx.max() >= z.shape[1]:
            raise VocabularyMismatch(f"category {name!r} uses IDs beyond the logit width {z.shape[1]}")
        cols.append(z[:, idx].mean(axis=1))
    return CategoryLogits(logits.grid_w, logits.grid_h, np.stack(cols, axis=1))


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) interpolation weights along one axis."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - w1)
    np.add.at(m, (rows, i1), w1)
    return m


def bilinear_resize(channels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a (C, H, W) stack with the half-pixel bilinear convention."""
    _, h, w = channels.shape
    ry = bilinear_matrix(h, out_h)
    rx = bilinear_matrix(w, out_w)
    return np.einsum("oh,chw,pw->cop", ry, channels, rx, optimize=True)


def nearest_resize(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = values.shape
    ys = np.minimum(np.floor((np.arange(out_h) + 0.5) * h / out_h).astype(np.int64), h - 1)
    xs = np.minimum(np.floor((np.arange(out_w) + 0.5) * w / out_w).astype(np.int64), w - 1)
    return values[np.ix_(ys, xs)]


def upsample_category_logits(cat_logits: CategoryLogits, out_w: int, out_h: int) -> np.ndarray:
    if out_w < cat_logits.grid_w or out_h < cat_logits.grid_h:
        raise GridMismatch(f"output {out_w}x{out_h} is smaller than the token grid")
    return bilinear_resize(cat_logits.grid(), out_h, out_w)


def decode_semantic(
    cat_logits: CategoryLogits,
    out_w: int,
    out_h: int,
    temperature: float = 1.0,
    background: Optional[Tuple[float, float]] = None,
    ignore_value: int = SEMANTIC_IGNORE,
) -> DenseMap:
    """Per-pixel category map.

    ``background=(scale, bg_score)`` compares ``sigmoid(scale * score)``
    against a constant background channel; a pixel is assigned a category
    only if some category beats ``bg_score`` strictly, otherwise it gets
    ``ignore_value``.  ``temperature`` only affects :func:`soft_map`.
    """
    if not temperature > 0:
        raise InvalidTemperature(f"temperature must be > 0, got {temperature}")
    up = upsample_category_logits(cat_logits, out_w, out_h)
    if background is None:
        return DenseMap(np.argmax(up, axis=0), ignore_value=ignore_value)
    scale, bg_score = background
    prob = 1.0 / (1.0 + np.exp(-scale * up))
    labels = np.argmax(prob, axis=0)
    labels = np.where(prob.max(axis=0) > bg_score, labels, ignore_value)
    return DenseMap(labels, ignore_value=ignore_value)


def soft_map(cat_logits: CategoryLogits, out_w: int, out_h: int, temperature: float = 0.2) -> np.ndarray:
    """Softmax over categories of upsampled scores / temperature, shape (K, out_h, out_w)."""
    if not temperature > 0:
        raise InvalidTemperature(f"temperature must be > 0, got {temperature}")
    up = upsample_category_logits(cat_logits, out_w, out_h) / temperature
    up -= up.max(axis=0, keepdims=True)
    e = np.exp(up)
    return e / e.sum(axis=0, keepdims=True)


def write_soft_map(path, probs: np.ndarray) -> None:
    """Raw 32-bit big-endian floats plus a ``<path>.hdr`` text header."""
    c, h, w = probs.shape
    Path(path).write_bytes(np.asarray(probs, dtype=">f4").tobytes())
    Path(str(path) + ".hdr").write_text(f"channels={c}\nheight={h}\nwidth={w}\ndtype=float32be\n")


def read_soft_map(path) -> np.ndarray:
    meta = dict(line.split("=", 1) for line in Path(str(path) + ".hdr").read_text().splitlines() if "=" in line)
    shape = (int(meta["channels"]), int(meta["height"]), int(meta["width"]))
    return np.frombuffer(Path(path).read_bytes(), dtype=">f4").reshape(shape).astype(np.float32)


def decode_depth(logits: LogitsGrid, vocab: Vocabulary, out_w: int, out_h: int, pre_upsample: float = 2) -> DenseMap:
    """Argmax over the <custom_1>..<custom_1000> logits after a bilinear pre-upsample."""
    if pre_upsample < 1:
        raise ValueError("pre_upsample must be >= 1")
    sl = vocab.depth_slice()
    if sl.stop > logits.vocab_size or vocab.size != logits.vocab_size:
        raise VocabularyMismatch("logits do not carry the depth-bin vocabulary slice")
    depth = logits.logits[:, sl].T.reshape(N_DEPTH_BINS, logits.grid_h, logits.grid_w)
    uh = int(round(logits.grid_h * pre_upsample))
    uw = int(round(logits.grid_w * pre_upsample))
    if (uh, uw) != (logits.grid_h, logits.grid_w):
        depth = bilinear_resize(depth, uh, uw)
    bins = np.argmax(depth, axis=0) + 1
    return DenseMap.depth(nearest_resize(bins, out_h, out_w))


# -- referring crop -----------------------------------------------------------


@dataclass(frozen=True)
class CropSpec:
    box: Tuple[float, float, float, float]
    pad_ratio: float = 1.2
    target_short_edge: int = 1280
    box_color: Tuple[int, int, int] = (255, 0, 0)

    def __post_init__(self):
        x0, y0, x1, y1 = self.box
        if not (x0 < x1 and y0 < y1):
            raise DegenerateBox(f"box {self.box} has no area")
        if self.pad_ratio < 1:
            raise ValueError("pad_ratio must be >= 1")


@dataclass(frozen=True)
class CropMapping:
    """Affine map between the resized crop and the original image.

    Original pixel ``x`` maps to crop pixel ``(x - x0) * sx``.
    """

    x0: int
    y0: int
    crop_w: int
    crop_h: int
    resize_w: int
    resize_h: int

    @property
    def sx(self) -> float:
        return self.resize_w / self.crop_w

    @property
    def sy(self) -> float:
        return self.resize_h / self.crop_h

    @classmethod
    def identity(cls, w: int, h: int) -> "CropMapping":
        return cls(0, 0, w, h, w, h)


@dataclass(frozen=True)
class CropResult:
    rect: Tuple[int, int, int, int]
    unclamped: Tuple[float, float, float, float]
    resize_w: int
    resize_h: int
    scale: float
    mapping: CropMapping


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def crop_with_padding(image_w: int, image_h: int, spec: CropSpec) -> CropResult:
    x0, y0, x1, y1 = spec.box
    if x0 < 0 or y0 < 0 or x1 > image_w or y1 > image_h:
        raise DegenerateBox(f"box {spec.box} is not inside the {image_w}x{image_h} image")
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    hw, hh = (x1 - x0) * spec.pad_ratio / 2, (y1 - y0) * spec.pad_ratio / 2
    ux0, uy0, ux1, uy1 = cx - hw, cy - hh, cx + hw, cy + hh
    rx0 = max(0, math.floor(ux0 + 1e-9))
    ry0 = max(0, math.floor(uy0 + 1e-9))
    rx1 = min(image_w, math.ceil(ux1 - 1e-9))
    ry1 = min(image_h, math.ceil(uy1 - 1e-9))
    cw, ch = rx1 - rx0, ry1 - ry0
    scale = spec.target_short_edge / min(cw, ch)
    rw, rh = _round_half_up(cw * scale), _round_half_up(ch * scale)
    mapping = CropMapping(rx0, ry0, cw, ch, rw, rh)
    return CropResult((rx0, ry0, rx1, ry1), (ux0, uy0, ux1, uy1), rw, rh, scale, mapping)


def paste_back(crop_mask: DenseMap, mapping: CropMapping, canvas_w: int, canvas_h: int, bg: int = 0) -> DenseMap:
    """Nearest-neighbor inverse warp of a crop-space mask onto a BG canvas."""
    if (crop_mask.width, crop_mask.height) != (mapping.resize_w, mapping.resize_h):
        raise GridMismatch(
            f"mask is {crop_mask.width}x{crop_mask.height}, mapping expects {mapping.resize_w}x{mapping.resize_h}"
        )
    out = np.full((canvas_h, canvas_w), bg, dtype=np.int64)
    x1 = min(canvas_w, mapping.x0 + mapping.crop_w)
    y1 = min(canvas_h, mapping.y0 + mapping.crop_h)
    xs = np.arange(mapping.x0, x1)
    ys = np.arange(mapping.y0, y1)
    u = np.minimum(np.floor((xs - mapping.x0 + 0.5) * mapping.sx).astype(np.int64), mapping.resize_w - 1)
    v = np.minimum(np.floor((ys - mapping.y0 + 0.5) * mapping.sy).astype(np.int64), mapping.resize_h - 1)
    out[np.ix_(ys, xs)] = crop_mask.values[np.ix_(v, u)]
    return DenseMap(out, ignore_value=crop_mask.ignore_value, kind=crop_mask.kind)


def draw_box(image: np.ndarray, box, color, thickness: int = 2) -> np.ndarray:
    """Copy of an (H, W, 3) image with a rectangle outline."""
    out = np.array(image, dtype=np.uint8, copy=True)
    h, w = out.shape[:2]
    x0, y0, x1, y1 = (int(round(c)) for c in box)
    x0, x1 = max(0, x0), min(w, x1)
    y0, y1 = max(0, y0), min(h, y1)
    t = thickness
    out[y0 : min(y1, y0 + t), x0:x1] = color
    out[max(y0, y1 - t) : y1, x0:x1] = color
    out[y0:y1, x0 : min(x1, x0 + t)] = color
    out[y0:y1, max(x0, x1 - t) : x1] = color
    return out


def random_box_color(rng: np.random.Generator) -> Tuple[int, int, int]:
    return tuple(int(c) for c in rng.integers(0, 256, size=3))


# -- PCA visualization -----------------------------------------------------------------


@dataclass
class PCAResult:
    image: np.ndarray  # (grid_h, grid_w, 3) uint8
    components: np.ndarray  # (3, F) unit vectors, zero rows where rank-deficient
    variances: np.ndarray  # (3,)
    rank_deficient: bool


def _top_eigvecs(cov: np.ndarray, n: int, iters: int, seed: int, tol: float = 1e-9):
    rng = np.random.default_rng(seed)
    f = cov.shape[0]
    a = cov.copy()
    scale = max(np.trace(cov), 1e-300)
    vecs, vals = [], []
    for _ in range(n):
        v = rng.standard_normal(f)
        for prev in vecs:
            v -= (v @ prev) * prev
        v /= np.linalg.norm(v)
        lam = v @ a @ v
        for _ in range(iters):
            w = a @ v
            nrm = np.linalg.norm(w)
            if nrm <= 1e-12 * scale:
                lam = 0.0
                break
            v = w / nrm
            new = v @ a @ v
            if abs(new - lam) <= tol * scale:
                lam = new
                break
            lam = new
        if lam <= 1e-12 * scale:
            vecs.append(np.zeros(f))
            vals.append(0.0)
            continue
        i = np.argmax(np.abs(v))
        if v[i] < 0:
            v = -v
        vecs.append(v)
        vals.append(lam)
        a = a - lam * np.outer(v, v)
    vecs, vals = np.array(vecs), np.array(vals)
    return _canonical_clusters(vecs, vals, tol * scale), vals


def _canonical_clusters(vecs: np.ndarray, vals: np.ndarray, tol: float) -> np.ndarray:
    """Replace the basis of each repeated eigenvalue with the one closest to the coordinate axes.

    Any orthonormal basis of a repeated eigenvalue's eigenspace is equally
    valid, so power iteration returns one that depends on the random start.
    Projecting coordinate axes into the span (largest projection first)
    makes the choice deterministic and recovers axis-aligned structure.
    """
    out = vecs.copy()
    i = 0
    while i < len(vals):
        j = i + 1
        while j < len(vals) and vals[i] > 0 and abs(vals[j] - vals[i]) <= tol:
            j += 1
        if j - i > 1:
            q = vecs[i:j]
            proj = q.T @ q
            for r in range(i, j):
                norms = np.linalg.norm(proj, axis=0)
                w = proj[:, int(np.argmax(norms))]
                w = w / np.linalg.norm(w)
                if w[np.argmax(np.abs(w))] < 0:
                    w = -w
                out[r] = w
                proj = proj - np.outer(w, w)
        i = j
    return out


def pca_rgb(hidden: np.ndarray, grid_w: int, grid_h: int, iters: int = 200, seed: int = 0) -> PCAResult:
    """Project token features on their top-3 principal axes and map each to 0..255."""
    x = np.asarray(hidden, dtype=np.float64)
    L, F = x.shape
    if L != grid_w * grid_h:
        raise GridMismatch(f"{L} feature rows for a {grid_w}x{grid_h} grid")
    if F < 3 or L < 3:
        raise ValueError("pca_rgb needs at least 3 tokens and 3 feature dimensions")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / L
    comps, vals = _top_eigvecs(cov, 3, iters, seed)
    proj = xc @ comps.T
    img = np.full((L, 3), 128, dtype=np.uint8)
    for c in range(3):
        lo, hi = proj[:, c].min(), proj[:, c].max()
        if vals[c] > 0 and hi > lo:
            img[:, c] = np.round((proj[:, c] - lo) / (hi - lo) * 255).astype(np.uint8)
    return PCAResult(img.reshape(grid_h, grid_w, 3), comps, vals, bool(np.any(vals == 0)))
