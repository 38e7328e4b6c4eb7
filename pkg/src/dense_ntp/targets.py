"""Rasterize pixel ground truth into per-vision-token supervision.

Tokens are numbered row-major over the token grid: token ``i`` covers the
patch at grid row ``i // grid_w`` and column ``i % grid_w``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .densemap import DenseMap
from .errors import DenseNTPError, GridMismatch
from .vocab import N_DEPTH_BINS, CategoryTokenMap, Vocabulary

NONE = -1
DEFAULT_PATCH = 32


class UnknownClass(DenseNTPError, ValueError):
    pass


class BinOutOfRange(DenseNTPError, ValueError):
    pass


@dataclass
class TargetSet:
    grid_w: int
    grid_h: int
    positives: np.ndarray  # (L, V) bool, y_{i,v}
    validity: np.ndarray  # (L, V) bool, membership in M_i
    majority: np.ndarray  # (L,) int vocabulary ID or NONE

    @property
    def n_tokens(self) -> int:
        return self.grid_w * self.grid_h

    @property
    def vocab_size(self) -> int:
        return self.positives.shape[1]

    def positive_ids(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.positives[i])

    def candidates(self) -> np.ndarray:
        """C_i = M_i minus P_i as an (L, V) mask."""
        return self.validity & ~self.positives

    def check(self) -> None:
        if np.any(self.positives & ~self.validity):
            raise DenseNTPError("positives must lie inside the validity mask")
        has = self.majority != NONE
        rows = np.flatnonzero(has)
        if not np.all(self.positives[rows, self.majority[rows]]):
            raise DenseNTPError("majority label must be one of the positives")

    @classmethod
    def empty(cls, grid_w: int, grid_h: int, vocab_size: int) -> "TargetSet":
        L = grid_w * grid_h
        return cls(
            grid_w,
            grid_h,
            np.zeros((L, vocab_size), dtype=bool),
            np.zeros((L, vocab_size), dtype=bool),
            np.full(L, NONE, dtype=np.int64),
        )


def _patch_view(values: np.ndarray, patch: int) -> np.ndarray:
    """(H, W) -> (L, patch*patch) with tokens in row-major grid order."""
    h, w = values.shape
    if patch < 1 or h % patch or w % patch:
        raise GridMismatch(f"{w}x{h} map is not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    return values.reshape(gh, patch, gw, patch).transpose(0, 2, 1, 3).reshape(gh * gw, patch * patch)


def patch_class_counts(gt: DenseMap, patch: int, n_classes: int) -> np.ndarray:
    """Per-token pixel histogram over classes, ignore pixels dropped. Shape (L, n_classes)."""
    vals = _patch_view(gt.values, patch)
    valid = vals != gt.ignore_value
    bad = valid & (vals >= n_classes)
    if np.any(bad):
        raise UnknownClass(f"class index {int(vals[bad][0])} has no category (have {n_classes})")
    L = vals.shape[0]
    tok = np.broadcast_to(np.arange(L)[:, None], vals.shape)
    flat = tok[valid] * n_classes + vals[valid]
    return np.bincount(flat, minlength=L * n_classes).reshape(L, n_classes)


def build_multihot_targets(
    gt: DenseMap, patch: int, cat_map: CategoryTokenMap, coverage_tau: float = 0.0
) -> TargetSet:
    if not 0.0 <= coverage_tau < 1.0:
        raise ValueError("coverage_tau must be in [0, 1)")
    K = len(cat_map)
    counts = patch_class_counts(gt, patch, K)
    gw, gh = gt.width // patch, gt.height // patch
    ts = TargetSet.empty(gw, gh, cat_map.vocab_size)

    n_valid = counts.sum(axis=1)
    covered = n_valid > 0
    frac = np.zeros(counts.shape)
    np.divide(counts, n_valid[:, None], out=frac, where=covered[:, None])
    positive_class = (counts > 0) & (frac > coverage_tau)

    lo, hi = cat_map.semantic_range
    ts.validity[covered, lo:hi] = True
    for k in range(K):
        ids = np.fromiter(cat_map.token_sets[k], dtype=np.int64)
        rows = np.flatnonzero(positive_class[:, k])
        ts.positives[np.ix_(rows, ids)] = True
        # sub-tokens outside the semantic range still need to be supervisable
        ts.validity[np.ix_(rows, ids)] = True

    # argmax takes the first maximum, i.e. the smallest class index on ties
    maj = np.argmax(counts, axis=1)
    first = np.array([cat_map.first_token(k) for k in range(K)], dtype=np.int64)
    ts.majority[covered] = first[maj[covered]]
    # a majority class pruned by coverage_tau is not a positive; fall back to NONE
    lost = covered & ~positive_class[np.arange(len(maj)), maj]
    ts.majority[lost] = NONE
    return ts


def build_depth_targets(bins: DenseMap, patch: int, vocab: Vocabulary) -> TargetSet:
    vals = _patch_view(bins.values, patch)
    if vals.size and vals.max() > N_DEPTH_BINS:
        raise BinOutOfRange(f"depth bin {int(vals.max())} > {N_DEPTH_BINS}")
    gw, gh = bins.width // patch, bins.height // patch
    L = gw * gh
    ts = TargetSet.empty(gw, gh, vocab.size)
    tok = np.broadcast_to(np.arange(L)[:, None], vals.shape)
    nz = vals != 0
    hist = np.bincount(tok[nz] * (N_DEPTH_BINS + 1) + vals[nz], minlength=L * (N_DEPTH_BINS + 1))
    hist = hist.reshape(L, N_DEPTH_BINS + 1)[:, 1:]  # columns are bins 1..1000
    covered = hist.sum(axis=1) > 0
    dsl = vocab.depth_slice()
    ts.positives[:, dsl] = hist > 0
    ts.validity[covered, dsl] = True
    ts.majority[covered] = vocab.custom_id(1) + np.argmax(hist[covered], axis=1)
    return ts


def merge_targets(a: TargetSet, b: TargetSet) -> TargetSet:
    if (a.grid_w, a.grid_h) != (b.grid_w, b.grid_h) or a.vocab_size != b.vocab_size:
        raise GridMismatch(
            f"cannot merge {a.grid_w}x{a.grid_h}/{a.vocab_size} with {b.grid_w}x{b.grid_h}/{b.vocab_size}"
        )
    return TargetSet(
        a.grid_w,
        a.grid_h,
        a.positives | b.positives,
        a.validity | b.validity,
        a.majority.copy(),
    )
