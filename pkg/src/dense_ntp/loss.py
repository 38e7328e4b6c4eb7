"""Multi-label next-token objective for vision tokens, plus ablation baselines.

Every loss returns a :class:`LossReport` whose ``grad`` is the exact
derivative of ``value`` with respect to the raw logits.  Hard-example
selections (top-k negatives, OHEM) are treated as constants when
differentiating.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import DenseNTPError, GridMismatch
from .targets import NONE, TargetSet

DEFAULT_K = 32


class InvalidK(DenseNTPError, ValueError):
    pass


class UnknownBaseline(DenseNTPError, ValueError):
    pass


class NonFiniteLogits(DenseNTPError, ValueError):
    pass


@dataclass
class LogitsGrid:
    grid_w: int
    grid_h: int
    logits: np.ndarray  # (L, V) raw scores Z

    def __post_init__(self):
        z = np.asarray(self.logits)
        # extended precision passes through (finite-difference oracles use it)
        self.logits = z if z.dtype == np.longdouble else z.astype(np.float64)
        if self.logits.shape[0] != self.grid_w * self.grid_h:
            raise GridMismatch(f"{self.logits.shape[0]} logit rows for a {self.grid_w}x{self.grid_h} grid")
        if not np.all(np.isfinite(self.logits)):
            raise NonFiniteLogits("logits must be finite")

    @property
    def n_tokens(self) -> int:
        return self.logits.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.logits.shape[1]


@dataclass
class LossReport:
    value: float
    grad: np.ndarray
    relevant_negatives: Optional[List[np.ndarray]] = None
    k: Optional[int] = None
    kind: str = "ntpm"
    positives: Optional[List[np.ndarray]] = field(default=None, repr=False)

    def to_json(self) -> str:
        per_token = []
        if self.relevant_negatives is not None:
            for i, neg in enumerate(self.relevant_negatives):
                pos = self.positives[i] if self.positives is not None else []
                per_token.append(
                    {"positives": [int(v) for v in pos], "selected_negatives": [int(v) for v in neg]}
                )
        return json.dumps({"value": self.value, "k": self.k, "per_token": per_token}, indent=2)


def _check(logits: LogitsGrid, targets: TargetSet) -> None:
    if (logits.grid_w, logits.grid_h) != (targets.grid_w, targets.grid_h):
        raise GridMismatch(
            f"logits grid {logits.grid_w}x{logits.grid_h} vs targets {targets.grid_w}x{targets.grid_h}"
        )
    if logits.vocab_size != targets.vocab_size:
        raise GridMismatch(f"logits have {logits.vocab_size} IDs, targets {targets.vocab_size}")


def _scalar(x):
    """Plain float for float64 results; long double stays long double."""
    return x if np.asarray(x).dtype == np.longdouble else float(x)


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    # exp of a non-positive argument only, so no overflow warnings
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def elementwise_bce(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """-[y log s(z) + (1-y) log(1-s(z))] in the softplus form."""
    return softplus(z) - y * z


def bernoulli_nll(logits: LogitsGrid, targets: TargetSet) -> float:
    """Negative log of the joint Bernoulli likelihood over valid (token, ID) pairs."""
    _check(logits, targets)
    z = logits.logits
    y = targets.positives.astype(np.float64)
    return _scalar(np.sum(elementwise_bce(z, y), where=targets.validity))


def relevant_negative_mask(logits: LogitsGrid, targets: TargetSet, k: int) -> np.ndarray:
    """(L, V) mask of the selected negatives; see :func:`select_relevant_negatives`."""
    if k < 1:
        raise InvalidK(f"k must be >= 1, got {k}")
    _check(logits, targets)
    cand = targets.candidates()
    n_cand = cand.sum(axis=1)
    few = n_cand <= k
    sel = np.zeros_like(cand)
    sel[few] = cand[few]
    rows = np.flatnonzero(~few)
    if len(rows):
        # sigmoid is monotone, so ranking by logit equals ranking by probability
        z = np.where(cand[rows], logits.logits[rows], -np.inf)
        thr = -np.partition(-z, k - 1, axis=1)[:, k - 1 : k]
        above = z > thr
        at = z == thr
        need = k - above.sum(axis=1, keepdims=True)
        sel[rows] = above | (at & (np.cumsum(at, axis=1) <= need))
    return sel


def select_relevant_negatives(logits: LogitsGrid, targets: TargetSet, k: int) -> List[np.ndarray]:
    """Per token, the min(k, |C_i|) candidate negatives with the highest probability.

    Ties are broken toward the smaller vocabulary ID.
    """
    return [np.flatnonzero(r) for r in relevant_negative_mask(logits, targets, k)]


def _pos_neg_terms(z, pos_mask, neg_mask, neg_count):
    """Sum_i [ mean_{P_i} softplus(-z) + sum_{neg} softplus(z) / neg_count_i ] and its gradient."""
    n_pos = pos_mask.sum(axis=1)
    p = sigmoid(z)
    inv_pos = np.divide(1.0, n_pos, out=np.zeros(len(n_pos)), where=n_pos > 0)
    inv_neg = np.divide(1.0, neg_count, out=np.zeros(len(neg_count)), where=neg_count > 0)
    pos_term = np.sum(softplus(-z), axis=1, where=pos_mask) * inv_pos
    neg_term = np.sum(softplus(z), axis=1, where=neg_mask) * inv_neg
    grad = np.where(pos_mask, (p - 1.0) * inv_pos[:, None], 0.0)
    grad += np.where(neg_mask, p * inv_neg[:, None], 0.0)
    return _scalar(np.sum(pos_term + neg_term)), grad


def ntpm_loss(logits: LogitsGrid, targets: TargetSet, k: int = DEFAULT_K) -> LossReport:
    """Independent positive mean plus the mean over the top-k relevant negatives, summed over tokens.

    The negative mean divides by the number of negatives actually selected,
    which is smaller than ``k`` when a token has fewer candidates.
    """
    if k < 1:
        raise InvalidK(f"k must be >= 1, got {k}")
    _check(logits, targets)
    neg_mask = relevant_negative_mask(logits, targets, k)
    pos_mask = targets.positives & targets.validity
    counts = neg_mask.sum(axis=1).astype(np.float64)
    value, grad = _pos_neg_terms(logits.logits, pos_mask, neg_mask, counts)
    sel = [np.flatnonzero(r) for r in neg_mask]
    positives = [np.flatnonzero(r) for r in pos_mask]
    return LossReport(value, grad, sel, k, "ntpm", positives)


# -- baselines -----------------------------------------------------------------


def _ntp_ce(z, t: TargetSet, params) -> LossReport:
    valid = t.validity
    has = (t.majority != NONE) & valid.any(axis=1)
    zm = np.where(valid, z, -np.inf)
    rows = np.flatnonzero(has)
    grad = np.zeros_like(z)
    value = 0.0
    if len(rows):
        zr = zm[rows]
        mx = zr.max(axis=1, keepdims=True)
        ex = np.exp(zr - mx)
        se = ex.sum(axis=1, keepdims=True)
        lse = mx[:, 0] + np.log(se[:, 0])
        tgt = t.majority[rows]
        value = _scalar(np.sum(lse - z[rows, tgt]))
        g = ex / se
        g[np.arange(len(rows)), tgt] -= 1.0
        grad[rows] = g
    return LossReport(value, grad, kind="ntp_ce")


def _raw_bce(z, t: TargetSet, params) -> LossReport:
    n = int(t.validity.sum())
    if n == 0:
        return LossReport(0.0, np.zeros_like(z), kind="raw_bce")
    y = t.positives.astype(np.float64)
    value = _scalar(np.sum(elementwise_bce(z, y), where=t.validity)) / n
    grad = np.where(t.validity, (sigmoid(z) - y) / n, 0.0)
    return LossReport(value, grad, kind="raw_bce")


def _focal(z, t: TargetSet, params) -> LossReport:
    gamma = float(params.get("gamma", 2.0))
    alpha = float(params.get("alpha", 0.25))
    if gamma < 0:
        raise ValueError("focal gamma must be >= 0")
    n = int(t.validity.sum())
    if n == 0:
        return LossReport(0.0, np.zeros_like(z), kind="focal")
    y = t.positives
    p = sigmoid(z)
    log_p = -softplus(-z)
    log_q = -softplus(z)  # log(1 - p)
    q = 1.0 - p
    # y = 1: a (1-p)^g (-log p);  y = 0: (1-a) p^g (-log(1-p))
    pos_val = alpha * q**gamma * (-log_p)
    neg_val = (1 - alpha) * p**gamma * (-log_q)
    pos_grad = alpha * q**gamma * (gamma * p * log_p - q)
    neg_grad = (1 - alpha) * p**gamma * (p - gamma * q * log_q)
    val = np.where(y, pos_val, neg_val)
    grad = np.where(y, pos_grad, neg_grad)
    value = _scalar(np.sum(val, where=t.validity)) / n
    grad = np.where(t.validity, grad / n, 0.0)
    return LossReport(value, grad, kind="focal")


def _ohem(z, t: TargetSet, params) -> LossReport:
    frac = float(params.get("fraction", 0.25))
    if not 0.0 < frac <= 1.0:
        raise ValueError("ohem fraction must be in (0, 1]")
    flat_valid = np.flatnonzero(t.validity.ravel())
    if len(flat_valid) == 0:
        return LossReport(0.0, np.zeros_like(z), kind="ohem")
    y = t.positives.astype(np.float64)
    bce = elementwise_bce(z, y).ravel()[flat_valid]
    n_keep = max(1, math.ceil(frac * len(flat_valid) - 1e-9))
    # hardest first, ties to the earlier flat index
    order = np.lexsort((flat_valid, -bce))[:n_keep]
    kept = flat_valid[order]
    value = _scalar(np.sum(bce[order])) / n_keep
    g = np.zeros(z.size)
    g[kept] = (sigmoid(z).ravel()[kept] - y.ravel()[kept]) / n_keep
    return LossReport(value, g.reshape(z.shape), kind="ohem")


def _balanced_bce(z, t: TargetSet, params) -> LossReport:
    pos = t.positives & t.validity
    cand = t.candidates()
    n_pos = pos.sum(axis=1).astype(np.float64)
    n_cand = cand.sum(axis=1).astype(np.float64)
    w_neg = np.divide(n_pos, n_cand, out=np.zeros(len(n_pos)), where=n_cand > 0)
    weight = np.where(pos, 1.0, 0.0) + np.where(cand, w_neg[:, None], 0.0)
    y = pos.astype(np.float64)
    value = _scalar(np.sum(weight * elementwise_bce(z, y)))
    grad = weight * (sigmoid(z) - y)
    return LossReport(value, grad, kind="balanced_bce")


def _indiv_mean(z, t: TargetSet, params) -> LossReport:
    pos = t.positives & t.validity
    cand = t.candidates()
    value, grad = _pos_neg_terms(z, pos, cand, cand.sum(axis=1).astype(np.float64))
    return LossReport(value, grad, kind="indiv_mean")


BASELINES = {
    "ntp_ce": _ntp_ce,
    "raw_bce": _raw_bce,
    "focal": _focal,
    "ohem": _ohem,
    "balanced_bce": _balanced_bce,
    "indiv_mean": _indiv_mean,
}
LOSS_KINDS = tuple(BASELINES) + ("ntpm",)


def baseline_loss(kind: str, logits: LogitsGrid, targets: TargetSet, params: Optional[dict] = None) -> LossReport:
    fn = BASELINES.get(kind)
    if fn is None:
        raise UnknownBaseline(f"unknown baseline {kind!r}; choose from {sorted(BASELINES)}")
    _check(logits, targets)
    return fn(logits.logits, targets, params or {})


def compute_loss(kind: str, logits: LogitsGrid, targets: TargetSet, k: int = DEFAULT_K, params=None) -> LossReport:
    """Dispatch over every loss kind including ``ntpm``."""
    if kind == "ntpm":
        return ntpm_loss(logits, targets, k)
    return baseline_loss(kind, logits, targets, params)
