"""Adam training of TinyModel on token targets, evaluation, and gradient checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..decode import aggregate_category_logits, decode_semantic
from ..errors import DenseNTPError
from ..loss import DEFAULT_K, LogitsGrid, NonFiniteLogits, compute_loss
from ..metrics import ConfusionMatrix, miou
from ..targets import NONE, TargetSet, build_depth_targets, build_multihot_targets, merge_targets
from ..vocab import CategoryTokenMap, Vocabulary
from .model import TinyModel, backward, forward
from .scenes import SyntheticScene, pool_features


class Diverged(DenseNTPError, FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step


@dataclass
class Sample:
    """One scene reduced to token features and token targets."""

    features: np.ndarray
    targets: TargetSet
    scene: SyntheticScene
    patch: int


def prepare(
    scene: SyntheticScene,
    patch: int,
    cat_map: CategoryTokenMap,
    vocab: Optional[Vocabulary] = None,
    with_depth: bool = False,
    coverage_tau: float = 0.0,
) -> Sample:
    feats, _ = pool_features(scene, patch)
    t = build_multihot_targets(scene.semantic, patch, cat_map, coverage_tau)
    if with_depth:
        t = merge_targets(t, build_depth_targets(scene.depth_bins(), patch, vocab))
    return Sample(feats, t, scene, patch)


def batch_value(model: TinyModel, samples: Sequence[Sample], loss_kind: str, k: int = DEFAULT_K, params=None):
    """Mean per-scene loss only, in the dtype of the model weights."""
    total = 0.0
    for s in samples:
        z = forward(model, s.features)
        total = total + compute_loss(loss_kind, LogitsGrid(s.targets.grid_w, s.targets.grid_h, z), s.targets, k, params).value
    return total / len(samples)


def batch_loss(model: TinyModel, samples: Sequence[Sample], loss_kind: str, k: int = DEFAULT_K, params=None):
    """Mean over samples of the per-scene loss, and the matching parameter gradient."""
    total = 0.0
    grads = {name: np.zeros_like(p) for name, p in model.params.items()}
    for s in samples:
        z, cache = forward(model, s.features, return_cache=True)
        rep = compute_loss(loss_kind, LogitsGrid(s.targets.grid_w, s.targets.grid_h, z), s.targets, k, params)
        total += rep.value
        for name, g in backward(model, cache, rep.grad).items():
            grads[name] += g
    n = len(samples)
    return total / n, {name: g / n for name, g in grads.items()}


@dataclass
class TrainResult:
    model: TinyModel
    curve: List[float] = field(default_factory=list)


def train(
    model: TinyModel,
    samples: Sequence[Sample],
    loss_kind: str = "ntpm",
    k: int = DEFAULT_K,
    steps: int = 100,
    lr: float = 0.01,
    seed: int = 0,
    batch_size: Optional[int] = None,
    loss_params: Optional[dict] = None,
) -> TrainResult:
    """Adam (beta 0.9 / 0.999, eps 1e-8) over shuffled minibatches of scenes."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if lr < 0:
        raise ValueError("lr must be >= 0")
    full = model.copy()
    # IDs outside every validity mask get exactly zero gradient; train on the rest only
    cols = np.flatnonzero(np.any([s.targets.validity.any(axis=0) for s in samples], axis=0))
    model = _restrict(full, cols)
    samples = [_restrict_sample(s, cols) for s in samples]
    rng = np.random.default_rng(seed)
    b1, b2, eps = 0.9, 0.999, 1e-8
    m = {n: np.zeros_like(p) for n, p in model.params.items()}
    v = {n: np.zeros_like(p) for n, p in model.params.items()}
    bs = batch_size or len(samples)
    order = rng.permutation(len(samples))
    cursor = 0
    curve = []
    for step in range(1, steps + 1):
        if cursor + bs > len(samples):
            order = rng.permutation(len(samples))
            cursor = 0
        batch = [samples[i] for i in order[cursor : cursor + bs]]
        cursor += bs
        if not all(np.all(np.isfinite(p)) for p in model.params.values()):
            raise Diverged(step)
        try:
            value, grads = batch_loss(model, batch, loss_kind, k, loss_params)
        except NonFiniteLogits:
            raise Diverged(step) from None
        if not np.isfinite(value):
            raise Diverged(step)
        curve.append(value)
        if lr == 0:
            continue
        for name, g in grads.items():
            m[name] = b1 * m[name] + (1 - b1) * g
            v[name] = b2 * v[name] + (1 - b2) * g * g
            mhat = m[name] / (1 - b1**step)
            vhat = v[name] / (1 - b2**step)
            with np.errstate(over="ignore", invalid="ignore"):
                model.params[name] -= lr * mhat / (np.sqrt(vhat) + eps)
    for name in _VOCAB_ROWS:
        if name in full.params:
            full.params[name][cols] = model.params[name]
    for name in full.params:
        if name not in _VOCAB_ROWS:
            full.params[name] = model.params[name]
    return TrainResult(full, curve)


_VOCAB_ROWS = ("W", "E", "b")


def _restrict(model: TinyModel, cols: np.ndarray) -> TinyModel:
    params = {n: (p[cols].copy() if n in _VOCAB_ROWS else p.copy()) for n, p in model.params.items()}
    return TinyModel(model.mode, params, model.seed)


def _restrict_sample(s: Sample, cols: np.ndarray) -> Sample:
    t = s.targets
    remap = np.full(t.vocab_size, NONE, dtype=np.int64)
    remap[cols] = np.arange(len(cols))
    maj = np.where(t.majority == NONE, NONE, remap[np.maximum(t.majority, 0)])
    t2 = TargetSet(t.grid_w, t.grid_h, t.positives[:, cols], t.validity[:, cols], maj)
    return Sample(s.features, t2, s.scene, s.patch)


def predict_semantic(model: TinyModel, sample: Sample, cat_map: CategoryTokenMap, out_w=None, out_h=None):
    t = sample.targets
    z = forward(model, sample.features)
    cl = aggregate_category_logits(LogitsGrid(t.grid_w, t.grid_h, z), cat_map)
    sem = sample.scene.semantic
    return decode_semantic(cl, out_w or sem.width, out_h or sem.height)


def evaluate_miou(model: TinyModel, samples: Sequence[Sample], cat_map: CategoryTokenMap, gt_maps=None) -> float:
    """mIoU of pixel-resolution decodes against each scene's semantic map (or ``gt_maps``)."""
    cm = ConfusionMatrix(len(cat_map))
    for i, s in enumerate(samples):
        gt = gt_maps[i] if gt_maps is not None else s.scene.semantic
        pred = predict_semantic(model, s, cat_map, gt.width, gt.height)
        cm.update(gt.values, pred.values, gt.ignore_value)
    return miou(cm)


# -- gradient check ------------------------------------------------------------


@dataclass
class GradcheckReport:
    max_rel_error: float
    worst: Dict[str, object]
    n_checked: int
    passed: bool


def flat_params(model: TinyModel):
    return [(name, idx) for name, p in model.params.items() for idx in np.ndindex(p.shape)]


def relative_error(a: float, n: float, floor: float = 1e-12) -> float:
    """|a - n| / max(|a|, |n|); zero when both sides are below ``floor``."""
    scale = max(abs(a), abs(n))
    if scale < floor:
        return 0.0
    return abs(a - n) / scale


def gradcheck(
    model: TinyModel,
    samples: Sequence[Sample],
    loss_kind: str = "ntpm",
    k: int = DEFAULT_K,
    trials: int = 20,
    seed: int = 0,
    h: float = 1e-6,
    loss_params: Optional[dict] = None,
    corrupt: float = 0.0,
    fd_dtype=np.longdouble,
) -> GradcheckReport:
    """Central differences on ``trials`` random parameters against the analytic gradient.

    The analytic side runs in float64.  The finite-difference side re-evaluates
    the loss with weights cast to ``fd_dtype`` (long double by default): at
    h = 1e-6 a float64 loss carries round-off of about eps * |loss| / h ~ 1e-10,
    which is larger than 1e-6 of many genuine gradients.  Pass ``np.float64``
    for a plain double-precision check.

    ``corrupt`` scales the analytic gradient by ``1 + corrupt`` (negative control).
    """
    model = model.copy()
    _, grads = batch_loss(model, samples, loss_kind, k, loss_params)
    probe = TinyModel(model.mode, {n: p.astype(fd_dtype) for n, p in model.params.items()}, model.seed)
    entries = flat_params(model)
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(entries), size=min(trials, len(entries)), replace=False)
    hh = fd_dtype(h)
    worst = {"rel_error": 0.0}
    for j in pick:
        name, idx = entries[j]
        p = probe.params[name]
        old = p[idx]
        p[idx] = old + hh
        fp = batch_value(probe, samples, loss_kind, k, loss_params)
        p[idx] = old - hh
        fm = batch_value(probe, samples, loss_kind, k, loss_params)
        p[idx] = old
        num = float((fp - fm) / (2 * hh))
        ana = float(grads[name][idx] * (1.0 + corrupt))
        err = relative_error(ana, num)
        if err >= worst["rel_error"]:
            worst = {"rel_error": err, "param": name, "index": [int(i) for i in idx], "analytic": ana, "numeric": num}
    return GradcheckReport(worst["rel_error"], worst, len(pick), worst["rel_error"] < 1e-6)
