"""Ablation presets on synthetic scenes.

Every preset trains one model per (arm, seed) on the same seed-specific
scene set and reports mean and standard deviation of test mIoU per arm.

The lab vocabulary mimics the situation the multi-label objective targets:
category names are two-syllable words that share syllables, and a large
block of filler words stands in for the rest of a language-model vocabulary.
Fillers are never positive, so they only ever act as negatives.
"""

from __future__ import annotations

import csv
import itertools
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..errors import DenseNTPError
from ..vocab import CategoryTokenMap, Vocabulary, build_vocabulary, default_base_tokens
from .model import TinyModel
from .scenes import generate_scene
from .train import evaluate_miou, prepare, train

SYLLABLES = ("ka", "to", "mi", "ra", "su", "ne", "lo", "pi", "da", "ve", "ko", "ru")
_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


class UnknownPreset(DenseNTPError, KeyError):
    pass


@dataclass(frozen=True)
class LabConfig:
    n_classes: int = 20
    n_filler: int = 700
    base_size: int = 64  # scene side in pixels at scale 1
    patch: int = 8
    scale: float = 1.0
    n_shapes: int = 6
    noise_sigma: float = 0.3
    n_train: int = 32
    n_test: int = 8
    mode: str = "linear"
    rank: int = 12
    loss_kind: str = "ntpm"
    k: int = 32
    steps: int = 300
    lr: float = 0.03
    batch_size: int = 8

    @property
    def size(self) -> int:
        s = self.base_size * self.scale
        if abs(s - round(s)) > 1e-9 or round(s) % self.patch:
            raise ValueError(f"scale {self.scale} gives a {s}px scene, not a multiple of patch {self.patch}")
        return int(round(s))


def class_names(n_classes: int) -> List[str]:
    pairs = [a + b for a, b in itertools.product(SYLLABLES, SYLLABLES) if a != b]
    if n_classes > len(pairs):
        raise ValueError(f"at most {len(pairs)} lab classes")
    order = np.random.default_rng(123).permutation(len(pairs))
    return [pairs[i] for i in order[:n_classes]]


def filler_words(n: int, exclude: Sequence[str] = ()) -> List[str]:
    skip = set(exclude)
    words = ("".join(p) for p in itertools.product(_CONSONANTS, _VOWELS, _CONSONANTS, _VOWELS))
    out = list(itertools.islice((w for w in words if w not in skip), n))
    if len(out) < n:
        raise ValueError(f"only {len(out)} filler words available")
    return out


def lab_vocabulary(cfg: LabConfig):
    names = class_names(cfg.n_classes)
    vocab = build_vocabulary(default_base_tokens(list(SYLLABLES) + filler_words(cfg.n_filler, names)))
    return vocab, CategoryTokenMap.from_names(names, vocab)


def scene_set(cfg: LabConfig, seed: int, vocab: Vocabulary, cat_map: CategoryTokenMap):
    """Training and test samples for one seed; geometry does not depend on ``cfg.scale``."""
    side = cfg.size

    def make(s):
        sc = generate_scene(s, side, side, cfg.n_classes, cfg.n_shapes, cfg.noise_sigma, cfg.patch)
        return prepare(sc, cfg.patch, cat_map, vocab)

    base = 100_003 * (seed + 1)
    train_set = [make(base + i) for i in range(cfg.n_train)]
    test_set = [make(base + 50_000 + i) for i in range(cfg.n_test)]
    return train_set, test_set


def run_arm(cfg: LabConfig, seed: int, loss_params: Optional[dict] = None, data=None):
    """Train one model and return ``(test mIoU, loss curve)``."""
    vocab, cat_map = lab_vocabulary(cfg)
    train_set, test_set = data or scene_set(cfg, seed, vocab, cat_map)
    model = TinyModel.init(cfg.mode, cfg.n_classes + 1, vocab.size, seed=seed, rank=cfg.rank)
    res = train(model, train_set, cfg.loss_kind, cfg.k, cfg.steps, cfg.lr, seed, cfg.batch_size, loss_params)
    return evaluate_miou(res.model, test_set, cat_map), res.curve


def _arms(preset: str, base: LabConfig) -> Dict[str, LabConfig]:
    if preset == "table3-mini":
        return {kind: replace(base, loss_kind=kind) for kind in ("raw_bce", "indiv_mean", "ntpm")}
    if preset == "table4-mini":
        kinds = ("ntp_ce", "raw_bce", "focal", "ohem", "balanced_bce", "ntpm")
        return {kind: replace(base, loss_kind=kind) for kind in kinds}
    if preset == "table5-mini":
        # scenes of side base_size*scale tokenized with a fixed patch: finer token grids
        small = replace(base, base_size=base.patch * 4)
        return {f"scale={s:g}": replace(small, scale=s) for s in (1, 1.5, 2, 2.5, 3, 3.5, 4)}
    if preset == "table6-mini":
        return {f"k={k}": replace(base, k=k) for k in (8, 16, 32, 64, 128)}
    raise UnknownPreset(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")


PRESETS = ("table3-mini", "table4-mini", "table5-mini", "table6-mini")


def _run_seed(preset: str, base: LabConfig, seed: int):
    """All arms of a preset for one seed; arms with the same scene size share one scene set."""
    out = {}
    cache = {}
    for name, cfg in _arms(preset, base).items():
        if cfg.size not in cache:
            vocab, cat_map = lab_vocabulary(cfg)
            cache = {cfg.size: scene_set(cfg, seed, vocab, cat_map)}
        score, curve = run_arm(cfg, seed, data=cache[cfg.size])
        out[name] = (100.0 * score, curve)
    return out


def run_experiment(
    preset: str,
    seeds: Sequence[int] = (0, 1, 2),
    out_dir: Optional[str] = None,
    base: Optional[LabConfig] = None,
    workers: int = 1,
) -> dict:
    """Run every arm of ``preset`` for each seed.

    Returns ``{preset, seeds, arms: [{name, miou_mean, miou_std, miou, curve_path}], config}``
    with mIoU in percent.  Loss curves are written as CSV (one column per
    seed) when ``out_dir`` is given.  Seeds run as independent jobs on up to
    ``workers`` processes; results are collected in seed order, so the report
    does not depend on ``workers``.
    """
    base = base or LabConfig()
    arms = list(_arms(preset, base))
    if len(seeds) < 1:
        raise ValueError("need at least one seed")
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
            per_seed = list(pool.map(_run_seed, [preset] * len(seeds), [base] * len(seeds), seeds))
    else:
        per_seed = [_run_seed(preset, base, s) for s in seeds]
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    report = {"preset": preset, "seeds": [int(s) for s in seeds], "arms": []}
    for name in arms:
        scores = [r[name][0] for r in per_seed]
        curves = [r[name][1] for r in per_seed]
        path = None
        if out_dir:
            path = os.path.join(out_dir, f"{preset}_{name.replace('=', '')}.csv")
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["step"] + [f"seed{s}" for s in seeds])
                for i, row in enumerate(zip(*curves), start=1):
                    w.writerow([i] + [repr(float(v)) for v in row])
        report["arms"].append(
            {
                "name": name,
                "miou_mean": float(np.mean(scores)),
                "miou_std": float(np.std(scores)),
                "miou": scores,
                "curve_path": path,
            }
        )
    report["config"] = asdict(base)
    return report


def arm_means(report: dict) -> Dict[str, float]:
    return {a["name"]: a["miou_mean"] for a in report["arms"]}


def save_report(report: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)


def gradcheck_case(seed: int, with_depth: bool = False):
    """A small random (model, samples) pair for finite-difference checks.

    Weights, including the attention value map and biases, are drawn at a
    scale where sigmoids are far from saturation so both gradient sides stay
    well above round-off.
    """
    rng = np.random.default_rng(seed)
    n_classes = int(rng.integers(2, 6))
    names = class_names(n_classes)
    vocab = build_vocabulary(default_base_tokens(SYLLABLES))
    cat_map = CategoryTokenMap.from_names(names, vocab)
    mode = ("linear", "attn1")[seed % 2]
    rank = int(rng.choice([0, 3]))
    model = TinyModel.init(mode, n_classes + 1, vocab.size, seed=seed, rank=rank)
    for p in model.params.values():
        p[...] = 0.3 * rng.standard_normal(p.shape)
    scene = generate_scene(int(rng.integers(2**31)), 8, 8, n_classes, 2, 0.5, patch=4)
    return model, [prepare(scene, 4, cat_map, vocab, with_depth=with_depth)]
