"""
Training on synthetic scenes
============================

Scenes of shapes over a background are pooled into token features. A tiny
linear model with a low-rank head predicts logits over a vocabulary that
also holds hundreds of filler words. Each loss is trained for the same
step budget and scored by pixel mIoU on held-out scenes.

The full presets (``dense-ntp bench --preset table4-mini --seeds 5``) take a
few minutes; this script runs a reduced version.
"""

# %%
from dataclasses import replace

from dense_ntp.synthlab import LabConfig, gradcheck, lab_vocabulary, run_experiment
from dense_ntp.synthlab.experiments import gradcheck_case

cfg = LabConfig()
vocab, cat_map = lab_vocabulary(cfg)
print(f"{len(cat_map)} classes, vocabulary of {vocab.size} IDs")
print("first class names:", cat_map.category_names[:5])

# %% Gradients are verified against central differences
model, samples = gradcheck_case(0)
print("gradcheck:", gradcheck(model, samples, "ntpm", trials=50).max_rel_error)

# %% A quick table-3 style comparison on two seeds with fewer steps
quick = replace(cfg, steps=150, n_train=16)
report = run_experiment("table3-mini", seeds=(0, 1), base=quick)
for arm in report["arms"]:
    print(f"{arm['name']:11} mIoU {arm['miou_mean']:.1f} +- {arm['miou_std']:.1f}")
