"""
Vocabulary, category tokens and per-token targets
=================================================

A category name becomes a *set* of vocabulary IDs, and every vision token
gets a multi-hot target: the union of the ID sets of all classes that touch
its patch.
"""

# %%
import numpy as np

from dense_ntp import CategoryTokenMap, DenseMap, build_vocabulary, default_base_tokens
from dense_ntp import build_depth_targets, build_multihot_targets, merge_targets, tokenize_category

vocab = build_vocabulary(default_base_tokens(["traffic", "light", "sky", "road"]))
print("vocabulary size:", vocab.size)
print("<FG> id:", vocab.fg_id, " <custom_0> id:", vocab.custom_id(0))

# %% Greedy longest match, with single characters as the fallback
for name in ["sky", "Traffic Light", "skyroad", "zebra"]:
    ids = sorted(tokenize_category(name, vocab))
    print(f"{name!r:16} -> {[vocab.token(i) for i in ids]}")

# %% A 4x4 label map cut into 2x2 patches
names = ["sky", "road", "traffic light"]
cat_map = CategoryTokenMap.from_names(names, vocab)
labels = np.array(
    [
        [0, 0, 0, 1],
        [0, 0, 1, 1],
        [2, 2, 1, 1],
        [2, 255, 1, 1],
    ]
)
targets = build_multihot_targets(DenseMap(labels), 2, cat_map)
for i in range(targets.n_tokens):
    pos = [vocab.token(v) for v in targets.positive_ids(i)]
    maj = vocab.token(targets.majority[i])
    print(f"token {i}: positives {pos}, majority {maj!r}")

# %% Depth bins add a second task on the same tokens
bins = DenseMap.depth(np.array([[500, 500, 0, 0], [499, 500, 0, 0], [10, 10, 7, 7], [10, 10, 7, 8]]))
both = merge_targets(targets, build_depth_targets(bins, 2, vocab))
print("positives per token after merging:", both.positives.sum(axis=1))
