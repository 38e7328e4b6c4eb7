"""
From token logits to pixels
===========================

Average each category's sub-token logits, upsample the category maps
bilinearly and take the argmax. Depth uses the bin tokens directly.
"""

# %%
import numpy as np

from dense_ntp import CategoryTokenMap, LogitsGrid, build_vocabulary, default_base_tokens
from dense_ntp.decode import CropSpec, aggregate_category_logits, crop_with_padding, decode_depth
from dense_ntp.decode import decode_semantic, paste_back, pca_rgb, soft_map

vocab = build_vocabulary(default_base_tokens(["sky", "road"]))
cat_map = CategoryTokenMap.from_names(["sky", "road"], vocab)

z = np.zeros((2, vocab.size))
z[0, vocab.id("sky")] = 2.0
z[1, vocab.id("road")] = 2.0
cl = aggregate_category_logits(LogitsGrid(2, 1, z), cat_map)

# %% Hard decode at 8x2; the middle column blends the two tokens
print(decode_semantic(cl, 8, 2).values)
# with a constant background channel, weak pixels become "ignore" (255)
print(decode_semantic(cl, 8, 2, background=(0.25, 0.6)).values)
# soft probabilities at temperature 0.2, e.g. for an external CRF
print(np.round(soft_map(cl, 8, 1, 0.2)[0, 0], 3))

# %% Depth: argmax over the bin tokens after a 2x pre-upsample
zd = np.zeros((4, vocab.size))
zd[[0, 1], vocab.custom_id(120)] = 3.0
zd[[2, 3], vocab.custom_id(800)] = 3.0
print(decode_depth(LogitsGrid(2, 2, zd), vocab, 4, 4).values)

# %% Referring crop: pad the box by 1.2, resize the short edge to 1280
crop = crop_with_padding(1000, 800, CropSpec((100, 100, 300, 200)))
print("crop rect", crop.rect, "resized to", (crop.resize_w, crop.resize_h))
from dense_ntp import DenseMap

fg = DenseMap(np.ones((crop.resize_h, crop.resize_w), int))
canvas = paste_back(fg, crop.mapping, 1000, 800)
print("foreground pixels on the canvas:", canvas.values.sum())

# %% PCA false colors of token features
feats = np.random.default_rng(0).standard_normal((16, 8))
res = pca_rgb(feats, 4, 4)
print("explained variances:", np.round(res.variances, 3))
