"""
Metrics
=======

mIoU from a confusion matrix, cumulative IoU over a split, the delta-1 depth
accuracy and the label-set IoU used as a reward.
"""

# %%
import numpy as np

from dense_ntp.metrics import ConfusionMatrix, binary_counts, ciou, delta_threshold, label_set_iou, miou

cm = ConfusionMatrix(2).update(np.array([0, 0, 1, 1]), np.array([0, 1, 1, 1]))
print("mIoU:", miou(cm), " per class:", cm.per_class_iou())

# %% cIoU is total intersection over total union, not a mean of ratios
pairs = [binary_counts([1, 0], [1, 1]), binary_counts([1, 1, 1], [1, 1, 1])]
print("cIoU:", ciou(*zip(*pairs)))

# %%
gt = np.linspace(1, 5, 8)
print("delta1, perfect:", delta_threshold(gt, gt), " 30% too far:", delta_threshold(1.3 * gt, gt))
print("label-set IoU:", label_set_iou({"sky", "road"}, {"road", "car", "tree"}))
