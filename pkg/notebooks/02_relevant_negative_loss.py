"""
The multi-label loss with relevant negatives
============================================

Positives are averaged on their own; only the k most confident wrong IDs
are kept as negatives and averaged separately. With thousands of IDs that
are never positive, a plain BCE mean is dominated by easy negatives.
"""

# %%
import numpy as np

from dense_ntp import LogitsGrid, compute_loss
from dense_ntp.loss import bernoulli_nll, select_relevant_negatives
from dense_ntp.targets import TargetSet

V = 2000  # a large vocabulary, mostly irrelevant
rng = np.random.default_rng(0)
z = rng.normal(-4, 1, size=(1, V))
z[0, :5] = [1.0, -0.5, 0.8, 0.3, 2.0]  # IDs 0,1 are positives, 2..4 are confusable

positives = np.zeros((1, V), bool)
positives[0, [0, 1]] = True
targets = TargetSet(1, 1, positives, np.ones((1, V), bool), np.array([0]))
logits = LogitsGrid(1, 1, z)

# %% Which negatives are relevant?
print("top-3 negatives:", select_relevant_negatives(logits, targets, 3)[0])

# %% Compare the losses and where their gradient mass goes
for kind in ["raw_bce", "balanced_bce", "focal", "indiv_mean", "ntpm"]:
    rep = compute_loss(kind, logits, targets, k=3)
    g = np.abs(rep.grad[0])
    share = g[:5].sum() / g.sum()
    print(f"{kind:13} value {rep.value:8.4f}   gradient share on the 5 hard IDs {share:6.1%}")

print("joint Bernoulli NLL:", bernoulli_nll(logits, targets))
