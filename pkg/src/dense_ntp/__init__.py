"""Multi-label next-token supervision for dense vision tokens.

Vocabulary and category tokenization, per-token multi-hot targets, the
top-k relevant-negative loss with its baselines, logit decoding, depth
quantization, a tag/RLE message codec and dense-prediction metrics.
"""

from .codec import TagMessage, emit_message, parse_message, rle_decode, rle_encode
from .decode import aggregate_category_logits, decode_depth, decode_semantic, pca_rgb
from .densemap import DenseMap, load_densemap, save_densemap
from .depthq import DepthQuantizer, preset
from .errors import DenseNTPError, GridMismatch, NoValidPixels
from .loss import LOSS_KINDS, LogitsGrid, LossReport, baseline_loss, compute_loss, ntpm_loss
from .metrics import ConfusionMatrix, ciou, delta_threshold, label_set_iou, miou
from .targets import TargetSet, build_depth_targets, build_multihot_targets, merge_targets
from .vocab import CategoryTokenMap, Vocabulary, build_vocabulary, default_base_tokens, tokenize_category

__version__ = "0.1.0"
