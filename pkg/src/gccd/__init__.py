"""Generalized continual category discovery on feature data.

A small numpy engine for sequential, partially labeled category discovery:
contrastive representation learning with projected knowledge distillation,
semi-supervised k-means clustering, and trainable centroid drift adaptation,
plus the metrics used to compare methods across a task sequence.
"""

from .nn import MLPSpec, OptState, adamw_step, backward, cosine_lr, grad_check, l2_normalize, mlp_forward
from .losses import LossConfig, PrototypeBank, ViewPair

__version__ = "0.1.0"
