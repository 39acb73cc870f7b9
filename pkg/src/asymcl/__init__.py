"""Asymmetric (focal) contrastive losses for class-imbalanced binary classification."""
from .errors import (DivergenceUndefinedError, DomainError, IdxFormatError, MetricUndefinedError,
                     ValidationError)
from .losses import (FeatureBatch, LossParams, acl, afcl, asl_multilabel, ce_loss,
                     contrastive_loss, focal_contrastive_loss, focal_loss, pairwise_probs)

__version__ = "0.1.0"

__all__ = [
    "DivergenceUndefinedError", "DomainError", "IdxFormatError", "MetricUndefinedError",
    "ValidationError", "FeatureBatch", "LossParams", "acl", "afcl", "asl_multilabel", "ce_loss",
    "contrastive_loss", "focal_contrastive_loss", "focal_loss", "pairwise_probs",
]
