"""Adversarial objectives.

Both losses use binary cross-entropy on discriminator logits, averaged over
every patch of the logits grid and over the batch.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from demgan.errors import AlignmentError


def _bce(logits: torch.Tensor, label: float) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(logits, torch.full_like(logits, label))


def generator_loss(d_fake_logits, dem_pred, dem_target, lambda_l1: float = 100.0):
    """Returns ``(total, gan_term, l1_term)`` with ``total = gan + lambda * l1``."""
    if dem_pred.shape != dem_target.shape:
        raise AlignmentError(f"prediction {tuple(dem_pred.shape)} vs target {tuple(dem_target.shape)}")
    gan = _bce(d_fake_logits, 1.0)
    l1 = (dem_pred - dem_target).abs().mean()
    return gan + lambda_l1 * l1, gan, l1


def discriminator_loss(d_real_logits, d_fake_logits):
    """Returns ``(total, real_term, fake_term)``."""
    real = _bce(d_real_logits, 1.0)
    fake = _bce(d_fake_logits, 0.0)
    return real + fake, real, fake
