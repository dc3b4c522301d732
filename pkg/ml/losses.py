"""
================================================================================
TRAINING OBJECTIVES
================================================================================

Purpose: Adversarial, classification, diversity and combined losses.

All functions take and return torch tensors so they can sit inside the
training graph; they are pure and keep no state.

- adversarial_losses: two-sided discriminator loss plus the non-saturating
  generator loss. adversarial_fake_term is the literal fake-sample term
  mean(log(1 - D(G(z)))) for the saturating variant.
- classification_loss: KL(target || predicted) over the classifier
  vocabulary, or plain cross-entropy.
- diversity_penalty: negated ratio of output spread to noise spread over
  same-class pairs; minimizing it pushes different noise to different images.
================================================================================
"""

from dataclasses import dataclass

import torch

from utils.errors import (
    BatchTooSmallError,
    LengthMismatchError,
    NotADistributionError,
    ScoreOutOfRangeError,
)

SCORE_EPS = 1e-7
PROBABILITY_FLOOR = 1e-12
DISTRIBUTION_TOLERANCE = 1e-6
CLASSIFICATION_MODES = ("kl", "cross_entropy")


@dataclass(frozen=True)
class LossWeights:
    """alpha (adversarial), beta (classification), gamma_div (diversity)."""

    alpha: float = 1.0
    beta: float = 2.5
    gamma_div: float = 3.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma_div) < 0:
            raise ValueError(f"Loss weights must be >= 0, got {self}")


# =============================================================================
# ADVERSARIAL
# =============================================================================

def _clamped_scores(scores, eps):
    scores = torch.as_tensor(scores)
    if not torch.isfinite(scores).all():
        raise ScoreOutOfRangeError("Discriminator scores contain NaN or infinite values")
    return scores.clamp(eps, 1.0 - eps)


def adversarial_losses(real_scores, fake_scores, eps=SCORE_EPS):
    """Discriminator and generator losses from probability scores.

    loss_d = -mean(log real + log(1 - fake)); loss_g = -mean(log fake).
    Scores are clamped to [eps, 1 - eps] first.

    Args:
        real_scores (Tensor): D(x) for real images, shape (n,).
        fake_scores (Tensor): D(G(z)) for generated images, shape (n,).

    Returns:
        tuple: (loss_d, loss_g) scalar tensors.

    Raises:
        ScoreOutOfRangeError: If any score is NaN or infinite.
    """
    real = _clamped_scores(real_scores, eps)
    fake = _clamped_scores(fake_scores, eps)
    loss_d = -(torch.log(real).mean() + torch.log1p(-fake).mean())
    loss_g = -torch.log(fake).mean()
    return loss_d, loss_g


def adversarial_fake_term(fake_scores, eps=SCORE_EPS):
    """mean(log(1 - D(G(z)))); the generator minimizes it in the saturating form."""
    return torch.log1p(-_clamped_scores(fake_scores, eps)).mean()


# =============================================================================
# CLASSIFICATION
# =============================================================================

def _check_distribution(p, name):
    if (p < 0).any():
        raise NotADistributionError(f"{name} has negative entries")
    sums = p.sum(dim=-1)
    if ((sums - 1.0).abs() > DISTRIBUTION_TOLERANCE).any():
        raise NotADistributionError(f"{name} does not sum to 1 (sums {sums.detach().tolist()})")


def classification_loss(predicted, target, mode="kl", validate=True):
    """KL(target || predicted), or cross-entropy, averaged over rows.

    KL is sum_v t(v) * log(t(v) / p(v)) with 0 * log(0 / p) = 0 and p clamped
    at 1e-12. Accepts a single vector or an (n, V) batch.

    Raises:
        LengthMismatchError: If the last dimensions differ.
        NotADistributionError: If validate and either input is not a
            distribution within 1e-6.
    """
    if mode not in CLASSIFICATION_MODES:
        raise ValueError(f"mode must be one of {CLASSIFICATION_MODES}, got '{mode}'")
    predicted = torch.as_tensor(predicted)
    target = torch.as_tensor(target, dtype=predicted.dtype)
    if predicted.shape != target.shape:
        raise LengthMismatchError(
            f"Predicted shape {tuple(predicted.shape)} differs from target shape {tuple(target.shape)}"
        )
    if validate:
        _check_distribution(predicted.detach(), "predicted")
        _check_distribution(target.detach(), "target")

    log_p = torch.log(predicted.clamp_min(PROBABILITY_FLOOR))
    if mode == "cross_entropy":
        per_row = -(target * log_p).sum(dim=-1)
    else:
        positive = target > 0
        log_t = torch.log(torch.where(positive, target, torch.ones_like(target)))
        per_row = torch.where(positive, target * (log_t - log_p), torch.zeros_like(target)).sum(dim=-1)
    return per_row.mean()


# =============================================================================
# DIVERSITY
# =============================================================================

def diversity_penalty(images, noisy_styles, labels):
    """-(mean same-class L1 image distance) / (mean same-class L2 noise distance).

    Args:
        images (Tensor): Generated batch, (n, 1, H, W) or (n, H, W).
        noisy_styles (Tensor): Style vectors with noise added, (n, d_s).
        labels (sequence): Content class of each image.

    Returns:
        Tensor: Scalar; 0 when no two samples share a class.

    Raises:
        BatchTooSmallError: If n < 2.

    Note:
        Image distance is the per-pixel mean absolute difference, so two
        images differing by 1.0 in one pixel are 1 / (H * W) apart.
    """
    n = images.shape[0]
    if n < 2:
        raise BatchTooSmallError(f"Diversity penalty needs at least 2 samples, got {n}")
    labels = list(labels)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if labels[i] == labels[j]]
    if not pairs:
        return images.new_zeros(())
    first = torch.tensor([i for i, _ in pairs])
    second = torch.tensor([j for _, j in pairs])
    flat = images.reshape(n, -1)
    image_distance = (flat[first] - flat[second]).abs().mean(dim=1).mean()
    noise_distance = (noisy_styles[first] - noisy_styles[second]).norm(dim=1).mean()
    return -image_distance / noise_distance.clamp_min(1e-8)


# =============================================================================
# COMBINED
# =============================================================================

def total_loss(weights, loss_d_term, loss_c, loss_div):
    """alpha * adversarial term + beta * classification + gamma_div * diversity."""
    return weights.alpha * loss_d_term + weights.beta * loss_c + weights.gamma_div * loss_div
