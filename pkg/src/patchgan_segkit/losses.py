"""Tversky-family segmentation losses and the adversarial objectives.

The generator is trained on a focal Tversky loss (optionally combined with
an adversarial term), the discriminator on patch-wise binary cross-entropy.
All functions accept torch tensors and return differentiable scalar tensors.

Confusion sums use the standard soft relaxation: with prediction p in [0,1]
and binary truth g,

    tp = sum(p * g)      fn = sum((1 - p) * g)      fp = sum(p * (1 - g))

summed over the flattened batch by default, or per sample and then averaged
when ``per_sample=True``.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ShapeError

# Floor applied to the Tversky loss before the focal exponent: pow(x, gamma)
# with gamma < 1 has an infinite derivative at x = 0, which would poison
# gradients once a batch is fit perfectly.
_TL_FLOOR = 1e-12


@dataclass
class TverskyParams:
    """Weights of the segmentation objective.

    alpha weighs false negatives, beta false positives, gamma is the focal
    exponent, epsilon the smoothing term added to numerator and denominator.
    lambda_adv and lambda_seg weigh the adversarial and segmentation
    components of the full generator objective.
    """

    alpha: float = 0.7
    beta: float = 0.3
    gamma: float = 0.75
    epsilon: float = 1e-6
    lambda_adv: float = 1.0
    lambda_seg: float = 1.0

    def validate(self) -> None:
        from .errors import ConfigurationError

        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta == 0:
            raise ConfigurationError(
                f"alpha and beta must be >= 0 with alpha + beta > 0, got "
                f"alpha={self.alpha}, beta={self.beta}"
            )
        if self.gamma <= 0:
            raise ConfigurationError(f"gamma must be > 0, got {self.gamma}")
        if self.epsilon <= 0:
            raise ConfigurationError(f"epsilon must be > 0, got {self.epsilon}")
        if self.lambda_adv < 0 or self.lambda_seg < 0:
            raise ConfigurationError(
                f"lambda_adv and lambda_seg must be >= 0, got "
                f"lambda_adv={self.lambda_adv}, lambda_seg={self.lambda_seg}"
            )


@dataclass
class ConfusionSums:
    """Soft confusion sums of a prediction against a binary truth mask."""

    tp: float
    fn: float
    fp: float


def _check_pair(pred: torch.Tensor, truth: torch.Tensor) -> None:
    if pred.shape != truth.shape:
        raise ShapeError(
            f"pred and truth must have the same shape, got {tuple(pred.shape)} "
            f"vs {tuple(truth.shape)}"
        )
    if pred.numel() == 0:
        raise ShapeError("pred and truth must be non-empty")
    with torch.no_grad():
        if float(pred.min()) < 0.0 or float(pred.max()) > 1.0:
            raise ValueError("pred values must lie in [0, 1]")
        if not bool(((truth == 0) | (truth == 1)).all()):
            raise ValueError("truth values must be binary (0 or 1)")


def _soft_confusion(
    pred: torch.Tensor, truth: torch.Tensor, per_sample: bool
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    truth = truth.to(pred.dtype)
    if per_sample:
        p = pred.reshape(pred.shape[0], -1)
        g = truth.reshape(truth.shape[0], -1)
        dim = 1
    else:
        p = pred.reshape(-1)
        g = truth.reshape(-1)
        dim = 0
    tp = (p * g).sum(dim=dim)
    fn = ((1.0 - p) * g).sum(dim=dim)
    fp = (p * (1.0 - g)).sum(dim=dim)
    return tp, fn, fp


def confusion_sums(pred: torch.Tensor, truth: torch.Tensor) -> ConfusionSums:
    """Soft tp/fn/fp over the flattened pair, as plain floats."""
    _check_pair(pred, truth)
    tp, fn, fp = _soft_confusion(pred, truth, per_sample=False)
    return ConfusionSums(tp=float(tp), fn=float(fn), fp=float(fp))


def tversky_index_from_sums(
    tp: torch.Tensor | float,
    fn: torch.Tensor | float,
    fp: torch.Tensor | float,
    params: TverskyParams,
) -> torch.Tensor | float:
    """(tp + eps) / (tp + alpha*fn + beta*fp + eps)."""
    return (tp + params.epsilon) / (
        tp + params.alpha * fn + params.beta * fp + params.epsilon
    )


def tversky_index(
    pred: torch.Tensor,
    truth: torch.Tensor,
    params: TverskyParams,
    per_sample: bool = False,
) -> torch.Tensor:
    """Smoothed Tversky index of a soft prediction against a binary mask.

    Computed over the flattened batch; with ``per_sample=True`` the index is
    computed per sample and averaged. Returns a scalar tensor in (0, 1].
    """
    _check_pair(pred, truth)
    tp, fn, fp = _soft_confusion(pred, truth, per_sample)
    ti = tversky_index_from_sums(tp, fn, fp, params)
    return ti.mean() if per_sample else ti


def focal_tversky_loss(
    pred: torch.Tensor,
    truth: torch.Tensor,
    params: TverskyParams,
    per_sample: bool = False,
) -> torch.Tensor:
    """(1 - tversky_index)**gamma, a scalar tensor in [0, 1)."""
    _check_pair(pred, truth)
    tp, fn, fp = _soft_confusion(pred, truth, per_sample)
    tl = 1.0 - tversky_index_from_sums(tp, fn, fp, params)
    ftl = tl.clamp_min(_TL_FLOOR) ** params.gamma
    return ftl.mean() if per_sample else ftl


def _bce_prob(probs: torch.Tensor, target: float) -> torch.Tensor:
    return F.binary_cross_entropy(probs, torch.full_like(probs, target))


def _bce_logits(logits: torch.Tensor, target: float) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(
        logits, torch.full_like(logits, target)
    )


def discriminator_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """Mean of the real-vs-1 and fake-vs-0 BCE over all patch units.

    Takes probability maps in (0, 1). Training code should prefer
    :func:`discriminator_loss_logits`, which stays finite for saturated
    discriminator outputs.
    """
    if d_real.shape != d_fake.shape:
        raise ShapeError(
            f"d_real and d_fake must have the same shape, got "
            f"{tuple(d_real.shape)} vs {tuple(d_fake.shape)}"
        )
    return 0.5 * (_bce_prob(d_real, 1.0) + _bce_prob(d_fake, 0.0))


def discriminator_loss_logits(
    real_logits: torch.Tensor, fake_logits: torch.Tensor
) -> torch.Tensor:
    """Logit-form discriminator loss; finite even when sigmoid saturates."""
    if real_logits.shape != fake_logits.shape:
        raise ShapeError(
            f"real and fake logits must have the same shape, got "
            f"{tuple(real_logits.shape)} vs {tuple(fake_logits.shape)}"
        )
    return 0.5 * (_bce_logits(real_logits, 1.0) + _bce_logits(fake_logits, 0.0))


def generator_loss(
    pred: torch.Tensor,
    truth: torch.Tensor,
    d_fake: torch.Tensor,
    params: TverskyParams,
    per_sample: bool = False,
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Combined generator objective on probability-space discriminator output.

    Returns ``(total, components)`` where total is
    ``lambda_adv * BCE(d_fake, 1) + lambda_seg * FTL(pred, truth)`` and
    components holds the unweighted "adv" and "seg" terms.
    """
    adv = _bce_prob(d_fake, 1.0)
    seg = focal_tversky_loss(pred, truth, params, per_sample)
    total = params.lambda_adv * adv + params.lambda_seg * seg
    return total, {"adv": adv, "seg": seg}


def generator_loss_logits(
    pred: torch.Tensor,
    truth: torch.Tensor,
    d_fake_logits: torch.Tensor,
    params: TverskyParams,
    per_sample: bool = False,
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Same as :func:`generator_loss` with the adversarial term in logit form."""
    adv = _bce_logits(d_fake_logits, 1.0)
    seg = focal_tversky_loss(pred, truth, params, per_sample)
    total = params.lambda_adv * adv + params.lambda_seg * seg
    return total, {"adv": adv, "seg": seg}
