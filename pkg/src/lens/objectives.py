"""Composite training objective (attention BCE + weighted Dice/BCE mask loss)
and the gIoU / cIoU evaluation metrics."""

from __future__ import annotations

import numpy as np
import torch

from .config import LossWeights


def _check_shapes(pred: torch.Tensor, target: torch.Tensor):
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")


def attention_loss(a_c1: torch.Tensor, m_small: torch.Tensor, eps: float = 1e-7) -> torch.Tensor:
    """Mean binary cross-entropy between the grounding map and the
    heatmap-resolution ground truth; probabilities clamped to [eps, 1-eps]."""
    _check_shapes(a_c1, m_small)
    a = a_c1.clamp(eps, 1.0 - eps)
    return -(m_small * a.log() + (1.0 - m_small) * (1.0 - a).log()).mean()


def bce_mask_loss(p_hat: torch.Tensor, m: torch.Tensor, eps: float = 1e-7) -> torch.Tensor:
    return attention_loss(p_hat, m, eps)


def dice_loss(p_hat: torch.Tensor, m: torch.Tensor, smooth: float = 1.0) -> torch.Tensor:
    """Soft Dice: 1 - (2*sum(p*m) + s) / (sum(p) + sum(m) + s)."""
    _check_shapes(p_hat, m)
    inter = (p_hat * m).sum()
    return 1.0 - (2.0 * inter + smooth) / (p_hat.sum() + m.sum() + smooth)


def seg_loss(p_hat: torch.Tensor, m: torch.Tensor,
             weights: LossWeights) -> torch.Tensor:
    return (weights.lambda_dice * dice_loss(p_hat, m, weights.dice_smooth)
            + weights.lambda_bce * bce_mask_loss(p_hat, m, weights.clamp_eps))


def total_loss(p_hat: torch.Tensor, m: torch.Tensor, a_c1: torch.Tensor,
               m_small: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    """Unweighted sum of the segmentation and attention losses."""
    return seg_loss(p_hat, m, weights) + attention_loss(a_c1, m_small, weights.clamp_eps)


def _binarize(mask) -> np.ndarray:
    arr = mask.detach().cpu().numpy() if isinstance(mask, torch.Tensor) else np.asarray(mask)
    return arr >= 0.5


def _intersection_union(pred, gt) -> tuple[int, int]:
    p = _binarize(pred)
    g = _binarize(gt)
    if p.shape != g.shape:
        raise ValueError("prediction/ground-truth shape mismatch")
    return int(np.logical_and(p, g).sum()), int(np.logical_or(p, g).sum())


def giou(samples: list[tuple]) -> float:
    """Mean per-sample IoU. A sample with empty union scores 1 when both masks
    are empty (vacuously perfect), else 0."""
    if not samples:
        raise ValueError("empty sample list")
    ious = []
    for pred, gt in samples:
        inter, union = _intersection_union(pred, gt)
        ious.append(inter / union if union > 0 else 1.0)
    return float(np.mean(ious))


def ciou(samples: list[tuple]) -> float:
    """Dataset-level IoU: summed intersections over summed unions."""
    if not samples:
        raise ValueError("empty sample list")
    inters, unions = 0, 0
    for pred, gt in samples:
        inter, union = _intersection_union(pred, gt)
        inters += inter
        unions += union
    return float(inters / unions) if unions > 0 else 1.0
