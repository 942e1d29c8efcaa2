"""Minimal dense-tensor kernels shared by all pipeline stages.

Everything operates on float64 torch tensors and is a pure function of its
inputs; gradients flow through all operations.
"""

from __future__ import annotations

import torch

# Additive-mask sentinel standing in for -inf. Large enough that exp underflows
# to exactly 0 after the max-shift inside softmax, small enough not to overflow.
MASK_SENTINEL = -1e30


def softmax_masked(logits: torch.Tensor, additive_mask: torch.Tensor) -> torch.Tensor:
    """Row softmax over the last dim with an additive {0, -inf} mask.

    Masked positions come out exactly 0; each row with at least one unmasked
    entry sums to 1. A fully masked row raises.
    """
    if logits.shape != additive_mask.shape and additive_mask.shape != logits.shape[-2:]:
        raise ValueError(f"mask shape {tuple(additive_mask.shape)} does not match logits {tuple(logits.shape)}")
    blocked = additive_mask <= MASK_SENTINEL / 2
    if bool(blocked.all(dim=-1).any()):
        raise ValueError("degenerate attention row")
    probs = torch.softmax(logits + additive_mask, dim=-1)
    # hard-zero the masked outputs; with the sentinel they already underflow to 0
    return torch.where(blocked.expand_as(probs), torch.zeros((), dtype=probs.dtype), probs)


def causal_mask(n: int, dtype: torch.dtype = torch.float64) -> torch.Tensor:
    """Additive causal mask: 0 on/below the diagonal, sentinel above."""
    mask = torch.full((n, n), MASK_SENTINEL, dtype=dtype)
    return torch.triu(mask, diagonal=1)


def bilinear_sample(field: torch.Tensor, points: torch.Tensor) -> torch.Tensor:
    """Sample an (H, W, C) field at continuous (x, y) heatmap coordinates.

    Align-corners convention: integer coordinates hit stored grid values
    exactly. Out-of-range coordinates are clamped to the border first, so no
    input is an error. Returns (N, C); differentiable w.r.t. `field`.
    """
    if field.ndim != 3:
        raise ValueError("field must be (H, W, C)")
    h, w, _ = field.shape
    if h < 2 or w < 2:
        raise ValueError("field spatial dims must be >= 2")
    pts = torch.as_tensor(points, dtype=field.dtype)
    if pts.ndim == 1:
        pts = pts.unsqueeze(0)
    x = pts[:, 0].clamp(0.0, w - 1.0)
    y = pts[:, 1].clamp(0.0, h - 1.0)
    x0 = x.floor().clamp(max=w - 2).long()
    y0 = y.floor().clamp(max=h - 2).long()
    fx = (x - x0).unsqueeze(1)
    fy = (y - y0).unsqueeze(1)
    v00 = field[y0, x0]
    v01 = field[y0, x0 + 1]
    v10 = field[y0 + 1, x0]
    v11 = field[y0 + 1, x0 + 1]
    top = v00 * (1 - fx) + v01 * fx
    bot = v10 * (1 - fx) + v11 * fx
    return top * (1 - fy) + bot * fy


def minmax_normalize(m: torch.Tensor) -> torch.Tensor:
    """Affine rescale to [0, 1]; a constant map collapses to all zeros."""
    lo = m.min()
    hi = m.max()
    span = hi - lo
    if span == 0:
        return torch.zeros_like(m)
    return (m - lo) / span
