"""Two-layer attachable transformer head.

Layer 1 recomputes causal attention over [image; text] tokens and its
text-to-image slice is aggregated into the grounding map. Layer 2 enhances
semantics; the final text row of its output is the start-of-answer feature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .numerics import causal_mask, softmax_masked

INIT_STD = 0.02


@dataclass
class HeadInput:
    f_i: torch.Tensor        # (L_i, d) image features
    f_t: torch.Tensor        # (L_t, d) text features, appended after image
    grid: tuple[int, int]    # (h, w), h*w == L_i

    def __post_init__(self):
        h, w = self.grid
        if self.f_i.shape[0] != h * w:
            raise ValueError(f"L_i={self.f_i.shape[0]} does not match grid {h}x{w}")
        if self.f_t.shape[0] < 1:
            raise ValueError("need at least one text token")
        if self.f_i.shape[1] != self.f_t.shape[1]:
            raise ValueError("image/text feature dims differ")


@dataclass
class HeadOutput:
    a_c1: torch.Tensor       # (h, w) grounding map in [0, 1]
    h_out2: torch.Tensor     # (L, d) enhanced features
    f_s2: torch.Tensor       # (d,) start-of-answer feature == h_out2[-1]


class HeadLayer(nn.Module):
    """Pre-norm block: norm -> causal MHA -> residual; norm -> GELU FF -> residual.

    Attention projections are bias-free d x d matrices; the feed-forward is
    d -> 4d -> d with biases. Returns head-averaged attention alongside the
    residual-stream output.
    """

    def __init__(self, d: int, head_count: int):
        super().__init__()
        if d % head_count != 0:
            raise ValueError("d must be divisible by head_count")
        self.d = d
        self.head_count = head_count
        self.d_head = d // head_count
        kw = dict(dtype=torch.float64)
        self.w_q = nn.Linear(d, d, bias=False, **kw)
        self.w_k = nn.Linear(d, d, bias=False, **kw)
        self.w_v = nn.Linear(d, d, bias=False, **kw)
        self.w_o = nn.Linear(d, d, bias=False, **kw)
        self.norm_attn = nn.LayerNorm(d, **kw)
        self.norm_ff = nn.LayerNorm(d, **kw)
        self.ff_up = nn.Linear(d, 4 * d, **kw)
        self.ff_down = nn.Linear(4 * d, d, **kw)

    def reset_parameters(self, generator: torch.Generator | None = None):
        for lin in (self.w_q, self.w_k, self.w_v, self.w_o, self.ff_up, self.ff_down):
            nn.init.normal_(lin.weight, std=INIT_STD, generator=generator)
            if lin.bias is not None:
                nn.init.zeros_(lin.bias)
        for norm in (self.norm_attn, self.norm_ff):
            nn.init.ones_(norm.weight)
            nn.init.zeros_(norm.bias)

    def forward(self, h_in: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if h_in.ndim != 2 or h_in.shape[1] != self.d:
            raise ValueError(f"expected (L, {self.d}) input, got {tuple(h_in.shape)}")
        n = h_in.shape[0]
        x = self.norm_attn(h_in)
        q = self.w_q(x).view(n, self.head_count, self.d_head).transpose(0, 1)
        k = self.w_k(x).view(n, self.head_count, self.d_head).transpose(0, 1)
        v = self.w_v(x).view(n, self.head_count, self.d_head).transpose(0, 1)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        attn = softmax_masked(scores, causal_mask(n))          # (heads, n, n)
        ctx = (attn @ v).transpose(0, 1).reshape(n, self.d)
        h = h_in + self.w_o(ctx)
        h = h + self.ff_down(torch.nn.functional.gelu(self.ff_up(self.norm_ff(h))))
        return attn.mean(dim=0), h


def aggregate_text_to_image(a_avg: torch.Tensor, l_i: int, l_t: int,
                            grid: tuple[int, int]) -> torch.Tensor:
    """Mean of the text rows' image columns, reshaped to the (h, w) grid."""
    n = l_i + l_t
    if a_avg.shape != (n, n):
        raise ValueError(f"attention shape {tuple(a_avg.shape)} != ({n}, {n})")
    h, w = grid
    if h * w != l_i:
        raise ValueError("grid does not match image token count")
    return a_avg[l_i:l_i + l_t, :l_i].mean(dim=0).reshape(h, w)


class SegHead(nn.Module):
    def __init__(self, d: int, head_count: int):
        super().__init__()
        self.layer1 = HeadLayer(d, head_count)
        self.layer2 = HeadLayer(d, head_count)

    def reset_parameters(self, generator: torch.Generator | None = None):
        self.layer1.reset_parameters(generator)
        self.layer2.reset_parameters(generator)

    def layer_forward(self, layer_index: int, h_in: torch.Tensor):
        if layer_index not in (1, 2):
            raise ValueError("layer_index must be 1 or 2")
        layer = self.layer1 if layer_index == 1 else self.layer2
        return layer(h_in)

    def forward(self, inp: HeadInput) -> HeadOutput:
        l_i = inp.f_i.shape[0]
        l_t = inp.f_t.shape[0]
        h_in = torch.cat([inp.f_i, inp.f_t], dim=0)
        a_avg, h_out1 = self.layer1(h_in)
        a_c1 = aggregate_text_to_image(a_avg, l_i, l_t, inp.grid)
        _, h_out2 = self.layer2(h_out1)
        return HeadOutput(a_c1=a_c1, h_out2=h_out2, f_s2=h_out2[-1])
