"""Descriptor model: per-keypoint cross-attention queried by the
start-of-answer feature, then joint self-attention refinement with a global
descriptor and projection to the decoder dimension.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .seg_head import INIT_STD


class DescriptorModel(nn.Module):
    """Cross-attention is single-head (one query per keypoint); the
    self-attention refinement is a pre-norm multi-head block mirroring the
    head layers. The final projection maps every row to d_s.
    """

    def __init__(self, d: int, d_s: int, head_count: int):
        super().__init__()
        if d % head_count != 0:
            raise ValueError("d must be divisible by head_count")
        self.d = d
        self.d_s = d_s
        self.head_count = head_count
        self.d_head = d // head_count
        kw = dict(dtype=torch.float64)
        # cross-attention (single head)
        self.cross_q = nn.Linear(d, d, bias=False, **kw)
        self.cross_k = nn.Linear(d, d, bias=False, **kw)
        self.cross_v = nn.Linear(d, d, bias=False, **kw)
        self.cross_o = nn.Linear(d, d, bias=False, **kw)
        # self-attention block
        self.self_q = nn.Linear(d, d, bias=False, **kw)
        self.self_k = nn.Linear(d, d, bias=False, **kw)
        self.self_v = nn.Linear(d, d, bias=False, **kw)
        self.self_o = nn.Linear(d, d, bias=False, **kw)
        self.norm_attn = nn.LayerNorm(d, **kw)
        self.norm_ff = nn.LayerNorm(d, **kw)
        self.ff_up = nn.Linear(d, 4 * d, **kw)
        self.ff_down = nn.Linear(4 * d, d, **kw)
        self.out_proj = nn.Linear(d, d_s, bias=True, **kw)

    def reset_parameters(self, generator: torch.Generator | None = None):
        for lin in (self.cross_q, self.cross_k, self.cross_v, self.cross_o,
                    self.self_q, self.self_k, self.self_v, self.self_o,
                    self.ff_up, self.ff_down, self.out_proj):
            nn.init.normal_(lin.weight, std=INIT_STD, generator=generator)
            if lin.bias is not None:
                nn.init.zeros_(lin.bias)
        nn.init.ones_(self.norm_attn.weight)
        nn.init.zeros_(self.norm_attn.bias)
        nn.init.ones_(self.norm_ff.weight)
        nn.init.zeros_(self.norm_ff.bias)

    def describe_keypoints(self, f_s2: torch.Tensor,
                           neighborhoods: list[torch.Tensor]) -> list[torch.Tensor]:
        """Single-query cross-attention per keypoint, independently.

        Output = W_o(attention-weighted values) + projected query (residual).
        An empty keypoint list yields an empty list.
        """
        q = self.cross_q(f_s2)
        out = []
        for neigh in neighborhoods:
            k = self.cross_k(neigh)
            v = self.cross_v(neigh)
            weights = torch.softmax(k @ q / math.sqrt(self.d), dim=0)
            ctx = weights @ v
            out.append(self.cross_o(ctx) + q)
        return out

    def global_refine(self, f_s2: torch.Tensor, locals_: list[torch.Tensor],
                      use_locals: bool = True) -> torch.Tensor:
        """Self-attention over [f_s2; d_1..d_m] then projection to d_s.

        With use_locals=False (description-dropout path) only the global row
        enters and the result is 1 x d_s.
        """
        rows = [f_s2] + (list(locals_) if use_locals else [])
        x = torch.stack(rows, dim=0)
        n = x.shape[0]
        h = self.norm_attn(x)
        q = self.self_q(h).view(n, self.head_count, self.d_head).transpose(0, 1)
        k = self.self_k(h).view(n, self.head_count, self.d_head).transpose(0, 1)
        v = self.self_v(h).view(n, self.head_count, self.d_head).transpose(0, 1)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.d_head), dim=-1)
        ctx = (attn @ v).transpose(0, 1).reshape(n, self.d)
        x = x + self.self_o(ctx)
        x = x + self.ff_down(torch.nn.functional.gelu(self.ff_up(self.norm_ff(x))))
        return self.out_proj(x)

    def forward(self, f_s2: torch.Tensor, neighborhoods: list[torch.Tensor],
                use_locals: bool = True) -> torch.Tensor:
        locals_ = self.describe_keypoints(f_s2, neighborhoods)
        return self.global_refine(f_s2, locals_, use_locals=use_locals)
