"""Point-prompt encoding and the simplified two-way mask decoder.

Keypoints become random-Fourier position embeddings, descriptors are added
elementwise (the global row gets a learnable CLS position), and two two-way
attention blocks exchange information between prompt tokens and a stub image
embedding before an appended mask token is dotted against upsampled per-pixel
embeddings.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .keypoint import Keypoint
from .seg_head import INIT_STD


class PositionEncoder:
    """Random Fourier point encoder: frequencies from N(0, scale^2), fixed seed."""

    def __init__(self, d_s: int, seed: int = 0, scale: float = 1.0):
        if d_s % 2 != 0:
            raise ValueError("d_s must be even")
        rng = np.random.default_rng(seed)
        self.freq = torch.from_numpy(rng.standard_normal((2, d_s // 2)) * scale)
        self.d_s = d_s

    def encode(self, points: list[Keypoint], grid: tuple[int, int]) -> torch.Tensor:
        """(n, d_s) embeddings; coordinates normalized to [0, 1]^2 with clamping."""
        h, w = grid
        if not points:
            return torch.empty(0, self.d_s, dtype=torch.float64)
        coords = torch.tensor(
            [[min(max(p.x / (w - 1), 0.0), 1.0), min(max(p.y / (h - 1), 0.0), 1.0)]
             for p in points], dtype=torch.float64)
        proj = 2.0 * math.pi * (coords @ self.freq)
        return torch.cat([torch.sin(proj), torch.cos(proj)], dim=1)


def encode_positions(encoder: PositionEncoder, points: list[Keypoint],
                     grid: tuple[int, int], cls_position: torch.Tensor) -> torch.Tensor:
    """Stack the learnable CLS position over the point embeddings: (m+1, d_s)."""
    enc = encoder.encode(points, grid)
    return torch.cat([cls_position.unsqueeze(0), enc], dim=0)


class TwoWayBlock(nn.Module):
    """Tokens attend to image pixels, feed-forward, then pixels attend back."""

    def __init__(self, d_s: int, head_count: int):
        super().__init__()
        kw = dict(dtype=torch.float64)
        self.t2i = nn.MultiheadAttention(d_s, head_count, batch_first=True, **kw)
        self.i2t = nn.MultiheadAttention(d_s, head_count, batch_first=True, **kw)
        self.norm_t1 = nn.LayerNorm(d_s, **kw)
        self.norm_t2 = nn.LayerNorm(d_s, **kw)
        self.norm_i = nn.LayerNorm(d_s, **kw)
        self.ff = nn.Sequential(
            nn.Linear(d_s, 4 * d_s, **kw), nn.GELU(), nn.Linear(4 * d_s, d_s, **kw))

    def forward(self, tokens: torch.Tensor, image: torch.Tensor):
        t = self.norm_t1(tokens).unsqueeze(0)
        i = self.norm_i(image).unsqueeze(0)
        attn, _ = self.t2i(t, i, i, need_weights=False)
        tokens = tokens + attn.squeeze(0)
        tokens = tokens + self.ff(self.norm_t2(tokens))
        attn_back, _ = self.i2t(i, self.norm_t1(tokens).unsqueeze(0),
                                self.norm_t1(tokens).unsqueeze(0), need_weights=False)
        image = image + attn_back.squeeze(0)
        return tokens, image


class MaskDecoder(nn.Module):
    def __init__(self, d_s: int, head_count: int, upsample_factor: int = 4):
        super().__init__()
        kw = dict(dtype=torch.float64)
        self.d_s = d_s
        self.upsample_factor = upsample_factor
        self.blocks = nn.ModuleList([TwoWayBlock(d_s, head_count) for _ in range(2)])
        self.mask_token = nn.Parameter(torch.zeros(d_s, dtype=torch.float64))
        self.mask_proj_hidden = nn.Linear(d_s, d_s, **kw)
        self.mask_proj_out = nn.Linear(d_s, d_s, **kw)

    def reset_parameters(self, generator: torch.Generator | None = None):
        for mod in self.modules():
            if isinstance(mod, nn.Linear):
                nn.init.normal_(mod.weight, std=INIT_STD, generator=generator)
                if mod.bias is not None:
                    nn.init.zeros_(mod.bias)
            elif isinstance(mod, nn.LayerNorm):
                nn.init.ones_(mod.weight)
                nn.init.zeros_(mod.bias)
            elif isinstance(mod, nn.MultiheadAttention):
                nn.init.normal_(mod.in_proj_weight, std=INIT_STD, generator=generator)
                nn.init.zeros_(mod.in_proj_bias)
                nn.init.normal_(mod.out_proj.weight, std=INIT_STD, generator=generator)
                nn.init.zeros_(mod.out_proj.bias)
        nn.init.normal_(self.mask_token, std=INIT_STD, generator=generator)

    def forward(self, tokens: torch.Tensor, image: torch.Tensor) -> torch.Tensor:
        """tokens: (n, d_s) prompt bundle; image: (h_e, w_e, d_s) embedding.

        Returns pre-sigmoid logits at (upsample_factor*h_e, upsample_factor*w_e).
        """
        if tokens.ndim != 2 or tokens.shape[0] < 1 or tokens.shape[1] != self.d_s:
            raise ValueError(f"bad prompt bundle shape {tuple(tokens.shape)}")
        if image.ndim != 3 or image.shape[2] != self.d_s:
            raise ValueError(f"bad image embedding shape {tuple(image.shape)}")
        h_e, w_e, _ = image.shape
        toks = torch.cat([tokens, self.mask_token.unsqueeze(0)], dim=0)
        img = image.reshape(h_e * w_e, self.d_s)
        for block in self.blocks:
            toks, img = block(toks, img)
        probe = self.mask_proj_out(F.gelu(self.mask_proj_hidden(toks[-1])))
        field = img.reshape(1, h_e, w_e, self.d_s).permute(0, 3, 1, 2)
        up = F.interpolate(field, scale_factor=self.upsample_factor,
                           mode="bilinear", align_corners=True)
        return torch.einsum("chw,c->hw", up.squeeze(0), probe)


def stub_image_embedding(image: np.ndarray | torch.Tensor, d_s: int,
                         seed: int = 0) -> torch.Tensor:
    """Fixed random linear patchifier: (h_e, w_e, c) input -> (h_e, w_e, d_s).

    Stands in for a real promptable-segmentation image encoder; the projection
    is seeded and never trained.
    """
    img = torch.as_tensor(np.asarray(image), dtype=torch.float64)
    if img.ndim == 2:
        img = img.unsqueeze(-1)
    c = img.shape[2]
    rng = np.random.default_rng(seed)
    proj = torch.from_numpy(rng.standard_normal((c, d_s)) / math.sqrt(c))
    return img @ proj
