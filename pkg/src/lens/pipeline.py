"""End-to-end assembly: head -> keypoints -> descriptors -> prompt bundle ->
mask decoder, plus the loss bundle used for training."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .config import RunConfig
from .descriptor import DescriptorModel
from .keypoint import Keypoint, nms_extract, sample_neighborhoods, subpixel_refine
from .numerics import minmax_normalize
from .objectives import attention_loss, bce_mask_loss, dice_loss, seg_loss, total_loss
from .prompt_decoder import MaskDecoder, PositionEncoder, encode_positions
from .seg_head import HeadInput, SegHead


@dataclass
class Sample:
    f_i: torch.Tensor              # (L_i, d) image features
    f_t: torch.Tensor              # (L_t, d) text features
    image_embedding: torch.Tensor  # (h_e, w_e, d_s) decoder-side image field
    gt_mask: torch.Tensor          # (H_out, W_out) binary ground truth
    gt_small: torch.Tensor         # (h, w) ground truth at heatmap resolution
    grid: tuple[int, int]


@dataclass
class PipelineOutput:
    a_c1: torch.Tensor
    heatmap: torch.Tensor          # a_c1 after optional normalization
    keypoints: list[Keypoint] = field(default_factory=list)
    logits: torch.Tensor | None = None
    mask_prob: torch.Tensor | None = None


class LensPipeline(nn.Module):
    def __init__(self, config: RunConfig):
        super().__init__()
        self.config = config
        self.head = SegHead(config.d, config.head_count)
        self.descriptor = DescriptorModel(config.d, config.d_s, config.head_count)
        self.decoder = MaskDecoder(config.d_s, config.decoder_heads, config.upsample_factor)
        self.pos_encoder = PositionEncoder(config.d_s, seed=config.seed)
        self.cls_position = nn.Parameter(torch.zeros(config.d_s, dtype=torch.float64))
        if not config.decoder_trainable:
            for p in self.decoder.parameters():
                p.requires_grad_(False)

    def reset_parameters(self, seed: int | None = None):
        gen = torch.Generator()
        gen.manual_seed(self.config.seed if seed is None else seed)
        self.head.reset_parameters(gen)
        self.descriptor.reset_parameters(gen)
        self.decoder.reset_parameters(gen)
        with torch.no_grad():
            self.cls_position.normal_(std=0.02, generator=gen)

    def forward(self, sample: Sample, use_locals: bool = True,
                fixed_points: list[Keypoint] | None = None) -> PipelineOutput:
        """Full pipeline. `fixed_points` bypasses keypoint selection so the
        loss can be evaluated as a function of parameters at frozen
        coordinates (the function the analytic gradient differentiates)."""
        cfg = self.config
        head_out = self.head(HeadInput(sample.f_i, sample.f_t, sample.grid))
        heatmap = minmax_normalize(head_out.a_c1) if cfg.normalize_attention else head_out.a_c1
        if fixed_points is None:
            points = nms_extract(heatmap, radius=cfg.nms_radius, max_points=cfg.m)
            points = subpixel_refine(heatmap, points, epsilon=cfg.refine_eps)
        else:
            points = fixed_points

        h, w = sample.grid
        image_tokens = head_out.h_out2[:h * w].reshape(h, w, cfg.d)
        neighborhoods = sample_neighborhoods(image_tokens, points, window=cfg.window)
        descriptors = self.descriptor(head_out.f_s2, neighborhoods, use_locals=use_locals)

        prompt_points = points if use_locals else []
        p_pos = encode_positions(self.pos_encoder, prompt_points, sample.grid, self.cls_position)
        tokens = descriptors + p_pos
        logits = self.decoder(tokens, sample.image_embedding)
        return PipelineOutput(a_c1=head_out.a_c1, heatmap=heatmap, keypoints=points,
                              logits=logits, mask_prob=torch.sigmoid(logits))

    def losses(self, sample: Sample, use_locals: bool = True,
               fixed_points: list[Keypoint] | None = None) -> dict[str, torch.Tensor]:
        cfg = self.config
        out = self(sample, use_locals=use_locals, fixed_points=fixed_points)
        lw = cfg.loss
        return {
            "attn": attention_loss(out.heatmap, sample.gt_small, lw.clamp_eps),
            "dice": dice_loss(out.mask_prob, sample.gt_mask, lw.dice_smooth),
            "bce": bce_mask_loss(out.mask_prob, sample.gt_mask, lw.clamp_eps),
            "seg": seg_loss(out.mask_prob, sample.gt_mask, lw),
            "total": total_loss(out.mask_prob, sample.gt_mask, out.heatmap,
                                sample.gt_small, lw),
        }


def nearest_upsample(mask: np.ndarray, factor: int) -> np.ndarray:
    return np.kron(mask, np.ones((factor, factor), dtype=mask.dtype))
