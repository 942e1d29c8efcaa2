"""Run configuration shared by the CLI, trainer and pipeline assembly."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, asdict


@dataclass
class LossWeights:
    lambda_dice: float = 2.0
    lambda_bce: float = 4.0
    clamp_eps: float = 1e-7
    dice_smooth: float = 1.0

    def __post_init__(self):
        if self.lambda_dice < 0 or self.lambda_bce < 0:
            raise ValueError("loss weights must be non-negative")
        if not (0.0 < self.clamp_eps < 0.5):
            raise ValueError("clamp_eps must lie in (0, 0.5)")


@dataclass
class RunConfig:
    grid: tuple[int, int] = (24, 24)      # heatmap (h, w); h*w = L_i
    d: int = 32                           # head model dim
    d_s: int = 32                         # decoder embedding dim
    head_count: int = 4
    m: int = 16                           # max keypoints
    nms_radius: float = 4.0
    window: int = 3                       # neighborhood window (odd)
    refine_eps: float = 1e-6
    upsample_factor: int = 4
    decoder_heads: int = 4
    loss: LossWeights = field(default_factory=LossWeights)
    learning_rate: float = 5e-5
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    batch_size: int = 4
    seed: int = 0
    decoder_trainable: bool = True
    normalize_attention: bool = False     # optional pre-supervision rescale of the grounding map
    use_local_descriptions: bool = True   # inference-time descriptor routing

    def __post_init__(self):
        env_seed = os.environ.get("LENS_SEED")
        if env_seed is not None:
            self.seed = int(env_seed)
        if self.d % self.head_count != 0:
            raise ValueError("d must be divisible by head_count")
        if self.window % 2 != 1:
            raise ValueError("window must be odd")
        if self.d_s % 2 != 0:
            raise ValueError("d_s must be even (sin/cos frequency pairs)")

    def to_dict(self) -> dict:
        return asdict(self)
