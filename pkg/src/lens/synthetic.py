"""Synthetic blob-localization task.

Each sample places 1-3 Gaussian "objects" with distinct identities on the
grid. Image features encode per-cell identity mixtures through a fixed random
linear map; text features encode the queried identity; ground truth is the
queried object's support. The head therefore has a learnable text-to-image
grounding problem with a known optimum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .config import RunConfig
from .pipeline import Sample, nearest_upsample
from .prompt_decoder import stub_image_embedding

N_IDENTITIES = 4
TEXT_TOKENS = 3
SUPPORT_THRESHOLD = 0.35
FEATURE_NOISE = 0.02


@dataclass
class BlobTask:
    config: RunConfig
    seed: int = 0

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        d = self.config.d
        self._w_img = rng.standard_normal((N_IDENTITIES, d)) / np.sqrt(N_IDENTITIES)
        self._w_txt = rng.standard_normal((N_IDENTITIES, d)) / np.sqrt(N_IDENTITIES)

    def generate(self, rng: np.random.Generator) -> Sample:
        cfg = self.config
        h, w = cfg.grid
        n_obj = int(rng.integers(1, 4))
        ids = list(rng.choice(N_IDENTITIES, size=n_obj, replace=False))
        min_sep2 = max(2.0, min(h, w) / 3.0) ** 2
        centers, sigmas = [], []
        attempts = 0
        while len(centers) < n_obj:
            cy, cx = rng.uniform(1, h - 2), rng.uniform(1, w - 2)
            if all((cy - y) ** 2 + (cx - x) ** 2 >= min_sep2 for y, x in centers):
                centers.append((cy, cx))
                sigmas.append(rng.uniform(1.2, 2.2))
                attempts = 0
            else:
                attempts += 1
                if attempts > 50:  # placement can box itself in; restart
                    centers, sigmas, attempts = [], [], 0

        yy, xx = np.mgrid[0:h, 0:w]
        channels = np.zeros((h, w, N_IDENTITIES))
        supports = []
        for (cy, cx), sig, oid in zip(centers, sigmas, ids):
            g = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sig * sig)))
            channels[:, :, oid] += g
            supports.append(g)

        target = int(rng.integers(n_obj))
        gt_small = (supports[target] > SUPPORT_THRESHOLD).astype(np.float64)
        gt_mask = nearest_upsample(gt_small, cfg.upsample_factor)

        f_i = channels.reshape(h * w, N_IDENTITIES) @ self._w_img
        f_i = f_i + FEATURE_NOISE * rng.standard_normal(f_i.shape)
        onehot = np.zeros(N_IDENTITIES)
        onehot[ids[target]] = 1.0
        f_t = np.tile(onehot @ self._w_txt, (TEXT_TOKENS, 1))
        f_t = f_t + FEATURE_NOISE * rng.standard_normal(f_t.shape)

        image_embedding = stub_image_embedding(channels, cfg.d_s, seed=self.seed)
        return Sample(
            f_i=torch.from_numpy(f_i),
            f_t=torch.from_numpy(f_t),
            image_embedding=image_embedding,
            gt_mask=torch.from_numpy(gt_mask),
            gt_small=torch.from_numpy(gt_small),
            grid=cfg.grid,
        )

    def batch(self, rng: np.random.Generator, size: int) -> list[Sample]:
        return [self.generate(rng) for _ in range(size)]
