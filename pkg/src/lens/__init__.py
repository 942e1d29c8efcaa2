"""Attachable segmentation head pipeline: attention grounding -> keypoints ->
descriptors -> promptable mask decoding, trained with a composite Dice/BCE +
attention objective. All internal math runs in float64.
"""

from .config import RunConfig

__all__ = ["RunConfig"]
__version__ = "0.1.0"
