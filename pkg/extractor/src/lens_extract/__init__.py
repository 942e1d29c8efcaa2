from .adapter import (DEFAULT_LAYER, DEFAULT_TEMPLATE, ModuleSegEncoder,
                      SegEncoderPort, VlmComponents, capture_layer_features,
                      export_features, from_pretrained, load_image)
from .tensorfile import write_tensor

__all__ = [
    "DEFAULT_LAYER", "DEFAULT_TEMPLATE", "ModuleSegEncoder", "SegEncoderPort",
    "VlmComponents", "capture_layer_features", "export_features",
    "from_pretrained", "load_image", "write_tensor",
]
