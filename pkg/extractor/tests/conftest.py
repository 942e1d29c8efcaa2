import numpy as np
import pytest
import torch
import torch.nn as nn
from transformers import (CLIPVisionConfig, CLIPVisionModel, LlamaConfig,
                          LlamaModel)

from lens_extract import ModuleSegEncoder, VlmComponents

torch.set_num_threads(2)

HIDDEN = 32
VISION_HIDDEN = 24
VOCAB = 128


def word_hash_tokenizer(text: str) -> torch.Tensor:
    ids = [hash(w) % VOCAB for w in text.split()]
    return torch.tensor(ids or [0], dtype=torch.long)


@pytest.fixture(scope="session")
def tiny_components():
    """Offline stand-in for a LLaVA-style stack: 16x16 input, 4x4 patch grid
    (L_i = 16), 4 decoder layers, hidden size 32."""
    torch.manual_seed(0)
    vision = CLIPVisionModel(CLIPVisionConfig(
        hidden_size=VISION_HIDDEN, intermediate_size=48, num_hidden_layers=2,
        num_attention_heads=2, image_size=16, patch_size=4, num_channels=3,
        projection_dim=VISION_HIDDEN))
    language = LlamaModel(LlamaConfig(
        hidden_size=HIDDEN, intermediate_size=64, num_hidden_layers=4,
        num_attention_heads=4, num_key_value_heads=4, vocab_size=VOCAB,
        max_position_embeddings=128))
    projector = nn.Linear(VISION_HIDDEN, HIDDEN)
    vision.eval()
    language.eval()
    return VlmComponents(vision=vision, projector=projector, language=language,
                         tokenize=word_hash_tokenizer, drop_cls=True,
                         name="tiny-llava-stand-in")


@pytest.fixture(scope="session")
def tiny_seg_encoder():
    torch.manual_seed(1)
    conv = nn.Conv2d(3, 16, kernel_size=4, stride=4)
    conv.eval()
    return ModuleSegEncoder(conv, channels_first=True, name="tiny-seg-encoder")


@pytest.fixture
def image(rng):
    return rng.uniform(size=(16, 16, 3)).astype(np.float32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
