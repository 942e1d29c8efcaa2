"""Hook a vision-language model's intermediate layer and export the image and
text feature spans, together with a promptable-segmentation image embedding,
as tensor files plus a JSON manifest the pipeline CLI can consume directly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from .tensorfile import write_tensor

DEFAULT_LAYER = 14
DEFAULT_TEMPLATE = "USER: <image>\n{instruction} ASSISTANT:"


@dataclass
class VlmComponents:
    """The pieces of a LLaVA-style stack the exporter needs.

    vision: maps pixel_values (1, 3, H, W) to patch tokens; its
        last_hidden_state is (1, 1 + L_i, d_v) when a CLS token is present.
    projector: maps vision hidden size to the language hidden size d.
    language: a decoder stack accepting inputs_embeds and returning
        hidden_states for every layer when output_hidden_states=True.
    tokenize: text -> 1D LongTensor of input ids.
    drop_cls: strip the vision CLS token so L_i equals the patch grid.
    """

    vision: torch.nn.Module
    projector: torch.nn.Module
    language: torch.nn.Module
    tokenize: Callable[[str], torch.Tensor]
    drop_cls: bool = True
    name: str = "custom"


class SegEncoderPort:
    """Anything that maps an image array to a (h_e, w_e, d_s) embedding."""

    def embed(self, image: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class ModuleSegEncoder(SegEncoderPort):
    """Wrap a torch module fed (1, 3, H, W); set channels_first=False if the
    module already returns (h_e, w_e, d_s) instead of (1, d_s, h_e, w_e)."""

    def __init__(self, module: torch.nn.Module, channels_first: bool = True,
                 name: str = "custom-seg"):
        self.module = module
        self.channels_first = channels_first
        self.name = name

    def embed(self, image: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            x = torch.as_tensor(image, dtype=torch.float32)
            if x.ndim == 2:
                x = x.unsqueeze(-1)
            out = self.module(x.permute(2, 0, 1).unsqueeze(0))
        if hasattr(out, "last_hidden_state"):
            out = out.last_hidden_state
        out = out.squeeze(0)
        if out.ndim != 3:
            raise ValueError(f"segmentation embedding has rank {out.ndim}, want 3")
        if self.channels_first:
            out = out.permute(1, 2, 0)
        return out.numpy()


def load_image(image) -> np.ndarray:
    """Accept an array directly or load a file via Pillow; values in [0, 1]."""
    if isinstance(image, np.ndarray):
        arr = image.astype(np.float32)
    else:
        from PIL import Image
        arr = np.asarray(Image.open(image).convert("RGB"), dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    return arr


def capture_layer_features(components: VlmComponents, image: np.ndarray,
                           instruction: str, layer: int,
                           template: str = DEFAULT_TEMPLATE
                           ) -> tuple[np.ndarray, np.ndarray]:
    """Run the stack and split the residual stream at the configured layer.

    Image tokens are projected vision patches; text tokens are the embedded
    prompt; hidden_states[layer] is the residual stream after `layer` decoder
    blocks (index 0 is the embedding output). Returns (F_i, F_t).
    """
    pixel = torch.as_tensor(image, dtype=torch.float32).permute(2, 0, 1).unsqueeze(0)
    with torch.no_grad():
        vis = components.vision(pixel)
        patches = vis.last_hidden_state if hasattr(vis, "last_hidden_state") else vis
        if components.drop_cls:
            patches = patches[:, 1:]
        img_embeds = components.projector(patches)

        prompt = template.format(instruction=instruction)
        ids = components.tokenize(prompt)
        if ids.ndim == 1:
            ids = ids.unsqueeze(0)
        txt_embeds = components.language.get_input_embeddings()(ids)

        inputs_embeds = torch.cat([img_embeds, txt_embeds], dim=1)
        out = components.language(inputs_embeds=inputs_embeds,
                                  output_hidden_states=True)
        depth = len(out.hidden_states) - 1
        if not (1 <= layer <= depth):
            raise ValueError(f"layer {layer} out of range 1..{depth}")
        hidden = out.hidden_states[layer].squeeze(0)
    l_i = img_embeds.shape[1]
    return hidden[:l_i].numpy(), hidden[l_i:].numpy()


def export_features(components: VlmComponents, image, instruction: str,
                    seg_encoder: SegEncoderPort, layer: int = DEFAULT_LAYER,
                    out_dir=".", template: str = DEFAULT_TEMPLATE,
                    gt_mask: Optional[np.ndarray] = None,
                    dtype: str = "float32") -> dict:
    """Export F_i, F_t and the segmentation embedding as tensor files plus a
    JSON manifest; returns the manifest dict. The manifest records the model
    names, hooked layer, token span boundaries and the prompt template."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arr = load_image(image)
    f_i, f_t = capture_layer_features(components, arr, instruction, layer, template)
    if f_i.shape[1] != f_t.shape[1]:
        raise ValueError("image/text feature widths disagree")
    emb = seg_encoder.embed(arr)

    files = [
        ("image_features", "image_features.ltns", f_i),
        ("text_features", "text_features.ltns", f_t),
        ("sam_embedding", "sam_embedding.ltns", emb),
    ]
    if gt_mask is not None:
        files.append(("gt_mask", "gt_mask.ltns", np.asarray(gt_mask, dtype=np.float32)))
    for _, fname, data in files:
        write_tensor(out_dir / fname, data, dtype=dtype)

    manifest = {
        "model": components.name,
        "seg_encoder": getattr(seg_encoder, "name", "custom-seg"),
        "layer": layer,
        "L_i": int(f_i.shape[0]),
        "L_t": int(f_t.shape[0]),
        "d": int(f_i.shape[1]),
        "dtype": dtype,
        "template": template,
        "instruction": instruction,
        "files": [{"role": role, "path": fname, "dims": list(data.shape)}
                  for role, fname, data in files],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest


def from_pretrained(model_id: str, seg_model_id: str | None = None,
                    **kwargs) -> tuple[VlmComponents, SegEncoderPort]:
    """Load a LLaVA-style checkpoint and a promptable-segmentation encoder
    from the model hub. Network-dependent; tests build tiny components
    directly instead."""
    from transformers import AutoProcessor, LlavaForConditionalGeneration

    model = LlavaForConditionalGeneration.from_pretrained(model_id, **kwargs)
    processor = AutoProcessor.from_pretrained(model_id)
    tok = processor.tokenizer

    components = VlmComponents(
        vision=model.vision_tower,
        projector=model.multi_modal_projector,
        language=model.language_model,
        tokenize=lambda text: tok(text, return_tensors="pt").input_ids.squeeze(0),
        drop_cls=True,
        name=model_id,
    )
    if seg_model_id is None:
        raise ValueError("seg_model_id required when loading from the hub")
    from transformers import SamModel
    sam = SamModel.from_pretrained(seg_model_id)

    class _SamEncoder(SegEncoderPort):
        name = seg_model_id

        def embed(self, image: np.ndarray) -> np.ndarray:
            with torch.no_grad():
                x = torch.as_tensor(image, dtype=torch.float32)
                out = sam.vision_encoder(x.permute(2, 0, 1).unsqueeze(0))
            return out.last_hidden_state.squeeze(0).permute(1, 2, 0).numpy()

    return components, _SamEncoder()
