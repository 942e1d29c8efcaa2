"""Per-turn agent routing: decide dialogue vs segmentation vs follow-up,
with a one-slot session memory and pluggable agent/segmentation ports."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

import numpy as np

from .interchange import export_pgm

FIXED_SEG_REPLY = "Sure, the segmentation result is generated."

SEG_VERBS = ("segment", "mask", "outline", "highlight the region")
FOLLOWUP_CUES = ("the segmented", "that region")


class Intent(enum.Enum):
    DIALOGUE = "dialogue"
    SEG = "seg"
    FOLLOWUP = "followup"


@dataclass
class SessionMemory:
    last: Optional[tuple] = None  # (image reference, mask reference)


def rule_classifier(instruction: str, has_image: bool,
                    memory_populated: bool = False) -> Intent:
    text = instruction.lower()
    # follow-up cues are checked first: "the segmented ..." contains the verb
    # "segment" as a substring but refers to a previous result
    if any(cue in text for cue in FOLLOWUP_CUES):
        return Intent.FOLLOWUP
    if any(verb in text for verb in SEG_VERBS):
        return Intent.SEG
    if memory_populated and " it " in f" {text} ":
        return Intent.FOLLOWUP
    return Intent.DIALOGUE


def route_intent(classifier: Callable | None, instruction: str, has_image: bool,
                 memory_populated: bool = False) -> Intent:
    if not instruction:
        raise ValueError("empty instruction")
    fn = classifier or rule_classifier
    return fn(instruction, has_image, memory_populated)


class AgentPort(Protocol):
    def route(self, instruction: str, has_image: bool,
              memory_populated: bool = False) -> Intent: ...

    def generate(self, instruction: str, context) -> str: ...


class RuleAgent:
    """Deterministic default agent: rule-based routing, template generation."""

    def route(self, instruction: str, has_image: bool,
              memory_populated: bool = False) -> Intent:
        return route_intent(None, instruction, has_image, memory_populated)

    def generate(self, instruction: str, context) -> str:
        kind = "with-mask-context" if isinstance(context, tuple) else "image-only"
        return f"[{kind}] answer to: {instruction}"


def overlay_mask(image: np.ndarray, mask: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Alpha-blend a binary/probability mask over a [0, 1] grayscale image."""
    if image.shape != mask.shape:
        raise ValueError("image/mask shape mismatch")
    return (1.0 - alpha) * image + alpha * mask


def export_triptych(image: np.ndarray, mask: np.ndarray, path) -> None:
    """Side-by-side PGM of (image, mask, overlay)."""
    export_pgm(np.concatenate([image, mask, overlay_mask(image, mask)], axis=1), path)


@dataclass
class TurnResult:
    reply: str
    mask: Optional[np.ndarray]
    memory: SessionMemory


def handle_turn(agent: AgentPort, segment_fn: Callable, memory: SessionMemory,
                instruction: str, image: Optional[np.ndarray],
                _depth: int = 0) -> TurnResult:
    """One conversational turn.

    seg: run the segmentation pipeline, store (image, mask), fixed reply.
    followup with empty memory: re-enter once as a fresh turn (depth guard 1).
    followup with memory: generate over (original image, overlay).
    dialogue: generate over the image alone. Memory is written only on seg.
    """
    intent = agent.route(instruction, image is not None,
                         memory_populated=memory.last is not None)
    if intent is Intent.SEG:
        if image is None:
            raise ValueError("segmentation requires an image")
        mask = segment_fn(instruction, image)
        memory.last = (image, mask)
        return TurnResult(FIXED_SEG_REPLY, mask, memory)
    if intent is Intent.FOLLOWUP:
        if memory.last is None:
            if _depth >= 1:
                return TurnResult(agent.generate(instruction, image), None, memory)
            return handle_turn(agent, segment_fn, memory, instruction, image,
                               _depth=_depth + 1)
        image0, mask0 = memory.last
        context = (image0, overlay_mask(image0, mask0))
        return TurnResult(agent.generate(instruction, context), None, memory)
    return TurnResult(agent.generate(instruction, image), None, memory)


def run_session(instructions: list[str], agent: AgentPort, segment_fn: Callable,
                image: Optional[np.ndarray]) -> list[TurnResult]:
    """Drive a scripted session (one instruction per line) over one memory."""
    memory = SessionMemory()
    return [handle_turn(agent, segment_fn, memory, line, image)
            for line in instructions if line.strip()]
