"""Instruction-template bank for prompt rendering.

The bank ships as a JSON data file: one bare motion-to-text frame used for
pretraining and ~30 instruction variants, two of which are reserved as a
holdout set for generalization tests. Prompts carry a single `<MOTION>`
placeholder that is later expanded into projected gesture embeddings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

MOTION_PLACEHOLDER = "<MOTION>"
CAPTION_PLACEHOLDER = "<CAPTION>"


@dataclass
class TemplateBank:
    pretrain_input: str
    pretrain_output: str
    instructions: dict  # id -> text
    holdout_ids: list

    @classmethod
    def load(cls, path: Optional[str] = None) -> "TemplateBank":
        if path is None:
            raw = resources.files("signlm").joinpath("templates.json").read_text()
        else:
            raw = Path(path).read_text()
        d = json.loads(raw)
        instructions = {}
        holdout = []
        for item in d["instructions"]:
            text = item["text"]
            if text.count(MOTION_PLACEHOLDER) != 1:
                raise ValueError(f"template {item['id']} must contain exactly one "
                                 f"{MOTION_PLACEHOLDER}")
            if CAPTION_PLACEHOLDER in text:
                raise ValueError(f"template {item['id']} input side must not contain "
                                 f"{CAPTION_PLACEHOLDER}")
            instructions[int(item["id"])] = text
            if item.get("holdout"):
                holdout.append(int(item["id"]))
        bank = cls(pretrain_input=d["pretrain"]["input"],
                   pretrain_output=d["pretrain"]["output"],
                   instructions=instructions,
                   holdout_ids=sorted(holdout))
        if bank.pretrain_input.count(MOTION_PLACEHOLDER) != 1:
            raise ValueError("pretrain frame must contain exactly one motion placeholder")
        return bank

    def render(self, template_id: Optional[int], caption: str):
        """Return (prompt text, target text). template_id None renders the bare
        pretraining frame."""
        if MOTION_PLACEHOLDER in caption or CAPTION_PLACEHOLDER in caption:
            raise ValueError("caption contains a reserved placeholder literal")
        if template_id is None:
            prompt = self.pretrain_input
            target = self.pretrain_output.replace(CAPTION_PLACEHOLDER, caption)
        else:
            if template_id not in self.instructions:
                raise KeyError(f"unknown template id {template_id}")
            prompt = self.instructions[template_id]
            target = caption
        return prompt, target

    def training_ids(self) -> list:
        return [i for i in sorted(self.instructions) if i not in self.holdout_ids]

    def list_holdout(self) -> list:
        return list(self.holdout_ids)

    def sample(self, rng: np.random.Generator) -> int:
        """Uniform draw over non-holdout template ids."""
        ids = self.training_ids()
        if not ids:
            raise ValueError("template bank has no trainable templates")
        return int(ids[rng.integers(0, len(ids))])

    def all_texts(self) -> list:
        """Every prompt string in the bank (used to seed the text vocabulary)."""
        return [self.pretrain_input] + [self.instructions[i] for i in sorted(self.instructions)]
