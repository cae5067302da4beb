"""Gesture-to-text alignment: a two-layer projection from codebook space into the
backbone embedding space, and fusion of projected gesture rows into a prompt at
the reserved motion-placeholder position.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import tensor as T
from .backbone import LMBackbone
from .data import EOS, MOTION, TextVocab
from .templates import TemplateBank
from .vq import VQTokenizer


class AlignmentMLP:
    """Two linear layers with GELU between, code_dim -> d_model."""

    def __init__(self, code_dim: int, d_model: int, rng: np.random.Generator,
                 hidden: Optional[int] = None):
        hidden = hidden or d_model
        self.code_dim = code_dim
        self.d_model = d_model
        s1 = 1.0 / np.sqrt(code_dim)
        s2 = 1.0 / np.sqrt(hidden)
        self.params = {
            "align.w1": T.Tensor(rng.uniform(-s1, s1, size=(code_dim, hidden)),
                                 requires_grad=True),
            "align.b1": T.Tensor(np.zeros(hidden), requires_grad=True),
            "align.w2": T.Tensor(rng.uniform(-s2, s2, size=(hidden, d_model)),
                                 requires_grad=True),
            "align.b2": T.Tensor(np.zeros(d_model), requires_grad=True),
        }

    def project(self, vectors: T.Tensor) -> T.Tensor:
        """Quantized gesture vectors (L, code_dim) -> embeddings (L, d_model)."""
        if vectors.shape[-1] != self.code_dim:
            raise T.ShapeError("project", vectors.shape, (self.code_dim,))
        h = T.gelu(T.linear(vectors, self.params["align.w1"], self.params["align.b1"]))
        return T.linear(h, self.params["align.w2"], self.params["align.b2"])

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: dict) -> None:
        for name, p in self.params.items():
            p.data = np.asarray(state[name], dtype=p.data.dtype)


@dataclass
class FusedPrompt:
    embeddings: T.Tensor       # (T, d_model)
    gesture_mask: np.ndarray   # (T,) bool, True where rows came from the projection
    prompt_len: int            # rows belonging to the prompt (incl. gesture rows)


class FusionError(ValueError):
    pass


def fuse(prompt_ids: np.ndarray, e_sign: T.Tensor, backbone: LMBackbone) -> FusedPrompt:
    """Replace the single MOTION placeholder row by the L projected gesture rows.

    Output length is len(prompt_ids) - 1 + L; all non-placeholder rows equal the
    plain embedding lookup of their ids."""
    prompt_ids = np.asarray(prompt_ids)
    spots = np.flatnonzero(prompt_ids == MOTION)
    if len(spots) != 1:
        raise FusionError(f"prompt must contain exactly one motion placeholder, "
                          f"found {len(spots)}")
    L = e_sign.shape[0]
    if L == 0:
        raise FusionError("empty gesture embedding sequence")
    pos = int(spots[0])
    parts = []
    if pos > 0:
        parts.append(backbone.embed(prompt_ids[:pos]))
    parts.append(e_sign)
    if pos + 1 < len(prompt_ids):
        parts.append(backbone.embed(prompt_ids[pos + 1:]))
    emb = T.concat(parts, axis=0)
    gesture_mask = np.zeros(emb.shape[0], dtype=bool)
    gesture_mask[pos:pos + L] = True
    return FusedPrompt(embeddings=emb, gesture_mask=gesture_mask,
                       prompt_len=emb.shape[0])


@dataclass
class TrainingExample:
    """One fused prompt plus teacher-forced targets for next-token training."""

    inputs: T.Tensor           # (T, d_model) fused prompt ++ embedded target prefix
    target_ids: np.ndarray     # (T,) next-token targets (PAD where unsupervised)
    loss_mask: np.ndarray      # (T,) 1.0 exactly on the answer-region predictions
    gesture_mask: np.ndarray   # (T,) bool
    prompt_ids: np.ndarray
    answer_ids: np.ndarray     # caption tokens + EOS


def build_training_example(caption: str, tok_clip, align: AlignmentMLP,
                           backbone: LMBackbone, vocab: TextVocab,
                           bank: TemplateBank, template_id: Optional[int] = None,
                           max_len: int = 250) -> Optional[TrainingExample]:
    """Render a pretrain (template_id None) or instruction example.

    Loss covers the answer region (caption tokens + EOS) only. Returns None when
    the fused sequence would exceed the length budget."""
    prompt_text, target_text = bank.render(template_id, caption)
    prompt_ids = vocab.encode(prompt_text, add_bos=True)
    answer_ids = vocab.encode(target_text, add_eos=True)

    e_sign = align.project(T.Tensor(tok_clip.vectors))
    L = e_sign.shape[0]
    total = len(prompt_ids) - 1 + L + len(answer_ids)
    if total > max_len:
        return None

    fused = fuse(prompt_ids, e_sign, backbone)
    # teacher forcing: feed every answer token but the last (EOS is predicted,
    # never fed)
    if len(answer_ids) > 1:
        inputs = T.concat([fused.embeddings, backbone.embed(answer_ids[:-1])], axis=0)
    else:
        inputs = fused.embeddings
    Ttot = inputs.shape[0]
    target_ids = np.zeros(Ttot, dtype=np.int64)
    loss_mask = np.zeros(Ttot, dtype=np.float32)
    start = fused.prompt_len - 1  # position predicting the first answer token
    target_ids[start:start + len(answer_ids)] = answer_ids
    loss_mask[start:start + len(answer_ids)] = 1.0
    gesture_mask = np.zeros(Ttot, dtype=bool)
    gesture_mask[:fused.prompt_len] = fused.gesture_mask
    return TrainingExample(inputs=inputs, target_ids=target_ids, loss_mask=loss_mask,
                           gesture_mask=gesture_mask, prompt_ids=prompt_ids,
                           answer_ids=answer_ids)


def build_prompt(tok_clip, align: AlignmentMLP, backbone: LMBackbone,
                 vocab: TextVocab, bank: TemplateBank,
                 template_id: Optional[int] = None) -> FusedPrompt:
    """Inference-side prompt: fused embeddings ready for generate()."""
    prompt_text, _ = bank.render(template_id, "")
    prompt_ids = vocab.encode(prompt_text, add_bos=True)
    e_sign = align.project(T.Tensor(tok_clip.vectors))
    return fuse(prompt_ids, e_sign, backbone)
