"""Small decoder-only autoregressive language backbone.

Token embedding table, learned positions, pre-norm causal self-attention blocks,
an LM head, masked cross-entropy, and greedy generation. Parameters are grouped
as {embedding, blocks, head} so training schemes can freeze groups wholesale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import tensor as T
from .data import EOS

MAX_SEQ_LEN = 250


@dataclass
class LMConfig:
    vocab_size: int
    d_model: int = 256
    n_layers: int = 4
    n_heads: int = 4
    max_len: int = MAX_SEQ_LEN
    dropout: float = 0.0
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")


class LMBackbone:
    def __init__(self, config: LMConfig, rng: np.random.Generator):
        self.config = config
        self.params: dict = {}
        d, V = config.d_model, config.vocab_size

        def p(name, shape, scale=0.02):
            self.params[name] = T.Tensor(rng.normal(0.0, scale, size=shape),
                                         requires_grad=True)

        def zeros(name, shape):
            self.params[name] = T.Tensor(np.zeros(shape), requires_grad=True)

        def ones(name, shape):
            self.params[name] = T.Tensor(np.ones(shape), requires_grad=True)

        p("emb.tok", (V, d))
        p("emb.pos", (config.max_len, d))
        h = config.mlp_ratio * d
        for l in range(config.n_layers):
            ones(f"blocks.{l}.ln1.g", (d,))
            zeros(f"blocks.{l}.ln1.b", (d,))
            p(f"blocks.{l}.attn.wqkv", (d, 3 * d))
            zeros(f"blocks.{l}.attn.bqkv", (3 * d,))
            p(f"blocks.{l}.attn.wo", (d, d), scale=0.02 / math.sqrt(2 * config.n_layers))
            zeros(f"blocks.{l}.attn.bo", (d,))
            ones(f"blocks.{l}.ln2.g", (d,))
            zeros(f"blocks.{l}.ln2.b", (d,))
            p(f"blocks.{l}.mlp.w1", (d, h))
            zeros(f"blocks.{l}.mlp.b1", (h,))
            p(f"blocks.{l}.mlp.w2", (h, d), scale=0.02 / math.sqrt(2 * config.n_layers))
            zeros(f"blocks.{l}.mlp.b2", (d,))
        ones("blocks.final_ln.g", (d,))
        zeros("blocks.final_ln.b", (d,))
        p("head.w", (d, V))
        zeros("head.b", (V,))

    def param_groups(self) -> dict:
        groups = {"embedding": {}, "blocks": {}, "head": {}}
        for name, t in self.params.items():
            groups[name.split(".")[0].replace("emb", "embedding")][name] = t
        return groups

    def embed(self, token_ids: np.ndarray) -> T.Tensor:
        """Token ids (any shape) -> embedding rows, no positional term."""
        return T.embedding(self.params["emb.tok"], np.asarray(token_ids))

    def forward(self, embeddings: T.Tensor, key_mask: Optional[np.ndarray] = None,
                rng: Optional[np.random.Generator] = None) -> T.Tensor:
        """embeddings (B, T, d) -> logits (B, T, V); causal over positions.

        key_mask (B, T) marks real (1) vs padded (0) positions."""
        cfg = self.config
        B, L, d = embeddings.shape
        if L > cfg.max_len:
            raise ValueError(f"sequence length {L} exceeds max {cfg.max_len}")
        nh, hd = cfg.n_heads, d // cfg.n_heads

        pos = self.params["emb.pos"][0:L, :]
        x = T.add(embeddings, T.reshape(pos, (1, L, d)))

        neg = np.float64(-1e9).astype(x.data.dtype)
        causal = np.triu(np.full((L, L), neg, dtype=x.data.dtype), k=1)
        mask_add = causal[None, None, :, :]
        if key_mask is not None:
            km = (1.0 - np.asarray(key_mask, dtype=x.data.dtype)) * neg
            mask_add = mask_add + km[:, None, None, :]
        mask_t = T.Tensor(np.broadcast_to(mask_add, (B, nh, L, L)).copy())

        train = rng is not None and cfg.dropout > 0.0
        for l in range(cfg.n_layers):
            h = T.layer_norm(x, self.params[f"blocks.{l}.ln1.g"],
                             self.params[f"blocks.{l}.ln1.b"])
            qkv = T.linear(h, self.params[f"blocks.{l}.attn.wqkv"],
                           self.params[f"blocks.{l}.attn.bqkv"])
            q = _heads(qkv[:, :, 0:d], B, L, nh, hd)
            k = _heads(qkv[:, :, d:2 * d], B, L, nh, hd)
            v = _heads(qkv[:, :, 2 * d:3 * d], B, L, nh, hd)
            scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) / math.sqrt(hd)
            att = T.softmax(T.add(scores, mask_t), axis=-1)
            if train:
                att = T.dropout(att, cfg.dropout, rng)
            ctx = T.matmul(att, v)  # (B, nh, L, hd)
            ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (B, L, d))
            proj = T.linear(ctx, self.params[f"blocks.{l}.attn.wo"],
                            self.params[f"blocks.{l}.attn.bo"])
            if train:
                proj = T.dropout(proj, cfg.dropout, rng)
            x = T.add(x, proj)

            h = T.layer_norm(x, self.params[f"blocks.{l}.ln2.g"],
                             self.params[f"blocks.{l}.ln2.b"])
            h = T.gelu(T.linear(h, self.params[f"blocks.{l}.mlp.w1"],
                                self.params[f"blocks.{l}.mlp.b1"]))
            h = T.linear(h, self.params[f"blocks.{l}.mlp.w2"],
                         self.params[f"blocks.{l}.mlp.b2"])
            if train:
                h = T.dropout(h, cfg.dropout, rng)
            x = T.add(x, h)

        x = T.layer_norm(x, self.params["blocks.final_ln.g"], self.params["blocks.final_ln.b"])
        return T.linear(x, self.params["head.w"], self.params["head.b"])

    def lm_loss(self, logits: T.Tensor, target_ids: np.ndarray,
                loss_mask: np.ndarray) -> T.Tensor:
        """Mean cross-entropy over the masked (answer-region) positions only."""
        B, L, V = logits.shape
        flat = T.reshape(logits, (B * L, V))
        return T.cross_entropy(flat, np.asarray(target_ids).reshape(-1),
                               np.asarray(loss_mask).reshape(-1))

    def generate(self, prefix_embeddings: T.Tensor, max_new: int,
                 mode: str = "greedy", rng: Optional[np.random.Generator] = None) -> List[int]:
        """Autoregressive decoding from a (T0, d) prefix. Greedy is the evaluated
        mode; stops at EOS."""
        if prefix_embeddings.data.ndim != 2:
            raise ValueError("prefix must be (T, d)")
        T0 = prefix_embeddings.shape[0]
        if T0 + max_new > self.config.max_len:
            raise ValueError("prefix + max_new exceeds the context window")
        emb = prefix_embeddings.data
        out: List[int] = []
        for _ in range(max_new):
            logits = self.forward(T.Tensor(emb[None])).data[0, -1]
            if mode == "greedy":
                nxt = int(logits.argmax())
            elif mode == "sample":
                if rng is None:
                    raise ValueError("sampling requires an rng")
                p = np.exp(logits - logits.max())
                p /= p.sum()
                nxt = int(rng.choice(len(p), p=p))
            else:
                raise ValueError(f"unknown decode mode {mode!r}")
            if nxt == EOS:
                break
            out.append(nxt)
            emb = np.concatenate([emb, self.embed(np.array([nxt])).data], axis=0)
        return out

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: dict) -> None:
        for name, p in self.params.items():
            p.data = np.asarray(state[name], dtype=p.data.dtype)


def _heads(x: T.Tensor, B: int, L: int, nh: int, hd: int) -> T.Tensor:
    return T.transpose(T.reshape(x, (B, L, nh, hd)), (0, 2, 1, 3))
