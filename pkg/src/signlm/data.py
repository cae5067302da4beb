"""Manifest handling, deterministic splitting, text vocabulary, and padded batches."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, List, Optional

import numpy as np

from .motion import FEATURE_DIM, load_motion
from .templates import MOTION_PLACEHOLDER

log = logging.getLogger(__name__)

MAX_TOKEN_LENGTH = 250

PAD, BOS, EOS, UNK, MOTION = 0, 1, 2, 3, 4
SPECIALS = {"<PAD>": PAD, "<BOS>": BOS, "<EOS>": EOS, "<UNK>": UNK, MOTION_PLACEHOLDER: MOTION}


@dataclass
class ManifestEntry:
    id: str
    motion_path: str
    text: str
    split: str = ""


def write_manifest(path, entries: Iterable[ManifestEntry]) -> None:
    with open(path, "w") as f:
        for e in entries:
            f.write(json.dumps({"id": e.id, "motion_path": e.motion_path,
                                "text": e.text, "split": e.split}) + "\n")


def read_manifest(path) -> List[ManifestEntry]:
    entries = []
    seen = set()
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            d = json.loads(line)
            if d["id"] in seen:
                raise ValueError(f"duplicate manifest id {d['id']!r}")
            seen.add(d["id"])
            entries.append(ManifestEntry(**d))
    return entries


def split(entries: List[ManifestEntry], seed: int) -> List[ManifestEntry]:
    """Assign 80/10/10 train/val/test splits by a seed-deterministic shuffle.

    Remainder rows go to train."""
    if len(entries) < 10:
        raise ValueError("need at least 10 entries to split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(entries))
    n = len(entries)
    n_test = n // 10
    n_val = n // 10
    for rank, idx in enumerate(order):
        if rank < n_test:
            entries[idx].split = "test"
        elif rank < n_test + n_val:
            entries[idx].split = "val"
        else:
            entries[idx].split = "train"
    return entries


_EDGE_PUNCT = ".,:;!?\"'()"


def tokenize(text: str) -> List[str]:
    """Lowercased whitespace tokens with edge punctuation stripped; the motion
    placeholder survives verbatim (even with punctuation attached)."""
    out = []
    for tok in text.split():
        core = tok.strip(_EDGE_PUNCT)
        if core == MOTION_PLACEHOLDER:
            out.append(core)
        elif core:
            out.append(core.lower())
    return out


class TextVocab:
    """Word-level vocabulary with PAD/BOS/EOS/UNK and a reserved MOTION id."""

    def __init__(self, tokens: List[str]):
        self.token_to_id = dict(SPECIALS)
        for tok in tokens:
            if tok not in self.token_to_id:
                self.token_to_id[tok] = len(self.token_to_id)
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}

    def __len__(self):
        return len(self.token_to_id)

    def encode(self, text: str, add_bos: bool = False, add_eos: bool = False) -> np.ndarray:
        ids = [self.token_to_id.get(t, UNK) for t in tokenize(text)]
        if add_bos:
            ids = [BOS] + ids
        if add_eos:
            ids = ids + [EOS]
        return np.asarray(ids, dtype=np.int64)

    def decode(self, ids) -> str:
        words = []
        for i in ids:
            i = int(i)
            if i in (PAD, BOS):
                continue
            if i == EOS:
                break
            words.append(self.id_to_token.get(i, "<UNK>"))
        return " ".join(words)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps({
            "specials": SPECIALS,
            "tokens": {t: i for t, i in self.token_to_id.items() if t not in SPECIALS},
        }, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path_or_dict) -> "TextVocab":
        d = path_or_dict if isinstance(path_or_dict, dict) else json.loads(Path(path_or_dict).read_text())
        vocab = cls.__new__(cls)
        vocab.token_to_id = dict(SPECIALS)
        for tok, i in sorted(d["tokens"].items(), key=lambda kv: kv[1]):
            vocab.token_to_id[tok] = i
        vocab.id_to_token = {i: t for t, i in vocab.token_to_id.items()}
        return vocab

    def to_dict(self) -> dict:
        return {"specials": SPECIALS,
                "tokens": {t: i for t, i in self.token_to_id.items() if t not in SPECIALS}}


def build_vocab(train_entries: List[ManifestEntry], min_count: int = 1,
                extra_texts: Optional[List[str]] = None) -> TextVocab:
    """Vocabulary from train-split captions only (plus fixed system texts such as
    the instruction templates, which are not data)."""
    train_entries = [e for e in train_entries if e.split in ("", "train")]
    if not train_entries:
        raise ValueError("empty train split")
    counts = Counter()
    for e in train_entries:
        counts.update(t for t in tokenize(e.text) if t != MOTION_PLACEHOLDER)
    kept = sorted((t for t, c in counts.items() if c >= min_count),
                  key=lambda t: (-counts[t], t))
    extra = []
    if extra_texts:
        seen = set(kept)
        for text in extra_texts:
            for tok in tokenize(text):
                if tok != MOTION_PLACEHOLDER and tok not in seen:
                    seen.add(tok)
                    extra.append(tok)
    return TextVocab(kept + sorted(extra))


@dataclass
class Batch:
    ids: List[str]
    motion: np.ndarray        # (B, Tmax, 623) float32
    frame_mask: np.ndarray    # (B, Tmax) float32
    prompt_ids: List[np.ndarray]   # rendered prompt token ids, ragged
    target_ids: np.ndarray    # (B, Lmax) padded with PAD
    target_mask: np.ndarray   # (B, Lmax) float32


class BatchIterator:
    """Epoch-deterministic padded batches over one split.

    render_fn(entry) -> (prompt_text, target_text). Entries whose prompt+target
    exceed MAX_TOKEN_LENGTH tokens are skipped with a counted warning."""

    def __init__(self, entries: List[ManifestEntry], vocab: TextVocab,
                 batch_size: int, seed: int, epoch: int,
                 render_fn: Callable[[ManifestEntry], tuple],
                 motion_loader: Callable = None, root: Optional[Path] = None):
        self.entries = entries
        self.vocab = vocab
        self.batch_size = batch_size
        self.rng = np.random.default_rng((seed, epoch))
        self.render_fn = render_fn
        self.motion_loader = motion_loader or (lambda e: load_motion(
            (root / e.motion_path) if root else e.motion_path))
        self.skipped = 0

    def __iter__(self):
        order = self.rng.permutation(len(self.entries))
        pending = []
        for idx in order:
            entry = self.entries[idx]
            prompt_text, target_text = self.render_fn(entry)
            prompt = self.vocab.encode(prompt_text, add_bos=True)
            target = self.vocab.encode(target_text, add_eos=True)
            if len(prompt) + len(target) > MAX_TOKEN_LENGTH:
                self.skipped += 1
                log.warning("skipping over-length entry %s (%d tokens)",
                            entry.id, len(prompt) + len(target))
                continue
            seq = self.motion_loader(entry)
            pending.append((entry.id, seq.features, prompt, target))
            if len(pending) == self.batch_size:
                yield self._collate(pending)
                pending = []
        if pending:
            yield self._collate(pending)

    @staticmethod
    def _collate(items) -> Batch:
        ids = [it[0] for it in items]
        tmax = max(it[1].shape[0] for it in items)
        lmax = max(len(it[3]) for it in items)
        B = len(items)
        motion = np.zeros((B, tmax, FEATURE_DIM), dtype=np.float32)
        fmask = np.zeros((B, tmax), dtype=np.float32)
        targets = np.full((B, lmax), PAD, dtype=np.int64)
        tmask = np.zeros((B, lmax), dtype=np.float32)
        prompts = []
        for i, (_, feats, prompt, target) in enumerate(items):
            motion[i, :feats.shape[0]] = feats
            fmask[i, :feats.shape[0]] = 1.0
            targets[i, :len(target)] = target
            tmask[i, :len(target)] = 1.0
            prompts.append(prompt)
        return Batch(ids=ids, motion=motion, frame_mask=fmask,
                     prompt_ids=prompts, target_ids=targets, target_mask=tmask)
