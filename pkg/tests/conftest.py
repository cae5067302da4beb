"""Shared fixtures: a tiny synthetic corpus on disk and a small trained tokenizer.

Session-scoped so the slow pieces run once.
"""

import numpy as np
import pytest

from signlm.data import ManifestEntry, split, write_manifest
from signlm.motion import (compute_stats, extract_features, load_motion,
                           normalize, save_motion, synth_corpus)
from signlm.vq import TokenizerConfig, train_tokenizer

SMALL_TOKENIZER = TokenizerConfig(codebook_size=32, code_dim=16, width=32,
                                  n_res_blocks=1)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """12-clip corpus with manifest, written once per session."""
    root = tmp_path_factory.mktemp("corpus")
    (root / "motion").mkdir()
    corpus = synth_corpus(seed=7, vocab_size=5, samples=12)
    entries = []
    for i, (clip, text) in enumerate(corpus):
        cid = f"clip{i:05d}"
        seq = extract_features(clip)
        save_motion(root / "motion" / cid, seq, cid)
        entries.append(ManifestEntry(id=cid, motion_path=f"motion/{cid}", text=text))
    split(entries, seed=7)
    write_manifest(root / "manifest.jsonl", entries)
    return root


@pytest.fixture(scope="session")
def corpus_entries(corpus_dir):
    from signlm.data import read_manifest
    return read_manifest(corpus_dir / "manifest.jsonl")


@pytest.fixture(scope="session")
def norm_sequences(corpus_entries, corpus_dir):
    """(normalized sequences, stats) over the train split."""
    raw = [load_motion(corpus_dir / e.motion_path) for e in corpus_entries
           if e.split == "train"]
    stats = compute_stats(raw)
    return [normalize(s, stats) for s in raw], stats


@pytest.fixture(scope="session")
def small_tokenizer(norm_sequences):
    """A briefly trained small tokenizer; enough structure for behavioral tests."""
    sequences, stats = norm_sequences
    model, history = train_tokenizer(SMALL_TOKENIZER, sequences, steps=150,
                                     batch_size=8, window=32, seed=0)
    for p in model.params.values():
        p.requires_grad = False
    return model, stats, history
