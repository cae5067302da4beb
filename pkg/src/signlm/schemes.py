"""Stage orchestration: tokenizer training (stage 1), modality-alignment
pretraining under the MLP / MLP+LLM (joint) / MLP-then-LLM (staged) schemes,
and instruction tuning under the LLM-only or joint schemes.

Parameter groups: "align" (the projection MLP) and the backbone groups
"embedding"/"blocks"/"head". The motion tokenizer is permanently frozen once
stage 1 completes. The set of tensors a stage may change is exactly its
scheme's trainable set; everything else is bit-identical across the stage.
"""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import tensor as T
from .backbone import LMBackbone, LMConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (EOS, ManifestEntry, TextVocab, build_vocab, read_manifest,
                   tokenize)
from .fusion import AlignmentMLP, build_prompt, build_training_example
from .metrics import EvalReport, evaluate_corpus
from .motion import (FeatureStats, MotionSequence, compute_stats, load_motion,
                     normalize)
from .templates import TemplateBank
from .vq import TokenizerConfig, VQTokenizer, train_tokenizer

log = logging.getLogger(__name__)

PRETRAIN_SCHEMES = ("mlp", "joint", "staged")
INSTRUCT_SCHEMES = ("llm", "joint")
BACKBONE_GROUPS = ("embedding", "blocks", "head")


class StageOrderError(RuntimeError):
    """A stage was requested before its prerequisite stage produced a checkpoint."""

    def __init__(self, missing_stage: str, detail: str = ""):
        super().__init__(f"missing prerequisite stage {missing_stage!r}"
                         + (f": {detail}" if detail else ""))
        self.missing_stage = missing_stage


@dataclass
class SchemeSpec:
    pretrain_scheme: str = "joint"
    instruct_scheme: str = "llm"
    align_lr: float = 2e-4
    backbone_lr: float = 1e-4   # the 2:1 align/backbone ratio is the signal
    pretrain_steps: int = 600
    instruct_steps: int = 600
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.pretrain_scheme not in PRETRAIN_SCHEMES:
            raise ValueError(f"unknown pretrain scheme {self.pretrain_scheme!r}")
        if self.instruct_scheme not in INSTRUCT_SCHEMES + ("none",):
            raise ValueError(f"unknown instruct scheme {self.instruct_scheme!r}")


class Pipeline:
    """Tokenizer + alignment MLP + backbone plus everything needed to run them."""

    def __init__(self, tokenizer: VQTokenizer, stats: FeatureStats,
                 align: AlignmentMLP, backbone: LMBackbone, vocab: TextVocab,
                 bank: TemplateBank):
        self.tokenizer = tokenizer
        self.stats = stats
        self.align = align
        self.backbone = backbone
        self.vocab = vocab
        self.bank = bank
        self.tokenizer_frozen = True
        self.config_echo: dict = {}
        self._token_cache: dict = {}

    # -- persistence ----------------------------------------------------

    def save(self, directory, stage: str, freeze: Optional[dict] = None,
             extra_config: Optional[dict] = None) -> None:
        tensors = {}
        for name, p in self.tokenizer.params.items():
            tensors[f"tokenizer.{name}"] = p.data
        tensors["tokenizer.usage"] = self.tokenizer.usage
        tensors["stats.mean"] = self.stats.mean
        tensors["stats.std"] = self.stats.std
        for name, p in self.align.params.items():
            tensors[name] = p.data
        for name, p in self.backbone.params.items():
            tensors[f"backbone.{name}"] = p.data
        config = {
            "stage": stage,
            "tokenizer": asdict(self.tokenizer.config),
            "lm": asdict(self.backbone.config),
            "vocab": self.vocab.to_dict(),
        }
        if extra_config:
            config.update(extra_config)
        save_checkpoint(directory, tensors, config=config,
                        freeze=freeze or {"tokenizer": True})

    @classmethod
    def load(cls, directory, bank: Optional[TemplateBank] = None) -> "Pipeline":
        if not (Path(directory) / "index.json").exists():
            raise StageOrderError("pretrain", f"no checkpoint at {directory}")
        tensors, config, freeze = load_checkpoint(directory)
        if "lm" not in config:
            raise StageOrderError("pretrain", f"{directory} is not a full pipeline "
                                  "checkpoint")
        tok = VQTokenizer(TokenizerConfig(**config["tokenizer"]),
                          np.random.default_rng(0))
        tok.load_state_dict({k[len("tokenizer."):]: v for k, v in tensors.items()
                             if k.startswith("tokenizer.")})
        for p in tok.params.values():
            p.requires_grad = False
        stats = FeatureStats(mean=tensors["stats.mean"].astype(np.float64),
                             std=tensors["stats.std"].astype(np.float64))
        vocab = TextVocab.load(config["vocab"])
        lmcfg = LMConfig(**config["lm"])
        backbone = LMBackbone(lmcfg, np.random.default_rng(0))
        backbone.load_state_dict({k[len("backbone."):]: v for k, v in tensors.items()
                                  if k.startswith("backbone.")})
        align = AlignmentMLP(tok.config.code_dim, lmcfg.d_model,
                             np.random.default_rng(0))
        align.load_state_dict({k: v for k, v in tensors.items()
                               if k.startswith("align.")})
        pipe = cls(tok, stats, align, backbone, vocab, bank or TemplateBank.load())
        pipe.config_echo = config
        return pipe

    # -- running the model ----------------------------------------------

    def tokenize_entry(self, entry_id: str, seq: MotionSequence):
        """Tokenize a clip through the frozen tokenizer, cached per entry id."""
        if entry_id not in self._token_cache:
            norm = seq if seq.normalized else normalize(seq, self.stats)
            self._token_cache[entry_id] = self.tokenizer.tokenize(norm)
        return self._token_cache[entry_id]

    def translate(self, seq: MotionSequence, template_id: Optional[int] = None,
                  max_new: int = 24) -> List[str]:
        norm = seq if seq.normalized else normalize(seq, self.stats)
        clip = self.tokenizer.tokenize(norm)
        fused = build_prompt(clip, self.align, self.backbone, self.vocab,
                             self.bank, template_id)
        ids = self.backbone.generate(fused.embeddings, max_new=max_new)
        return [self.vocab.id_to_token.get(i, "<UNK>") for i in ids]

    def translate_instruction(self, seq: MotionSequence, instruction: str,
                              max_new: int = 24) -> List[str]:
        """Translate under a free-form instruction containing the motion
        placeholder exactly once."""
        from .fusion import fuse
        norm = seq if seq.normalized else normalize(seq, self.stats)
        clip = self.tokenizer.tokenize(norm)
        prompt_ids = self.vocab.encode(instruction, add_bos=True)
        e_sign = self.align.project(T.Tensor(clip.vectors))
        fused = fuse(np.asarray(prompt_ids), e_sign, self.backbone)
        ids = self.backbone.generate(fused.embeddings, max_new=max_new)
        return [self.vocab.id_to_token.get(i, "<UNK>") for i in ids]


# -- stage 1 ------------------------------------------------------------

def run_stage1(config: TokenizerConfig, entries: List[ManifestEntry], root: Path,
               out_dir: Path, steps: int, batch_size: int = 16, window: int = 48,
               seed: int = 0, lr: float = 2e-4):
    """Train the motion tokenizer on the train split and save its checkpoint.

    On completion the tokenizer is permanently frozen for all later stages."""
    root = Path(root)
    train_entries = [e for e in entries if e.split == "train"]
    raw = [load_motion(root / e.motion_path) for e in train_entries]
    stats = compute_stats(raw)
    sequences = [normalize(s, stats) for s in raw]
    model, history = train_tokenizer(config, sequences, steps=steps,
                                     batch_size=batch_size, window=window,
                                     seed=seed, lr=lr)
    for p in model.params.values():
        p.requires_grad = False
    tensors = {f"tokenizer.{name}": p.data for name, p in model.params.items()}
    tensors["tokenizer.usage"] = model.usage
    tensors["stats.mean"] = stats.mean
    tensors["stats.std"] = stats.std
    save_checkpoint(out_dir, tensors,
                    config={"stage": "tokenizer", "tokenizer": asdict(config)},
                    freeze={"tokenizer": True})
    return model, stats, history


def load_stage1(directory):
    if not (Path(directory) / "index.json").exists():
        raise StageOrderError("tokenizer", f"no checkpoint at {directory}")
    tensors, config, freeze = load_checkpoint(directory)
    if config.get("stage") not in ("tokenizer", "pretrain", "instruct"):
        raise StageOrderError("tokenizer", f"{directory} holds no trained tokenizer")
    tok = VQTokenizer(TokenizerConfig(**config["tokenizer"]), np.random.default_rng(0))
    tok.load_state_dict({k[len("tokenizer."):]: v for k, v in tensors.items()
                         if k.startswith("tokenizer.")})
    for p in tok.params.values():
        p.requires_grad = False
    stats = FeatureStats(mean=tensors["stats.mean"].astype(np.float64),
                         std=tensors["stats.std"].astype(np.float64))
    return tok, stats


# -- LM-stage machinery -------------------------------------------------

def _make_optimizer(pipeline: Pipeline, trainable, align_lr, backbone_lr) -> T.AdamW:
    if "tokenizer" in trainable:
        raise RuntimeError("the motion tokenizer is frozen after stage 1 and "
                           "can never be trained again")
    groups = {"align": {"params": pipeline.align.params, "lr": align_lr}}
    for gname, params in pipeline.backbone.param_groups().items():
        groups[gname] = {"params": params, "lr": backbone_lr}
    opt = T.AdamW(groups)
    trainset = set(trainable)
    if "backbone" in trainset:
        trainset.update(BACKBONE_GROUPS)
        trainset.discard("backbone")
    for gname in groups:
        if gname not in trainset:
            opt.freeze(gname)
    # the loss must not build gradients for frozen groups either
    for gname, g in groups.items():
        for p in g["params"].values():
            p.requires_grad = gname in trainset
    return opt


def _pad_stack(examples):
    """Stack ragged per-example graphs into one padded batch."""
    d = examples[0].inputs.shape[1]
    tmax = max(ex.inputs.shape[0] for ex in examples)
    rows = []
    key_mask = np.zeros((len(examples), tmax), dtype=np.float32)
    targets = np.zeros((len(examples), tmax), dtype=np.int64)
    loss_mask = np.zeros((len(examples), tmax), dtype=np.float32)
    for i, ex in enumerate(examples):
        t = ex.inputs.shape[0]
        inp = ex.inputs
        if t < tmax:
            pad = T.Tensor(np.zeros((tmax - t, d), dtype=inp.data.dtype))
            inp = T.concat([inp, pad], axis=0)
        rows.append(T.reshape(inp, (1, tmax, d)))
        key_mask[i, :t] = 1.0
        targets[i, :t] = ex.target_ids
        loss_mask[i, :t] = ex.loss_mask
    return T.concat(rows, axis=0), key_mask, targets, loss_mask


def train_lm_stage(pipeline: Pipeline, entries: List[ManifestEntry], root: Path,
                   trainable, steps: int, batch_size: int, seed: int,
                   align_lr: float, backbone_lr: float, stage: str,
                   template_mode: str = "pretrain",
                   metrics_path: Optional[Path] = None,
                   eval_entries: Optional[List[ManifestEntry]] = None,
                   eval_every: int = 0, eval_split: str = "val",
                   loss_log: Optional[list] = None) -> None:
    """Shared training loop for the pretrain and instruct stages."""
    root = Path(root)
    opt = _make_optimizer(pipeline, trainable, align_lr, backbone_lr)
    rng = np.random.default_rng((seed, zlib.crc32(stage.encode())))
    seqs = {e.id: load_motion(root / e.motion_path) for e in entries}

    for step in range(steps):
        picks = rng.integers(0, len(entries), size=batch_size)
        examples = []
        for idx in picks:
            entry = entries[idx]
            clip = pipeline.tokenize_entry(entry.id, seqs[entry.id])
            template_id = (None if template_mode == "pretrain"
                           else pipeline.bank.sample(rng))
            ex = build_training_example(entry.text, clip, pipeline.align,
                                        pipeline.backbone, pipeline.vocab,
                                        pipeline.bank, template_id)
            if ex is not None:
                examples.append(ex)
        if not examples:
            continue
        inputs, key_mask, targets, loss_mask = _pad_stack(examples)
        opt.zero_grad()
        logits = pipeline.backbone.forward(inputs, key_mask=key_mask)
        loss = pipeline.backbone.lm_loss(logits, targets, loss_mask)
        if not np.isfinite(loss.data):
            raise RuntimeError(f"{stage} diverged at step {step}")
        loss.backward()
        opt.step()
        if loss_log is not None:
            loss_log.append(float(loss.data))

        if eval_every and (step + 1) % eval_every == 0 and eval_entries:
            report = evaluate_model(pipeline, eval_entries, root,
                                    template_mode=template_mode)
            _append_metrics(metrics_path, stage, step + 1, eval_split, report)

    if metrics_path and eval_entries:
        report = evaluate_model(pipeline, eval_entries, root,
                                template_mode=template_mode)
        _append_metrics(metrics_path, stage, steps, eval_split, report)


def _append_metrics(path, stage, step, split_name, report: EvalReport) -> None:
    if path is None:
        return
    rec = {"stage": stage, "step": step, "split": split_name,
           "bleu1": report.bleu1, "bleu4": report.bleu4, "rougeL": report.rougeL,
           "cider": report.cider, "wer": report.wer, "ins": report.ins,
           "del": report.dels, "sub": report.subs}
    with open(path, "a") as f:
        f.write(json.dumps(rec) + "\n")


def evaluate_model(pipeline: Pipeline, entries: List[ManifestEntry], root: Path,
                   template_mode: str = "pretrain", max_new: int = 24,
                   template_id: Optional[int] = None) -> EvalReport:
    """Greedy-decode every entry and score all text metrics.

    template_mode: "pretrain" (bare frame), "instruct" (fixed template 0 unless
    template_id given), or "holdout" (first held-out template)."""
    root = Path(root)
    pairs = []
    for e in entries:
        seq = load_motion(root / e.motion_path)
        if template_mode == "pretrain":
            tid = None
        elif template_mode == "holdout":
            tid = pipeline.bank.list_holdout()[0] if template_id is None else template_id
        else:
            tid = 0 if template_id is None else template_id
        hyp = pipeline.translate(seq, template_id=tid, max_new=max_new)
        pairs.append((hyp, tokenize(e.text)))
    return evaluate_corpus(pairs)


# -- pretrain / instruct orchestration ----------------------------------

def run_pretrain(spec: SchemeSpec, entries: List[ManifestEntry], root: Path,
                 tokenizer_dir: Path, out_dir: Path, lm_config: LMConfig = None,
                 bank: Optional[TemplateBank] = None,
                 metrics_path: Optional[Path] = None,
                 loss_log: Optional[list] = None) -> Pipeline:
    """Stage 2: align the gesture modality with the backbone.

    mlp: train the projection only; joint: projection + backbone together;
    staged: projection first (phase A), then backbone with the projection
    frozen (phase B, fresh optimizer state)."""
    tokenizer, stats = load_stage1(tokenizer_dir)
    bank = bank or TemplateBank.load()
    train_entries = [e for e in entries if e.split == "train"]
    vocab = build_vocab(train_entries, extra_texts=bank.all_texts())
    if lm_config is None:
        lm_config = LMConfig(vocab_size=len(vocab))
    elif lm_config.vocab_size != len(vocab):
        raise ValueError("lm config vocab size does not match the built vocabulary")

    rng = np.random.default_rng(spec.seed)
    backbone = LMBackbone(lm_config, rng)
    align = AlignmentMLP(tokenizer.config.code_dim, lm_config.d_model, rng)
    pipeline = Pipeline(tokenizer, stats, align, backbone, vocab, bank)

    val_entries = [e for e in entries if e.split == "val"] or train_entries
    common = dict(entries=train_entries, root=root, batch_size=spec.batch_size,
                  seed=spec.seed, align_lr=spec.align_lr,
                  backbone_lr=spec.backbone_lr, template_mode="pretrain",
                  metrics_path=metrics_path, eval_entries=val_entries,
                  loss_log=loss_log)

    out_dir = Path(out_dir)
    if spec.pretrain_scheme == "mlp":
        train_lm_stage(pipeline, trainable=("align",), steps=spec.pretrain_steps,
                       stage="pretrain-mlp", **common)
    elif spec.pretrain_scheme == "joint":
        train_lm_stage(pipeline, trainable=("align", "backbone"),
                       steps=spec.pretrain_steps, stage="pretrain-joint", **common)
    else:  # staged: phase A then phase B, optimizer state reset between phases
        half = spec.pretrain_steps // 2
        train_lm_stage(pipeline, trainable=("align",), steps=half,
                       stage="pretrain-staged-a", **common)
        pipeline.save(out_dir / "phase_a", stage="pretrain",
                      extra_config={"scheme": spec.pretrain_scheme, "phase": "a"})
        train_lm_stage(pipeline, trainable=("backbone",),
                       steps=spec.pretrain_steps - half,
                       stage="pretrain-staged-b", **common)
        pipeline.save(out_dir / "phase_b", stage="pretrain",
                      extra_config={"scheme": spec.pretrain_scheme, "phase": "b"})

    pipeline.save(out_dir, stage="pretrain",
                  extra_config={"scheme": spec.pretrain_scheme})
    return pipeline


def run_instruct(spec: SchemeSpec, entries: List[ManifestEntry], root: Path,
                 pretrain_dir: Path, out_dir: Path,
                 bank: Optional[TemplateBank] = None,
                 metrics_path: Optional[Path] = None,
                 loss_log: Optional[list] = None) -> Pipeline:
    """Stage 3: instruction tuning with per-example random (non-holdout)
    templates. llm: backbone only; joint: backbone + projection."""
    pipeline = Pipeline.load(pretrain_dir, bank=bank)
    if pipeline.config_echo.get("stage") not in ("pretrain", "instruct"):
        raise StageOrderError("pretrain")
    train_entries = [e for e in entries if e.split == "train"]
    val_entries = [e for e in entries if e.split == "val"] or train_entries
    trainable = ("backbone",) if spec.instruct_scheme == "llm" else ("align", "backbone")
    train_lm_stage(pipeline, entries=train_entries, root=root, trainable=trainable,
                   steps=spec.instruct_steps, batch_size=spec.batch_size,
                   seed=spec.seed + 1, align_lr=spec.align_lr,
                   backbone_lr=spec.backbone_lr, stage="instruct",
                   template_mode="instruct", metrics_path=metrics_path,
                   eval_entries=val_entries, loss_log=loss_log)
    pipeline.save(Path(out_dir), stage="instruct",
                  extra_config={"scheme": spec.instruct_scheme})
    return pipeline
