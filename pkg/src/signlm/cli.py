"""Command-line entry point.

Commands: synth-data, train-tokenizer, pretrain, instruct, codebook-study,
translate, evaluate, gradcheck. Exit codes: 0 success, 2 config error,
3 stage-ordering error, 4 numeric failure. LSLM_THREADS caps worker
parallelism (applied to the BLAS thread pools).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

log = logging.getLogger("signlm")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE_ORDER = 3
EXIT_NUMERIC = 4


def _apply_thread_cap() -> None:
    cap = os.environ.get("LSLM_THREADS")
    if not cap:
        return
    try:
        n = max(int(cap), 1)
    except ValueError:
        raise ConfigError(f"LSLM_THREADS must be an integer, got {cap!r}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(limits=n)
    except ImportError:
        pass


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """One flat run configuration, echoed into every artifact."""

    seed: int = 0
    manifest: str = "data/manifest.jsonl"
    data_root: str = "data"
    out_dir: str = "runs/default"
    tokenizer: dict = field(default_factory=dict)     # TokenizerConfig overrides
    lm: dict = field(default_factory=dict)            # LMConfig overrides
    scheme: dict = field(default_factory=dict)        # SchemeSpec overrides
    tokenizer_steps: int = 2000
    tokenizer_batch: int = 16
    tokenizer_window: int = 48
    tokenizer_lr: float = 2e-4
    eval_every: int = 0
    max_new: int = 24

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}")
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)

    def tokenizer_config(self, **overrides):
        from .vq import TokenizerConfig
        merged = {**self.tokenizer, **overrides}
        try:
            return TokenizerConfig(**merged)
        except TypeError as exc:
            raise ConfigError(f"bad tokenizer config: {exc}")

    def scheme_spec(self, **overrides):
        from .schemes import SchemeSpec
        merged = {"seed": self.seed, **self.scheme, **overrides}
        try:
            return SchemeSpec(**merged)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad scheme config: {exc}")

    def lm_config(self, vocab_size: int):
        from .backbone import LMConfig
        if "vocab_size" in self.lm and self.lm["vocab_size"] != vocab_size:
            raise ConfigError("lm.vocab_size does not match the built vocabulary")
        merged = {**self.lm, "vocab_size": vocab_size}
        try:
            return LMConfig(**merged)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad lm config: {exc}")


def _load_split(cfg: RunConfig, which: str = None):
    from .data import read_manifest
    path = Path(cfg.manifest)
    if not path.exists():
        raise ConfigError(f"manifest not found: {path}")
    entries = read_manifest(path)
    if which:
        entries = [e for e in entries if e.split == which]
        if not entries:
            raise ConfigError(f"manifest has no {which!r} entries")
    return entries


def _echo(out_dir: Path, cfg: RunConfig, extra: dict = None) -> None:
    payload = {"config": cfg.to_dict(), **(extra or {})}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.json").write_text(
        json.dumps(payload, sort_keys=True, indent=1) + "\n")


# -- commands -----------------------------------------------------------

def cmd_synth_data(args) -> int:
    from .data import ManifestEntry, split, write_manifest
    from .motion import extract_features, save_motion, synth_corpus

    if args.gesture_vocab < 2:
        raise ConfigError("--gesture-vocab must be at least 2")
    out = Path(args.out)
    motion_dir = out / "motion"
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigError(f"output dir {out} is not empty (use --force)")
    motion_dir.mkdir(parents=True, exist_ok=True)

    corpus = synth_corpus(seed=args.seed, vocab_size=args.gesture_vocab,
                          samples=args.samples)
    entries = []
    for i, (clip, text) in enumerate(corpus):
        cid = f"clip{i:05d}"
        seq = extract_features(clip)
        save_motion(motion_dir / cid, seq, cid)
        entries.append(ManifestEntry(id=cid, motion_path=f"motion/{cid}", text=text))
    split(entries, seed=args.seed)
    write_manifest(out / "manifest.jsonl", entries)
    counts = {s: sum(e.split == s for e in entries) for s in ("train", "val", "test")}
    print(f"wrote {len(entries)} clips to {out} "
          f"(train={counts['train']} val={counts['val']} test={counts['test']})")
    return EXIT_OK


def cmd_train_tokenizer(args) -> int:
    from .figures import plot_loss_curve, plot_usage_histogram
    from .schemes import run_stage1

    cfg = RunConfig.from_file(args.config)
    entries = _load_split(cfg)
    out_dir = Path(cfg.out_dir) / "tokenizer"
    model, stats, history = run_stage1(
        cfg.tokenizer_config(), entries, Path(cfg.data_root), out_dir,
        steps=cfg.tokenizer_steps, batch_size=cfg.tokenizer_batch,
        window=cfg.tokenizer_window, seed=cfg.seed, lr=cfg.tokenizer_lr)
    _echo(out_dir, cfg)
    (out_dir / "history.json").write_text(json.dumps(history) + "\n")
    plot_loss_curve([h["total"] for h in history], out_dir / "loss.png",
                    title="tokenizer loss")
    plot_usage_histogram(model.usage, out_dir / "usage.png")
    print(f"tokenizer checkpoint at {out_dir} "
          f"(final loss {history[-1]['total']:.4f})")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    from .data import build_vocab
    from .figures import plot_loss_curve
    from .schemes import run_pretrain
    from .templates import TemplateBank

    cfg = RunConfig.from_file(args.config)
    entries = _load_split(cfg)
    spec = cfg.scheme_spec(pretrain_scheme=args.scheme)
    out_dir = Path(cfg.out_dir) / "pretrain"
    tokenizer_dir = Path(cfg.out_dir) / "tokenizer"

    bank = TemplateBank.load()
    lm_config = None
    if cfg.lm:
        train_entries = [e for e in entries if e.split == "train"]
        vocab = build_vocab(train_entries, extra_texts=bank.all_texts())
        lm_config = cfg.lm_config(len(vocab))

    out_dir.mkdir(parents=True, exist_ok=True)
    losses: list = []
    run_pretrain(spec, entries, Path(cfg.data_root), tokenizer_dir, out_dir,
                 lm_config=lm_config, bank=bank,
                 metrics_path=out_dir / "metrics.jsonl", loss_log=losses)
    _echo(out_dir, cfg, {"scheme": args.scheme})
    plot_loss_curve(losses, out_dir / "loss.png", title=f"pretrain ({args.scheme})")
    print(f"pretrain checkpoint at {out_dir}")
    return EXIT_OK


def cmd_instruct(args) -> int:
    from .figures import plot_loss_curve
    from .schemes import run_instruct

    cfg = RunConfig.from_file(args.config)
    entries = _load_split(cfg)
    spec = cfg.scheme_spec(instruct_scheme=args.tune)
    out_dir = Path(cfg.out_dir) / "instruct"
    pretrain_dir = Path(cfg.out_dir) / "pretrain"

    out_dir.mkdir(parents=True, exist_ok=True)
    losses: list = []
    run_instruct(spec, entries, Path(cfg.data_root), pretrain_dir, out_dir,
                 metrics_path=out_dir / "metrics.jsonl", loss_log=losses)
    _echo(out_dir, cfg, {"tune": args.tune})
    plot_loss_curve(losses, out_dir / "loss.png", title=f"instruct ({args.tune})")
    print(f"instruct checkpoint at {out_dir}")
    return EXIT_OK


def cmd_codebook_study(args) -> int:
    import numpy as np

    from .checkpoint import load_checkpoint, save_checkpoint
    from .figures import plot_codebook_sweep
    from .motion import FeatureStats, compute_stats, load_motion, normalize
    from .vq import TokenizerConfig, VQTokenizer, codebook_report, train_tokenizer

    cfg = RunConfig.from_file(args.config)
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--sizes must be comma-separated ints, got {args.sizes!r}")
    if not sizes:
        raise ConfigError("--sizes is empty")

    entries = _load_split(cfg, "train")
    root = Path(cfg.data_root)
    raw = [load_motion(root / e.motion_path) for e in entries]
    stats = compute_stats(raw)
    sequences = [normalize(s, stats) for s in raw]

    out_dir = Path(cfg.out_dir) / "codebook"
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in sizes:
        ck_dir = out_dir / f"k{k}"
        tok_cfg = cfg.tokenizer_config(codebook_size=k)
        if args.no_train:
            tensors, saved_cfg, _ = load_checkpoint(ck_dir)
            model = VQTokenizer(TokenizerConfig(**saved_cfg["tokenizer"]),
                                np.random.default_rng(0))
            model.load_state_dict(
                {n[len("tokenizer."):]: v for n, v in tensors.items()
                 if n.startswith("tokenizer.")})
            stats = FeatureStats(mean=tensors["stats.mean"].astype(np.float64),
                                 std=tensors["stats.std"].astype(np.float64))
            sequences = [normalize(s, stats) for s in raw]
        else:
            model, _ = train_tokenizer(tok_cfg, sequences, steps=cfg.tokenizer_steps,
                                       batch_size=cfg.tokenizer_batch,
                                       window=cfg.tokenizer_window, seed=cfg.seed,
                                       lr=cfg.tokenizer_lr)
            tensors = {f"tokenizer.{n}": p.data for n, p in model.params.items()}
            tensors["tokenizer.usage"] = model.usage
            tensors["stats.mean"] = stats.mean
            tensors["stats.std"] = stats.std
            save_checkpoint(ck_dir, tensors,
                            config={"stage": "tokenizer", "tokenizer": asdict(tok_cfg)},
                            freeze={"tokenizer": True})
        report = codebook_report(model, sequences, stats)
        rows.append(report)

    table = [{k: r[k] for k in ("codebook_size", "fid", "mpjpe", "pampjpe",
                                "perplexity", "active_codes")} for r in rows]
    (out_dir / "study.json").write_text(
        json.dumps({"config": cfg.to_dict(), "rows": table}, indent=1,
                   sort_keys=True) + "\n")
    with open(out_dir / "study.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(table[0]))
        writer.writeheader()
        writer.writerows(table)
    plot_codebook_sweep(table, out_dir / "study.png")
    _echo(out_dir, cfg, {"sizes": sizes})
    for r in table:
        print(f"K={r['codebook_size']}\tFID={r['fid']:.6f}\tMPJPE={r['mpjpe']:.4f}\t"
              f"PAMPJPE={r['pampjpe']:.4f}\tperplexity={r['perplexity']:.1f}")
    return EXIT_OK


def cmd_translate(args) -> int:
    from .motion import load_motion
    from .schemes import Pipeline
    from .templates import MOTION_PLACEHOLDER

    pipeline = Pipeline.load(args.checkpoint)
    try:
        seq = load_motion(args.motion)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"malformed motion file {args.motion}: {exc}")

    if args.instruction is not None:
        instruction = args.instruction
        if MOTION_PLACEHOLDER not in instruction:
            instruction = f"{instruction} {MOTION_PLACEHOLDER}"
            log.warning("instruction lacked the motion placeholder; wrapped as %r",
                        instruction)
        tokens = pipeline.translate_instruction(seq, instruction,
                                                max_new=args.max_new)
    else:
        tokens = pipeline.translate(seq, template_id=args.template_id,
                                    max_new=args.max_new)
    print(" ".join(tokens))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .figures import plot_eval_report
    from .schemes import Pipeline, evaluate_model

    cfg = RunConfig.from_file(args.config) if args.config else RunConfig(
        manifest=args.manifest or "data/manifest.jsonl",
        data_root=args.data_root or "data")
    if args.manifest:
        cfg.manifest = args.manifest
    if args.data_root:
        cfg.data_root = args.data_root
    entries = _load_split(cfg, args.split)

    pipeline = Pipeline.load(args.checkpoint)
    report = evaluate_model(pipeline, entries, Path(cfg.data_root),
                            template_mode=args.template_mode, max_new=cfg.max_new)
    payload = {"config": cfg.to_dict(), "checkpoint": str(args.checkpoint),
               "split": args.split, "template_mode": args.template_mode,
               **report.to_dict()}
    out = Path(args.out) if args.out else Path(args.checkpoint) / f"eval_{args.split}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    plot_eval_report(report.to_dict(), out.with_suffix(".png"),
                     title=f"evaluation ({args.split})")
    d = report.to_dict()
    print("\t".join(f"{k}={d[k]:.4f}" for k in
                    ("bleu1", "bleu4", "rougeL", "cider", "wer")))
    print(f"report written to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, run_suite, suite_passed

    results = run_suite(seed=args.seed, corrupt_op=args.corrupt_op)
    width = max(len(n) for n in results)
    for name, err in sorted(results.items()):
        status = "ok" if err < TOLERANCE else "FAIL"
        print(f"{name:<{width}}  max_rel_err={err:.3e}  {status}")
    if not suite_passed(results):
        print(f"gradcheck FAILED (tolerance {TOLERANCE:g})", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"gradcheck passed ({len(results)} ops, tolerance {TOLERANCE:g})")
    return EXIT_OK


# -- parser -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="signlm",
                                     description="gesture-to-text pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic gesture corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--gesture-vocab", type=int, default=16)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("train-tokenizer", help="stage 1: motion tokenizer")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_train_tokenizer)

    p = sub.add_parser("pretrain", help="stage 2: modality alignment")
    p.add_argument("--scheme", choices=("mlp", "joint", "staged"), required=True)
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("instruct", help="stage 3: instruction tuning")
    p.add_argument("--tune", choices=("llm", "joint"), required=True)
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_instruct)

    p = sub.add_parser("codebook-study", help="codebook-size sweep")
    p.add_argument("--sizes", default="64,256,1024")
    p.add_argument("--config", required=True)
    p.add_argument("--no-train", action="store_true",
                   help="re-render the study from saved checkpoints")
    p.set_defaults(fn=cmd_codebook_study)

    p = sub.add_parser("translate", help="translate one motion file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--motion", required=True)
    p.add_argument("--instruction", default=None)
    p.add_argument("--template-id", type=int, default=None)
    p.add_argument("--max-new", type=int, default=24)
    p.set_defaults(fn=cmd_translate)

    p = sub.add_parser("evaluate", help="score a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--config", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--data-root", default=None)
    p.add_argument("--template-mode", choices=("pretrain", "instruct", "holdout"),
                   default="pretrain")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt-op", default=None,
                   help="negative-control hook: corrupt the named op's gradient")
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    try:
        _apply_thread_cap()
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s")
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - map to documented exit codes
        from .checkpoint import CheckpointError
        from .schemes import StageOrderError
        if isinstance(exc, StageOrderError):
            print(f"stage-ordering error: {exc}", file=sys.stderr)
            return EXIT_STAGE_ORDER
        if isinstance(exc, (ValueError, OSError, KeyError, CheckpointError)):
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
