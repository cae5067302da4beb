"""CLI surface: commands, exit codes, artifacts. Runs main() in-process."""

import json
import os

import numpy as np
import pytest

from signlm.cli import (EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, EXIT_STAGE_ORDER,
                        RunConfig, main)

FAST = {
    "tokenizer": {"codebook_size": 16, "code_dim": 8, "width": 16},
    "lm": {"d_model": 32, "n_layers": 1, "n_heads": 2, "max_len": 120},
    "scheme": {"pretrain_steps": 4, "instruct_steps": 4, "batch_size": 2},
    "tokenizer_steps": 10,
    "tokenizer_batch": 4,
    "tokenizer_window": 24,
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Data + config + tokenizer + pretrain checkpoints, built once via the CLI."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["synth-data", "--samples", "12", "--gesture-vocab", "4",
                 "--seed", "7", "--out", str(data)]) == EXIT_OK
    cfg = dict(FAST, manifest=str(data / "manifest.jsonl"), data_root=str(data),
               out_dir=str(root / "run"))
    cfg_path = root / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    assert main(["train-tokenizer", "--config", str(cfg_path)]) == EXIT_OK
    assert main(["pretrain", "--scheme", "joint", "--config", str(cfg_path)]) == EXIT_OK
    return root, cfg_path, data


def test_synth_data_layout(workdir):
    root, _, data = workdir
    assert (data / "manifest.jsonl").exists()
    clips = sorted((data / "motion").glob("clip*.bin"))
    assert len(clips) == 12
    lines = (data / "manifest.jsonl").read_text().splitlines()
    assert len(lines) == 12
    row = json.loads(lines[0])
    assert set(row) >= {"id", "motion_path", "text", "split"}


def test_synth_data_refuses_nonempty_dir(workdir, capsys):
    _, _, data = workdir
    assert main(["synth-data", "--samples", "3", "--out", str(data)]) == EXIT_CONFIG
    assert "force" in capsys.readouterr().err
    assert main(["synth-data", "--samples", "12", "--seed", "7",
                 "--gesture-vocab", "4", "--out", str(data), "--force"]) == EXIT_OK


def test_synth_data_vocab_guard(tmp_path):
    assert main(["synth-data", "--samples", "3", "--gesture-vocab", "1",
                 "--out", str(tmp_path / "x")]) == EXIT_CONFIG


def test_synth_data_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["synth-data", "--samples", "10", "--seed", "3",
                     "--gesture-vocab", "4", "--out", str(tmp_path / d)]) == EXIT_OK
    for name in sorted(os.listdir(tmp_path / "a" / "motion")):
        a = (tmp_path / "a" / "motion" / name).read_bytes()
        b = (tmp_path / "b" / "motion" / name).read_bytes()
        assert a == b, name
    assert (tmp_path / "a" / "manifest.jsonl").read_bytes() == \
        (tmp_path / "b" / "manifest.jsonl").read_bytes()


def test_tokenizer_artifacts(workdir):
    root, _, _ = workdir
    tok = root / "run" / "tokenizer"
    for name in ("index.json", "params.bin", "history.json", "loss.png",
                 "usage.png", "run_config.json"):
        assert (tok / name).exists(), name


def test_pretrain_artifacts_and_metrics_schema(workdir):
    root, _, _ = workdir
    pre = root / "run" / "pretrain"
    assert (pre / "index.json").exists()
    assert (pre / "loss.png").exists()
    rows = [json.loads(l) for l in (pre / "metrics.jsonl").read_text().splitlines()]
    assert rows and set(rows[0]) == {"stage", "step", "split", "bleu1", "bleu4",
                                     "rougeL", "cider", "wer", "ins", "del", "sub"}


def test_instruct_and_evaluate(workdir):
    root, cfg_path, _ = workdir
    assert main(["instruct", "--tune", "llm", "--config", str(cfg_path)]) == EXIT_OK
    ins = root / "run" / "instruct"
    assert (ins / "index.json").exists()
    assert main(["evaluate", "--checkpoint", str(ins), "--split", "val",
                 "--config", str(cfg_path), "--template-mode", "instruct"]) == EXIT_OK
    report = json.loads((ins / "eval_val.json").read_text())
    assert {"bleu1", "bleu4", "rougeL", "cider", "wer"} <= set(report)
    assert (ins / "eval_val.png").exists()


def test_translate_template_and_instruction(workdir, capsys):
    root, _, data = workdir
    ck = root / "run" / "pretrain"
    motion = str(data / "motion" / "clip00000")
    assert main(["translate", "--checkpoint", str(ck), "--motion", motion]) == EXIT_OK
    assert main(["translate", "--checkpoint", str(ck), "--motion", motion,
                 "--template-id", "0"]) == EXIT_OK
    # instruction without the placeholder is auto-wrapped, not an error
    assert main(["translate", "--checkpoint", str(ck), "--motion", motion,
                 "--instruction", "Describe the gestures."]) == EXIT_OK
    capsys.readouterr()


def test_translate_missing_motion_is_config_error(workdir):
    root, _, _ = workdir
    ck = root / "run" / "pretrain"
    assert main(["translate", "--checkpoint", str(ck),
                 "--motion", "/nonexistent/m"]) == EXIT_CONFIG


def test_pretrain_without_tokenizer_is_stage_order_error(tmp_path, workdir):
    _, _, data = workdir
    cfg = dict(FAST, manifest=str(data / "manifest.jsonl"), data_root=str(data),
               out_dir=str(tmp_path / "fresh"))
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    assert main(["pretrain", "--scheme", "mlp", "--config", str(p)]) == \
        EXIT_STAGE_ORDER


def test_instruct_without_pretrain_is_stage_order_error(tmp_path, workdir):
    _, _, data = workdir
    cfg = dict(FAST, manifest=str(data / "manifest.jsonl"), data_root=str(data),
               out_dir=str(tmp_path / "fresh"))
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    assert main(["instruct", "--tune", "llm", "--config", str(p)]) == \
        EXIT_STAGE_ORDER


def test_unknown_config_key_rejected(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"learning_rate": 1.0}))
    assert main(["train-tokenizer", "--config", str(p)]) == EXIT_CONFIG
    with pytest.raises(Exception):
        RunConfig.from_file(p)


def test_malformed_json_config_rejected(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["train-tokenizer", "--config", str(p)]) == EXIT_CONFIG


def test_missing_manifest_is_config_error(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(dict(FAST, manifest=str(tmp_path / "no.jsonl"),
                                 data_root=str(tmp_path),
                                 out_dir=str(tmp_path / "run"))))
    assert main(["train-tokenizer", "--config", str(p)]) == EXIT_CONFIG


def test_codebook_study_artifacts(workdir, capsys):
    root, cfg_path, _ = workdir
    assert main(["codebook-study", "--sizes", "8,16", "--config",
                 str(cfg_path)]) == EXIT_OK
    study = root / "run" / "codebook"
    for name in ("study.json", "study.csv", "study.png"):
        assert (study / name).exists(), name
    out = capsys.readouterr().out
    assert "K=8" in out and "K=16" in out and "FID=" in out
    rows = json.loads((study / "study.json").read_text())["rows"]
    assert [r["codebook_size"] for r in rows] == [8, 16]
    # re-render from the saved checkpoints without retraining
    assert main(["codebook-study", "--sizes", "8,16", "--config", str(cfg_path),
                 "--no-train"]) == EXIT_OK


def test_codebook_study_bad_sizes(workdir):
    _, cfg_path, _ = workdir
    assert main(["codebook-study", "--sizes", "8,x", "--config",
                 str(cfg_path)]) == EXIT_CONFIG


def test_gradcheck_passes_and_negative_control(capsys):
    assert main(["gradcheck", "--seed", "0"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "passed" in out
    assert main(["gradcheck", "--seed", "0", "--corrupt-op", "matmul"]) == \
        EXIT_NUMERIC


def test_thread_cap_env(monkeypatch, capsys):
    monkeypatch.setenv("LSLM_THREADS", "1")
    assert main(["gradcheck", "--seed", "1"]) == EXIT_OK
    assert os.environ["OMP_NUM_THREADS"] == "1"
    capsys.readouterr()
    monkeypatch.setenv("LSLM_THREADS", "zebra")
    assert main(["gradcheck", "--seed", "1"]) == EXIT_CONFIG


def test_unknown_command_exits_nonzero():
    assert main(["frobnicate"]) not in (EXIT_OK, None)
