"""Metric oracles.

The text metrics are checked against independent, definitional implementations
(written first, straight from the formulas) on a fixed 10-sentence corpus, and
against frozen values computed once from those oracles. The fixture is built so
every n-gram order has corpus-level matches, keeping BLEU smoothing-free and
the oracle purely definitional.
"""

import math
from collections import Counter

import numpy as np
import pytest

from signlm.metrics import (EvalReport, bleu, cider, evaluate_corpus, fid,
                            mpjpe, pampjpe, rouge_l, wer_align)
from signlm.motion import JointClip

PAIRS = [
    ("the quick brown fox jumps over the lazy dog",) * 2,
    ("a stitch in time saves nine",) * 2,
    ("hello world", "hello there world"),
    ("good morning", "good morning friend"),
    ("the cat sat on the mat", "the cat sat on a mat"),
    ("it rains", "it rains heavily today"),
    ("one two three four five", "one two three four five six"),
    ("he said yes", "she said no"),
    ("repeat repeat repeat", "repeat once"),
    ("to be or not to be",) * 2,
]
CORPUS = [(h.split(), r.split()) for h, r in PAIRS]

# frozen oracle values for CORPUS
FROZEN = {
    "bleu1": 0.809339271250,
    "bleu4": 0.774476332942,
    "rougeL": 0.764923058240,
    "cider": 5.625605911868,
    "wer": 20.833333333333,
}


# -- independent oracles ------------------------------------------------

def _ngrams(t, n):
    return Counter(tuple(t[i:i + n]) for i in range(len(t) - n + 1))


def oracle_bleu(corpus, max_n):
    log_sum = 0.0
    hyp_len = sum(len(h) for h, _ in corpus)
    ref_len = sum(len(r) for _, r in corpus)
    for n in range(1, max_n + 1):
        matched = total = 0
        for h, r in corpus:
            hh, rr = _ngrams(h, n), _ngrams(r, n)
            total += max(len(h) - n + 1, 0)
            matched += sum(min(v, rr[g]) for g, v in hh.items())
        assert matched > 0, "fixture must keep the oracle smoothing-free"
        log_sum += math.log(matched / total)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_sum / max_n)


def _lcs(a, b):
    dp = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            dp[i][j] = (dp[i - 1][j - 1] + 1 if a[i - 1] == b[j - 1]
                        else max(dp[i - 1][j], dp[i][j - 1]))
    return dp[-1][-1]


def oracle_rouge(corpus, beta_sq=1.44):
    scores = []
    for h, r in corpus:
        l = _lcs(h, r)
        p, rc = l / len(h), l / len(r)
        d = rc + beta_sq * p
        scores.append((1 + beta_sq) * p * rc / d if d else 0.0)
    return sum(scores) / len(scores)


def oracle_cider(corpus, max_n=4):
    N = len(corpus)
    df = [Counter() for _ in range(max_n)]
    for _, r in corpus:
        for n in range(1, max_n + 1):
            for g in set(_ngrams(r, n)):
                df[n - 1][g] += 1

    def vec(t, n):
        return {g: v * math.log(N / max(df[n - 1][g], 1))
                for g, v in _ngrams(t, n).items()}

    scores = []
    for h, r in corpus:
        per = []
        for n in range(1, max_n + 1):
            vh, vr = vec(h, n), vec(r, n)
            nh = math.sqrt(sum(x * x for x in vh.values()))
            nr = math.sqrt(sum(x * x for x in vr.values()))
            per.append(sum(vh[g] * vr[g] for g in vh if g in vr) / (nh * nr)
                       if nh and nr else 0.0)
        scores.append(sum(per) / max_n)
    return 10.0 * sum(scores) / len(scores)


def oracle_edit_distance(a, b):
    dp = list(range(len(b) + 1))
    for i in range(1, len(a) + 1):
        prev, dp[0] = dp[0], i
        for j in range(1, len(b) + 1):
            cur = dp[j]
            dp[j] = min(prev + (a[i - 1] != b[j - 1]), dp[j] + 1, dp[j - 1] + 1)
            prev = cur
    return dp[-1]


# -- text metric agreement ----------------------------------------------

def test_bleu_matches_oracle_and_frozen_values():
    assert bleu(CORPUS, max_n=1) == pytest.approx(oracle_bleu(CORPUS, 1), abs=1e-6)
    assert bleu(CORPUS, max_n=4) == pytest.approx(oracle_bleu(CORPUS, 4), abs=1e-6)
    assert bleu(CORPUS, max_n=1) == pytest.approx(FROZEN["bleu1"], abs=1e-6)
    assert bleu(CORPUS, max_n=4) == pytest.approx(FROZEN["bleu4"], abs=1e-6)


def test_rouge_matches_oracle_and_frozen_value():
    assert rouge_l(CORPUS) == pytest.approx(oracle_rouge(CORPUS), abs=1e-6)
    assert rouge_l(CORPUS) == pytest.approx(FROZEN["rougeL"], abs=1e-6)


def test_cider_matches_oracle_and_frozen_value():
    assert cider(CORPUS) == pytest.approx(oracle_cider(CORPUS), abs=1e-6)
    assert cider(CORPUS) == pytest.approx(FROZEN["cider"], abs=1e-6)


def test_wer_matches_edit_distance_oracle_and_frozen_value():
    report = evaluate_corpus(CORPUS)
    dist = sum(oracle_edit_distance(r, h) for h, r in CORPUS)
    ref_len = sum(len(r) for _, r in CORPUS)
    assert report.wer == pytest.approx(100.0 * dist / ref_len, abs=1e-6)
    assert report.wer == pytest.approx(FROZEN["wer"], abs=1e-6)
    assert report.ins_total + report.del_total + report.sub_total == dist


def test_perfect_corpus_scores():
    perfect = [(r, r) for _, r in CORPUS]
    assert bleu(perfect, max_n=4) == pytest.approx(1.0)
    assert rouge_l(perfect) == pytest.approx(1.0)
    assert evaluate_corpus(perfect).wer == 0.0


def test_metrics_invariant_to_sample_order():
    rev = list(reversed(CORPUS))
    a, b = evaluate_corpus(CORPUS), evaluate_corpus(rev)
    for key in ("bleu1", "bleu4", "rougeL", "cider", "wer"):
        assert getattr(a, key) == pytest.approx(getattr(b, key), abs=1e-12)


def test_cider_duplication_tracks_oracle():
    # not invariant: hypothesis-only n-grams carry IDF log(N/1), which grows
    # with corpus size; the oracle must agree on the doubled corpus too
    doubled = CORPUS + CORPUS
    assert cider(doubled) == pytest.approx(oracle_cider(doubled), abs=1e-6)


def test_cider_perfect_corpus_upper_bounds_fixture():
    # identical pairs maximize every cosine that is defined; n-gram vectors that
    # are all-zero IDF (grams in every reference) keep the score below 10
    perfect = [(r, r) for _, r in CORPUS]
    score = cider(perfect)
    assert score == pytest.approx(oracle_cider(perfect), abs=1e-6)
    assert cider(CORPUS) <= score <= 10.0 + 1e-9


def test_empty_corpus_raises():
    for fn in (bleu, rouge_l, cider, evaluate_corpus):
        with pytest.raises(ValueError):
            fn([])


# -- WER specifics ------------------------------------------------------

def test_wer_decomposition_known_alignment():
    c = wer_align("a b c d".split(), "a x c".split())
    assert (c.subs, c.ins, c.dels) == (1, 0, 1)
    assert c.errors == oracle_edit_distance("a b c d".split(), "a x c".split())
    assert c.wer == pytest.approx(50.0)


def test_wer_exceeds_100_on_insertion_heavy_hypothesis():
    c = wer_align(["yes"], "no no no no".split())
    assert c.errors >= 4
    assert c.wer > 100.0
    corpus = [(h.split(), r.split()) for h, r in
              [("a a a a a a", "b"), ("c c c c", "d")]]
    assert evaluate_corpus(corpus).wer > 100.0


def test_wer_empty_reference_flagged():
    c = wer_align([], "a b".split())
    assert c.flagged and c.ref_len == 1 and c.ins == 2
    c2 = wer_align("a b".split(), [])
    assert not c2.flagged and c2.dels == 2 and c2.errors == 2


def test_wer_tie_break_deterministic():
    ref, hyp = "a b".split(), "b a".split()
    counts = [wer_align(ref, hyp) for _ in range(5)]
    assert len({(c.subs, c.ins, c.dels) for c in counts}) == 1
    assert counts[0].errors == oracle_edit_distance(ref, hyp)


def test_wer_prefers_match_over_substitution():
    c = wer_align("a b c".split(), "a b c".split())
    assert c.errors == 0


# -- motion metrics -----------------------------------------------------

def _clip(frames):
    return JointClip(frames=np.asarray(frames, dtype=np.float64))


def _random_frames(rng, T=6, J=52):
    return rng.standard_normal((T, J, 3))


def test_mpjpe_identical_is_zero():
    rng = np.random.default_rng(0)
    f = _random_frames(rng)
    assert mpjpe(_clip(f), _clip(f)) < 1e-12
    assert pampjpe(_clip(f), _clip(f)) < 1e-6


def test_mpjpe_translation_gives_norm_t():
    rng = np.random.default_rng(1)
    f = _random_frames(rng)
    t = np.array([0.3, -0.4, 1.2])
    assert mpjpe(_clip(f + t), _clip(f)) == pytest.approx(np.linalg.norm(t),
                                                          abs=1e-9)
    assert pampjpe(_clip(f + t), _clip(f)) < 1e-9


def test_pampjpe_removes_rotation_and_scale():
    rng = np.random.default_rng(2)
    f = _random_frames(rng)
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    g = 1.7 * f @ q.T + np.array([1.0, 2.0, 3.0])
    assert mpjpe(_clip(g), _clip(f)) > 0.1
    assert pampjpe(_clip(g), _clip(f)) < 1e-6


def test_mpjpe_shape_mismatch():
    rng = np.random.default_rng(3)
    with pytest.raises(ValueError):
        mpjpe(_clip(_random_frames(rng, T=4)), _clip(_random_frames(rng, T=5)))
    with pytest.raises(ValueError):
        pampjpe(_clip(_random_frames(rng, T=4)), _clip(_random_frames(rng, T=5)))


def test_fid_identical_sets_is_tiny():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((500, 8))
    assert abs(fid(x, x)) < 1e-6


def test_fid_symmetry_and_nonnegativity():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((400, 6))
    b = rng.standard_normal((400, 6)) + 0.5
    assert fid(a, b) == pytest.approx(fid(b, a), abs=1e-8)
    assert fid(a, b) >= 0.0


def test_fid_1d_gaussians_closed_form():
    # N(0,1) vs N(3,1): (mu difference)^2 + (sigma difference)^2 = 9
    rng = np.random.default_rng(6)
    n = 100_000
    a = rng.normal(0.0, 1.0, size=n)
    b = rng.normal(3.0, 1.0, size=n)
    assert fid(a, b) == pytest.approx(9.0, abs=0.2)


def test_fid_rank_deficient_warns(caplog):
    import logging
    rng = np.random.default_rng(7)
    with caplog.at_level(logging.WARNING):
        fid(rng.standard_normal((4, 10)), rng.standard_normal((4, 10)))
    assert any("rank" in r.message.lower() for r in caplog.records)


def test_eval_report_round_trip():
    report = evaluate_corpus(CORPUS)
    d = report.to_dict()
    assert d["samples"] == 10
    assert d["ref_word_total"] == sum(len(r) for _, r in CORPUS)
    assert set(d) >= {"bleu1", "bleu4", "rougeL", "cider", "wer"}
