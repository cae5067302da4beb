"""Translation metrics (BLEU, ROUGE-L, CIDEr, WER with I/D/S decomposition) and
motion-reconstruction metrics (MPJPE, PAMPJPE, FID).

All text metrics operate on pre-tokenized corpora (lowercase whitespace tokens,
single reference per sample) and are invariant to sample order.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .motion import JointClip

log = logging.getLogger(__name__)

ROUGE_BETA_SQ = 1.44  # summarization convention, F weighted toward recall


@dataclass
class EvalReport:
    bleu1: float
    bleu4: float
    rougeL: float
    cider: float
    wer: float                      # percent, may exceed 100
    ins: float                      # average per sample
    dels: float
    subs: float
    ins_total: int
    del_total: int
    sub_total: int
    ref_word_total: int
    samples: int

    def to_dict(self) -> dict:
        return {
            "bleu1": self.bleu1, "bleu4": self.bleu4, "rougeL": self.rougeL,
            "cider": self.cider, "wer": self.wer,
            "insertions_per_sample": self.ins, "deletions_per_sample": self.dels,
            "substitutions_per_sample": self.subs,
            "insertions_total": self.ins_total, "deletions_total": self.del_total,
            "substitutions_total": self.sub_total,
            "ref_word_total": self.ref_word_total, "samples": self.samples,
        }


@dataclass
class MotionEvalReport:
    mpjpe: float
    pampjpe: float
    fid: float

    def to_dict(self) -> dict:
        return {"mpjpe": self.mpjpe, "pampjpe": self.pampjpe, "fid": self.fid}


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(corpus: List[Tuple[List[str], List[str]]], max_n: int = 4) -> float:
    """Corpus-level BLEU over (hypothesis, reference) token pairs.

    Clipped n-gram precisions with a geometric mean and brevity penalty.
    Smoothing: add-one applied to an order-n count only when the corpus-level
    matched count for that n is zero, and only for n > 1."""
    if not corpus:
        raise ValueError("empty corpus")
    matched = [0] * max_n
    total = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hyp, ref in corpus:
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h = _ngrams(hyp, n)
            r = _ngrams(ref, n)
            total[n - 1] += max(len(hyp) - n + 1, 0)
            matched[n - 1] += sum(min(c, r[g]) for g, c in h.items())
    if hyp_len == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        m, t = matched[n - 1], total[n - 1]
        if n > 1 and m == 0:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        log_sum += math.log(m / t)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_sum / max_n)


def _lcs_len(a: Sequence[str], b: Sequence[str]) -> int:
    dp = [0] * (len(b) + 1)
    for x in a:
        prev = 0
        for j, y in enumerate(b, start=1):
            cur = dp[j]
            dp[j] = prev + 1 if x == y else max(dp[j], dp[j - 1])
            prev = cur
    return dp[len(b)]


def rouge_l(corpus: List[Tuple[List[str], List[str]]],
            beta_sq: float = ROUGE_BETA_SQ) -> float:
    """Mean per-sample LCS F-measure."""
    if not corpus:
        raise ValueError("empty corpus")
    scores = []
    for hyp, ref in corpus:
        if not hyp or not ref:
            scores.append(0.0)
            continue
        lcs = _lcs_len(hyp, ref)
        p = lcs / len(hyp)
        r = lcs / len(ref)
        denom = r + beta_sq * p
        scores.append(((1 + beta_sq) * p * r / denom) if denom > 0 else 0.0)
    return float(np.mean(scores))


def cider(corpus: List[Tuple[List[str], List[str]]], max_n: int = 4) -> float:
    """Per-n (1..max_n) TF-IDF cosine between hypothesis and reference,
    averaged over n and scaled by 10. IDF is corpus-level over references."""
    if not corpus:
        raise ValueError("empty corpus")
    N = len(corpus)
    if N < 2 or len({tuple(ref) for _, ref in corpus}) < 2:
        log.warning("cider: fewer than 2 distinct references, IDF is degenerate")
    df = [Counter() for _ in range(max_n)]
    for _, ref in corpus:
        for n in range(1, max_n + 1):
            for g in set(_ngrams(ref, n)):
                df[n - 1][g] += 1

    def vec(tokens, n):
        counts = _ngrams(tokens, n)
        return {g: c * math.log(N / max(df[n - 1][g], 1)) for g, c in counts.items()}

    scores = []
    for hyp, ref in corpus:
        per_n = []
        for n in range(1, max_n + 1):
            vh = vec(hyp, n)
            vr = vec(ref, n)
            nh = math.sqrt(sum(x * x for x in vh.values()))
            nr = math.sqrt(sum(x * x for x in vr.values()))
            if nh == 0 or nr == 0:
                per_n.append(0.0)
                continue
            dot = sum(vh[g] * vr[g] for g in vh if g in vr)
            per_n.append(dot / (nh * nr))
        scores.append(sum(per_n) / max_n)
    return 10.0 * float(np.mean(scores))


# -- word error rate ----------------------------------------------------

@dataclass
class WerCounts:
    subs: int
    ins: int
    dels: int
    ref_len: int
    flagged: bool = False

    @property
    def errors(self) -> int:
        return self.subs + self.ins + self.dels

    @property
    def wer(self) -> float:
        return 100.0 * self.errors / self.ref_len


def wer_align(ref: Sequence[str], hyp: Sequence[str]) -> WerCounts:
    """Levenshtein alignment with unit costs.

    Tie-break on equal cost: match, then deletion, then insertion, then
    substitution. An empty reference is scored against a length-1 denominator
    and flagged."""
    if not ref:
        return WerCounts(subs=0, ins=len(hyp), dels=0, ref_len=1, flagged=True)
    R, H = len(ref), len(hyp)
    dp = np.zeros((R + 1, H + 1), dtype=np.int64)
    dp[:, 0] = np.arange(R + 1)
    dp[0, :] = np.arange(H + 1)
    for i in range(1, R + 1):
        for j in range(1, H + 1):
            sub_cost = dp[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1)
            dp[i, j] = min(sub_cost, dp[i - 1, j] + 1, dp[i, j - 1] + 1)
    s = i_ = d = 0
    i, j = R, H
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and dp[i, j] == dp[i - 1, j - 1]:
            i, j = i - 1, j - 1
        elif i > 0 and dp[i, j] == dp[i - 1, j] + 1:
            d += 1
            i -= 1
        elif j > 0 and dp[i, j] == dp[i, j - 1] + 1:
            i_ += 1
            j -= 1
        else:
            s += 1
            i, j = i - 1, j - 1
    return WerCounts(subs=s, ins=i_, dels=d, ref_len=R)


def evaluate_corpus(corpus: List[Tuple[List[str], List[str]]]) -> EvalReport:
    """All text metrics over (hypothesis, reference) token pairs."""
    if not corpus:
        raise ValueError("empty corpus")
    counts = [wer_align(ref, hyp) for hyp, ref in corpus]
    ins_total = sum(c.ins for c in counts)
    del_total = sum(c.dels for c in counts)
    sub_total = sum(c.subs for c in counts)
    ref_total = sum(c.ref_len for c in counts)
    n = len(corpus)
    return EvalReport(
        bleu1=bleu(corpus, max_n=1),
        bleu4=bleu(corpus, max_n=4),
        rougeL=rouge_l(corpus),
        cider=cider(corpus),
        wer=100.0 * (ins_total + del_total + sub_total) / ref_total,
        ins=ins_total / n, dels=del_total / n, subs=sub_total / n,
        ins_total=ins_total, del_total=del_total, sub_total=sub_total,
        ref_word_total=ref_total, samples=n)


# -- motion metrics -----------------------------------------------------

def mpjpe(pred: JointClip, gt: JointClip) -> float:
    """Mean per-joint position error in meters."""
    if pred.frames.shape != gt.frames.shape:
        raise ValueError(f"shape mismatch {pred.frames.shape} vs {gt.frames.shape}")
    return float(np.linalg.norm(pred.frames - gt.frames, axis=-1).mean())


def _similarity_align(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Optimal similarity transform (rotation + translation + uniform scale)
    mapping x onto y; both (N, 3). Closed-form orthogonal alignment."""
    mu_x = x.mean(axis=0)
    mu_y = y.mean(axis=0)
    xc = x - mu_x
    yc = y - mu_y
    cov = xc.T @ yc
    u, sv, vt = np.linalg.svd(cov)
    sign = np.sign(np.linalg.det(u @ vt))
    d = np.ones(3)
    d[-1] = sign
    rot = (u * d) @ vt
    denom = (xc * xc).sum()
    scale = (sv[:-1].sum() + sv[-1] * sign) / denom if denom > 0 else 1.0
    return scale * xc @ rot + mu_y


def pampjpe(pred: JointClip, gt: JointClip) -> float:
    """MPJPE after per-frame optimal similarity alignment."""
    if pred.frames.shape != gt.frames.shape:
        raise ValueError(f"shape mismatch {pred.frames.shape} vs {gt.frames.shape}")
    errs = []
    for xf, yf in zip(pred.frames, gt.frames):
        aligned = _similarity_align(xf, yf)
        errs.append(np.linalg.norm(aligned - yf, axis=-1).mean())
    return float(np.mean(errs))


def fid(set_a: np.ndarray, set_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature sets (n, dim).

    Matrix square root via symmetric eigen-decomposition with eigenvalue
    clamping at zero."""
    a = np.asarray(set_a, dtype=np.float64)
    b = np.asarray(set_b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    dim = a.shape[1]
    if a.shape[0] < dim + 1 or b.shape[0] < dim + 1:
        log.warning("fid: fewer samples than dim+1, covariance is rank-deficient; "
                    "clamping eigenvalues")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False).reshape(dim, dim)
    cov_b = np.cov(b, rowvar=False).reshape(dim, dim)

    wa, va = np.linalg.eigh(cov_a)
    sqrt_a = (va * np.sqrt(np.clip(wa, 0.0, None))) @ va.T
    inner = sqrt_a @ cov_b @ sqrt_a
    wi = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_sqrt = np.sqrt(np.clip(wi, 0.0, None)).sum()
    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)
