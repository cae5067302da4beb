"""Vector-quantized motion tokenizer: temporal-convolutional encoder, nearest-
neighbor codebook quantizer, transposed-convolutional decoder, and the
three-term training loss (L1 reconstruction + codebook + commitment).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .motion import FEATURE_DIM, MotionSequence

log = logging.getLogger(__name__)


@dataclass
class TokenizerConfig:
    codebook_size: int = 1024
    code_dim: int = 64
    downsample: int = 4
    width: int = 96
    n_res_blocks: int = 1
    beta: float = 0.25
    ema_codebook: bool = False       # gradient-trained codebook by default
    ema_decay: float = 0.99
    usage_decay: float = 0.99
    dead_code_interval: int = 200
    warmup_frac: float = 0.45        # autoencoder-only fraction of training
    input_dim: int = FEATURE_DIM

    def __post_init__(self):
        if self.codebook_size < 2:
            raise ValueError("codebook needs at least 2 entries")
        q = self.downsample
        if q < 1 or (q & (q - 1)) != 0:
            raise ValueError("downsample factor must be a power of two")
        if self.code_dim <= 0:
            raise ValueError("code_dim must be positive")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ValueError("warmup_frac must be in [0, 1)")

    @property
    def n_stages(self) -> int:
        return int(math.log2(self.downsample))


@dataclass
class TokenizedClip:
    indices: np.ndarray      # (L,) ints in [0, K)
    vectors: np.ndarray      # (L, d)
    source_length: int       # M (frame count of the original clip)


def token_count(feature_rows: int, downsample: int) -> int:
    """L for a feature sequence of the given row count."""
    return -(-feature_rows // downsample)


class VQTokenizer:
    """Encoder/quantizer/decoder with named parameters (one flat dict)."""

    def __init__(self, config: TokenizerConfig, rng: np.random.Generator):
        self.config = config
        self.params: dict = {}
        w, d, c = config.width, config.code_dim, config.input_dim

        def conv(name, cout, cin, k):
            scale = 1.0 / math.sqrt(cin * k)
            self.params[name + ".w"] = T.Tensor(
                rng.uniform(-scale, scale, size=(cout, cin, k)), requires_grad=True)
            self.params[name + ".b"] = T.Tensor(np.zeros(cout), requires_grad=True)

        def convT(name, cin, cout, k):
            scale = 1.0 / math.sqrt(cin * k)
            self.params[name + ".w"] = T.Tensor(
                rng.uniform(-scale, scale, size=(cin, cout, k)), requires_grad=True)
            self.params[name + ".b"] = T.Tensor(np.zeros(cout), requires_grad=True)

        conv("enc.in", w, c, 3)
        for s in range(config.n_stages):
            conv(f"enc.down{s}", w, w, 4)
            for r in range(config.n_res_blocks):
                conv(f"enc.res{s}.{r}.a", w, w, 3)
                conv(f"enc.res{s}.{r}.b", w, w, 1)
        conv("enc.out", d, w, 3)

        conv("dec.in", w, d, 3)
        for s in range(config.n_stages):
            convT(f"dec.up{s}", w, w, 4)
            for r in range(config.n_res_blocks):
                conv(f"dec.res{s}.{r}.a", w, w, 3)
                conv(f"dec.res{s}.{r}.b", w, w, 1)
        conv("dec.out", c, w, 3)

        self.codebook = T.Tensor(
            rng.uniform(-1.0 / config.codebook_size, 1.0 / config.codebook_size,
                        size=(config.codebook_size, d)),
            requires_grad=not config.ema_codebook)
        self.params["codebook"] = self.codebook
        self.usage = np.full(config.codebook_size, 1.0 / config.codebook_size)

    # -- forward pieces -------------------------------------------------

    def _res(self, x, prefix):
        h = T.conv1d(T.relu(x), self.params[prefix + ".a.w"], self.params[prefix + ".a.b"],
                     stride=1, padding=1)
        h = T.conv1d(T.relu(h), self.params[prefix + ".b.w"], self.params[prefix + ".b.b"],
                     stride=1, padding=0)
        return T.add(x, h)

    def encode(self, features: T.Tensor) -> T.Tensor:
        """features (B, T, 623) with T >= q+1 -> latents (B, L, d), L = ceil(T/q)."""
        q = self.config.downsample
        B, rows, dim = features.shape
        if rows < q + 1:
            raise ValueError(f"clip too short for receptive field: {rows} feature rows "
                             f"(need at least {q + 1})")
        pad = (-rows) % q
        x = T.transpose(features, (0, 2, 1))  # (B, C, T)
        if pad:
            tail = x[:, :, rows - 1:rows]
            x = T.concat([x] + [tail] * pad, axis=2)  # edge-replicate to a multiple of q
        h = T.conv1d(x, self.params["enc.in.w"], self.params["enc.in.b"], 1, 1)
        for s in range(self.config.n_stages):
            h = T.conv1d(T.relu(h), self.params[f"enc.down{s}.w"],
                         self.params[f"enc.down{s}.b"], stride=2, padding=1)
            for r in range(self.config.n_res_blocks):
                h = self._res(h, f"enc.res{s}.{r}")
        z = T.conv1d(T.relu(h), self.params["enc.out.w"], self.params["enc.out.b"], 1, 1)
        return T.transpose(z, (0, 2, 1))  # (B, L, d)

    def quantize(self, latents: np.ndarray):
        """Nearest codebook entry per latent; ties break to the lowest index.

        latents (..., d) -> (indices (...,), vectors (..., d))."""
        cb = self.codebook.data
        if cb.shape[0] == 0:
            raise ValueError("empty codebook")
        if latents.shape[-1] != cb.shape[1]:
            raise T.ShapeError("quantize", latents.shape, cb.shape)
        flat = latents.reshape(-1, cb.shape[1])
        diff = flat[:, None, :] - cb[None, :, :]
        dist = (diff * diff).sum(axis=-1)
        idx = dist.argmin(axis=1)
        vectors = cb[idx].reshape(latents.shape)
        return idx.reshape(latents.shape[:-1]), vectors

    def decode(self, quantized: T.Tensor, out_rows: Optional[int] = None) -> T.Tensor:
        """quantized (B, L, d) -> reconstructed features (B, out_rows, 623)."""
        x = T.transpose(quantized, (0, 2, 1))
        h = T.conv1d(x, self.params["dec.in.w"], self.params["dec.in.b"], 1, 1)
        for s in range(self.config.n_stages):
            h = T.conv_transpose1d(T.relu(h), self.params[f"dec.up{s}.w"],
                                   self.params[f"dec.up{s}.b"], stride=2, padding=1)
            for r in range(self.config.n_res_blocks):
                h = self._res(h, f"dec.res{s}.{r}")
        y = T.conv1d(T.relu(h), self.params["dec.out.w"], self.params["dec.out.b"], 1, 1)
        y = T.transpose(y, (0, 2, 1))
        if out_rows is not None:
            y = y[:, :out_rows, :]
        return y

    def decode_indices(self, indices: np.ndarray, out_rows: Optional[int] = None) -> T.Tensor:
        indices = np.asarray(indices)
        if indices.size and indices.max() >= self.config.codebook_size:
            raise IndexError(f"token index {indices.max()} out of range "
                             f"(K={self.config.codebook_size})")
        vectors = T.embedding(self.codebook, indices)
        if vectors.data.ndim == 2:
            vectors = T.reshape(vectors, (1,) + vectors.shape)
        return self.decode(vectors, out_rows)

    def tokenize(self, seq: MotionSequence) -> TokenizedClip:
        """Normalized feature sequence -> discrete token clip."""
        if not seq.normalized:
            raise ValueError("tokenizer expects normalized input")
        z = self.encode(T.Tensor(seq.features[None]))
        idx, vec = self.quantize(z.data[0])
        return TokenizedClip(indices=idx, vectors=vec,
                             source_length=seq.features.shape[0] + 1)

    # -- parameter plumbing ---------------------------------------------

    def state_dict(self) -> dict:
        d = {name: p.data.copy() for name, p in self.params.items()}
        d["usage"] = self.usage.copy()
        return d

    def load_state_dict(self, state: dict) -> None:
        for name, p in self.params.items():
            p.data = np.asarray(state[name], dtype=p.data.dtype)
        if "usage" in state:
            self.usage = np.asarray(state["usage"], dtype=np.float64).copy()


def _sq_norm_mean(diff: T.Tensor, weights: Optional[np.ndarray] = None) -> T.Tensor:
    """Mean over latent positions of the squared L2 norm along the code dim."""
    per = T.tsum(T.mul(diff, diff), axis=diff.data.ndim - 1)
    if weights is None:
        return T.mean(per)
    w = np.asarray(weights)
    return T.tsum(T.mul(per, T._wrap(w))) / float(max(w.sum(), 1e-12))


def vq_loss(s: T.Tensor, s_hat: T.Tensor, encoder_out: T.Tensor, quantized: T.Tensor,
            beta: float, frame_weights: Optional[np.ndarray] = None,
            latent_weights: Optional[np.ndarray] = None):
    """Three-term loss with mean reduction per term.

    Returns (total, {"recon", "codebook", "commit"}). Gradient routing: the
    reconstruction term reaches encoder+decoder (the decoder input must come
    through straight_through), the codebook term reaches only the codebook, and
    the commitment term reaches only the encoder.
    """
    recon = T.l1_loss(s_hat, s, weights=frame_weights)
    codebook_term = _sq_norm_mean(T.sub(T.stop_gradient(encoder_out), quantized),
                                  latent_weights)
    commit = _sq_norm_mean(T.sub(encoder_out, T.stop_gradient(quantized)),
                           latent_weights)
    total = T.add(T.add(recon, codebook_term), T.mul(T._wrap(beta), commit))
    return total, {"recon": float(recon.data), "codebook": float(codebook_term.data),
                   "commit": float(commit.data)}


def training_step(model: VQTokenizer, features: np.ndarray,
                  frame_mask: Optional[np.ndarray] = None):
    """Forward pass for one batch: returns (total loss Tensor, term dict, indices)."""
    cfg = model.config
    x = T.Tensor(features)
    z = model.encode(x)
    idx, _ = model.quantize(z.data)
    quantized = T.embedding(model.codebook, idx)
    dec_in = T.straight_through(quantized, z)
    recon = model.decode(dec_in, out_rows=features.shape[1])
    fw = None
    if frame_mask is not None:
        fw = np.broadcast_to(frame_mask[:, :, None], features.shape).astype(features.dtype)
    total, terms = vq_loss(x, recon, z, quantized, cfg.beta, frame_weights=fw)
    return total, terms, idx


def train_tokenizer(config: TokenizerConfig, sequences, steps: int,
                    batch_size: int = 16, window: int = 48, seed: int = 0,
                    lr: float = 2e-4, lr_final_frac: float = 0.1,
                    grad_clip: float = 1.0, log_every: int = 100,
                    model: Optional[VQTokenizer] = None):
    """Train on random fixed-length windows of normalized sequences.

    The first `warmup_frac` of the steps run the encoder/decoder as a plain
    autoencoder (the quantization terms are reported but not optimized); the
    untrained commitment pressure otherwise collapses every latent onto a
    single code before the reconstruction signal can differentiate them. At
    the end of warmup the codebook is initialized from encoder outputs.
    Dead codes (usage EMA below 1/(4K)) are reinitialized to random encoder
    outputs every `dead_code_interval` steps. After warmup the learning rate
    follows a cosine decay from `lr` to `lr_final_frac * lr` (set the
    fraction to 1.0 for a constant rate); gradients are clipped to a global
    norm of `grad_clip` (0 disables). Aborts on non-finite loss.
    Returns (model, loss_history)."""
    rng = np.random.default_rng(seed)
    if model is None:
        model = VQTokenizer(config, rng)
    opt = T.AdamW({"tokenizer": {"params": model.params, "lr": lr}})
    feats = [np.asarray(s.features, dtype=np.float32) for s in sequences]
    history = []
    K = config.codebook_size
    warmup_steps = int(config.warmup_frac * steps)

    def sample_batch():
        batch = np.zeros((batch_size, window, config.input_dim), dtype=np.float32)
        mask = np.zeros((batch_size, window), dtype=np.float32)
        for i in range(batch_size):
            f = feats[rng.integers(0, len(feats))]
            if f.shape[0] >= window:
                start = rng.integers(0, f.shape[0] - window + 1)
                batch[i] = f[start:start + window]
                mask[i] = 1.0
            else:
                batch[i, :f.shape[0]] = f
                batch[i, f.shape[0]:] = f[-1]  # edge pad, masked out of the loss
                mask[i, :f.shape[0]] = 1.0
        return batch, mask

    for step in range(steps):
        batch, mask = sample_batch()

        if step == warmup_steps and warmup_steps > 0:
            # end of warmup: seed the codebook from a pool of encoder outputs
            # wide enough to fill it with distinct latents
            pool = [model.encode(T.Tensor(batch)).data.reshape(-1, config.code_dim)]
            while sum(p.shape[0] for p in pool) < K:
                b, _ = sample_batch()
                pool.append(model.encode(T.Tensor(b)).data.reshape(-1, config.code_dim))
            z = np.concatenate(pool, axis=0)
            picks = rng.permutation(z.shape[0])[:K] if z.shape[0] >= K \
                else rng.integers(0, z.shape[0], size=K)
            jitter = 0.01 * rng.standard_normal((K, config.code_dim))
            model.codebook.data = (z[picks] + jitter).astype(model.codebook.data.dtype)
            model.usage = np.full(K, 1.0 / K)

        opt.zero_grad()
        if step < warmup_steps:
            x = T.Tensor(batch)
            z = model.encode(x)
            idx, qvec = model.quantize(z.data)
            recon = model.decode(z, out_rows=batch.shape[1])
            fw = np.broadcast_to(mask[:, :, None], batch.shape).astype(np.float32)
            total = T.l1_loss(recon, x, weights=fw)
            qerr = float(((z.data - qvec) ** 2).sum(-1).mean())
            terms = {"recon": float(total.data), "codebook": qerr, "commit": qerr}
            eq2_total = terms["recon"] + terms["codebook"] + config.beta * terms["commit"]
        else:
            total, terms, idx = training_step(model, batch, mask)
            eq2_total = float(total.data)
        if not np.isfinite(eq2_total):
            raise RuntimeError(f"tokenizer training diverged at step {step}: {terms}")
        total.backward()
        if grad_clip:
            sq = sum(float((p.grad ** 2).sum()) for p in model.params.values()
                     if p.grad is not None)
            norm = math.sqrt(sq)
            if norm > grad_clip:
                scale = grad_clip / norm
                for p in model.params.values():
                    if p.grad is not None:
                        p.grad = p.grad * scale
        if step >= warmup_steps:
            frac = (step - warmup_steps) / max(steps - 1 - warmup_steps, 1)
            cos = 0.5 * (1.0 + math.cos(math.pi * frac))
            opt.groups["tokenizer"]["lr"] = lr * (lr_final_frac
                                                  + (1.0 - lr_final_frac) * cos)
        opt.step()

        if step >= warmup_steps:
            freq = np.bincount(idx.reshape(-1), minlength=K) / idx.size
            model.usage = (config.usage_decay * model.usage
                           + (1 - config.usage_decay) * freq)
            if (step + 1) % config.dead_code_interval == 0:
                dead = np.flatnonzero(model.usage < 1.0 / (4 * K))
                if dead.size:
                    z = model.encode(T.Tensor(batch)).data.reshape(-1, config.code_dim)
                    picks = rng.integers(0, z.shape[0], size=dead.size)
                    model.codebook.data[dead] = z[picks].astype(model.codebook.data.dtype)
                    model.usage[dead] = 1.0 / K

        history.append({"step": step, "total": eq2_total, **terms})
        if log_every and (step + 1) % log_every == 0:
            log.info("tokenizer step %d: total=%.4f recon=%.4f codebook=%.4f commit=%.4f",
                     step + 1, float(total.data), terms["recon"], terms["codebook"],
                     terms["commit"])
    return model, history


def codebook_perplexity(usage: np.ndarray) -> float:
    p = usage / max(usage.sum(), 1e-12)
    nz = p[p > 0]
    return float(np.exp(-(nz * np.log(nz)).sum()))


def codebook_report(model: VQTokenizer, sequences, stats) -> dict:
    """Usage histogram, perplexity, and reconstruction metrics over a corpus."""
    from .metrics import fid, mpjpe, pampjpe
    from .motion import denormalize, features_to_joints

    K = model.config.codebook_size
    counts = np.zeros(K)
    pooled_real, pooled_recon = [], []
    mp, pa = [], []
    for seq in sequences:
        rows = seq.features.shape[0]
        z = model.encode(T.Tensor(seq.features[None]))
        idx, vec = model.quantize(z.data[0])
        counts += np.bincount(idx, minlength=K)
        recon = model.decode(T.Tensor(vec[None]), out_rows=rows).data[0]
        recon_seq = MotionSequence(recon, fps=seq.fps, normalized=True,
                                   stats_id=seq.stats_id, init_heading=seq.init_heading,
                                   init_root_xz=seq.init_root_xz)
        gt = features_to_joints(denormalize(seq, stats))
        pred = features_to_joints(denormalize(recon_seq, stats))
        mp.append(mpjpe(pred, gt))
        pa.append(pampjpe(pred, gt))
        pooled_real.append(z.data[0].mean(axis=0))
        z2 = model.encode(T.Tensor(recon[None]))
        pooled_recon.append(z2.data[0].mean(axis=0))

    usage_freq = counts / max(counts.sum(), 1.0)
    return {
        "codebook_size": K,
        "usage_histogram": counts.astype(int).tolist(),
        "active_codes": int((counts > 0).sum()),
        "perplexity": codebook_perplexity(usage_freq),
        "mpjpe": float(np.mean(mp)),
        "pampjpe": float(np.mean(pa)),
        "fid": fid(np.asarray(pooled_real), np.asarray(pooled_recon)),
    }
