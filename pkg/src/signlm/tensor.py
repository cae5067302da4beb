"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Everything downstream (the motion tokenizer, the alignment MLP, the decoder-only
backbone) is built from the operations in this module. The engine is numpy-backed,
single-threaded per backward pass, and deliberately small: no broadcasting beyond
leading batch dimensions, no fusion, no higher-order derivatives.

Compute dtype is float32 by default; gradient-check code switches to float64 via
`use_dtype("float64")`.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Optional

import numpy as np

_DTYPE = np.float32

_DTYPE_NAMES = {"float32": np.float32, "float64": np.float64}


def default_dtype():
    return _DTYPE


def set_default_dtype(name: str) -> None:
    global _DTYPE
    if name not in _DTYPE_NAMES:
        raise ValueError(f"unsupported dtype {name!r}")
    _DTYPE = _DTYPE_NAMES[name]


@contextmanager
def use_dtype(name: str):
    """Temporarily switch the compute dtype (e.g. float64 for gradient checks)."""
    global _DTYPE
    prev = _DTYPE
    set_default_dtype(name)
    try:
        yield
    finally:
        _DTYPE = prev


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an operation."""

    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(tuple(s)) for s in shapes)}")
        self.op = op
        self.shapes = shapes


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[], None]] = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Populate .grad on every requires_grad leaf reachable from this scalar."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.data.shape}")
        topo: list[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))
        seed = np.ones_like(self.data)
        _accum(self, seed)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("tensor/tensor division unsupported; multiply by a reciprocal")
        return mul(self, _wrap(1.0 / scalar))

    def __getitem__(self, idx):
        return _slice(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def mean(self, axis=None):
        return mean(self, axis)

    def sum(self, axis=None):
        return tsum(self, axis)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_DTYPE))


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
    else:
        t.grad = t.grad + g


def _make(data: np.ndarray, parents: Iterable[Tensor], op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._backward = None
    out.op = op
    parents = tuple(parents)
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = parents if out.requires_grad else ()
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a gradient back to `shape` after numpy broadcasting over leading dims."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise --------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None
    out = _make(data, (a, b), "add")
    if out.requires_grad:
        def _bw():
            g = out.grad
            _accum(a, _unbroadcast(g, a.shape))
            _accum(b, _unbroadcast(g, b.shape))
        out._backward = _bw
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError("sub", a.shape, b.shape) from None
    out = _make(data, (a, b), "sub")
    if out.requires_grad:
        def _bw():
            g = out.grad
            _accum(a, _unbroadcast(g, a.shape))
            _accum(b, _unbroadcast(-g, b.shape))
        out._backward = _bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape) from None
    out = _make(data, (a, b), "mul")
    if out.requires_grad:
        def _bw():
            g = out.grad
            _accum(a, _unbroadcast(g * b.data, a.shape))
            _accum(b, _unbroadcast(g * a.data, b.shape))
        out._backward = _bw
    return out


def absolute(a: Tensor) -> Tensor:
    out = _make(np.abs(a.data), (a,), "abs")
    if out.requires_grad:
        sign = np.sign(a.data)

        def _bw():
            _accum(a, out.grad * sign)
        out._backward = _bw
    return out


def exp(a: Tensor) -> Tensor:
    out = _make(np.exp(a.data), (a,), "exp")
    if out.requires_grad:
        def _bw():
            _accum(a, out.grad * out.data)
        out._backward = _bw
    return out


def log(a: Tensor) -> Tensor:
    out = _make(np.log(a.data), (a,), "log")
    if out.requires_grad:
        def _bw():
            _accum(a, out.grad / a.data)
        out._backward = _bw
    return out


def relu(a: Tensor) -> Tensor:
    out = _make(np.maximum(a.data, 0.0), (a,), "relu")
    if out.requires_grad:
        mask = (a.data > 0).astype(a.data.dtype)

        def _bw():
            _accum(a, out.grad * mask)
        out._backward = _bw
    return out


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    from scipy.special import erf  # local import keeps module import light

    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    out = _make((a.data * cdf).astype(a.data.dtype), (a,), "gelu")
    if out.requires_grad:
        pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT2PI
        deriv = (cdf + a.data * pdf).astype(a.data.dtype)

        def _bw():
            _accum(a, out.grad * deriv)
        out._backward = _bw
    return out


# -- shape manipulation -------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    out = _make(a.data.reshape(shape), (a,), "reshape")
    if out.requires_grad:
        def _bw():
            _accum(a, out.grad.reshape(a.shape))
        out._backward = _bw
    return out


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = _make(np.ascontiguousarray(a.data.transpose(axes)), (a,), "transpose")
    if out.requires_grad:
        inv = np.argsort(axes)

        def _bw():
            _accum(a, out.grad.transpose(inv))
        out._backward = _bw
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat")
    if out.requires_grad:
        sizes = [t.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def _bw():
            g = out.grad
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accum(t, g[tuple(idx)])
        out._backward = _bw
    return out


def _slice(a: Tensor, idx) -> Tensor:
    out = _make(np.ascontiguousarray(a.data[idx]), (a,), "slice")
    if out.requires_grad:
        def _bw():
            g = np.zeros_like(a.data)
            np.add.at(g, idx, out.grad)
            _accum(a, g)
        out._backward = _bw
    return out


# -- reductions ---------------------------------------------------------

def tsum(a: Tensor, axis=None) -> Tensor:
    out = _make(np.asarray(a.data.sum(axis=axis)), (a,), "sum")
    if out.requires_grad:
        def _bw():
            g = out.grad
            if axis is None:
                _accum(a, np.broadcast_to(g, a.shape).astype(a.data.dtype))
            else:
                _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.shape).astype(a.data.dtype))
        out._backward = _bw
    return out


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis) / float(n)


# -- linear algebra -----------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeError("matmul", a.shape, b.shape)
    data = np.matmul(a.data, b.data)
    out = _make(data, (a, b), "matmul")
    if out.requires_grad:
        def _bw():
            g = out.grad
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accum(a, _unbroadcast(ga, a.shape))
            _accum(b, _unbroadcast(gb, b.shape))
        out._backward = _bw
    return out


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x @ w + b with x (..., in), w (in, out), b (out,)."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError("linear", x.shape, w.shape)
    y = matmul(x, w)
    if b is not None:
        y = add(y, b)
    return y


# -- normalization and attention helpers --------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    s = e / e.sum(axis=axis, keepdims=True)
    out = _make(s, (a,), "softmax")
    if out.requires_grad:
        def _bw():
            g = out.grad
            dot = (g * s).sum(axis=axis, keepdims=True)
            _accum(a, s * (g - dot))
        out._backward = _bw
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis. Constant inputs normalize to zero (eps floor)."""
    if x.shape[-1] != gamma.shape[-1] or x.shape[-1] != beta.shape[-1]:
        raise ShapeError("layer_norm", x.shape, gamma.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = _make(xhat * gamma.data + beta.data, (x, gamma, beta), "layer_norm")
    if out.requires_grad:
        n = x.shape[-1]

        def _bw():
            g = out.grad
            _accum(beta, _unbroadcast(g, beta.shape))
            _accum(gamma, _unbroadcast(g * xhat, gamma.shape))
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
            _accum(x, gx)
        out._backward = _bw
    return out


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: table (V, d), integer ids of any shape -> (*ids.shape, d)."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding: id out of range for table of {table.shape[0]} rows")
    out = _make(np.ascontiguousarray(table.data[ids]), (table,), "embedding")
    if out.requires_grad:
        def _bw():
            g = np.zeros_like(table.data)
            np.add.at(g, ids, out.grad)
            _accum(table, g)
        out._backward = _bw
    return out


# -- losses -------------------------------------------------------------

def l1_loss(a: Tensor, b: Tensor, weights: Optional[np.ndarray] = None) -> Tensor:
    """Mean absolute difference; optional per-element weights (e.g. a frame mask)."""
    if a.shape != b.shape:
        raise ShapeError("l1_loss", a.shape, b.shape)
    d = absolute(sub(a, b))
    if weights is None:
        return mean(d)
    w = _wrap(weights)
    return tsum(mul(d, w)) / float(max(np.asarray(weights).sum(), 1e-12))


def mse_loss(a: Tensor, b: Tensor, weights: Optional[np.ndarray] = None) -> Tensor:
    """Mean squared difference; optional per-element weights."""
    if a.shape != b.shape:
        raise ShapeError("mse_loss", a.shape, b.shape)
    d = sub(a, b)
    d2 = mul(d, d)
    if weights is None:
        return mean(d2)
    w = _wrap(weights)
    return tsum(mul(d2, w)) / float(max(np.asarray(weights).sum(), 1e-12))


def cross_entropy(logits: Tensor, targets: np.ndarray,
                  mask: Optional[np.ndarray] = None) -> Tensor:
    """Mean cross-entropy over masked positions. logits (N, V), targets (N,)."""
    targets = np.asarray(targets)
    if logits.data.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError("cross_entropy", logits.shape, targets.shape)
    if mask is None:
        mask = np.ones(logits.shape[0], dtype=logits.data.dtype)
    mask = np.asarray(mask, dtype=logits.data.dtype)
    count = mask.sum()
    if count <= 0:
        raise ValueError("cross_entropy: empty loss mask")
    x = logits.data
    xmax = x.max(axis=1, keepdims=True)
    lse = xmax[:, 0] + np.log(np.exp(x - xmax).sum(axis=1))
    picked = x[np.arange(x.shape[0]), targets]
    nll = (lse - picked) * mask
    out = _make(np.asarray(nll.sum() / count), (logits,), "cross_entropy")
    if out.requires_grad:
        probs = np.exp(x - xmax)
        probs /= probs.sum(axis=1, keepdims=True)

        def _bw():
            g = out.grad
            grad = probs.copy()
            grad[np.arange(x.shape[0]), targets] -= 1.0
            grad *= (mask / count)[:, None]
            _accum(logits, grad * g)
        out._backward = _bw
    return out


# -- temporal convolutions ----------------------------------------------

def conv1d(x: Tensor, w: Tensor, b: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """1-D convolution. x (B, Cin, T), w (Cout, Cin, k) -> (B, Cout, T_out)."""
    if x.data.ndim != 3 or w.data.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv1d", x.shape, w.shape)
    B, C, T = x.shape
    O, _, k = w.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    Tp = xp.shape[2]
    Tout = (Tp - k) // stride + 1
    if Tout < 1:
        raise ShapeError("conv1d", x.shape, w.shape)
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)[:, :, ::stride]
    # win: (B, C, Tout, k) -> cols (B, Tout, C*k)
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B, Tout, C * k)
    wm = w.data.reshape(O, C * k)
    y = cols @ wm.T
    if b is not None:
        y = y + b.data
    y = np.ascontiguousarray(y.transpose(0, 2, 1))
    parents = (x, w) if b is None else (x, w, b)
    out = _make(y, parents, "conv1d")
    if out.requires_grad:
        def _bw():
            g = out.grad.transpose(0, 2, 1)  # (B, Tout, O)
            gw = np.einsum("bto,btc->oc", g, cols).reshape(w.shape)
            _accum(w, gw)
            if b is not None:
                _accum(b, g.sum(axis=(0, 1)))
            gcols = g @ wm  # (B, Tout, C*k)
            gcols = gcols.reshape(B, Tout, C, k).transpose(0, 2, 1, 3)
            gxp = np.zeros_like(xp)
            for i in range(k):
                gxp[:, :, i:i + stride * Tout:stride] += gcols[:, :, :, i]
            gx = gxp[:, :, padding:Tp - padding] if padding else gxp
            _accum(x, gx)
        out._backward = _bw
    return out


def conv_transpose1d(x: Tensor, w: Tensor, b: Optional[Tensor] = None,
                     stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed 1-D convolution. x (B, Cin, T), w (Cin, Cout, k)."""
    if x.data.ndim != 3 or w.data.ndim != 3 or x.shape[1] != w.shape[0]:
        raise ShapeError("conv_transpose1d", x.shape, w.shape)
    B, C, T = x.shape
    _, O, k = w.shape
    Tfull = (T - 1) * stride + k
    y = np.zeros((B, O, Tfull), dtype=x.data.dtype)
    for i in range(k):
        # x (B,C,T) . w[:, :, i] (C,O) -> (B,O,T)
        contrib = np.einsum("bct,co->bot", x.data, w.data[:, :, i])
        y[:, :, i:i + stride * T:stride] += contrib
    if padding:
        y = np.ascontiguousarray(y[:, :, padding:Tfull - padding])
    if b is not None:
        y = y + b.data[None, :, None]
    parents = (x, w) if b is None else (x, w, b)
    out = _make(y, parents, "conv_transpose1d")
    if out.requires_grad:
        def _bw():
            g = out.grad
            gfull = np.pad(g, ((0, 0), (0, 0), (padding, padding))) if padding else g
            gx = np.zeros_like(x.data)
            gw = np.zeros_like(w.data)
            for i in range(k):
                seg = gfull[:, :, i:i + stride * T:stride]  # (B, O, T)
                gx += np.einsum("bot,co->bct", seg, w.data[:, :, i])
                gw[:, :, i] = np.einsum("bct,bot->co", x.data, seg)
            _accum(x, gx)
            _accum(w, gw)
            if b is not None:
                _accum(b, g.sum(axis=(0, 2)))
        out._backward = _bw
    return out


# -- discrete-latent primitives -----------------------------------------

def stop_gradient(x: Tensor) -> Tensor:
    """Identity forward; contributes exactly zero gradient to x."""
    out = Tensor.__new__(Tensor)
    out.data = x.data
    out.grad = None
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    out.op = "stop_gradient"
    return out


def straight_through(quantized: Tensor, encoder_out: Tensor) -> Tensor:
    """Forward equals `quantized` bit-identically; gradient passes to `encoder_out`
    unchanged (encoder_out + sg(quantized - encoder_out))."""
    if quantized.shape != encoder_out.shape:
        raise ShapeError("straight_through", quantized.shape, encoder_out.shape)
    out = _make(quantized.data, (encoder_out,), "straight_through")
    if out.requires_grad:
        def _bw():
            _accum(encoder_out, out.grad)
        out._backward = _bw
    return out


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0."""
    if p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return mul(x, _wrap(keep))


# -- optimizer ----------------------------------------------------------

class AdamW:
    """Decoupled-weight-decay Adam over named parameter groups.

    Frozen groups are skipped entirely: neither parameters nor optimizer
    state advance while a group is frozen.
    """

    def __init__(self, groups: dict, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        # groups: {name: {"params": {pname: Tensor}, "lr": float}}
        self.groups = groups
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.frozen: set = set()
        self.state = {
            gname: {pname: {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "t": 0}
                    for pname, p in g["params"].items()}
            for gname, g in groups.items()
        }

    def freeze(self, name: str) -> None:
        if name not in self.groups:
            raise KeyError(f"unknown parameter group {name!r}")
        self.frozen.add(name)

    def unfreeze(self, name: str) -> None:
        if name not in self.groups:
            raise KeyError(f"unknown parameter group {name!r}")
        self.frozen.discard(name)

    def zero_grad(self) -> None:
        for g in self.groups.values():
            for p in g["params"].values():
                p.grad = None

    def step(self) -> None:
        for gname, g in self.groups.items():
            if gname in self.frozen:
                continue
            lr = g["lr"]
            for pname, p in g["params"].items():
                if p.grad is None:
                    continue
                st = self.state[gname][pname]
                st["t"] += 1
                grad = p.grad.astype(p.data.dtype)
                st["m"] = self.beta1 * st["m"] + (1 - self.beta1) * grad
                st["v"] = self.beta2 * st["v"] + (1 - self.beta2) * grad * grad
                mhat = st["m"] / (1 - self.beta1 ** st["t"])
                vhat = st["v"] / (1 - self.beta2 ** st["t"])
                p.data = p.data - lr * mhat / (np.sqrt(vhat) + self.eps)
                if self.weight_decay:
                    p.data = p.data - lr * self.weight_decay * p.data


def adamw_step(params, grads, config) -> None:
    """One functional AdamW step over parallel lists of tensors and gradients.

    config: {"lr", "beta1", "beta2", "eps", "weight_decay", "state": per-param list}.
    """
    b1 = config.get("beta1", 0.9)
    b2 = config.get("beta2", 0.999)
    eps = config.get("eps", 1e-8)
    wd = config.get("weight_decay", 0.0)
    lr = config["lr"]
    state = config.setdefault(
        "state", [{"m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "t": 0}
                  for p in params])
    for p, g, st in zip(params, grads, state):
        st["t"] += 1
        st["m"] = b1 * st["m"] + (1 - b1) * g
        st["v"] = b2 * st["v"] + (1 - b2) * g * g
        mhat = st["m"] / (1 - b1 ** st["t"])
        vhat = st["v"] / (1 - b2 ** st["t"])
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + eps)
        if wd:
            p.data = p.data - lr * wd * p.data


# -- gradient checking --------------------------------------------------

def gradcheck(fn, tensors, eps: float = 1e-5) -> float:
    """Compare analytic gradients of scalar fn(*tensors) against central differences.

    Returns the max relative error over all elements of all inputs. Intended to
    run under use_dtype("float64").
    """
    for t in tensors:
        t.grad = None
    loss = fn(*tensors)
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in tensors]
    worst = 0.0
    for t, ga in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        gn = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(fn(*tensors).data)
            flat[i] = orig - eps
            lo = float(fn(*tensors).data)
            flat[i] = orig
            gn[i] = (hi - lo) / (2 * eps)
        gn = gn.reshape(t.data.shape)
        scale = max(1.0, float(np.abs(gn).max()), float(np.abs(ga).max()))
        err = float(np.abs(ga - gn).max()) / scale
        worst = max(worst, err)
    return worst
