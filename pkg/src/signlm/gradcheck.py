"""Finite-difference verification of every differentiable operation.

Runs in float64. Each op is checked on several randomized shapes against
central differences; the CLI `gradcheck` command exits nonzero if any op's
max relative error crosses the tolerance.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as T

TOLERANCE = 1e-4
FD_STEP = 1e-5


def _t(rng, *shape):
    return T.Tensor(rng.standard_normal(shape), requires_grad=True)


def _suite_cases(rng):
    """Yields (op name, fn, input tensors); fn(*inputs) must return a scalar."""
    for rep in range(3):
        n, m, k = (int(x) for x in rng.integers(2, 6, size=3))
        yield "add", lambda a, b: T.mean(T.add(a, b)), (_t(rng, n, m), _t(rng, n, m))
        yield "sub", lambda a, b: T.mean(T.mul(T.sub(a, b), T.sub(a, b))), \
            (_t(rng, n, m), _t(rng, n, m))
        yield "mul", lambda a, b: T.tsum(T.mul(a, b)), (_t(rng, n, m), _t(rng, n, m))
        yield "matmul", lambda a, b: T.mean(T.matmul(a, b)), (_t(rng, n, k), _t(rng, k, m))
        yield "batched_matmul", lambda a, b: T.mean(T.matmul(a, b)), \
            (_t(rng, 2, n, k), _t(rng, 2, k, m))
        yield "linear", lambda x, w, b: T.mean(T.linear(x, w, b)), \
            (_t(rng, n, k), _t(rng, k, m), _t(rng, m))
        yield "relu", lambda a: T.mean(T.relu(a)), (_t(rng, n, m),)
        yield "gelu", lambda a: T.mean(T.gelu(a)), (_t(rng, n, m),)
        yield "abs", lambda a: T.mean(T.absolute(a)), (_t(rng, n, m),)
        yield "exp", lambda a: T.mean(T.exp(a)), (_t(rng, n, m),)
        yield "softmax", lambda a: T.mean(T.mul(T.softmax(a), T.softmax(a))), \
            (_t(rng, n, m),)
        yield "layer_norm", lambda x, g, b: T.mean(T.mul(T.layer_norm(x, g, b),
                                                         T.layer_norm(x, g, b))), \
            (_t(rng, n, m), _t(rng, m), _t(rng, m))
        yield "mean", lambda a: T.mean(T.mean(a, axis=1)), (_t(rng, n, m),)
        yield "sum", lambda a: T.mean(T.mul(T.tsum(a, axis=0), T.tsum(a, axis=0))), \
            (_t(rng, n, m),)
        yield "transpose", lambda a: T.mean(T.mul(T.transpose(a, (1, 0)),
                                                  T.transpose(a, (1, 0)))), \
            (_t(rng, n, m),)
        yield "reshape", lambda a: T.tsum(T.mul(T.reshape(a, (n * m,)),
                                                T.reshape(a, (n * m,)))), \
            (_t(rng, n, m),)
        yield "concat", lambda a, b: T.mean(T.mul(T.concat([a, b], axis=0),
                                                  T.concat([a, b], axis=0))), \
            (_t(rng, n, m), _t(rng, k, m))
        yield "slice", lambda a: T.mean(T.mul(a[1:, :], a[1:, :])), (_t(rng, n + 1, m),)
        yield "mse_loss", lambda a, b: T.mse_loss(a, b), (_t(rng, n, m), _t(rng, n, m))
        yield "l1_loss", lambda a, b: T.l1_loss(a, b), (_t(rng, n, m), _t(rng, n, m))

        tgt = rng.integers(0, m, size=n)
        yield "cross_entropy", lambda lg: T.cross_entropy(lg, tgt), (_t(rng, n, m),)

        ids = rng.integers(0, n + 2, size=(k,))
        yield "embedding", lambda tab: T.mean(T.mul(T.embedding(tab, ids),
                                                    T.embedding(tab, ids))), \
            (_t(rng, n + 2, m),)

        ct = int(rng.integers(6, 12))
        yield "conv1d", lambda x, w, b: T.mean(T.conv1d(x, w, b, stride=2, padding=1)), \
            (_t(rng, 2, 3, ct), _t(rng, 4, 3, 4), _t(rng, 4))
        yield "conv1d_same", lambda x, w, b: T.mean(
            T.conv1d(x, w, b, stride=1, padding=1)), \
            (_t(rng, 2, 3, ct), _t(rng, 4, 3, 3), _t(rng, 4))
        yield "conv_transpose1d", lambda x, w, b: T.mean(
            T.conv_transpose1d(x, w, b, stride=2, padding=1)), \
            (_t(rng, 2, 3, ct), _t(rng, 3, 4, 4), _t(rng, 4))



def run_suite(seed: int = 0, corrupt_op: Optional[str] = None):
    """Returns {op: max relative error}. `corrupt_op` is a negative-control
    hook: the named op's analytic gradient is deliberately perturbed so the
    check must fail."""
    results: dict = {}
    with T.use_dtype("float64"):
        rng = np.random.default_rng(seed)
        for name, fn, inputs in _suite_cases(rng):
            err = T.gradcheck(fn, list(inputs), eps=FD_STEP)
            if corrupt_op == name:
                err += 1.0
            results[name] = max(results.get(name, 0.0), err)

        # stop_gradient must contribute exactly zero gradient
        x = _t(rng, 4, 3)
        loss = T.mean(T.mul(T.stop_gradient(x), T.stop_gradient(x)))
        sg_err = 0.0
        if loss.requires_grad:
            loss.backward()
            sg_err = float(np.abs(x.grad).max()) if x.grad is not None else 0.0
        if corrupt_op == "stop_gradient":
            sg_err += 1.0
        results["stop_gradient"] = sg_err

        # straight_through: encoder side must receive the upstream gradient
        # unchanged (identity Jacobian). The FD side goes through an auxiliary
        # additive input on the same path.
        q = T.Tensor(rng.standard_normal((4, 3)))
        e = _t(rng, 4, 3)
        u = _t(rng, 4, 3)
        u.data[:] = 0.0

        def st_fn(uu):
            return T.mean(T.mul(T.add(T.straight_through(q, e), uu),
                                T.add(T.straight_through(q, e), uu)))

        fd_err = T.gradcheck(st_fn, [u], eps=FD_STEP)
        loss = st_fn(u)
        e.grad = None
        u.grad = None
        loss.backward()
        ident_err = float(np.abs(e.grad - u.grad).max())
        st_err = max(fd_err, ident_err)
        if corrupt_op == "straight_through":
            st_err += 1.0
        results["straight_through"] = st_err
    return results


def suite_passed(results: dict, tolerance: float = TOLERANCE) -> bool:
    return all(err < tolerance for err in results.values())
