"""Shared numeric kernels: stable softmax, activations, seeded RNG, gradient checking.

Dense linear algebra is backed by numpy arrays: row-major float64 during
training and gradient checks, float32 inside serving indexes. The RNG is
pinned to one algorithm (PCG64) so that a recorded seed or state replays
the identical stream on every platform.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteLossError

# Recorded in checkpoints so a training run can be replayed.
RNG_ALGORITHM = "numpy.random.PCG64"


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator with the package-wide fixed algorithm."""
    return np.random.Generator(np.random.PCG64(seed))


def rng_state(rng: np.random.Generator) -> dict:
    """JSON-serializable snapshot of the generator state."""
    state = rng.bit_generator.state
    return {
        "algorithm": RNG_ALGORITHM,
        "state": str(state["state"]["state"]),
        "inc": str(state["state"]["inc"]),
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }


def restore_rng(snapshot: dict) -> np.random.Generator:
    rng = np.random.Generator(np.random.PCG64(0))
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": int(snapshot["state"]), "inc": int(snapshot["inc"])},
        "has_uint32": int(snapshot["has_uint32"]),
        "uinteger": int(snapshot["uinteger"]),
    }
    return rng


def softmax(v, axis=-1):
    """Probabilities from scores, stabilized by max subtraction."""
    v = np.asarray(v, dtype=np.float64)
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def logsumexp(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    m = np.max(v, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def sigmoid(x):
    """Logistic function, stable for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def grad_check(loss_fn, params, eps=1e-5, zero_guard=1e-6):
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(params) -> (loss, grads)`` must be deterministic and free of
    side effects; ``params`` and ``grads`` are dicts of float64 arrays with
    matching keys/shapes. Every coordinate is perturbed by +/- eps.

    ``zero_guard`` floors the denominator so coordinates where both
    gradients vanish do not divide by ~0.
    """
    loss, grads = loss_fn(params)
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"loss at base point is {loss!r}")
    max_err = 0.0
    for name, value in params.items():
        g = grads[name]
        flat = value.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp, _ = loss_fn(params)
            flat[i] = orig - eps
            lm, _ = loss_fn(params)
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NonFiniteLossError(f"non-finite loss while perturbing {name}[{i}]")
            fd = (lp - lm) / (2.0 * eps)
            an = gflat[i]
            err = abs(fd - an) / max(abs(fd), abs(an), zero_guard)
            if err > max_err:
                max_err = err
    return max_err
