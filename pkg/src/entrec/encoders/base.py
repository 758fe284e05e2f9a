"""Averaged-embedding query encoder: 2d input through three tanh FC layers.

The input vector concatenates the mean word embedding (basic plus semantic
tokens, one shared table) with the mean hashed-ngram embedding. Each fully
connected layer applies batch normalization to its pre-activation, then
tanh. Layer widths are 4d-2d-d, which at the default d=128 gives the
512-256-128 stack.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyQueryError, StaleActivationCacheError

BN_EPS = 1e-5
BN_MOMENTUM = 0.99


@dataclass
class BaseEncoderConfig:
    vocab_size: int
    embed_dim: int = 128
    num_buckets: int = 2 ** 20
    use_ngrams: bool = True

    # Derived widths; input is [word mean ‖ ngram mean] = 2d.
    layer_dims: tuple = field(init=False)

    def __post_init__(self):
        d = self.embed_dim
        self.layer_dims = (2 * d, 4 * d, 2 * d, d)

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "embed_dim": self.embed_dim,
            "num_buckets": self.num_buckets,
            "use_ngrams": self.use_ngrams,
        }


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class BaseEncoder:
    """Order-invariant averaged-embedding encoder (ngrams excepted)."""

    kind = "base"

    def __init__(self, config: BaseEncoderConfig):
        self.config = config
        self.params_version = 0

    # -- parameters ---------------------------------------------------

    def init_params(self, rng) -> dict:
        cfg = self.config
        d = cfg.embed_dim
        dims = cfg.layer_dims
        params = {"word_emb": _uniform(rng, (cfg.vocab_size, d), d)}
        if cfg.use_ngrams:
            params["ngram_emb"] = _uniform(rng, (cfg.num_buckets, d), d)
        for layer in (1, 2, 3):
            fan_in, fan_out = dims[layer - 1], dims[layer]
            params[f"fc{layer}_w"] = _uniform(rng, (fan_out, fan_in), fan_in)
            params[f"fc{layer}_b"] = _uniform(rng, (fan_out,), fan_in)
            params[f"bn{layer}_gamma"] = np.ones(fan_out)
            params[f"bn{layer}_beta"] = np.zeros(fan_out)
        return params

    def init_state(self) -> dict:
        dims = self.config.layer_dims
        state = {}
        for layer in (1, 2, 3):
            state[f"bn{layer}_mean"] = np.zeros(dims[layer])
            state[f"bn{layer}_var"] = np.ones(dims[layer])
        return state

    def note_update(self):
        """Callers invoke this after mutating params; invalidates caches."""
        self.params_version += 1

    # -- forward ------------------------------------------------------

    def embed_average(self, params, query) -> np.ndarray:
        """256-d input vector (2d): [mean word emb ‖ mean ngram emb]."""
        x, _ = self._embed_one(params, query)
        return x

    def _embed_one(self, params, query):
        d = self.config.embed_dim
        # Sorting fixes the reduction order, so permuted queries come out
        # bit-identical rather than merely close.
        word_ids = sorted(list(query.basic_ids) + list(query.semantic_ids))
        if not word_ids:
            raise EmptyQueryError(f"query {query.raw!r} has no tokens")
        x = np.zeros(2 * d)
        x[:d] = params["word_emb"][word_ids].mean(axis=0)
        ngram_ids = sorted(query.ngram_ids) if self.config.use_ngrams else []
        if ngram_ids:
            x[d:] = params["ngram_emb"][ngram_ids].mean(axis=0)
        return x, (word_ids, ngram_ids)

    def forward(self, params, state, batch, mode="train", update_running=True):
        """Encode a batch of tokenized queries to (B, d) plus a cache.

        ``mode="train"`` normalizes with batch statistics (biased variance)
        and, unless ``update_running`` is False, folds them into the running
        estimates. ``mode="infer"`` uses the running statistics and is a
        pure function of (params, state, batch).
        """
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be train or infer, got {mode!r}")
        ids = []
        X = np.empty((len(batch), self.config.layer_dims[0]))
        for i, query in enumerate(batch):
            X[i], touched = self._embed_one(params, query)
            ids.append(touched)

        cache = {
            "version": self.params_version,
            "mode": mode,
            "ids": ids,
            "x": X,
            "layers": [],
        }
        a = X
        for layer in (1, 2, 3):
            y = a @ params[f"fc{layer}_w"].T + params[f"fc{layer}_b"]
            gamma = params[f"bn{layer}_gamma"]
            beta = params[f"bn{layer}_beta"]
            if mode == "train":
                mean = y.mean(axis=0)
                var = y.var(axis=0)  # biased, matches normalization below
                if update_running:
                    state[f"bn{layer}_mean"] *= BN_MOMENTUM
                    state[f"bn{layer}_mean"] += (1.0 - BN_MOMENTUM) * mean
                    state[f"bn{layer}_var"] *= BN_MOMENTUM
                    state[f"bn{layer}_var"] += (1.0 - BN_MOMENTUM) * var
            else:
                mean = state[f"bn{layer}_mean"]
                var = state[f"bn{layer}_var"]
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (y - mean) * inv_std
            a_prev = a
            a = np.tanh(gamma * xhat + beta)
            cache["layers"].append(
                {"a_in": a_prev, "xhat": xhat, "inv_std": inv_std, "a_out": a}
            )
        return a, cache

    def encode(self, params, state, batch):
        """Inference-mode embeddings, (B, d)."""
        q, _ = self.forward(params, state, batch, mode="infer")
        return q

    # -- backward -----------------------------------------------------

    def backward(self, params, cache, dQ) -> dict:
        """Gradients for every trainable tensor given dLoss/dQ (B, d)."""
        if cache["version"] != self.params_version:
            raise StaleActivationCacheError(
                "parameters changed since the cached forward pass"
            )
        cfg = self.config
        d = cfg.embed_dim
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        B = dQ.shape[0]

        da = np.asarray(dQ, dtype=np.float64)
        for layer in (3, 2, 1):
            lc = cache["layers"][layer - 1]
            gamma = params[f"bn{layer}_gamma"]
            dz = da * (1.0 - lc["a_out"] ** 2)
            grads[f"bn{layer}_gamma"] = (dz * lc["xhat"]).sum(axis=0)
            grads[f"bn{layer}_beta"] = dz.sum(axis=0)
            dxhat = dz * gamma
            if cache["mode"] == "train":
                # batch statistics participate in the graph
                dy = (
                    dxhat
                    - dxhat.mean(axis=0)
                    - lc["xhat"] * (dxhat * lc["xhat"]).mean(axis=0)
                ) * lc["inv_std"]
            else:
                dy = dxhat * lc["inv_std"]
            grads[f"fc{layer}_w"] = dy.T @ lc["a_in"]
            grads[f"fc{layer}_b"] = dy.sum(axis=0)
            da = dy @ params[f"fc{layer}_w"]

        dX = da  # (B, 2d)
        for i in range(B):
            word_ids, ngram_ids = cache["ids"][i]
            np.add.at(grads["word_emb"], word_ids, dX[i, :d] / len(word_ids))
            if ngram_ids:
                np.add.at(grads["ngram_emb"], ngram_ids, dX[i, d:] / len(ngram_ids))
        return grads
