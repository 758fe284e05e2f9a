"""BiLSTM query encoder with self-attention pooling.

Word embeddings of the basic-level tokens run through one bidirectional
LSTM layer (hidden size m per direction, zero initial states). Hidden
states are concatenated per position, h_i = [h_if ‖ h_ib], scored by
alpha = softmax(U tanh(W Hᵀ + b)), pooled as q0 = Σ alpha_i h_i and
projected 2m → d to match the entity-embedding space. Ngram features are
not used on this path, and there is no batch normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import (
    DimensionMismatchError,
    EmptySequenceError,
    StaleActivationCacheError,
)
from ..numerics import sigmoid, softmax


@dataclass
class EnhancedEncoderConfig:
    vocab_size: int
    embed_dim: int = 128
    hidden_size: int = 128   # m, per direction
    attention_size: int = 64  # k

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "embed_dim": self.embed_dim,
            "hidden_size": self.hidden_size,
            "attention_size": self.attention_size,
        }


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class EnhancedEncoder:
    """Order-sensitive BiLSTM encoder with learned attention pooling."""

    kind = "enhanced"

    def __init__(self, config: EnhancedEncoderConfig):
        self.config = config
        self.params_version = 0

    # -- parameters ---------------------------------------------------

    def init_params(self, rng) -> dict:
        cfg = self.config
        d, m, k = cfg.embed_dim, cfg.hidden_size, cfg.attention_size
        params = {"word_emb": _uniform(rng, (cfg.vocab_size, d), d)}
        for direction in ("fwd", "bwd"):
            # gate rows stacked i,f,g,o
            params[f"{direction}_wx"] = _uniform(rng, (4 * m, d), d)
            params[f"{direction}_wh"] = _uniform(rng, (4 * m, m), m)
            bias = _uniform(rng, (4 * m,), m)
            bias[m: 2 * m] = 1.0  # forget gate open at start of training
            params[f"{direction}_b"] = bias
        params["attn_w"] = _uniform(rng, (k, 2 * m), 2 * m)
        params["attn_u"] = _uniform(rng, (k,), k)
        params["attn_b"] = _uniform(rng, (k,), k)
        params["proj_w"] = _uniform(rng, (d, 2 * m), 2 * m)
        params["proj_b"] = _uniform(rng, (d,), 2 * m)
        return params

    def init_state(self) -> dict:
        return {}

    def note_update(self):
        self.params_version += 1

    # -- forward ------------------------------------------------------

    def _run_direction(self, params, E, direction):
        """Unidirectional LSTM over embedded steps E (n, d)."""
        m = self.config.hidden_size
        wx, wh, b = (
            params[f"{direction}_wx"],
            params[f"{direction}_wh"],
            params[f"{direction}_b"],
        )
        n = E.shape[0]
        order = range(n) if direction == "fwd" else range(n - 1, -1, -1)
        h = np.zeros(m)
        c = np.zeros(m)
        steps = [None] * n
        H = np.zeros((n, m))
        for t in order:
            z = wx @ E[t] + wh @ h + b
            i = sigmoid(z[:m])
            f = sigmoid(z[m: 2 * m])
            g = np.tanh(z[2 * m: 3 * m])
            o = sigmoid(z[3 * m:])
            c_prev, h_prev = c, h
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            H[t] = h
            steps[t] = {
                "i": i, "f": f, "g": g, "o": o,
                "c": c, "tc": tc, "c_prev": c_prev, "h_prev": h_prev,
            }
        return H, steps

    def bilstm_forward(self, params, E):
        """Concatenated hidden states H (n, 2m) for embedded tokens E (n, d)."""
        if E.shape[0] == 0:
            raise EmptySequenceError("cannot encode an empty token sequence")
        Hf, steps_f = self._run_direction(params, E, "fwd")
        Hb, steps_b = self._run_direction(params, E, "bwd")
        return np.concatenate([Hf, Hb], axis=1), (steps_f, steps_b)

    def attention(self, params, H):
        """alpha = softmax(U tanh(W Hᵀ + b)); returns (alpha, tanh cache)."""
        T = np.tanh(params["attn_w"] @ H.T + params["attn_b"][:, None])  # (k, n)
        scores = params["attn_u"] @ T  # (n,)
        return softmax(scores), T

    def pool_and_project(self, params, H, alpha):
        if H.shape[0] != alpha.shape[0]:
            raise DimensionMismatchError(
                f"{alpha.shape[0]} attention weights for {H.shape[0]} "
                "hidden states"
            )
        pooled = alpha @ H  # (2m,)
        return params["proj_w"] @ pooled + params["proj_b"], pooled

    def forward(self, params, state, batch, mode="train", update_running=True):
        """Encode tokenized queries to (B, d) plus a cache for backward.

        ``mode`` and ``update_running`` exist for interface parity with the
        base encoder; this path has no batch-dependent statistics, so
        train and infer mode compute the same function.
        """
        del mode, update_running, state
        out = np.empty((len(batch), self.config.embed_dim))
        examples = []
        for idx, query in enumerate(batch):
            ids = list(query.basic_ids)
            if not ids:
                raise EmptySequenceError(f"query {query.raw!r} has no tokens")
            E = params["word_emb"][ids]
            H, steps = self.bilstm_forward(params, E)
            alpha, T = self.attention(params, H)
            q, pooled = self.pool_and_project(params, H, alpha)
            out[idx] = q
            examples.append(
                {"ids": ids, "E": E, "H": H, "steps": steps,
                 "alpha": alpha, "T": T, "pooled": pooled}
            )
        return out, {"version": self.params_version, "examples": examples}

    def encode(self, params, state, batch):
        q, _ = self.forward(params, state, batch, mode="infer")
        return q

    def attention_weights(self, params, query):
        """alpha for one tokenized query (used by the eval attention dump)."""
        ids = list(query.basic_ids)
        if not ids:
            raise EmptySequenceError(f"query {query.raw!r} has no tokens")
        H, _ = self.bilstm_forward(params, params["word_emb"][ids])
        alpha, _ = self.attention(params, H)
        return alpha

    # -- backward -----------------------------------------------------

    def _backprop_direction(self, params, E, steps, dH_dir, direction, grads):
        """BPTT through one direction; returns dE contribution (n, d)."""
        m = self.config.hidden_size
        wx = params[f"{direction}_wx"]
        wh = params[f"{direction}_wh"]
        n = E.shape[0]
        order = range(n - 1, -1, -1) if direction == "fwd" else range(n)
        dE = np.zeros_like(E)
        dh_next = np.zeros(m)
        dc_next = np.zeros(m)
        g_wx = grads[f"{direction}_wx"]
        g_wh = grads[f"{direction}_wh"]
        g_b = grads[f"{direction}_b"]
        for t in order:
            s = steps[t]
            dh = dH_dir[t] + dh_next
            do = dh * s["tc"]
            dc = dh * s["o"] * (1.0 - s["tc"] ** 2) + dc_next
            di = dc * s["g"]
            dg = dc * s["i"]
            df = dc * s["c_prev"]
            dc_next = dc * s["f"]
            dz = np.concatenate([
                di * s["i"] * (1.0 - s["i"]),
                df * s["f"] * (1.0 - s["f"]),
                dg * (1.0 - s["g"] ** 2),
                do * s["o"] * (1.0 - s["o"]),
            ])
            g_wx += np.outer(dz, E[t])
            g_wh += np.outer(dz, s["h_prev"])
            g_b += dz
            dE[t] += wx.T @ dz
            dh_next = wh.T @ dz
        return dE

    def backward(self, params, cache, dQ) -> dict:
        """Full backpropagation through time; no truncation."""
        if cache["version"] != self.params_version:
            raise StaleActivationCacheError(
                "parameters changed since the cached forward pass"
            )
        m = self.config.hidden_size
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        for idx, ex in enumerate(cache["examples"]):
            dq = np.asarray(dQ[idx], dtype=np.float64)
            H, alpha, T = ex["H"], ex["alpha"], ex["T"]

            grads["proj_w"] += np.outer(dq, ex["pooled"])
            grads["proj_b"] += dq
            dpooled = params["proj_w"].T @ dq  # (2m,)

            dalpha = H @ dpooled  # (n,)
            dH = np.outer(alpha, dpooled)  # (n, 2m)

            # softmax backward over attention scores
            ds = alpha * (dalpha - float(alpha @ dalpha))  # (n,)
            grads["attn_u"] += T @ ds
            dT = np.outer(params["attn_u"], ds)  # (k, n)
            dpre = dT * (1.0 - T ** 2)  # (k, n)
            grads["attn_w"] += dpre @ H
            grads["attn_b"] += dpre.sum(axis=1)
            dH += dpre.T @ params["attn_w"]

            dE = self._backprop_direction(
                params, ex["E"], ex["steps"][0], dH[:, :m], "fwd", grads
            )
            dE += self._backprop_direction(
                params, ex["E"], ex["steps"][1], dH[:, m:], "bwd", grads
            )
            np.add.at(grads["word_emb"], ex["ids"], dE)
        return grads
