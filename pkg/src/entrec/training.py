"""Sampled-softmax training over query-entity pairs, shared by both encoders.

Entities are softmax classes. Per example we score the target plus k
sampled negatives; sampled logits get the standard proposal correction
u·q − log(k·Q(j)) while the target logit stays uncorrected. The entity
output-embedding table is owned here, not by the encoders.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .encoders import ENCODER_KINDS, BaseEncoderConfig, EnhancedEncoderConfig, make_encoder
from .errors import (
    ConfigError,
    EmptyCorpusError,
    NonFiniteLossError,
    TargetInNegativesError,
    VocabTooSmallError,
)
from .numerics import logsumexp, make_rng, rng_state, softmax
from .text import TokenizedQuery

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

SAMPLER_KINDS = ("log-uniform", "unigram")


@dataclass
class TrainingPair:
    query: TokenizedQuery
    target: int
    weight: float = 1.0


@dataclass
class TrainConfig:
    """Knobs of one training run.

    ``negatives`` defaults to the production value; desk-scale runs with
    tiny vocabularies must lower it (it may not reach the vocabulary
    size). ``learning_rate`` of exactly 0 is allowed and leaves
    parameters untouched, which is useful for pipeline smoke tests.
    """

    encoder: str = "enhanced"
    learning_rate: float = 1e-3
    batch_size: int = 64
    negatives: int = 5000
    epochs: int = 5
    seed: int = 0
    sampler: str = "log-uniform"
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    adam_eps: float = ADAM_EPS
    embed_dim: int = 128
    hidden_size: int = 128
    attention_size: int = 64
    num_buckets: int = 2 ** 20
    use_ngrams: bool = True

    def validate(self, num_entities: int):
        if self.encoder not in ENCODER_KINDS:
            raise ConfigError(f"unknown encoder {self.encoder!r}")
        if self.sampler not in SAMPLER_KINDS:
            raise ConfigError(f"unknown sampler {self.sampler!r}")
        if not 1 <= self.negatives <= num_entities - 1:
            raise ConfigError(
                f"negatives must be in [1, {num_entities - 1}] for "
                f"{num_entities} entities, got {self.negatives}"
            )
        if self.learning_rate < 0:
            raise ConfigError("learning rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# -- negative sampling ------------------------------------------------


class NegativeSampler:
    """Draws negative entity ids with replacement, excluding the target.

    ``log-uniform`` assumes ids are frequency ranks (id 0 most frequent)
    and draws rank r with probability log((r+2)/(r+1)) / log(|V|+1).
    ``unigram`` draws proportionally to count^0.75. Each draw reports its
    unconditional proposal probability Q(j) for the logit correction.
    """

    def __init__(self, kind, num_entities, counts=None):
        if num_entities <= 1:
            raise VocabTooSmallError(
                f"need at least 2 entities to sample negatives, have {num_entities}"
            )
        self.kind = kind
        self.num_entities = num_entities
        if kind == "log-uniform":
            ranks = np.arange(num_entities, dtype=np.float64)
            self._probs = (
                np.log((ranks + 2.0) / (ranks + 1.0)) / np.log(num_entities + 1.0)
            )
        elif kind == "unigram":
            if counts is None:
                raise ConfigError("unigram sampler needs entity counts")
            weights = np.asarray(counts, dtype=np.float64) ** 0.75
            if weights.sum() <= 0:
                raise ConfigError("unigram sampler needs positive counts")
            self._probs = weights / weights.sum()
            self._cdf = np.cumsum(self._probs)
            self._cdf[-1] = 1.0
        else:
            raise ConfigError(f"unknown sampler {kind!r}")

    def proposal_prob(self, ids) -> np.ndarray:
        return self._probs[np.asarray(ids, dtype=np.int64)]

    def _draw(self, rng, count) -> np.ndarray:
        u = rng.random(count)
        if self.kind == "log-uniform":
            # inverse transform of the log-uniform CDF over ranks
            ids = np.floor(np.exp(u * np.log(self.num_entities + 1.0))).astype(np.int64) - 1
            return np.clip(ids, 0, self.num_entities - 1)
        return np.searchsorted(self._cdf, u, side="right").astype(np.int64)

    def sample(self, rng, k, exclude):
        """k ids none equal to ``exclude``, with proposal probabilities."""
        out = np.empty(k, dtype=np.int64)
        filled = 0
        while filled < k:
            draw = self._draw(rng, max(k - filled, 1))
            draw = draw[draw != exclude]
            take = min(draw.size, k - filled)
            out[filled: filled + take] = draw[:take]
            filled += take
        return out, self.proposal_prob(out)


# -- loss ---------------------------------------------------------------


def sampled_softmax_loss(q, target, negatives, proposal_probs, table,
                         correct=True):
    """Cross-entropy over {target} ∪ negatives.

    Returns (loss, d_loss/d_q, {row id: d_loss/d_row}). Sampled logits are
    corrected by −log(k·Q(j)); the target logit is left uncorrected. With
    ``correct=False`` raw dot products are used, which with exhaustive
    negatives reproduces the full softmax exactly.
    """
    negatives = np.asarray(negatives, dtype=np.int64)
    if np.any(negatives == target):
        raise TargetInNegativesError(
            f"target {target} appeared among its own negatives"
        )
    k = negatives.size
    rows = table[negatives]  # (k, d)
    logits = np.empty(k + 1)
    logits[0] = table[target] @ q
    logits[1:] = rows @ q
    if correct:
        logits[1:] -= np.log(k * np.asarray(proposal_probs, dtype=np.float64))
    loss = logsumexp(logits) - logits[0]
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"sampled-softmax loss is {loss!r}")

    dlogits = softmax(logits)
    dlogits[0] -= 1.0
    dq = dlogits[0] * table[target] + dlogits[1:] @ rows
    row_grads: dict = {int(target): dlogits[0] * q}
    for j, nid in enumerate(negatives):
        nid = int(nid)
        contrib = dlogits[1 + j] * q
        if nid in row_grads:
            row_grads[nid] = row_grads[nid] + contrib
        else:
            row_grads[nid] = contrib
    return float(loss), dq, row_grads


# -- optimizer ----------------------------------------------------------


class Adam:
    """Dense Adam over a dict of float64 arrays.

    Rows whose gradient has been zero since the start keep their exact
    initial values: first and second moments stay zero there, so the
    update is zero regardless of bias correction.
    """

    def __init__(self, params, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2,
                 eps=ADAM_EPS):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


# -- training loop --------------------------------------------------------


def _encoder_from_config(config: TrainConfig, vocab_size: int):
    if config.encoder == "base":
        return make_encoder("base", BaseEncoderConfig(
            vocab_size=vocab_size,
            embed_dim=config.embed_dim,
            num_buckets=config.num_buckets,
            use_ngrams=config.use_ngrams,
        ).to_dict())
    return make_encoder("enhanced", EnhancedEncoderConfig(
        vocab_size=vocab_size,
        embed_dim=config.embed_dim,
        hidden_size=config.hidden_size,
        attention_size=config.attention_size,
    ).to_dict())


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    wall_ms: float
    seed: int


class Trainer:
    """Owns encoder params, entity table, optimizer and the epoch loop."""

    def __init__(self, vocab, config: TrainConfig, tokenizer_config=None,
                 cfg_hash=""):
        config.validate(vocab.num_entities)
        self.vocab = vocab
        self.config = config
        self.tokenizer_config = tokenizer_config or {}
        self.cfg_hash = cfg_hash
        self.rng = make_rng(config.seed)
        self.encoder = _encoder_from_config(config, vocab.num_words)
        self.params = self.encoder.init_params(self.rng)
        self.params["entity_emb"] = self.rng.uniform(
            -1.0 / np.sqrt(config.embed_dim),
            1.0 / np.sqrt(config.embed_dim),
            size=(vocab.num_entities, config.embed_dim),
        )
        self.bn_state = self.encoder.init_state()
        self.sampler = NegativeSampler(
            config.sampler, vocab.num_entities,
            counts=vocab.entity_counts_by_id(),
        )
        self.optimizer = Adam(self.params, config.learning_rate,
                              config.beta1, config.beta2, config.adam_eps)
        self.history: list[EpochStats] = []

    def _batch_loss_and_grads(self, batch):
        """Weighted mean loss over the batch plus gradients for all params."""
        table = self.params["entity_emb"]
        queries = [p.query for p in batch]
        Q, cache = self.encoder.forward(self.params, self.bn_state, queries,
                                        mode="train")
        weights = np.array([p.weight for p in batch], dtype=np.float64)
        wsum = weights.sum()
        if wsum <= 0:
            wsum = 1.0
        dQ = np.zeros_like(Q)
        table_grad = np.zeros_like(table)
        total = 0.0
        for i, pair in enumerate(batch):
            negatives, probs = self.sampler.sample(
                self.rng, self.config.negatives, pair.target
            )
            try:
                loss, dq, row_grads = sampled_softmax_loss(
                    Q[i], pair.target, negatives, probs, table
                )
            except NonFiniteLossError as exc:
                raise NonFiniteLossError(
                    "non-finite batch loss; offending queries: "
                    + json.dumps([p.query.raw for p in batch],
                                 ensure_ascii=False)
                ) from exc
            scale = weights[i] / wsum
            total += scale * loss
            dQ[i] = scale * dq
            for rid, g in row_grads.items():
                table_grad[rid] += scale * g
        if not np.isfinite(total):
            raise NonFiniteLossError(
                "non-finite batch loss; offending queries: "
                + json.dumps([p.query.raw for p in batch], ensure_ascii=False)
            )
        grads = self.encoder.backward(self.params, cache, dQ)
        grads["entity_emb"] = table_grad
        return total, grads

    def run(self, pairs, out_dir=None, log_fh=None) -> Checkpoint:
        if not pairs:
            raise EmptyCorpusError("no training pairs")
        cfg = self.config
        order = np.arange(len(pairs))
        for epoch in range(1, cfg.epochs + 1):
            started = time.perf_counter()
            # fresh permutation each epoch from the run RNG
            self.rng.shuffle(order)
            losses = []
            for lo in range(0, len(order), cfg.batch_size):
                batch = [pairs[i] for i in order[lo: lo + cfg.batch_size]]
                loss, grads = self._batch_loss_and_grads(batch)
                self.optimizer.step(self.params, grads)
                self.encoder.note_update()
                losses.append(loss)
            stats = EpochStats(
                epoch=epoch,
                mean_loss=float(np.mean(losses)),
                wall_ms=(time.perf_counter() - started) * 1e3,
                seed=cfg.seed,
            )
            self.history.append(stats)
            if log_fh is not None:
                log_fh.write(json.dumps({
                    "epoch": stats.epoch,
                    "mean_loss": stats.mean_loss,
                    "wall_ms": round(stats.wall_ms, 3),
                    "seed": stats.seed,
                }) + "\n")
                log_fh.flush()
            if out_dir is not None:
                self.to_checkpoint().save(
                    Path(out_dir) / f"checkpoint_epoch{epoch:03d}.bin"
                )
        return self.to_checkpoint()

    def to_checkpoint(self) -> Checkpoint:
        return Checkpoint(
            kind=self.encoder.kind,
            encoder_config=self.encoder.config.to_dict(),
            tokenizer_config=self.tokenizer_config,
            vocab=self.vocab,
            params=self.params,
            bn_state=self.bn_state,
            rng_snapshot=rng_state(self.rng),
            cfg_hash=self.cfg_hash,
        )


def train(pairs, vocab, config: TrainConfig, tokenizer_config=None,
          out_dir=None, log_fh=None, cfg_hash="") -> Checkpoint:
    """One full training run; returns the final checkpoint."""
    trainer = Trainer(vocab, config, tokenizer_config, cfg_hash=cfg_hash)
    return trainer.run(pairs, out_dir=out_dir, log_fh=log_fh)
