"""Scikit-learn style front door for the whole engine.

EntityRecommender wraps vocabulary construction, training and index
building behind fit/predict/transform. Hyperparameters are stored
verbatim at construction (get_params/set_params compatible); everything
learned lives in trailing-underscore attributes after fit.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .evaluation import precision_at_m
from .index import build_index
from .text import PhraseDict, QueryTokenizer, build_vocab
from .training import Trainer, TrainConfig, TrainingPair
from .validation import as_pairs, check_texts, check_truth_sets


class EntityRecommender(BaseEstimator):
    """Query→entity recommender trained with sampled softmax.

    Parameters mirror TrainConfig plus vocabulary and index knobs.
    ``negatives`` is clamped to the entity-vocabulary limit at fit time
    (the effective value lands in ``negatives_``) so small corpora work
    out of the box.

    Example
    -------
    >>> pairs = [("warm soup recipe", "chicken soup"),
    ...          ("warm soup tonight", "chicken soup"),
    ...          ("fix flat tire", "bike repair"),
    ...          ("fix bike tire", "bike repair")]
    >>> model = EntityRecommender(epochs=20, negatives=1, seed=7)
    >>> model.fit(pairs).predict(["flat tire help"])[0]
    'bike repair'
    """

    def __init__(self, encoder="enhanced", embed_dim=64, hidden_size=64,
                 attention_size=32, learning_rate=1e-3, batch_size=32,
                 negatives=100, epochs=30, seed=0, sampler="log-uniform",
                 min_count=1, max_len=32, use_ngrams=False,
                 num_buckets=4096, num_clusters=0, phrases=None):
        self.encoder = encoder
        self.embed_dim = embed_dim
        self.hidden_size = hidden_size
        self.attention_size = attention_size
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.negatives = negatives
        self.epochs = epochs
        self.seed = seed
        self.sampler = sampler
        self.min_count = min_count
        self.max_len = max_len
        self.use_ngrams = use_ngrams
        self.num_buckets = num_buckets
        self.num_clusters = num_clusters
        self.phrases = phrases

    # -- fitting --------------------------------------------------------

    def fit(self, X, y=None):
        pairs = as_pairs(X, y)
        phrase_dict = PhraseDict(self.phrases) if self.phrases else None
        self.vocab_ = build_vocab(pairs, min_count=self.min_count,
                                  phrase_dict=phrase_dict)
        self.tokenizer_ = QueryTokenizer(
            self.vocab_, phrase_dict=phrase_dict,
            num_buckets=self.num_buckets, max_len=self.max_len,
        )
        self.negatives_ = min(self.negatives, self.vocab_.num_entities - 1)
        config = TrainConfig(
            encoder=self.encoder,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            negatives=self.negatives_,
            epochs=self.epochs,
            seed=self.seed,
            sampler=self.sampler,
            embed_dim=self.embed_dim,
            hidden_size=self.hidden_size,
            attention_size=self.attention_size,
            num_buckets=self.num_buckets,
            use_ngrams=self.use_ngrams,
        )
        training_pairs = []
        for query, entity, weight in pairs:
            target = self.vocab_.entity_id(entity)
            if target is None:  # dropped by min_count
                continue
            training_pairs.append(
                TrainingPair(self.tokenizer_.tokenize(query), target, weight)
            )
        trainer = Trainer(self.vocab_, config,
                          tokenizer_config=self.tokenizer_.config())
        self.checkpoint_ = trainer.run(training_pairs)
        self.history_ = trainer.history
        self.classes_ = np.asarray(self.vocab_.id_to_entity, dtype=object)
        self.index_ = build_index(
            self.checkpoint_.entity_table, self.vocab_,
            num_clusters=self.num_clusters,
            encoder_kind=self.encoder,
        )
        return self

    # -- inference ------------------------------------------------------

    def transform(self, X) -> np.ndarray:
        """Query embeddings, shape (n_queries, embed_dim)."""
        check_is_fitted(self, "checkpoint_")
        return self.checkpoint_.encode(check_texts(X))

    def predict(self, X) -> np.ndarray:
        """Top-1 entity name per query."""
        check_is_fitted(self, "checkpoint_")
        out = []
        for emb in self.transform(X):
            _, ids = self.index_.topk_exact(emb, 1)
            out.append(self.index_.names[int(ids[0])])
        return np.asarray(out, dtype=object)

    def recommend(self, query: str, k: int = 10) -> list:
        """Top-k (entity, score) for one query."""
        check_is_fitted(self, "checkpoint_")
        emb = self.checkpoint_.encode([query])[0]
        scores, ids = self.index_.search(emb, min(k, self.index_.size))
        return [(self.index_.names[int(i)], float(s))
                for s, i in zip(scores, ids)]

    def score(self, X, y) -> float:
        """Mean Precision@1 against per-query ground-truth entities."""
        check_is_fitted(self, "checkpoint_")
        texts = check_texts(X)
        truth = check_truth_sets(y, len(texts))
        preds = self.predict(texts)
        return float(np.mean([
            precision_at_m([p], g, 1) for p, g in zip(preds, truth)
        ]))
