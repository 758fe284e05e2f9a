"""Query→entity recommendation engine.

Learns joint query and entity embeddings with sampled-softmax
classification over the entity vocabulary, then serves top-K related
entities through exact or inverted-file cosine retrieval.
"""

from .checkpoint import Checkpoint
from .encoders import (
    BaseEncoder,
    BaseEncoderConfig,
    EnhancedEncoder,
    EnhancedEncoderConfig,
)
from .errors import EntrecError
from .estimator import EntityRecommender
from .evaluation import EvalMethod, dump_attention, evaluate, precision_at_m
from .index import EntityIndex, build_index, group_by_concept
from .serve import create_app, load_app
from .text import (
    PhraseDict,
    QueryTokenizer,
    TokenizedQuery,
    Vocabulary,
    build_vocab,
    extract_ngrams,
    segment,
)
from .training import (
    NegativeSampler,
    Trainer,
    TrainConfig,
    TrainingPair,
    sampled_softmax_loss,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "BaseEncoder",
    "BaseEncoderConfig",
    "Checkpoint",
    "EnhancedEncoder",
    "EnhancedEncoderConfig",
    "EntityIndex",
    "EntityRecommender",
    "EntrecError",
    "EvalMethod",
    "NegativeSampler",
    "PhraseDict",
    "QueryTokenizer",
    "TokenizedQuery",
    "TrainConfig",
    "Trainer",
    "TrainingPair",
    "Vocabulary",
    "build_index",
    "build_vocab",
    "create_app",
    "dump_attention",
    "evaluate",
    "extract_ngrams",
    "group_by_concept",
    "load_app",
    "precision_at_m",
    "sampled_softmax_loss",
    "segment",
    "train",
]
