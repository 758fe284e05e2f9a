import sys

import numpy as np
import pytest

from entrec.index import build_index
from entrec.synth import gen_world
from entrec.text import TokenizedQuery, QueryTokenizer, build_vocab
from entrec.training import Trainer, TrainConfig, TrainingPair


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    """Print one visible line per acceptance criterion, pass or fail."""
    outcome = yield
    report = outcome.get_result()
    if call.when != "call":
        return
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    status = "PASS" if report.passed else "FAIL"
    print(f"[ACCEPTANCE] {status}: {marker.args[0]}", file=sys.__stderr__)
    sys.__stderr__.flush()


def make_query(basic_ids, semantic_ids=None, ngram_ids=(), raw=""):
    """TokenizedQuery straight from ids, bypassing any vocabulary."""
    basic_ids = list(basic_ids)
    return TokenizedQuery(
        raw=raw or " ".join(f"t{i}" for i in basic_ids),
        tokens=[f"t{i}" for i in basic_ids],
        basic_ids=basic_ids,
        semantic_ids=list(semantic_ids if semantic_ids is not None else basic_ids),
        ngram_ids=list(ngram_ids),
    )


@pytest.fixture(scope="session")
def tiny_world():
    return gen_world(seed=3, num_entities=10, queries_per_entity=3)


@pytest.fixture(scope="session")
def trained_bundle(tiny_world):
    """A small trained enhanced model with a clustered, concept-rich index."""
    world = tiny_world
    vocab = build_vocab(world.pairs)
    tokenizer = QueryTokenizer(vocab, num_buckets=512)
    pairs = [
        TrainingPair(tokenizer.tokenize(q), vocab.entity_id(e), w)
        for q, e, w in world.pairs
    ]
    config = TrainConfig(
        encoder="enhanced", embed_dim=16, hidden_size=12, attention_size=6,
        negatives=4, epochs=80, batch_size=8, seed=1, learning_rate=3e-3,
    )
    trainer = Trainer(vocab, config, tokenizer_config=tokenizer.config())
    checkpoint = trainer.run(pairs)
    index = build_index(
        checkpoint.entity_table, vocab, concept_map=world.concepts,
        num_clusters=4, seed=0, encoder_kind="enhanced",
    )
    return {
        "world": world,
        "vocab": vocab,
        "tokenizer": tokenizer,
        "trainer": trainer,
        "checkpoint": checkpoint,
        "index": index,
    }


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))
