import copy
import io
import json

import numpy as np
import pytest

from entrec.checkpoint import Checkpoint
from entrec.errors import (
    ConfigError,
    EmptyCorpusError,
    NonFiniteLossError,
    TargetInNegativesError,
    VocabTooSmallError,
)
from entrec.numerics import grad_check, logsumexp, make_rng, softmax
from entrec.text import PAD_TOKEN, UNK_TOKEN, Vocabulary
from entrec.training import (
    Adam,
    NegativeSampler,
    TrainConfig,
    Trainer,
    TrainingPair,
    sampled_softmax_loss,
    train,
)

from conftest import make_query


def tiny_vocab(num_words=6, num_entities=4):
    word_to_id = {PAD_TOKEN: 0, UNK_TOKEN: 1}
    word_freq = {PAD_TOKEN: 0, UNK_TOKEN: 0}
    for i in range(num_words):
        word_to_id[f"w{i}"] = 2 + i
        word_freq[f"w{i}"] = num_words - i
    entity_to_id = {f"e{i}": i for i in range(num_entities)}
    entity_freq = {f"e{i}": num_entities - i for i in range(num_entities)}
    return Vocabulary(word_to_id, entity_to_id, word_freq, entity_freq)


def desk_config(**kw):
    base = dict(encoder="enhanced", learning_rate=1e-3, batch_size=2,
                negatives=2, epochs=2, seed=0, embed_dim=8, hidden_size=6,
                attention_size=4, use_ngrams=False)
    base.update(kw)
    return TrainConfig(**base)


def log_uniform_prob(rank, size):
    return np.log((rank + 2.0) / (rank + 1.0)) / np.log(size + 1.0)


class TestNegativeSampler:
    def test_two_entities_only_candidate(self):
        sampler = NegativeSampler("log-uniform", 2)
        ids, probs = sampler.sample(make_rng(0), 7, exclude=0)
        np.testing.assert_array_equal(ids, np.ones(7, dtype=np.int64))
        np.testing.assert_allclose(probs, log_uniform_prob(1, 2))
        ids, _ = sampler.sample(make_rng(0), 7, exclude=1)
        np.testing.assert_array_equal(ids, np.zeros(7, dtype=np.int64))

    def test_single_entity_rejected(self):
        with pytest.raises(VocabTooSmallError):
            NegativeSampler("log-uniform", 1)

    def test_log_uniform_matches_closed_form(self):
        size, draws = 1000, 10 ** 6
        sampler = NegativeSampler("log-uniform", size)
        ids, _ = sampler.sample(make_rng(7), draws, exclude=500)
        counts = np.bincount(ids, minlength=size)
        for rank in (0, 999):
            p = log_uniform_prob(rank, size)
            sigma = np.sqrt(p * (1 - p) / draws)
            assert abs(counts[rank] / draws - p) < 3 * sigma, rank

    def test_log_uniform_probs_telescope_to_one(self):
        sampler = NegativeSampler("log-uniform", 137)
        assert sampler._probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_seed_determinism(self):
        sampler = NegativeSampler("log-uniform", 50)
        a, pa = sampler.sample(make_rng(3), 40, exclude=5)
        b, pb = sampler.sample(make_rng(3), 40, exclude=5)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(pa, pb)

    def test_never_returns_excluded(self):
        sampler = NegativeSampler("log-uniform", 5)
        for seed in range(10):
            ids, _ = sampler.sample(make_rng(seed), 200, exclude=0)
            assert not np.any(ids == 0)  # rank 0 is the most likely draw

    def test_duplicates_permitted(self):
        ids, _ = NegativeSampler("log-uniform", 3).sample(
            make_rng(1), 50, exclude=2)
        assert len(np.unique(ids)) < 50

    def test_proposal_probs_are_unconditional(self):
        counts = [9, 4, 1]
        sampler = NegativeSampler("unigram", 3, counts=counts)
        weights = np.array(counts, dtype=float) ** 0.75
        expected = weights / weights.sum()
        ids, probs = sampler.sample(make_rng(2), 30, exclude=2)
        np.testing.assert_allclose(probs, expected[ids])

    def test_unigram_frequency_ratio(self):
        # with id 2 excluded every accepted draw lands in {0, 1}
        sampler = NegativeSampler("unigram", 3, counts=[16, 1, 1])
        ids, _ = sampler.sample(make_rng(11), 10 ** 5, exclude=2)
        p0 = 16 ** 0.75 / (16 ** 0.75 + 1.0)
        sigma = np.sqrt(p0 * (1 - p0) / 10 ** 5)
        assert abs(np.mean(ids == 0) - p0) < 3 * sigma

    def test_unigram_requires_counts(self):
        with pytest.raises(ConfigError):
            NegativeSampler("unigram", 3)
        with pytest.raises(ConfigError):
            NegativeSampler("unigram", 3, counts=[0, 0, 0])

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            NegativeSampler("zipf", 3)


class TestSampledSoftmaxLoss:
    def test_exhaustive_equals_full_softmax(self):
        d, size = 8, 7
        for seed in range(5):
            rng = make_rng(seed)
            table = rng.normal(size=(size, d))
            q = rng.normal(size=d)
            target = int(rng.integers(size))
            negatives = np.array([j for j in range(size) if j != target])
            rng.shuffle(negatives)
            loss, dq, row_grads = sampled_softmax_loss(
                q, target, negatives, np.ones(size - 1), table, correct=False)

            logits = table @ q
            full = float(logsumexp(logits) - logits[target])
            assert abs(loss - full) < 1e-9
            p = softmax(logits)
            dq_full = p @ table - table[target]
            np.testing.assert_allclose(dq, dq_full, atol=1e-9)
            for j in range(size):
                expected = (p[j] - (j == target)) * q
                np.testing.assert_allclose(row_grads[j], expected, atol=1e-9)

    def test_zero_everything_uniform_loss(self):
        k = 10
        loss, dq, _ = sampled_softmax_loss(
            np.zeros(4), 0, np.arange(1, k + 1), np.ones(k),
            np.zeros((k + 1, 4)), correct=False)
        assert loss == pytest.approx(np.log(1 + k), abs=1e-12)
        np.testing.assert_array_equal(dq, np.zeros(4))

    def test_correction_term_hand_case(self):
        table = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        q = np.array([0.5, -0.25])
        probs = np.array([0.6, 0.1])
        loss, _, _ = sampled_softmax_loss(q, 0, [1, 2], probs, table)
        logits = [0.5, -0.25 - np.log(2 * 0.6), 0.25 - np.log(2 * 0.1)]
        expected = float(logsumexp(np.array(logits)) - logits[0])
        assert loss == pytest.approx(expected, abs=1e-12)

    def test_target_among_negatives_raises(self):
        with pytest.raises(TargetInNegativesError):
            sampled_softmax_loss(np.zeros(3), 1, [0, 1], np.ones(2),
                                 np.zeros((3, 3)))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_raises(self):
        table = np.zeros((3, 2))
        table[2] = np.inf
        with pytest.raises(NonFiniteLossError):
            sampled_softmax_loss(np.ones(2), 0, [2], np.ones(1), table)

    def test_loss_nonnegative(self):
        for seed in range(20):
            rng = make_rng(seed)
            table = rng.normal(size=(6, 4)) * 3
            loss, _, _ = sampled_softmax_loss(
                rng.normal(size=4), 0, [1, 3, 3, 5],
                rng.uniform(0.05, 0.5, size=4), table)
            assert loss >= 0.0

    def test_grad_check(self):
        rng = make_rng(9)
        negatives = np.array([1, 2, 2, 4])
        probs = rng.uniform(0.1, 0.4, size=4)

        def fn(params):
            loss, dq, row_grads = sampled_softmax_loss(
                params["q"], 0, negatives, probs, params["table"])
            dense = np.zeros_like(params["table"])
            for rid, g in row_grads.items():
                dense[rid] = g
            return loss, {"q": dq, "table": dense}

        params = {"q": rng.normal(size=5),
                  "table": rng.normal(size=(5, 5))}
        assert grad_check(fn, params) < 1e-4

    def test_joint_scaling_preserves_ranking(self):
        rng = make_rng(4)
        table = rng.normal(size=(9, 6))
        q = rng.normal(size=6)
        base_order = np.argsort(-(table @ q), kind="stable")
        for c in (0.1, 3.0, 42.0):
            scaled = np.argsort(-((c * table) @ (c * q)), kind="stable")
            np.testing.assert_array_equal(scaled, base_order)


class TestAdam:
    def test_matches_hand_formula_two_steps(self):
        params = {"w": np.array([1.0, -2.0])}
        opt = Adam(params, lr=0.1)
        g1 = np.array([0.5, -1.0])
        g2 = np.array([-0.25, 0.75])

        w, m, v = np.array([1.0, -2.0]), np.zeros(2), np.zeros(2)
        for t, g in ((1, g1), (2, g2)):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w = w - 0.1 * (m / (1 - 0.9 ** t)) / (
                np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)

        opt.step(params, {"w": g1})
        opt.step(params, {"w": g2})
        np.testing.assert_allclose(params["w"], w, atol=1e-12)

    def test_zero_grad_rows_bitwise_unchanged(self):
        rng = make_rng(0)
        params = {"emb": rng.normal(size=(5, 3))}
        before = params["emb"].copy()
        opt = Adam(params, lr=0.05)
        grads = {"emb": np.zeros((5, 3))}
        grads["emb"][2] = 1.0
        for _ in range(3):
            opt.step(params, grads)
        for row in (0, 1, 3, 4):
            np.testing.assert_array_equal(params["emb"][row], before[row])
        assert not np.array_equal(params["emb"][2], before[2])

    def test_lr_zero_is_identity(self):
        params = {"w": np.array([3.0, -1.5])}
        opt = Adam(params, lr=0.0)
        opt.step(params, {"w": np.array([10.0, -4.0])})
        np.testing.assert_array_equal(params["w"], np.array([3.0, -1.5]))


class TestTrainConfig:
    def test_negative_count_bounds(self):
        with pytest.raises(ConfigError):
            desk_config(negatives=4).validate(4)
        with pytest.raises(ConfigError):
            desk_config(negatives=0).validate(4)
        desk_config(negatives=3).validate(4)

    def test_rejects_bad_values(self):
        with pytest.raises(ConfigError):
            desk_config(learning_rate=-0.1).validate(4)
        with pytest.raises(ConfigError):
            desk_config(sampler="zipf").validate(4)
        with pytest.raises(ConfigError):
            desk_config(encoder="transformer").validate(4)
        with pytest.raises(ConfigError):
            desk_config(batch_size=0).validate(4)

    def test_lr_zero_is_valid(self):
        desk_config(learning_rate=0.0).validate(4)


def two_entity_fixture(epochs, lr=1e-3, seed=3):
    """One pair over a 2-entity vocabulary: the negative is deterministic."""
    vocab = tiny_vocab(num_words=4, num_entities=2)
    config = desk_config(negatives=1, batch_size=1, epochs=epochs,
                         learning_rate=lr, seed=seed, embed_dim=16,
                         hidden_size=8, attention_size=4)
    pairs = [TrainingPair(make_query([2, 3], raw="w0 w1"), target=0)]
    return vocab, config, pairs


class TestTrainer:
    def sample_pairs(self):
        return [
            TrainingPair(make_query([2, 3], raw="w0 w1"), 0),
            TrainingPair(make_query([4], raw="w2"), 1),
            TrainingPair(make_query([5, 6], raw="w3 w4"), 2),
            TrainingPair(make_query([3, 7], raw="w1 w5"), 3),
        ]

    def test_single_pair_overfits_monotonically(self):
        vocab, config, pairs = two_entity_fixture(epochs=200)
        trainer = Trainer(vocab, config)
        checkpoint = trainer.run(pairs)
        losses = [s.mean_loss for s in trainer.history]
        diffs = np.diff(losses[10:])
        assert np.all(diffs < 0), f"worst rise {diffs.max()}"
        q = checkpoint.encode([pairs[0].query])[0]
        assert int(np.argmax(checkpoint.entity_table @ q)) == 0

    def test_identical_seed_bitwise_traces(self):
        vocab = tiny_vocab()
        pairs = self.sample_pairs()
        runs = []
        for _ in range(2):
            trainer = Trainer(vocab, desk_config(epochs=3, seed=12))
            trainer.run(pairs)
            runs.append((
                [s.mean_loss for s in trainer.history],
                trainer.params["entity_emb"].copy(),
            ))
        assert runs[0][0] == runs[1][0]
        np.testing.assert_array_equal(runs[0][1], runs[1][1])

    def test_different_seed_differs(self):
        vocab = tiny_vocab()
        pairs = self.sample_pairs()
        t1 = Trainer(vocab, desk_config(epochs=1, seed=0))
        t2 = Trainer(vocab, desk_config(epochs=1, seed=1))
        t1.run(pairs)
        t2.run(pairs)
        assert [s.mean_loss for s in t1.history] != \
            [s.mean_loss for s in t2.history]

    def test_lr_zero_leaves_params_and_loss(self):
        vocab, config, pairs = two_entity_fixture(epochs=3, lr=0.0)
        trainer = Trainer(vocab, config)
        before = copy.deepcopy(trainer.params)
        trainer.run(pairs)
        for name, value in before.items():
            np.testing.assert_array_equal(trainer.params[name], value)
        losses = [s.mean_loss for s in trainer.history]
        assert len(set(losses)) == 1

    def test_zero_weight_drops_example(self):
        vocab = tiny_vocab()
        pairs = self.sample_pairs()[:2]
        weighted = [
            TrainingPair(pairs[0].query, pairs[0].target, weight=2.0),
            TrainingPair(pairs[1].query, pairs[1].target, weight=0.0),
        ]
        t_single = Trainer(vocab, desk_config(seed=5, batch_size=1))
        loss_single, _ = t_single._batch_loss_and_grads([pairs[0]])
        t_pair = Trainer(vocab, desk_config(seed=5, batch_size=2))
        loss_pair, _ = t_pair._batch_loss_and_grads(weighted)
        assert loss_pair == loss_single

    def test_weight_scaling_invariance(self):
        vocab = tiny_vocab()
        base = self.sample_pairs()[:2]
        tripled = [TrainingPair(p.query, p.target, weight=3.0) for p in base]
        l1, g1 = Trainer(vocab, desk_config(seed=6))._batch_loss_and_grads(base)
        l3, g3 = Trainer(vocab, desk_config(seed=6))._batch_loss_and_grads(tripled)
        assert l1 == l3
        np.testing.assert_array_equal(g1["entity_emb"], g3["entity_emb"])

    def test_untouched_rows_keep_exact_init(self):
        vocab = tiny_vocab(num_words=8, num_entities=20)
        config = desk_config(negatives=3, batch_size=1, epochs=2, seed=8)
        trainer = Trainer(vocab, config)
        init_table = trainer.params["entity_emb"].copy()
        init_words = trainer.params["word_emb"].copy()
        trainer.run(self.sample_pairs())
        # optimizer first moments record which rows ever saw gradient
        for row in range(20):
            if not np.any(trainer.optimizer.m["entity_emb"][row]):
                np.testing.assert_array_equal(
                    trainer.params["entity_emb"][row], init_table[row])
        for row in range(vocab.num_words):
            if not np.any(trainer.optimizer.m["word_emb"][row]):
                np.testing.assert_array_equal(
                    trainer.params["word_emb"][row], init_words[row])
        assert np.any(trainer.params["entity_emb"] != init_table)

    def test_run_log_and_epoch_checkpoints(self, tmp_path):
        vocab = tiny_vocab()
        log = io.StringIO()
        trainer = Trainer(vocab, desk_config(epochs=2, seed=1))
        trainer.run(self.sample_pairs(), out_dir=tmp_path, log_fh=log)
        lines = [json.loads(l) for l in log.getvalue().splitlines()]
        assert [l["epoch"] for l in lines] == [1, 2]
        for line in lines:
            assert set(line) == {"epoch", "mean_loss", "wall_ms", "seed"}
            assert line["seed"] == 1
        for epoch in (1, 2):
            restored = Checkpoint.load(
                tmp_path / f"checkpoint_epoch{epoch:03d}.bin")
            assert restored.kind == "enhanced"
        final = Checkpoint.load(tmp_path / "checkpoint_epoch002.bin")
        np.testing.assert_array_equal(final.params["entity_emb"],
                                      trainer.params["entity_emb"])

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_loss_names_offending_queries(self):
        vocab, config, pairs = two_entity_fixture(epochs=1)
        trainer = Trainer(vocab, config)
        trainer.params["entity_emb"][1] = np.inf
        with pytest.raises(NonFiniteLossError, match="w0 w1"):
            trainer.run(pairs)

    def test_empty_pairs_raises(self):
        vocab = tiny_vocab()
        with pytest.raises(EmptyCorpusError):
            Trainer(vocab, desk_config()).run([])

    def test_base_encoder_path_trains(self):
        vocab = tiny_vocab()
        config = desk_config(encoder="base", use_ngrams=True, num_buckets=32,
                             epochs=1)
        pairs = [
            TrainingPair(make_query([2, 3], ngram_ids=[1], raw="w0 w1"), 0),
            TrainingPair(make_query([4, 5], ngram_ids=[2, 3], raw="w2 w3"), 1),
        ]
        trainer = Trainer(vocab, config)
        trainer.run(pairs)
        assert np.isfinite(trainer.history[-1].mean_loss)

    def test_train_convenience(self):
        vocab = tiny_vocab()
        checkpoint = train(self.sample_pairs(), vocab,
                           desk_config(epochs=1, seed=2))
        assert checkpoint.kind == "enhanced"
        assert checkpoint.entity_table.shape == (4, 8)
