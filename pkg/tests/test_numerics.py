import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entrec.errors import NonFiniteLossError
from entrec.numerics import (
    grad_check,
    logsumexp,
    make_rng,
    restore_rng,
    rng_state,
    sigmoid,
    softmax,
)


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]),
                                   [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_large_magnitude_no_overflow(self):
        probs = softmax([1000.0, 0.0])
        assert np.all(np.isfinite(probs))
        assert probs[0] == pytest.approx(1.0)
        assert probs[1] == pytest.approx(0.0, abs=1e-300)

    def test_against_extended_precision(self):
        v = np.array([1.0, 2.0, 3.0])
        ext = np.exp(v.astype(np.longdouble))
        expected = (ext / ext.sum()).astype(np.float64)
        np.testing.assert_allclose(softmax(v), expected, atol=1e-12, rtol=0)

    def test_sums_to_one(self, rng):
        v = rng.normal(size=40) * 30
        assert softmax(v).sum() == pytest.approx(1.0, abs=1e-12)

    def test_axis(self, rng):
        m = rng.normal(size=(3, 5))
        out = softmax(m, axis=1)
        np.testing.assert_allclose(out.sum(axis=1), np.ones(3), atol=1e-12)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=12),
           st.floats(-30, 30))
    @settings(max_examples=80)
    def test_shift_invariance(self, values, shift):
        v = np.asarray(values)
        np.testing.assert_allclose(softmax(v + shift), softmax(v), atol=1e-12)


class TestLogsumexp:
    def test_matches_direct(self, rng):
        v = rng.normal(size=20)
        assert logsumexp(v) == pytest.approx(np.log(np.exp(v).sum()), rel=1e-12)

    def test_stable_for_large(self):
        assert logsumexp([1000.0, 1000.0]) == pytest.approx(1000.0 + np.log(2))


class TestSigmoid:
    def test_midpoint(self):
        assert sigmoid(0.0) == pytest.approx(0.5)

    def test_extremes_finite(self):
        assert sigmoid(800.0) == pytest.approx(1.0)
        assert sigmoid(-800.0) == pytest.approx(0.0, abs=1e-300)

    def test_symmetry(self, rng):
        x = rng.normal(size=10) * 5
        np.testing.assert_allclose(sigmoid(x) + sigmoid(-x), np.ones(10),
                                   atol=1e-15)


class TestRng:
    def test_same_seed_same_stream(self):
        a = make_rng(42).random(5)
        b = make_rng(42).random(5)
        np.testing.assert_array_equal(a, b)

    def test_snapshot_restore_continues_stream(self):
        rng = make_rng(7)
        rng.random(10)
        snap = rng_state(rng)
        expected = rng.random(5)
        np.testing.assert_array_equal(restore_rng(snap).random(5), expected)

    def test_snapshot_is_json_safe(self):
        import json

        snap = rng_state(make_rng(1))
        assert json.loads(json.dumps(snap)) == snap


class TestGradCheck:
    def test_quadratic_exact(self, rng):
        params = {"p": rng.normal(size=7)}

        def loss_fn(ps):
            return 0.5 * float(ps["p"] @ ps["p"]), {"p": ps["p"].copy()}

        assert grad_check(loss_fn, params) < 1e-9

    def test_detects_wrong_gradient(self, rng):
        params = {"p": rng.normal(size=4) + 1.0}

        def loss_fn(ps):
            return 0.5 * float(ps["p"] @ ps["p"]), {"p": 2.0 * ps["p"]}

        assert grad_check(loss_fn, params) > 0.1

    def test_zero_guard_handles_flat_coordinates(self):
        params = {"p": np.zeros(3)}

        def loss_fn(ps):
            return float((ps["p"] ** 3).sum()), {"p": 3.0 * ps["p"] ** 2}

        # gradient and finite difference both ~0; no division blowup
        assert grad_check(loss_fn, params) < 1e-3

    def test_non_finite_loss_raises(self):
        params = {"p": np.ones(2)}

        def loss_fn(ps):
            return float("nan"), {"p": np.zeros(2)}

        with pytest.raises(NonFiniteLossError):
            grad_check(loss_fn, params)
