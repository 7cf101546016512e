import itertools
import math

import numpy as np
import pytest

from webguard.errors import EnumerationCapExceededError, SymbolOutOfRangeError
from webguard.hmm import (
    Hmm,
    TrainConfig,
    baum_welch_fit,
    batch_forward_log_likelihood,
    forward_log_likelihood,
    outcome_index,
    sample,
    t_letter_distribution,
)


def brute_force_log_likelihood(hmm: Hmm, obs) -> float:
    """Oracle: the literal path sum over every hidden state sequence."""
    obs = list(obs)
    n = len(obs)
    total = 0.0
    for path in itertools.product(range(hmm.num_states), repeat=n):
        p = hmm.initial[path[0]] * hmm.emission[path[0], obs[0]]
        for k in range(1, n):
            p *= hmm.transition[path[k - 1], path[k]] * hmm.emission[path[k], obs[k]]
        total += p
    return math.log(total)


def random_hmm(rng, s, a) -> Hmm:
    return Hmm(
        initial=rng.dirichlet(np.ones(s)),
        transition=rng.dirichlet(np.ones(s), size=s),
        emission=rng.dirichlet(np.ones(a), size=s),
    )


def one_state(emission) -> Hmm:
    return Hmm(
        initial=np.array([1.0]),
        transition=np.array([[1.0]]),
        emission=np.array([emission], dtype=float),
    )


class TestForward:
    def test_single_state_product(self):
        m = one_state([0.25, 0.75])
        ll = forward_log_likelihood(m, [1, 1, 0])
        assert ll == pytest.approx(math.log(0.75 * 0.75 * 0.25), abs=1e-12)

    def test_matches_brute_force_exhaustively(self):
        rng = np.random.default_rng(42)
        for s, a, n in itertools.product((1, 2, 3), (2, 3, 4), (1, 2, 4, 6)):
            m = random_hmm(rng, s, a)
            obs = rng.integers(0, a, size=n)
            got = forward_log_likelihood(m, obs)
            want = brute_force_log_likelihood(m, obs)
            assert got == pytest.approx(want, abs=1e-10), (s, a, n)

    def test_prefix_monotone(self):
        rng = np.random.default_rng(0)
        m = random_hmm(rng, 3, 4)
        obs = rng.integers(0, 4, size=30)
        lls = [forward_log_likelihood(m, obs[: k + 1]) for k in range(30)]
        assert all(a >= b for a, b in zip(lls, lls[1:]))

    def test_symbol_out_of_range(self):
        m = one_state([0.5, 0.5])
        with pytest.raises(SymbolOutOfRangeError):
            forward_log_likelihood(m, [0, 2])

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(3)
        m = random_hmm(rng, 2, 3)
        X = rng.integers(0, 3, size=(10, 6))
        batch = batch_forward_log_likelihood(m, X)
        for k in range(10):
            assert batch[k] == pytest.approx(forward_log_likelihood(m, X[k]), abs=1e-12)


class TestBaumWelch:
    def test_one_state_recovery(self):
        src = one_state([0.3, 0.7])
        data = sample(src, 10_000, seed=1)
        cfg = TrainConfig(num_states=1, max_iters=50, restarts=1, seed=0)
        fit = baum_welch_fit(data, cfg, alphabet_size=2)
        assert abs(fit.emission[0, 0] - 0.3) < 0.02
        assert abs(fit.emission[0, 1] - 0.7) < 0.02

    def test_monotone_log_likelihood(self):
        rng = np.random.default_rng(9)
        src = random_hmm(rng, 2, 3)
        data = sample(src, 400, seed=5)
        for seed in range(10):
            cfg = TrainConfig(num_states=2, max_iters=40, restarts=1, seed=seed, tol=1e-12)
            _, history = baum_welch_fit(data, cfg, alphabet_size=3, return_history=True)
            lls = history[0]
            diffs = np.diff(lls)
            assert np.all(diffs >= -1e-8), f"seed {seed}: {diffs.min()}"

    def test_deterministic_given_seed(self):
        data = sample(one_state([0.4, 0.6]), 500, seed=2)
        cfg = TrainConfig(num_states=2, max_iters=20, restarts=2, seed=11)
        a = baum_welch_fit(data, cfg, alphabet_size=2)
        b = baum_welch_fit(data, cfg, alphabet_size=2)
        np.testing.assert_array_equal(a.transition, b.transition)
        np.testing.assert_array_equal(a.emission, b.emission)
        np.testing.assert_array_equal(a.initial, b.initial)

    def test_multi_sequence_pooling(self):
        src = one_state([0.2, 0.8])
        seqs = [sample(src, 300, seed=s) for s in range(5)]
        cfg = TrainConfig(num_states=1, max_iters=30, restarts=1, seed=0)
        fit = baum_welch_fit(seqs, cfg, alphabet_size=2)
        assert abs(fit.emission[0, 1] - 0.8) < 0.05

    def test_floor_keeps_parameters_positive(self):
        # alphabet symbol 2 never appears; the floor must keep it > 0
        data = np.array([0, 1, 0, 1, 1, 0] * 20)
        cfg = TrainConfig(num_states=2, max_iters=15, restarts=1, seed=0, floor=1e-6)
        fit = baum_welch_fit(data, cfg, alphabet_size=3)
        assert fit.emission.min() >= 1e-6 * (1 - 1e-9)
        assert fit.transition.min() >= 1e-6 * (1 - 1e-9)

    def test_empty_input(self):
        with pytest.raises(ValueError):
            baum_welch_fit([], TrainConfig())

    def test_stochasticity_after_fit(self):
        data = sample(one_state([0.5, 0.5]), 200, seed=0)
        fit = baum_welch_fit(data, TrainConfig(num_states=3, max_iters=10, restarts=1, seed=1), alphabet_size=2)
        np.testing.assert_allclose(fit.initial.sum(), 1.0, atol=1e-9)
        np.testing.assert_allclose(fit.transition.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(fit.emission.sum(axis=1), 1.0, atol=1e-9)


class TestSample:
    def test_deterministic_chain(self):
        m = Hmm(
            initial=np.array([1.0, 0.0]),
            transition=np.array([[0.0, 1.0], [1.0, 0.0]]),
            emission=np.array([[1.0, 0.0], [0.0, 1.0]]),
        )
        np.testing.assert_array_equal(sample(m, 6, seed=0), [0, 1, 0, 1, 0, 1])

    def test_unigram_frequencies(self):
        m = one_state([0.3, 0.7])
        xs = sample(m, 100_000, seed=4)
        freq = np.bincount(xs, minlength=2) / len(xs)
        assert abs(freq[0] - 0.3) < 0.01
        assert abs(freq[1] - 0.7) < 0.01

    def test_same_seed_same_sequence(self):
        rng = np.random.default_rng(8)
        m = random_hmm(rng, 3, 5)
        np.testing.assert_array_equal(sample(m, 50, seed=77), sample(m, 50, seed=77))


class TestTLetter:
    def test_t1_is_initial_emission_mixture(self):
        rng = np.random.default_rng(1)
        m = random_hmm(rng, 3, 4)
        dist = t_letter_distribution(m, 1)
        np.testing.assert_allclose(dist, m.initial @ m.emission, atol=1e-12)

    def test_iid_outer_product(self):
        m = one_state([0.2, 0.8])
        dist = t_letter_distribution(m, 2)
        want = np.outer([0.2, 0.8], [0.2, 0.8]).ravel()
        np.testing.assert_allclose(dist, want, atol=1e-12)

    def test_sums_to_one(self):
        rng = np.random.default_rng(2)
        for s, a, t in [(2, 3, 4), (3, 2, 6), (4, 4, 3)]:
            m = random_hmm(rng, s, a)
            assert t_letter_distribution(m, t).sum() == pytest.approx(1.0, abs=1e-9)

    def test_agrees_with_forward(self):
        rng = np.random.default_rng(6)
        m = random_hmm(rng, 2, 3)
        t = 3
        dist = t_letter_distribution(m, t)
        for outcome in itertools.product(range(3), repeat=t):
            idx = outcome_index(outcome, 3)
            want = math.exp(forward_log_likelihood(m, list(outcome)))
            assert dist[idx] == pytest.approx(want, rel=1e-10)

    def test_cap(self):
        rng = np.random.default_rng(0)
        m = random_hmm(rng, 2, 10)
        with pytest.raises(EnumerationCapExceededError):
            t_letter_distribution(m, 10, cap=1000)


class TestSerialization:
    def test_json_roundtrip(self):
        rng = np.random.default_rng(5)
        m = random_hmm(rng, 3, 7)
        back = Hmm.from_json(m.to_json())
        np.testing.assert_array_equal(back.initial, m.initial)
        np.testing.assert_array_equal(back.transition, m.transition)
        np.testing.assert_array_equal(back.emission, m.emission)
