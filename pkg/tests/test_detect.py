import math

import numpy as np
import pytest

from webguard.detect import (
    ClassifierBank,
    Decision,
    SessionState,
    classify_margin,
    classify_repeat,
    evaluate_detector,
    fit_bank,
    likelihood_trajectory,
    margin,
    update,
)
from webguard.errors import SymbolOutOfRangeError
from webguard.hmm import Hmm, TrainConfig, forward_log_likelihood, sample
from webguard.preprocess import PreprocessConfig, QuantizerModel
from webguard.simulate import SimConfig, gen_random_naive, gen_scanner


def one_state(emission) -> Hmm:
    return Hmm(
        initial=np.array([1.0]),
        transition=np.array([[1.0]]),
        emission=np.array([emission], dtype=float),
    )


def toy_bank(emissions=((0.9, 0.1), (0.1, 0.9)), labels=("a", "b")) -> ClassifierBank:
    q = QuantizerModel(
        edges_vx=np.array([0.0]), edges_vy=np.array([0.0]),
        edges_dt=np.array([0.5]), fitted_on=1,
    )
    cfg = PreprocessConfig(bins_vx=2, bins_vy=2, bins_dt=2)
    return ClassifierBank(
        labels=tuple(labels),
        models=tuple(one_state(e) for e in emissions),
        quantizer=q,
        preprocess_config=cfg,
    )


class TestSessionState:
    def test_incremental_matches_batch(self):
        rng = np.random.default_rng(0)
        bank = toy_bank(((0.3, 0.7), (0.6, 0.4), (0.5, 0.5)), ("a", "b", "c"))
        stream = rng.integers(0, 2, size=300)
        state = SessionState.fresh(bank)
        for s in stream:
            state = update(state, int(s))
        for k, model in enumerate(bank.models):
            batch = forward_log_likelihood(model, stream)
            assert abs(state.log_likelihoods[k] - batch) <= 1e-10

    def test_ll_non_increasing(self):
        bank = toy_bank()
        state = SessionState.fresh(bank)
        prev = np.zeros(2)
        rng = np.random.default_rng(1)
        for s in rng.integers(0, 2, size=50):
            state = update(state, int(s))
            assert np.all(state.log_likelihoods <= prev + 1e-12)
            prev = state.log_likelihoods

    def test_symbol_out_of_range(self):
        bank = toy_bank()
        with pytest.raises(SymbolOutOfRangeError):
            update(SessionState.fresh(bank), 99)

    def test_trajectory_matches_updates(self):
        bank = toy_bank(((0.2, 0.8), (0.7, 0.3)))
        rng = np.random.default_rng(2)
        stream = rng.integers(0, 2, size=100)
        traj = likelihood_trajectory(bank, stream)
        state = SessionState.fresh(bank)
        for t, s in enumerate(stream):
            state = update(state, int(s))
            np.testing.assert_array_equal(traj[t], state.log_likelihoods)


class TestMargin:
    def test_two_class_gap(self):
        bank = toy_bank()
        state = SessionState.fresh(bank)
        state.log_likelihoods = np.array([-5.0, -9.0])
        state.symbols_seen = 3
        assert margin(state) == pytest.approx(4.0)

    def test_tie_between_top_two(self):
        bank = toy_bank(((0.3, 0.7), (0.3, 0.7), (0.5, 0.5)), ("a", "b", "c"))
        state = SessionState.fresh(bank)
        state.log_likelihoods = np.array([-3.0, -3.0, -7.0])
        state.symbols_seen = 1
        assert margin(state) == pytest.approx(0.0)

    def test_translation_invariant(self):
        bank = toy_bank(((0.3, 0.7), (0.6, 0.4), (0.5, 0.5)), ("a", "b", "c"))
        state = SessionState.fresh(bank)
        state.log_likelihoods = np.array([-3.0, -5.5, -7.0])
        state.symbols_seen = 1
        base = margin(state)
        state.log_likelihoods = state.log_likelihoods + 123.0
        assert margin(state) == pytest.approx(base)

    def test_requires_symbols(self):
        with pytest.raises(ValueError):
            margin(SessionState.fresh(toy_bank()))


class TestClassifyMargin:
    def test_closed_form_stop_time(self):
        # per-symbol gap ln 9 ~ 2.197; gamma=4 crossed at t=2
        bank = toy_bank(((0.9, 0.1), (0.1, 0.9)))
        d = classify_margin([0] * 10, bank, gamma=4.0)
        assert d.label == "a"
        assert d.stop_symbol_index == 2
        assert d.margin == pytest.approx(2 * math.log(9.0), abs=1e-9)
        assert not d.timeout

    def test_gamma_zero_stops_first_informative_symbol(self):
        bank = toy_bank(((0.9, 0.1), (0.1, 0.9)))
        d = classify_margin([1, 1, 1], bank, gamma=0.0)
        assert d.stop_symbol_index == 1
        assert d.label == "b"

    def test_stop_time_monotone_in_gamma(self):
        bank = toy_bank(((0.8, 0.2), (0.3, 0.7)))
        rng = np.random.default_rng(3)
        stream = rng.integers(0, 2, size=400).tolist()
        stops = []
        for gamma in (0.0, 1.0, 2.0, 5.0, 10.0):
            stops.append(classify_margin(stream, bank, gamma).stop_symbol_index)
        assert stops == sorted(stops)

    def test_timeout_on_stream_end(self):
        bank = toy_bank(((0.55, 0.45), (0.45, 0.55)))
        d = classify_margin([0, 1, 0, 1], bank, gamma=50.0)
        assert d.timeout
        assert d.stop_symbol_index == 4

    def test_empty_stream(self):
        with pytest.raises(ValueError):
            classify_margin([], toy_bank(), gamma=1.0)

    def test_margin_rule_soundness(self):
        bank = toy_bank(((0.8, 0.2), (0.2, 0.8)))
        gamma = 3.0
        d = classify_margin([0] * 50, bank, gamma=gamma)
        assert d.margin > gamma

    def test_deterministic(self):
        bank = toy_bank()
        stream = [0, 1, 0, 0, 1, 0, 0, 0]
        assert classify_margin(stream, bank, 2.0) == classify_margin(stream, bank, 2.0)


class TestClassifyRepeat:
    def test_q1_stops_immediately(self):
        bank = toy_bank(((0.9, 0.1), (0.1, 0.9)))
        d = classify_repeat([0, 0, 0], bank, q=1)
        assert d.stop_symbol_index == 1
        assert d.label == "a"

    def test_counter_reset_semantics(self):
        # argmax labels: 0 -> a, 1 -> b; stream a,a,b,b,b with q=3
        bank = toy_bank(((0.9, 0.1), (0.1, 0.9)))
        stream = [0, 0, 1, 1, 1]
        # after 2 zeros, lls favor a; feeding ones flips argmax at the 5th symbol
        # construct explicit label flips by checking trajectory
        d = classify_repeat(stream + [1] * 10, bank, q=3)
        traj = likelihood_trajectory(bank, stream + [1] * 10)
        labels = [bank.labels[i] for i in traj.argmax(axis=1)]
        # oracle: first index where a label repeats 3 times consecutively
        run, prev = 0, None
        for idx, lab in enumerate(labels):
            run = run + 1 if lab == prev else 1
            prev = lab
            if run >= 3:
                break
        assert d.stop_symbol_index == idx + 1
        assert d.label == labels[idx]

    def test_stop_monotone_in_q(self):
        bank = toy_bank(((0.8, 0.2), (0.3, 0.7)))
        rng = np.random.default_rng(5)
        stream = rng.integers(0, 2, size=300).tolist()
        stops = [classify_repeat(stream, bank, q=q).stop_symbol_index for q in (1, 2, 4, 8)]
        assert stops == sorted(stops)

    def test_timeout(self):
        bank = toy_bank(((0.9, 0.1), (0.1, 0.9)))
        d = classify_repeat([0, 1, 0, 1], bank, q=4)
        assert d.timeout


class TestFitBank:
    def test_two_class_separation(self):
        src_a = one_state([0.85, 0.15])
        src_b = one_state([0.2, 0.8])
        # symbol streams stand in for processed traces here; build a bank
        # directly from hand-made models to keep the test focused
        bank = toy_bank(((0.85, 0.15), (0.2, 0.8)))
        correct = 0
        for seed in range(20):
            src, want = (src_a, "a") if seed % 2 == 0 else (src_b, "b")
            stream = sample(src, 200, seed=seed)
            traj = likelihood_trajectory(bank, stream)
            got = bank.labels[int(traj[-1].argmax())]
            correct += got == want
        assert correct >= 18

    def test_fit_bank_on_synthetic_traces(self):
        classes = {
            "random_naive": [gen_random_naive(SimConfig(seed=s, duration_s=8.0)) for s in range(3)],
            "scanner": [gen_scanner(SimConfig(seed=s, duration_s=8.0)) for s in range(3)],
        }
        bank = fit_bank(
            classes,
            train_config=TrainConfig(num_states=3, max_iters=10, restarts=1, seed=0),
            preprocess_config=PreprocessConfig(bins_vx=2, bins_vy=2, bins_dt=5),
        )
        assert bank.labels == ("random_naive", "scanner")
        held_out = [
            (gen_random_naive(SimConfig(seed=50, duration_s=8.0)), "random_naive"),
            (gen_scanner(SimConfig(seed=50, duration_s=8.0)), "scanner"),
        ]
        from webguard.preprocess import preprocess

        for tr, want in held_out:
            pt = preprocess(tr, bank.quantizer, bank.preprocess_config)
            traj = likelihood_trajectory(bank, pt.symbols)
            assert bank.labels[int(traj[-1].argmax())] == want

    def test_identical_data_symmetric_models(self):
        traces = [gen_random_naive(SimConfig(seed=s, duration_s=5.0)) for s in range(2)]
        classes = {"a": traces, "b": traces}
        # same data and same per-class seed would give identical models; the
        # class seeds differ by construction, so just check determinism
        bank1 = fit_bank(
            classes,
            train_config=TrainConfig(num_states=2, max_iters=5, restarts=1, seed=3),
            preprocess_config=PreprocessConfig(bins_vx=2, bins_vy=2, bins_dt=3),
        )
        bank2 = fit_bank(
            classes,
            train_config=TrainConfig(num_states=2, max_iters=5, restarts=1, seed=3),
            preprocess_config=PreprocessConfig(bins_vx=2, bins_vy=2, bins_dt=3),
        )
        for m1, m2 in zip(bank1.models, bank2.models):
            np.testing.assert_array_equal(m1.emission, m2.emission)

    def test_rejects_single_class(self):
        with pytest.raises(ValueError):
            fit_bank({"a": [gen_random_naive(SimConfig(seed=0, duration_s=3.0))]})

    def test_rejects_empty_class(self):
        with pytest.raises(ValueError):
            fit_bank({"a": [], "b": [gen_random_naive(SimConfig(seed=0, duration_s=3.0))]})

    def test_bank_json_roundtrip(self, tmp_path):
        bank = toy_bank()
        path = tmp_path / "bank.json"
        bank.save(path)
        back = ClassifierBank.load(path)
        assert back.labels == bank.labels
        np.testing.assert_array_equal(back.models[0].emission, bank.models[0].emission)
        assert back.preprocess_config == bank.preprocess_config


class TestEvaluate:
    def build_banked_traces(self):
        classes = {
            "random_naive": [gen_random_naive(SimConfig(seed=s, duration_s=8.0)) for s in range(4)],
            "scanner": [gen_scanner(SimConfig(seed=s, duration_s=8.0)) for s in range(4)],
        }
        bank = fit_bank(
            classes,
            train_config=TrainConfig(num_states=3, max_iters=10, restarts=1, seed=1),
            preprocess_config=PreprocessConfig(bins_vx=2, bins_vy=2, bins_dt=5),
        )
        test = [gen_random_naive(SimConfig(seed=100 + s, duration_s=8.0)) for s in range(3)]
        test += [gen_scanner(SimConfig(seed=100 + s, duration_s=8.0)) for s in range(3)]
        return bank, test

    def test_gamma_zero_has_smallest_stop(self):
        bank, test = self.build_banked_traces()
        rows = evaluate_detector(bank, test, rule="margin", grid=(0.0, 2.0, 10.0))
        stops = [r.mean_stop_symbols for r in rows]
        assert stops[0] == min(stops)
        assert stops == sorted(stops)

    def test_high_accuracy_on_separated_classes(self):
        bank, test = self.build_banked_traces()
        rows = evaluate_detector(bank, test, rule="margin", grid=(5.0,))
        assert rows[0].accuracy == 1.0

    def test_repeat_rule_rows(self):
        bank, test = self.build_banked_traces()
        rows = evaluate_detector(bank, test, rule="repeat", grid=(1, 5, 20))
        assert [r.param for r in rows] == [1.0, 5.0, 20.0]
        assert all(0 <= r.accuracy <= 1 for r in rows)

    def test_decision_json(self):
        d = Decision(label="a", stop_symbol_index=3, stop_time_ms=120.0, margin=4.2, rule="margin")
        j = d.to_json()
        assert j["label"] == "a" and j["rule"] == "margin" and not j["timeout"]


class TestAsymptoticCorrectness:
    def test_accuracy_non_decreasing_in_gamma_on_own_streams(self):
        rng = np.random.default_rng(7)
        emissions = ((0.6, 0.25, 0.15), (0.2, 0.6, 0.2), (0.15, 0.25, 0.6))
        labels = ("a", "b", "c")
        q = QuantizerModel(
            edges_vx=np.array([0.0]), edges_vy=np.array([0.0]),
            edges_dt=np.array([0.5]), fitted_on=1,
        )
        bank = ClassifierBank(
            labels=labels,
            models=tuple(one_state(e) for e in emissions),
            quantizer=q,
            preprocess_config=PreprocessConfig(bins_vx=2, bins_vy=2, bins_dt=2),
        )
        accuracies = []
        for gamma in (2.0, 5.0, 10.0):
            correct = 0
            for trial in range(200):
                k = trial % 3
                stream = sample(bank.models[k], 400, seed=1000 * trial + k)
                d = classify_margin(stream, bank, gamma=gamma)
                correct += d.label == labels[k]
            accuracies.append(correct / 200)
        # non-decreasing within sampling noise, and high at the top
        assert accuracies[1] >= accuracies[0] - 0.05
        assert accuracies[2] >= accuracies[1] - 0.05
        assert accuracies[-1] >= 0.95
