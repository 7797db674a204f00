"""Ridge backward model, reconstruction and the memorizing decoder."""

import numpy as np
import pytest

from src.analysis.metrics import EvalWindowing, pearson, score_windows
from src.analysis.partition import LOPEO, LOTO, Partition, enumerate_partitions, make_fold_plan
from src.core.errors import (
    ChannelMismatch,
    ConfigError,
    InconsistentShapes,
    MemorizationLeak,
    MissingEnvelope,
    SingularSystem,
    TooShort,
)
from src.core.signals import SignalSeries
from src.decoders.linear import (
    LinearDecoder,
    fit_ridge,
    lag_window_samples,
    lagged_design,
    reconstruct,
    valid_range,
)
from src.decoders.memorizing import (
    MemorizingDecoder,
    blend_windows,
    build_memorizing_decoder,
    reconstruct_with_memory,
)
from src.synth.generator import generate_envelope

from conftest import make_dataset, paired_dataset

FS = 64.0


def envelope(seed, seconds=60):
    return generate_envelope(int(seconds * FS), FS, seed)


def direct_reconstruction(weights, bias, lag_window, data):
    """Naive double loop over lags and channels."""
    channels, n = data.shape
    out = np.full(n, bias)
    for i, lag in enumerate(range(lag_window[0], lag_window[1] + 1)):
        for c in range(channels):
            for t in range(n):
                if 0 <= t + lag < n:
                    out[t] += weights[i, c] * data[c, t + lag]
    return out


class TestLagWindow:
    def test_default_at_64_hz(self):
        assert lag_window_samples(64.0) == (0, 16)

    def test_design_layout(self):
        data = np.arange(10.0).reshape(2, 5)
        design = lagged_design(data, (0, 1))
        np.testing.assert_array_equal(design[:, 0], data[0])
        np.testing.assert_array_equal(design[:, 1], data[1])
        np.testing.assert_array_equal(design[:, 2], [1, 2, 3, 4, 0])
        np.testing.assert_array_equal(design[:, 3], [6, 7, 8, 9, 0])

    def test_valid_range(self):
        assert valid_range(100, (0, 16)) == (0, 84)
        assert valid_range(100, (-3, 5)) == (3, 95)


class TestReconstruct:
    def test_zero_weights_give_bias(self, rng):
        decoder = LinearDecoder.zeros(3, (0, 4), FS, bias=0.25)
        out = reconstruct(decoder, SignalSeries(rng.standard_normal((3, 50)), FS))
        np.testing.assert_array_equal(out.values, np.full(50, 0.25))

    def test_unit_weight_copies_channel(self, rng):
        weights = np.zeros((1, 2))
        weights[0, 0] = 1.0
        eeg = SignalSeries(rng.standard_normal((2, 40)), FS)
        out = reconstruct(LinearDecoder(weights, 0.0, (0, 0), FS), eeg)
        np.testing.assert_array_equal(out.values, eeg.data[0])
        assert out.meta['zero_padded'] is True

    def test_matches_direct_loop(self, rng):
        for lag_window in ((0, 3), (-2, 2)):
            n_lags = lag_window[1] - lag_window[0] + 1
            weights, data = rng.standard_normal((n_lags, 3)), rng.standard_normal((3, 25))
            decoder = LinearDecoder(weights, 0.3, lag_window, FS)
            out = reconstruct(decoder, SignalSeries(data, FS))
            expected = direct_reconstruction(weights, 0.3, lag_window, data)
            assert np.max(np.abs(out.values - expected)) < 1e-10
            assert out.meta['valid_range'] == valid_range(25, lag_window)

    def test_linear_in_weights(self, rng):
        eeg = SignalSeries(rng.standard_normal((2, 30)), FS)
        w1, w2 = rng.standard_normal((2, 3, 2))
        y1 = reconstruct(LinearDecoder(w1, 0.5, (0, 2), FS), eeg).values
        y2 = reconstruct(LinearDecoder(w2, 0.5, (0, 2), FS), eeg).values
        y12 = reconstruct(LinearDecoder(w1 + w2, 0.5, (0, 2), FS), eeg).values
        np.testing.assert_allclose(y12, y1 + y2 - 0.5, atol=1e-12)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ChannelMismatch):
            reconstruct(LinearDecoder.zeros(3, (0, 2), FS), SignalSeries(rng.standard_normal((2, 30)), FS))

    def test_too_short(self, rng):
        with pytest.raises(TooShort):
            reconstruct(LinearDecoder.zeros(1, (0, 16), FS), SignalSeries(rng.standard_normal((1, 16)), FS))

    def test_weight_shape_must_match_lags(self):
        with pytest.raises(InconsistentShapes):
            LinearDecoder(np.zeros((3, 2)), 0.0, (0, 4), FS)


class TestFitRidge:
    def test_identity_forward_model_generalizes(self):
        train = [(envelope(s), envelope(s)) for s in (1, 2)]
        held_out = envelope(3)
        decoder = fit_ridge(train, (0, 0), [1e-3])
        assert pearson(decoder.reconstruct(held_out), held_out) > 0.999

    def test_shrinkage_limit(self):
        env = envelope(4)
        eeg = SignalSeries(np.vstack([env.values, generate_envelope(env.n_samples, FS, 5).values]), FS)
        small = fit_ridge([(eeg, env)], (0, 2), [1.0])
        large = fit_ridge([(eeg, env)], (0, 2), [1e9])
        assert np.linalg.norm(large.weights) < 1e-3 * np.linalg.norm(small.weights)

    def test_two_channel_mixing_matches_dense_solve(self):
        env = envelope(6)
        data = np.vstack([1.0 * env.values, 0.5 * env.values])
        lam = 1e-2
        decoder = fit_ridge([(SignalSeries(data, FS), env)], (0, 0), [lam])

        x = data.T - data.T.mean(axis=0)
        y = env.values - env.values.mean()
        cxx = x.T @ x
        oracle = np.linalg.solve(cxx + lam * np.mean(np.diag(cxx)) * np.eye(2), x.T @ y)
        np.testing.assert_allclose(decoder.weights.ravel(), oracle, atol=1e-8)
        assert pearson(decoder.reconstruct(SignalSeries(data, FS)), env) > 0.999

    def test_rank_deficient_without_penalty(self):
        env = envelope(7)
        data = np.vstack([env.values, 2.0 * env.values])
        with pytest.raises(SingularSystem):
            fit_ridge([(SignalSeries(data, FS), env)], (0, 0), [0.0])

    def test_deterministic(self, rng):
        env = envelope(8)
        eeg = SignalSeries(np.vstack([env.values, rng.standard_normal(env.n_samples)]), FS)
        a = fit_ridge([(eeg, env)], (0, 4), [0.1])
        b = fit_ridge([(eeg, env)], (0, 4), [0.1])
        assert np.array_equal(a.weights, b.weights) and a.bias == b.bias

    def test_lambda_selected_on_validation(self, rng):
        def noisy_pair(seed):
            env = envelope(seed, seconds=30)
            noise = np.random.default_rng(seed + 100).standard_normal((4, env.n_samples))
            return SignalSeries(env.values + 3.0 * noise, FS), env

        grid = (1e-3, 1.0, 1e3)
        decoder = fit_ridge([noisy_pair(s) for s in (1, 2)], (0, 4), grid, [noisy_pair(3)])
        assert decoder.meta['lambda'] in grid
        assert np.isfinite(decoder.meta['validation_rho'])

    def test_grid_needs_validation(self):
        env = envelope(9, seconds=5)
        with pytest.raises(ValueError):
            fit_ridge([(env, env)], (0, 0), (0.1, 1.0))

    def test_mixed_channel_counts(self, rng):
        env = envelope(10, seconds=5)
        other = SignalSeries(rng.standard_normal((2, env.n_samples)), FS)
        with pytest.raises(InconsistentShapes):
            fit_ridge([(env, env), (other, env)], (0, 0), [0.1])


def memory_setup(balanced=False):
    """Four stimulus pairs, their envelopes and a decoder that passes channel 0 through."""
    dataset = paired_dataset(n_pairs=4, repeats=4, balanced=balanced)
    envelopes = {s: envelope(i + 20, seconds=30) for i, s in enumerate(dataset.stimuli)}
    base = LinearDecoder(np.array([[1.0]]), 0.0, (0, 0), FS)
    return dataset, envelopes, base


class TestMemorizingDecoder:
    def test_lopeo_never_stores_test_stimuli(self):
        dataset, envelopes, base = memory_setup()
        plan = make_fold_plan(dataset, LOPEO, 4, 0)
        for p in enumerate_partitions(plan, dataset):
            decoder = build_memorizing_decoder(base, p, dataset, envelopes, strategy=LOPEO)
            test_stimuli = {s for t in dataset if t.trial_id in p.test for s in t.stimuli}
            assert not set(decoder.stored_keys) & test_stimuli

    def test_loto_on_exclusive_pairs_stores_test_stimulus(self):
        dataset, envelopes, base = memory_setup()
        plan = make_fold_plan(dataset, LOTO, 4, 0)
        overlaps = []
        for p in enumerate_partitions(plan, dataset):
            decoder = build_memorizing_decoder(base, p, dataset, envelopes, strategy=LOTO)
            test_attended = {t.attended for t in dataset if t.trial_id in p.test}
            overlaps.append(bool(test_attended & set(decoder.stored_keys)))
        assert any(overlaps)

    def test_leaky_partition_under_lopeo(self):
        dataset = make_dataset([("T1", "A", "B"), ("T2", "A", "B"), ("T3", "C", "D"), ("T4", "E", "F")])
        envelopes = {s: envelope(i, seconds=5) for i, s in enumerate("ABCDEF")}
        base = LinearDecoder(np.array([[1.0]]), 0.0, (0, 0), FS)
        p = Partition(0, 1, train=frozenset({"T1", "T4"}), val=frozenset({"T3"}), test=frozenset({"T2"}))
        with pytest.raises(MemorizationLeak):
            build_memorizing_decoder(base, p, dataset, envelopes, strategy=LOPEO)

    def test_empty_training_partition(self):
        dataset, envelopes, base = memory_setup()
        p = Partition(0, 1, train=frozenset(), val=frozenset({"T001"}), test=frozenset({"T002"}))
        with pytest.raises(MissingEnvelope):
            build_memorizing_decoder(base, p, dataset, envelopes)

    def test_missing_envelope(self):
        dataset, envelopes, base = memory_setup()
        p = Partition(0, 1, train=frozenset({"T001"}), val=frozenset({"T002"}), test=frozenset({"T005"}))
        del envelopes[dataset.trial("T001").attended]
        with pytest.raises(MissingEnvelope):
            build_memorizing_decoder(base, p, dataset, envelopes)

    def test_purity_zero_for_balanced_stimuli(self):
        dataset, envelopes, base = memory_setup(balanced=True)
        p = Partition(0, 1, train=frozenset(dataset.trial_ids[:8]), val=frozenset(dataset.trial_ids[8:12]),
                      test=frozenset(dataset.trial_ids[12:]))
        decoder = build_memorizing_decoder(base, p, dataset, envelopes, purity_weighted=True)
        assert set(decoder.purity.values()) == {0.0}

        eeg = SignalSeries(envelopes["A0"].data, FS)
        np.testing.assert_array_equal(decoder.reconstruct(eeg).values, reconstruct(base, eeg).values)

    def test_plain_blend_ignores_purity(self, rng):
        _, _, base = memory_setup()
        att = envelope(36, seconds=20)
        eeg = SignalSeries(att.values + rng.standard_normal(att.n_samples), FS)
        decoder = MemorizingDecoder(base, {"A": att.values}, {"A": 0.0}, blend_alpha=0.25, match_threshold=0.0)
        out = decoder.reconstruct(eeg)
        assert out.meta['memory_weight'] == 0.25

        w = int(10 * FS)
        expected = np.empty(att.n_samples)
        for start in (0, w):
            stored, linear = att.values[start:start + w], eeg.values[start:start + w]
            expected[start:start + w] = (0.25 * (stored - stored.mean()) / stored.std()
                                         + 0.75 * (linear - linear.mean()) / linear.std())
        np.testing.assert_allclose(out.values, expected, atol=1e-12)

    def test_purity_weighted_blend_scales_alpha(self, rng):
        _, _, base = memory_setup()
        att = envelope(37, seconds=20)
        eeg = SignalSeries(att.values + rng.standard_normal(att.n_samples), FS)
        decoder = MemorizingDecoder(base, {"A": att.values}, {"A": 0.5}, blend_alpha=0.8,
                                    match_threshold=0.0, purity_weighted=True)
        assert decoder.reconstruct(eeg).meta['memory_weight'] == pytest.approx(0.4)

    def test_trailing_sample_is_blended_with_last_window(self, rng):
        _, _, base = memory_setup()
        n = int(20 * FS) + 1
        att = generate_envelope(n, FS, 38)
        eeg = SignalSeries(att.values + rng.standard_normal(n), FS)
        decoder = MemorizingDecoder(base, {"A": att.values}, {"A": 1.0}, blend_alpha=0.5, match_threshold=0.0)
        out = decoder.reconstruct(eeg).values
        tail = out[int(10 * FS):]
        np.testing.assert_allclose(tail.mean(), 0.0, atol=1e-12)
        assert out[-1] != eeg.values[-1]

    def test_blend_windows(self):
        assert blend_windows(10, 4) == [(0, 4), (4, 8), (8, 10)]
        assert blend_windows(9, 4) == [(0, 4), (4, 9)]
        assert blend_windows(3, 4) == [(0, 3)]

    def test_empty_store_returns_linear_output(self, rng):
        _, _, base = memory_setup()
        decoder = MemorizingDecoder(base, {}, {})
        eeg = SignalSeries(rng.standard_normal((1, 640)), FS)
        np.testing.assert_array_equal(reconstruct_with_memory(decoder, eeg).values, reconstruct(base, eeg).values)

    def test_substitution_limit(self, rng):
        _, _, base = memory_setup()
        att = envelope(30, seconds=30)
        eeg = SignalSeries(att.values + 2.0 * rng.standard_normal(att.n_samples), FS)
        decoder = MemorizingDecoder(base, {"A": att.values}, {"A": 1.0}, blend_alpha=1.0, match_threshold=0.0)
        out = decoder.reconstruct(eeg)
        assert out.meta['memory_match'] == "A"
        scores = score_windows(out, att, [envelope(31, seconds=30)], EvalWindowing(10.0))
        np.testing.assert_allclose(scores.rho_a, 1.0, atol=1e-9)

    def test_foreign_store_does_not_raise_attended_correlation(self, rng):
        _, _, base = memory_setup()
        att, foreign = envelope(32, seconds=30), envelope(33, seconds=30)
        eeg = SignalSeries(att.values + 0.5 * rng.standard_normal(att.n_samples), FS)
        decoder = MemorizingDecoder(base, {"X": foreign.values}, {"X": 1.0}, match_threshold=-1.0)
        windowing = EvalWindowing(10.0)
        linear = score_windows(reconstruct(base, eeg), att, [foreign], windowing)
        memorized = score_windows(decoder.reconstruct(eeg), att, [foreign], windowing)
        assert memorized.mean_rho_a < linear.mean_rho_a

    def test_below_threshold_keeps_linear_output(self, rng):
        _, _, base = memory_setup()
        att, foreign = envelope(34, seconds=30), envelope(35, seconds=30)
        eeg = SignalSeries(att.values, FS)
        decoder = MemorizingDecoder(base, {"X": foreign.values}, {"X": 1.0}, match_threshold=0.9)
        out = decoder.reconstruct(eeg)
        assert out.meta['memory_match'] is None
        np.testing.assert_array_equal(out.values, att.values)

    def test_parameter_ranges(self):
        _, _, base = memory_setup()
        with pytest.raises(ConfigError):
            MemorizingDecoder(base, {}, {}, blend_alpha=1.5)
        with pytest.raises(ConfigError):
            MemorizingDecoder(base, {}, {}, match_threshold=2.0)
