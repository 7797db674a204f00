"""Synthetic envelopes, forward model, scenarios and noise calibration."""

import json
from dataclasses import replace

import numpy as np
import pytest

from src.analysis.balance import balance_index
from src.analysis.metrics import pearson
from src.core.dataset import parse_trial_metadata
from src.core.errors import ConfigError, InfeasibleBalance, LengthMismatch, TooShort
from src.core.signals import load_trial_signals
from src.synth.generator import ForwardModel, generate_envelope, synthesize_trial_eeg
from src.synth.scenario import ScenarioConfig, build_scenario, calibrate_noise_sigma

FS = 64.0


class TestGenerateEnvelope:
    def test_deterministic(self):
        a = generate_envelope(640, FS, 5)
        b = generate_envelope(640, FS, 5)
        assert np.array_equal(a.data, b.data)
        assert not np.array_equal(a.data, generate_envelope(640, FS, 6).data)

    def test_standardized(self):
        env = generate_envelope(3840, FS, 1).values
        assert abs(env.mean()) < 1e-9
        assert abs(env.var() - 1.0) < 1e-9

    def test_different_seeds_are_nearly_uncorrelated(self):
        for seed in range(100):
            a = generate_envelope(3840, FS, 2 * seed)
            b = generate_envelope(3840, FS, 2 * seed + 1)
            assert abs(pearson(a, b)) < 0.2

    def test_too_short(self):
        with pytest.raises(TooShort):
            generate_envelope(1, FS, 0)


class TestForwardModel:
    def test_no_noise_no_competitor_scales_attended(self):
        att, unatt = generate_envelope(256, FS, 1), generate_envelope(256, FS, 2)
        model = ForwardModel([1.0, 0.5, -2.0], [[0.3, 0.3, 0.3]], gamma=0.0)
        eeg = synthesize_trial_eeg(att, [unatt], model, seed=0)
        np.testing.assert_allclose(eeg.data, np.outer([1.0, 0.5, -2.0], att.values))

    def test_noiseless_eeg_lies_in_envelope_span(self):
        att, unatt = generate_envelope(512, FS, 3), generate_envelope(512, FS, 4)
        model = ForwardModel.draw(6, 1, seed=9, shared_topography=False)
        eeg = synthesize_trial_eeg(att, [unatt], model, seed=1)
        basis = np.vstack([att.values, unatt.values]).T
        for channel in eeg.data:
            coefficients = np.linalg.lstsq(basis, channel, rcond=None)[0]
            assert np.max(np.abs(basis @ coefficients - channel)) < 1e-10

    def test_doubling_sigma_quarters_noise_power(self):
        att, unatt = generate_envelope(512, FS, 5), generate_envelope(512, FS, 6)
        model = ForwardModel.draw(4, 1, seed=2)
        clean = model.clean(att.values, [unatt.values])
        residual = [synthesize_trial_eeg(att, [unatt], model.with_sigma(s), seed=3).data - clean for s in (1.0, 2.0)]
        assert np.var(residual[1]) / np.var(residual[0]) == pytest.approx(4.0, abs=1e-9)

    def test_shared_topography(self):
        model = ForwardModel.draw(5, 2, seed=4)
        np.testing.assert_array_equal(model.unattended_gains, np.tile(model.attended_gains, (2, 1)))

    def test_length_mismatch(self):
        model = ForwardModel.draw(2, 1, seed=0)
        with pytest.raises(LengthMismatch):
            synthesize_trial_eeg(generate_envelope(100, FS, 0), [generate_envelope(90, FS, 1)], model, seed=0)


class TestScenarioConfig:
    def test_odd_repeats_cannot_be_balanced(self):
        with pytest.raises(InfeasibleBalance):
            ScenarioConfig(repeats_per_pair=3, design="balanced", noise_sigma=1.0)

    def test_odd_repeats_allowed_when_exclusive(self):
        assert ScenarioConfig(repeats_per_pair=3, design="exclusive", noise_sigma=1.0).n_trials == 24

    def test_rejects_bad_values(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(design="mixed")
        with pytest.raises(ConfigError):
            ScenarioConfig(n_pairs=1)
        with pytest.raises(ConfigError):
            ScenarioConfig(noise_sigma=-1.0)

    def test_from_json(self, tmp_path):
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps({"n_pairs": 3, "design": "exclusive", "noise_sigma": 1.5}), encoding="utf-8")
        cfg = ScenarioConfig.from_json(path)
        assert (cfg.n_pairs, cfg.design, cfg.noise_sigma) == (3, "exclusive", 1.5)

    def test_unknown_keys(self, tmp_path):
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps({"n_pairs": 3, "noise": 1.5}), encoding="utf-8")
        with pytest.raises(ConfigError):
            ScenarioConfig.from_json(path)


class TestBuildScenario:
    @pytest.mark.parametrize("design, expected_bi", [("exclusive", 1.0), ("balanced", 0.0)])
    def test_design_sets_balance(self, design, expected_bi):
        cfg = ScenarioConfig(n_pairs=4, repeats_per_pair=4, design=design, channels=2, trial_seconds=5.0,
                             noise_sigma=1.0)
        scenario = build_scenario(cfg)
        assert len(scenario.dataset) == 16
        assert balance_index(scenario.dataset).bi == expected_bi
        assert scenario.dataset.name == f"synthetic-{design}"

    def test_layout(self, small_scenario):
        dataset = small_scenario.dataset
        assert dataset.trial_ids[0] == "T001"
        assert dataset.stimuli[:2] == ["S01", "S02"]
        assert {t.subject_id for t in dataset} == {"sub01"}
        signals = small_scenario.trial_signals()
        assert signals["T001"].eeg.channels == 4
        assert signals["T001"].eeg.n_samples == 30 * 64

    def test_same_seed_same_signals(self, small_scenario_config, small_scenario):
        again = build_scenario(small_scenario_config)
        for tid, eeg in small_scenario.eeg.items():
            assert np.array_equal(eeg.data, again.eeg[tid].data)

    def test_every_trial_uses_the_scenario_gains(self, small_scenario_config):
        scenario = build_scenario(replace(small_scenario_config, noise_sigma=0.0))
        for trial in scenario.dataset:
            expected = scenario.model.clean(scenario.envelopes[trial.attended].values,
                                            [scenario.envelopes[s].values for s in trial.unattended])
            np.testing.assert_allclose(scenario.eeg[trial.trial_id].data, expected)

    def test_gain_jitter_varies_trials(self, small_scenario_config):
        scenario = build_scenario(replace(small_scenario_config, noise_sigma=0.0, gain_jitter=0.2))
        first = scenario.dataset.trial_ids[0]
        trial = scenario.dataset.trial(first)
        shared = scenario.model.clean(scenario.envelopes[trial.attended].values,
                                      [scenario.envelopes[s].values for s in trial.unattended])
        assert not np.allclose(scenario.eeg[first].data, shared)

    def test_manifest(self, small_scenario):
        manifest = small_scenario.manifest()
        assert manifest['config']['noise_sigma'] == 2.0
        assert manifest['n_trials'] == 24
        assert manifest['calibration'] is None
        assert manifest['balance_index'] == 0.0
        assert len(manifest['forward_model']['attended_gains']) == 4

    def test_written_files_load_back(self, written_scenario, small_scenario):
        dataset = parse_trial_metadata(written_scenario / "trials.csv")
        assert dataset.trial_ids == small_scenario.dataset.trial_ids
        signals = load_trial_signals(dataset, written_scenario)
        np.testing.assert_allclose(signals["T001"].eeg.data, small_scenario.eeg["T001"].data, rtol=1e-6, atol=1e-5)
        assert (written_scenario / "manifest.json").exists()

    def test_written_files_are_byte_identical(self, tmp_path, small_scenario_config):
        build_scenario(small_scenario_config, tmp_path / "a")
        build_scenario(small_scenario_config, tmp_path / "b")
        first = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        second = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
        assert first == second
        for relative in first:
            assert (tmp_path / "a" / relative).read_bytes() == (tmp_path / "b" / relative).read_bytes()


class TestCalibration:
    def test_sweep_stops_below_target(self, small_scenario_config):
        result = calibrate_noise_sigma(small_scenario_config, sigma_grid=(0.5, 5.0, 50.0, 500.0))
        sigmas = [s for s, _ in result.sweep]
        assert sigmas == sorted(sigmas)
        assert result.sigma in sigmas
        if len(result.sweep) < 4:
            assert result.sweep[-1][1] < 0.60
        if result.in_target:
            assert 0.60 <= result.acc <= 0.75

    def test_clean_data_decodes_perfectly(self, small_scenario_config):
        result = calibrate_noise_sigma(small_scenario_config, sigma_grid=(0.0,))
        assert result.acc == 1.0
        assert not result.in_target

    def test_build_records_calibration(self):
        cfg = ScenarioConfig(n_pairs=3, repeats_per_pair=2, channels=2, trial_seconds=20.0, seed=1)
        scenario = build_scenario(cfg)
        assert scenario.calibration is not None
        assert scenario.noise_sigma == scenario.calibration.sigma
        assert scenario.manifest()['calibration']['sigma'] == scenario.noise_sigma
