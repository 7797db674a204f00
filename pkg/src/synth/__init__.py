"""Synthetic envelopes, EEG forward model and balance-controlled scenarios."""

from .generator import ForwardModel, generate_envelope, synthesize_trial_eeg
from .scenario import CalibrationResult, Scenario, ScenarioConfig, build_scenario, calibrate_noise_sigma

__all__ = [
    'ForwardModel', 'generate_envelope', 'synthesize_trial_eeg',
    'CalibrationResult', 'Scenario', 'ScenarioConfig', 'build_scenario', 'calibrate_noise_sigma',
]
