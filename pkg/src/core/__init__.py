"""
Core functionality for aad-evalkit.

This module contains the essential components:
- Error hierarchy and exit codes (errors.py)
- Settings and logging setup (config.py)
- Trial metadata model (dataset.py)
- Signal series and file I/O (signals.py)
- Experiment runner (experiment.py)
"""

from .config import Settings, setup_logging
from .dataset import Dataset, StimulusPair, TrialRecord, canonical_pair, parse_trial_metadata, serialize_trial_metadata
from .errors import EvalKitError
from .signals import SignalSeries, TrialSignals, load_trial_signals, read_signal, write_signal

__all__ = [
    'Settings',
    'setup_logging',
    'Dataset',
    'StimulusPair',
    'TrialRecord',
    'canonical_pair',
    'parse_trial_metadata',
    'serialize_trial_metadata',
    'EvalKitError',
    'SignalSeries',
    'TrialSignals',
    'load_trial_signals',
    'read_signal',
    'write_signal',
]
