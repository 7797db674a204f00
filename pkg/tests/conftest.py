"""Shared fixtures for the aad-evalkit test suite."""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add the project root to the path so `src` imports without installing
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.core.dataset import Dataset, TrialRecord
from src.synth.scenario import ScenarioConfig, build_scenario


def trial(trial_id, attended, unattended, subject="sub01", **kwargs):
    if isinstance(unattended, str):
        unattended = (unattended,)
    return TrialRecord(trial_id=trial_id, subject_id=subject, attended=attended,
                       unattended=tuple(unattended), **kwargs)


def make_dataset(rows, name="test"):
    """Dataset from (trial_id, attended, unattended[, subject]) tuples."""
    return Dataset(tuple(trial(*row) for row in rows), name)


def paired_dataset(n_pairs=4, repeats=4, balanced=True, name="paired"):
    """Stimulus pairs (A_p, B_p) repeated `repeats` times, roles alternating when balanced."""
    rows = []
    index = 1
    for p in range(n_pairs):
        first, second = f"A{p}", f"B{p}"
        for r in range(repeats):
            attended, unattended = (second, first) if balanced and r % 2 else (first, second)
            rows.append((f"T{index:03d}", attended, unattended, f"sub{r % 2 + 1:02d}"))
            index += 1
    return make_dataset(rows, name)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def balanced_dataset():
    return paired_dataset(balanced=True, name="balanced")


@pytest.fixture
def exclusive_dataset():
    return paired_dataset(balanced=False, name="exclusive")


@pytest.fixture
def metadata_csv(tmp_path):
    path = tmp_path / "trials.csv"
    path.write_text(
        "trial_id,subject_id,attended_stimulus,unattended_stimuli\n"
        "T1,sub01,A,B\n"
        "T2,sub01,B,A\n"
        "T3,sub02,A,C\n"
        "T4,sub02,C,B\n",
        encoding="utf-8",
    )
    return path


@pytest.fixture(scope="session")
def small_scenario_config():
    # Short, fairly clean trials keep the end-to-end tests fast
    return ScenarioConfig(n_pairs=6, repeats_per_pair=4, channels=4, trial_seconds=30.0,
                          noise_sigma=2.0, seed=7)


@pytest.fixture(scope="session")
def small_scenario(small_scenario_config):
    return build_scenario(small_scenario_config)


@pytest.fixture(scope="session")
def written_scenario(tmp_path_factory, small_scenario_config):
    out = tmp_path_factory.mktemp("scenario")
    build_scenario(small_scenario_config, out)
    return out
