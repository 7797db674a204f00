"""
Synthetic AAD scenarios with a controlled stimulus-role balance.

A scenario pairs 2 * n_pairs stimuli into fixed pairs and records
`repeats_per_pair` trials per pair. The `exclusive` design always attends
the first stimulus of a pair (balance index 1); the `balanced` design
alternates roles (balance index 0).
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .. import __version__
from ..analysis.balance import BALANCED, EXCLUSIVE, SUBSET_TARGETS, balance_index
from ..analysis.metrics import EvalWindowing, WindowScores, score_windows
from ..core.dataset import Dataset, TrialRecord, serialize_trial_metadata
from ..core.errors import ConfigError, InfeasibleBalance
from ..core.signals import SignalSeries, TrialSignals, write_signal
from ..decoders.linear import fit_ridge, lag_window_samples
from .generator import ForwardModel, generate_envelope, synthesize_trial_eeg

logger = logging.getLogger(__name__)

DESIGNS = SUBSET_TARGETS
MANIFEST_SCHEMA_VERSION = 1

TARGET_ACC = (0.60, 0.75)
DEFAULT_SIGMA_GRID = tuple(np.round(np.geomspace(1.0, 200.0, 17), 3).tolist())
CALIBRATION_LAMBDA = 0.1

# SeedSequence spawn keys per random stream
_MODEL, _ENVELOPE, _NOISE, _SPLIT = range(4)


def _seed(seed: int, stream: int, index: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=(stream, index))


@dataclass(frozen=True)
class ScenarioConfig:
    n_pairs: int = 8
    repeats_per_pair: int = 4
    design: str = BALANCED
    channels: int = 8
    sample_rate_hz: float = 64.0
    trial_seconds: float = 60.0
    attended_gain: float = 1.0
    unattended_gain: float = 0.6
    noise_sigma: Optional[float] = None
    seed: int = 0
    n_subjects: int = 1
    shared_topography: bool = True
    gain_jitter: float = 0.0
    name: str = "synthetic"

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ConfigError(f"design must be one of {DESIGNS}, got {self.design!r}")
        for name in ('n_pairs', 'repeats_per_pair', 'channels', 'n_subjects'):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.n_pairs < 2:
            raise ConfigError(f"n_pairs must be >= 2, got {self.n_pairs}")
        if not self.sample_rate_hz > 0 or not self.trial_seconds > 0:
            raise ConfigError("sample_rate_hz and trial_seconds must be positive")
        if self.n_samples < 2:
            raise ConfigError(f"Trials of {self.trial_seconds}s at {self.sample_rate_hz} Hz hold fewer than 2 samples")
        if self.noise_sigma is not None and self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be non-negative, got {self.noise_sigma}")
        if self.unattended_gain < 0 or self.gain_jitter < 0:
            raise ConfigError("unattended_gain and gain_jitter must be non-negative")
        if self.design == BALANCED and self.repeats_per_pair % 2:
            raise InfeasibleBalance(
                f"A balanced design needs an even number of repeats per pair, got {self.repeats_per_pair}")

    @property
    def n_samples(self) -> int:
        return int(round(self.trial_seconds * self.sample_rate_hz))

    @property
    def n_trials(self) -> int:
        return self.n_pairs * self.repeats_per_pair

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"Unknown scenario settings: {unknown}")
        return cls(**values)

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "ScenarioConfig":
        try:
            values = json.loads(Path(path).read_text(encoding='utf-8'))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read scenario config {path}: {e}") from e
        if not isinstance(values, dict):
            raise ConfigError(f"Scenario config {path} must hold a JSON object")
        return cls.from_dict(values)


@dataclass(frozen=True)
class CalibrationResult:
    sigma: float
    acc: float
    in_target: bool
    sweep: Tuple[Tuple[float, float], ...]

    def to_dict(self) -> Dict:
        return {'sigma': self.sigma, 'acc': self.acc, 'in_target': self.in_target,
                'sweep': [list(point) for point in self.sweep]}


def _stimulus_ids(n_pairs: int) -> List[Tuple[str, str]]:
    width = max(2, len(str(2 * n_pairs)))
    return [(f"S{2 * p + 1:0{width}d}", f"S{2 * p + 2:0{width}d}") for p in range(n_pairs)]


def _layout(cfg: ScenarioConfig) -> Dataset:
    """Trial metadata of the scenario, pair by pair, repeat by repeat."""
    width = max(3, len(str(cfg.n_trials)))
    trials = []
    for p, (first, second) in enumerate(_stimulus_ids(cfg.n_pairs)):
        for r in range(cfg.repeats_per_pair):
            attended, unattended = (first, second) if cfg.design == EXCLUSIVE or r % 2 == 0 else (second, first)
            index = p * cfg.repeats_per_pair + r + 1
            trials.append(TrialRecord(
                trial_id=f"T{index:0{width}d}",
                subject_id=f"sub{r % cfg.n_subjects + 1:02d}",
                attended=attended,
                unattended=(unattended,),
            ))
    return Dataset(tuple(trials), f"{cfg.name}-{cfg.design}")


def _envelopes(cfg: ScenarioConfig) -> Dict[str, SignalSeries]:
    stimuli = [s for pair in _stimulus_ids(cfg.n_pairs) for s in pair]
    return {s: generate_envelope(cfg.n_samples, cfg.sample_rate_hz, _seed(cfg.seed, _ENVELOPE, i))
            for i, s in enumerate(stimuli)}


def _forward_model(cfg: ScenarioConfig, sigma: float) -> ForwardModel:
    model = ForwardModel.draw(cfg.channels, 1, _seed(cfg.seed, _MODEL), gamma=cfg.unattended_gain,
                              sigma=sigma, shared_topography=cfg.shared_topography, gain_jitter=cfg.gain_jitter)
    if cfg.attended_gain != 1.0:
        model = ForwardModel(model.attended_gains * cfg.attended_gain, model.unattended_gains,
                             model.gamma, model.sigma, model.gain_jitter)
    return model


def _trial_seed(cfg: ScenarioConfig, dataset: Dataset, trial_id: str) -> np.random.SeedSequence:
    return _seed(cfg.seed, _NOISE, dataset.trial_ids.index(trial_id))


@dataclass(frozen=True, eq=False)
class Scenario:
    config: ScenarioConfig
    dataset: Dataset
    envelopes: Dict[str, SignalSeries]
    eeg: Dict[str, SignalSeries]
    model: ForwardModel
    calibration: Optional[CalibrationResult] = None
    files: List[Path] = field(default_factory=list)

    @property
    def noise_sigma(self) -> float:
        return self.model.sigma

    def trial_signals(self) -> Dict[str, TrialSignals]:
        return {
            trial.trial_id: TrialSignals(trial.trial_id, self.eeg[trial.trial_id], self.envelopes[trial.attended],
                                         [self.envelopes[s] for s in trial.unattended])
            for trial in self.dataset
        }

    def manifest(self) -> Dict:
        config = replace(self.config, noise_sigma=self.noise_sigma).to_dict()
        return {
            'schema_version': MANIFEST_SCHEMA_VERSION,
            'tool_version': __version__,
            'config': config,
            'calibration': self.calibration.to_dict() if self.calibration else None,
            'balance_index': balance_index(self.dataset).bi,
            'n_trials': len(self.dataset),
            'forward_model': {
                'attended_gains': self.model.attended_gains.tolist(),
                'unattended_gains': self.model.unattended_gains.tolist(),
                'gamma': self.model.gamma,
                'sigma': self.model.sigma,
                'gain_jitter': self.model.gain_jitter,
            },
        }

    def write(self, out_dir: Union[str, Path]) -> Path:
        """Write trials.csv, envelopes/, eeg/ and manifest.json under `out_dir`."""
        root = Path(out_dir)
        root.mkdir(parents=True, exist_ok=True)
        written = [serialize_trial_metadata(self.dataset, root / 'trials.csv')]
        for stimulus, envelope in self.envelopes.items():
            written.append(write_signal(root / 'envelopes' / f"{stimulus}.f32", envelope))
        for trial_id, eeg in self.eeg.items():
            written.append(write_signal(root / 'eeg' / f"{trial_id}.f32", eeg))
        manifest_path = root / 'manifest.json'
        manifest_path.write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n", encoding='utf-8')
        written.append(manifest_path)
        self.files.extend(written)
        logger.info(f"Wrote scenario '{self.dataset.name}' ({len(self.dataset)} trials) to {root}")
        return root


def build_scenario(cfg: ScenarioConfig, out_dir: Optional[Union[str, Path]] = None) -> Scenario:
    """
    Generate a scenario; calibrate the noise level first when `noise_sigma` is unset.

    Args:
        cfg: Scenario settings
        out_dir: Write the scenario files there when given

    Returns:
        Scenario with metadata, envelopes, EEG and the forward model in memory
    """
    calibration = None
    sigma = cfg.noise_sigma
    if sigma is None:
        calibration = calibrate_noise_sigma(cfg)
        sigma = calibration.sigma

    dataset = _layout(cfg)
    envelopes = _envelopes(cfg)
    model = _forward_model(cfg, sigma)
    eeg = {
        trial.trial_id: synthesize_trial_eeg(envelopes[trial.attended], [envelopes[s] for s in trial.unattended],
                                             model, _trial_seed(cfg, dataset, trial.trial_id))
        for trial in dataset
    }
    scenario = Scenario(config=cfg, dataset=dataset, envelopes=envelopes, eeg=eeg, model=model,
                        calibration=calibration)
    logger.info(f"Built {cfg.design} scenario: {len(dataset)} trials, sigma={sigma:g}")
    if out_dir is not None:
        scenario.write(out_dir)
    return scenario


def _cross_fitted_acc(dataset: Dataset, envelopes: Dict[str, SignalSeries], eeg: Dict[str, np.ndarray],
                      halves: Sequence[Sequence[str]], sample_rate_hz: float, window_seconds: float) -> float:
    index = dataset.index()
    windowing = EvalWindowing(window_seconds)
    lag_window = lag_window_samples(sample_rate_hz)
    scores: List[WindowScores] = []
    for train_ids, test_ids in ((halves[0], halves[1]), (halves[1], halves[0])):
        decoder = fit_ridge([(SignalSeries(eeg[tid], sample_rate_hz), envelopes[index[tid].attended])
                             for tid in train_ids], lag_window, [CALIBRATION_LAMBDA])
        for tid in test_ids:
            trial = index[tid]
            prediction = decoder.reconstruct(SignalSeries(eeg[tid], sample_rate_hz))
            scores.append(score_windows(prediction, envelopes[trial.attended],
                                        [envelopes[s] for s in trial.unattended], windowing))
    return WindowScores.merge(scores).acc


def calibrate_noise_sigma(cfg: ScenarioConfig, sigma_grid: Sequence[float] = DEFAULT_SIGMA_GRID,
                          target: Tuple[float, float] = TARGET_ACC,
                          window_seconds: float = 10.0) -> CalibrationResult:
    """
    Pick the noise level at which a plain ridge decoder is moderately accurate.

    Sweeps `sigma_grid` on the balanced version of `cfg`, scoring a fixed-lambda
    ridge decoder by two-fold cross-fitting over the trials. The chosen sigma
    is the one whose accuracy lies in `target` closest to its midpoint, or the
    closest overall when none does.
    """
    repeats = cfg.repeats_per_pair + cfg.repeats_per_pair % 2
    base = replace(cfg, design=BALANCED, repeats_per_pair=repeats, noise_sigma=0.0)
    dataset = _layout(base)
    envelopes = _envelopes(base)
    model = _forward_model(base, 0.0)

    clean, noise = {}, {}
    for trial in dataset:
        rng = np.random.default_rng(_trial_seed(base, dataset, trial.trial_id))
        clean[trial.trial_id] = model.clean(envelopes[trial.attended].values,
                                            [envelopes[s].values for s in trial.unattended], rng)
        noise[trial.trial_id] = rng.standard_normal(clean[trial.trial_id].shape)

    order = np.random.default_rng(_seed(cfg.seed, _SPLIT)).permutation(len(dataset))
    ids = [dataset.trial_ids[i] for i in order]
    halves = (ids[::2], ids[1::2])

    lo, hi = target
    midpoint = (lo + hi) / 2
    sweep = []
    for sigma in sorted(sigma_grid):
        eeg = {tid: clean[tid] + sigma * noise[tid] for tid in clean}
        acc = _cross_fitted_acc(dataset, envelopes, eeg, halves, base.sample_rate_hz, window_seconds)
        sweep.append((float(sigma), acc))
        logger.debug(f"calibration sigma={sigma:g}: acc={acc:.3f}")
        if acc < lo:
            break

    in_range = [(s, a) for s, a in sweep if lo <= a <= hi]
    candidates = in_range or sweep
    sigma, acc = min(candidates, key=lambda point: abs(point[1] - midpoint))
    if not in_range:
        logger.warning(f"No sigma in the grid reached accuracy within {target}; using sigma={sigma:g} (acc {acc:.3f})")
    else:
        logger.info(f"Calibrated noise sigma={sigma:g} (ridge accuracy {acc:.3f})")
    return CalibrationResult(sigma=sigma, acc=acc, in_target=bool(in_range), sweep=tuple(sweep))
