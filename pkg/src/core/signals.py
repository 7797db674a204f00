"""Uniformly sampled signals and their on-disk format.

Signal files are raw little-endian float32 samples, channel-major, next to a
JSON sidecar `{channels, samples, sample_rate_hz}` sharing the file stem.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from .dataset import Dataset, StimulusId, TrialRecord
from .errors import ChannelMismatch, InconsistentShapes, LengthMismatch, MissingEnvelope, SignalFileError

logger = logging.getLogger(__name__)

SAMPLE_DTYPE = '<f4'


@dataclass(frozen=True, eq=False)
class SignalSeries:
    """Real-valued series of shape (channels, samples) at a fixed sample rate.

    `meta` carries free-form annotations, e.g. the valid sample range of a
    reconstruction whose edges were computed against zero padding.
    """

    data: np.ndarray
    sample_rate_hz: float
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[np.newaxis, :]
        if data.ndim != 2:
            raise InconsistentShapes(f"Signal data must be 1-D or 2-D, got shape {data.shape}")
        if not self.sample_rate_hz > 0:
            raise InconsistentShapes(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        data.setflags(write=False)
        object.__setattr__(self, 'data', data)
        object.__setattr__(self, 'meta', dict(self.meta))

    @classmethod
    def mono(cls, values: Sequence[float], sample_rate_hz: float, **meta) -> "SignalSeries":
        return cls(np.asarray(values, dtype=np.float64)[np.newaxis, :], sample_rate_hz, meta)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration_seconds(self) -> float:
        return self.n_samples / self.sample_rate_hz

    @property
    def values(self) -> np.ndarray:
        """Samples of a single-channel series as a 1-D array."""
        if self.channels != 1:
            raise ChannelMismatch(f"Expected a single-channel series, got {self.channels} channels")
        return self.data[0]

    def with_meta(self, **meta) -> "SignalSeries":
        return SignalSeries(self.data, self.sample_rate_hz, {**self.meta, **meta})


def as_array(series: Union[SignalSeries, Sequence[float], np.ndarray]) -> np.ndarray:
    """1-D float64 view of a single-channel series or plain sequence."""
    if isinstance(series, SignalSeries):
        return series.values
    values = np.asarray(series, dtype=np.float64)
    if values.ndim == 2 and values.shape[0] == 1:
        values = values[0]
    if values.ndim != 1:
        raise ChannelMismatch(f"Expected a single-channel series, got shape {values.shape}")
    return values


def sidecar_path(path: Union[str, Path]) -> Path:
    return Path(path).with_suffix('.json')


def write_signal(path: Union[str, Path], series: SignalSeries) -> Path:
    """Write `series` as float32 samples plus its JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(series.data, dtype=SAMPLE_DTYPE).tofile(path)
    sidecar = {
        'channels': series.channels,
        'samples': series.n_samples,
        'sample_rate_hz': series.sample_rate_hz,
    }
    sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding='utf-8')
    return path


def read_signal(path: Union[str, Path]) -> SignalSeries:
    """Read a float32 signal file using its sidecar for shape and sample rate."""
    path = Path(path)
    sidecar = sidecar_path(path)
    if not path.exists():
        raise SignalFileError(f"Signal file not found: {path}")
    if not sidecar.exists():
        raise SignalFileError(f"Sidecar not found for {path}: expected {sidecar}")

    try:
        info = json.loads(sidecar.read_text(encoding='utf-8'))
        channels, samples = int(info['channels']), int(info['samples'])
        sample_rate = float(info['sample_rate_hz'])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise SignalFileError(f"Malformed sidecar {sidecar}: {e}") from e

    raw = np.fromfile(path, dtype=SAMPLE_DTYPE)
    if raw.size != channels * samples:
        raise SignalFileError(
            f"{path} holds {raw.size} samples, sidecar declares {channels} x {samples}")
    return SignalSeries(raw.reshape(channels, samples).astype(np.float64), sample_rate)


@dataclass(frozen=True, eq=False)
class TrialSignals:
    """EEG and stimulus envelopes of one trial, ready for decoding."""

    trial_id: str
    eeg: SignalSeries
    attended: SignalSeries
    unattended: List[SignalSeries]

    def __post_init__(self):
        lengths = {self.eeg.n_samples, self.attended.n_samples}
        lengths.update(env.n_samples for env in self.unattended)
        if len(lengths) != 1:
            raise LengthMismatch(f"Trial {self.trial_id}: EEG and envelopes differ in length {sorted(lengths)}")
        rates = {self.eeg.sample_rate_hz, self.attended.sample_rate_hz}
        rates.update(env.sample_rate_hz for env in self.unattended)
        if len(rates) != 1:
            raise InconsistentShapes(f"Trial {self.trial_id}: mixed sample rates {sorted(rates)}")


@dataclass(frozen=True)
class SignalRefs:
    eeg: Path
    envelopes: Mapping[StimulusId, Path]


def resolve_signal_refs(dataset: Dataset, data_dir: Union[str, Path]) -> Dict[str, SignalRefs]:
    """
    File locations of every trial's signals.

    Trials without explicit references use `eeg/<trial_id>.f32` and
    `envelopes/<stimulus>.f32` under `data_dir`.
    """
    root = Path(data_dir)
    return {
        trial.trial_id: SignalRefs(
            eeg=trial.eeg_path(root),
            envelopes={s: trial.envelope_path(s, root) for s in trial.stimuli},
        )
        for trial in dataset
    }


def load_trial_signals(dataset: Dataset, data_dir: Union[str, Path],
                       trial_ids: Optional[Sequence[str]] = None) -> Dict[str, TrialSignals]:
    """
    Load EEG and envelopes for the requested trials (all by default).

    Envelope files shared by several trials are read once.

    Returns:
        trial_id -> TrialSignals
    """
    root = Path(data_dir)
    wanted = set(trial_ids) if trial_ids is not None else None
    envelope_cache: Dict[Path, SignalSeries] = {}

    def envelope(trial: TrialRecord, stimulus: StimulusId) -> SignalSeries:
        path = trial.envelope_path(stimulus, root)
        if path not in envelope_cache:
            if not path.exists():
                raise MissingEnvelope(f"Envelope for stimulus {stimulus} not found: {path}")
            envelope_cache[path] = read_signal(path)
        return envelope_cache[path]

    loaded = {}
    for trial in dataset:
        if wanted is not None and trial.trial_id not in wanted:
            continue
        loaded[trial.trial_id] = TrialSignals(
            trial_id=trial.trial_id,
            eeg=read_signal(trial.eeg_path(root)),
            attended=envelope(trial, trial.attended),
            unattended=[envelope(trial, s) for s in trial.unattended],
        )

    logger.info(f"Loaded signals for {len(loaded)} trials ({len(envelope_cache)} distinct envelopes) from {root}")
    return loaded


def load_envelopes(dataset: Dataset, data_dir: Union[str, Path]) -> Dict[StimulusId, SignalSeries]:
    """stimulus -> envelope for every stimulus the dataset mentions."""
    root = Path(data_dir)
    envelopes: Dict[StimulusId, SignalSeries] = {}
    for trial in dataset:
        for stimulus in trial.stimuli:
            if stimulus in envelopes:
                continue
            path = trial.envelope_path(stimulus, root)
            if not path.exists():
                raise MissingEnvelope(f"Envelope for stimulus {stimulus} not found: {path}")
            envelopes[stimulus] = read_signal(path)
    return envelopes
