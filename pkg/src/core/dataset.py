"""Trial and stimulus metadata for auditory-attention-decoding datasets."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Tuple, Union

import pandas as pd

from .errors import (
    AttendedAmongUnattended,
    DuplicateTrialId,
    EmptyDataset,
    EmptyUnattended,
    InvalidPair,
    InvalidStimulusId,
    MalformedRow,
    MetadataError,
    UnknownTrial,
)

logger = logging.getLogger(__name__)

StimulusId = str

PAIR_SEPARATOR = "|"
METADATA_COLUMNS = ['trial_id', 'subject_id', 'attended_stimulus', 'unattended_stimuli']
OPTIONAL_COLUMNS = ['eeg_ref', 'envelope_refs']


def check_stimulus_id(value: str) -> StimulusId:
    """Return `value` if it is a valid stimulus id, raise otherwise."""
    if not isinstance(value, str) or not value.strip():
        raise InvalidStimulusId(f"Stimulus id must be non-empty text, got {value!r}")
    if PAIR_SEPARATOR in value:
        raise InvalidStimulusId(f"Stimulus id {value!r} contains the reserved '{PAIR_SEPARATOR}' character")
    return value


@dataclass(frozen=True, order=True)
class StimulusPair:
    """Unordered attended/unattended pair stored in canonical (sorted) order."""

    first: StimulusId
    second: StimulusId

    def __post_init__(self):
        if self.first >= self.second:
            raise InvalidPair(f"Pair ({self.first!r}, {self.second!r}) is not in canonical order")

    def encode(self) -> str:
        return f"{self.first}{PAIR_SEPARATOR}{self.second}"

    @classmethod
    def decode(cls, text: str) -> "StimulusPair":
        parts = text.split(PAIR_SEPARATOR)
        if len(parts) != 2:
            raise InvalidPair(f"Cannot decode stimulus pair from {text!r}")
        return canonical_pair(parts[0], parts[1])

    def __contains__(self, stimulus: StimulusId) -> bool:
        return stimulus in (self.first, self.second)

    def __str__(self) -> str:
        return self.encode()


def canonical_pair(a: StimulusId, b: StimulusId) -> StimulusPair:
    """Order-insensitive pair key: f(a, b) == f(b, a), distinct for distinct id sets."""
    check_stimulus_id(a)
    check_stimulus_id(b)
    if a == b:
        raise InvalidPair(f"Stimulus {a!r} cannot compete with itself")
    return StimulusPair(a, b) if a < b else StimulusPair(b, a)


@dataclass(frozen=True)
class TrialRecord:
    """Metadata of one EEG trial.

    Attributes:
        trial_id: Unique trial token
        subject_id: Listener the trial was recorded from
        attended: Stimulus the listener attended
        unattended: Competing stimuli, in recording order
        eeg_ref: Optional EEG file reference, relative to the data dir
        envelope_refs: Optional stimulus -> envelope file reference
    """

    trial_id: str
    subject_id: str
    attended: StimulusId
    unattended: Tuple[StimulusId, ...]
    eeg_ref: Optional[str] = None
    envelope_refs: Mapping[StimulusId, str] = field(default_factory=dict, hash=False)

    def __post_init__(self):
        object.__setattr__(self, 'unattended', tuple(self.unattended))
        object.__setattr__(self, 'envelope_refs', dict(self.envelope_refs))

        for name in ('trial_id', 'subject_id'):
            value = getattr(self, name)
            if not isinstance(value, str) or not value.strip():
                raise MalformedRow(f"{name} must be non-empty text", field=name)

        check_stimulus_id(self.attended)
        if not self.unattended:
            raise EmptyUnattended(f"Trial {self.trial_id} lists no unattended stimulus",
                                  field='unattended_stimuli')
        for stimulus in self.unattended:
            check_stimulus_id(stimulus)
        if self.attended in self.unattended:
            raise AttendedAmongUnattended(
                f"Trial {self.trial_id}: attended stimulus {self.attended!r} is also listed as unattended",
                field='unattended_stimuli')
        if len(set(self.unattended)) != len(self.unattended):
            raise MalformedRow(f"Trial {self.trial_id}: unattended stimuli are not distinct",
                               field='unattended_stimuli')

    @property
    def n_speakers(self) -> int:
        return 1 + len(self.unattended)

    @property
    def stimuli(self) -> Tuple[StimulusId, ...]:
        return (self.attended,) + self.unattended

    def eeg_path(self, data_dir: Union[str, Path]) -> Path:
        """EEG file location; defaults to `eeg/<trial_id>.f32`."""
        return Path(data_dir) / (self.eeg_ref or f"eeg/{self.trial_id}.f32")

    def envelope_path(self, stimulus: StimulusId, data_dir: Union[str, Path]) -> Path:
        """Envelope file location; defaults to `envelopes/<stimulus>.f32`."""
        ref = self.envelope_refs.get(stimulus)
        return Path(data_dir) / (ref or f"envelopes/{stimulus}.f32")


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of trials. Trial order is the metadata order."""

    trials: Tuple[TrialRecord, ...]
    name: str = "dataset"

    def __post_init__(self):
        object.__setattr__(self, 'trials', tuple(self.trials))

    def __len__(self) -> int:
        return len(self.trials)

    def __iter__(self) -> Iterator[TrialRecord]:
        return iter(self.trials)

    @property
    def trial_ids(self) -> List[str]:
        return [trial.trial_id for trial in self.trials]

    @property
    def subjects(self) -> List[str]:
        return sorted({trial.subject_id for trial in self.trials})

    @property
    def stimuli(self) -> List[StimulusId]:
        return sorted({stimulus for trial in self.trials for stimulus in trial.stimuli})

    def require_non_empty(self):
        if not self.trials:
            raise EmptyDataset(f"Dataset '{self.name}' contains no trials")

    def trial(self, trial_id: str) -> TrialRecord:
        for trial in self.trials:
            if trial.trial_id == trial_id:
                return trial
        raise UnknownTrial(f"Trial {trial_id!r} is not part of dataset '{self.name}'")

    def index(self) -> Dict[str, TrialRecord]:
        return {trial.trial_id: trial for trial in self.trials}

    def subset(self, trial_ids: Iterable[str], name: Optional[str] = None) -> "Dataset":
        """Trials whose id is in `trial_ids`, keeping metadata order."""
        wanted = set(trial_ids)
        return Dataset(tuple(t for t in self.trials if t.trial_id in wanted), name or self.name)

    def for_subject(self, subject_id: str) -> "Dataset":
        return Dataset(tuple(t for t in self.trials if t.subject_id == subject_id),
                       f"{self.name}:{subject_id}")


# Parsing / serialization

def _split_stimuli(text: str) -> List[str]:
    return [part.strip() for part in text.split(PAIR_SEPARATOR)] if text.strip() else []


def _parse_envelope_refs(text: str) -> Dict[str, str]:
    refs = {}
    for entry in _split_stimuli(text):
        stimulus, sep, ref = entry.partition('=')
        if not sep or not stimulus.strip() or not ref.strip():
            raise MalformedRow(f"envelope_refs entry {entry!r} is not 'STIMULUS=path'", field='envelope_refs')
        refs[stimulus.strip()] = ref.strip()
    return refs


def _build_trial(row: Mapping, source: str, line: int) -> TrialRecord:
    try:
        unattended = row['unattended_stimuli']
        if isinstance(unattended, str):
            unattended = _split_stimuli(unattended)
        elif not isinstance(unattended, (list, tuple)):
            raise MalformedRow("unattended_stimuli must be text or an array", field='unattended_stimuli')

        envelope_refs = row.get('envelope_refs') or {}
        if isinstance(envelope_refs, str):
            envelope_refs = _parse_envelope_refs(envelope_refs)

        return TrialRecord(
            trial_id=str(row['trial_id']).strip(),
            subject_id=str(row['subject_id']).strip(),
            attended=str(row['attended_stimulus']).strip(),
            unattended=tuple(str(s).strip() for s in unattended),
            eeg_ref=(str(row['eeg_ref']).strip() or None) if row.get('eeg_ref') else None,
            envelope_refs=envelope_refs,
        )
    except MetadataError as e:
        raise type(e)(e.message, source=source, line=line, field=e.field) from None
    except InvalidStimulusId as e:
        raise MalformedRow(str(e), source=source, line=line) from None


def _rows_from_csv(path: Path) -> List[Tuple[int, Dict]]:
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
        df = df.fillna('')
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise MalformedRow(f"Cannot read metadata CSV: {e}", source=str(path)) from e

    missing = [c for c in METADATA_COLUMNS if c not in df.columns]
    if missing:
        raise MalformedRow(f"Missing columns: {missing}", source=str(path), line=1)

    # header is line 1
    return [(index + 2, row) for index, row in enumerate(df.to_dict(orient='records'))]


def _rows_from_json(path: Path) -> List[Tuple[int, Dict]]:
    try:
        items = json.loads(path.read_text(encoding='utf-8'))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise MalformedRow(f"Cannot read metadata JSON: {e}", source=str(path)) from e

    if not isinstance(items, list):
        raise MalformedRow("Metadata JSON must be an array of trial objects", source=str(path))

    rows = []
    for position, item in enumerate(items, start=1):
        if not isinstance(item, dict):
            raise MalformedRow("Trial entry is not an object", source=str(path), line=position)
        missing = [c for c in METADATA_COLUMNS if c not in item]
        if missing:
            raise MalformedRow(f"Missing fields: {missing}", source=str(path), line=position)
        rows.append((position, item))
    return rows


def parse_trial_metadata(source: Union[str, Path], name: Optional[str] = None) -> Dataset:
    """
    Parse a trial metadata file (CSV or JSON, chosen by suffix).

    Args:
        source: Path to the metadata file
        name: Dataset name (defaults to the file stem)

    Returns:
        Dataset with one TrialRecord per row/object, invariants validated
    """
    path = Path(source)
    if not path.exists():
        raise MalformedRow("Metadata file not found", source=str(path))

    rows = _rows_from_json(path) if path.suffix.lower() == '.json' else _rows_from_csv(path)

    trials = []
    seen: Dict[str, int] = {}
    for line, row in rows:
        trial = _build_trial(row, str(path), line)
        if trial.trial_id in seen:
            raise DuplicateTrialId(
                f"Duplicate trial_id {trial.trial_id!r} (first seen at line {seen[trial.trial_id]})",
                source=str(path), line=line, field='trial_id')
        seen[trial.trial_id] = line
        trials.append(trial)

    dataset = Dataset(tuple(trials), name or path.stem)
    logger.info(f"Parsed {len(dataset)} trials from {path}")
    return dataset


def _trial_to_row(trial: TrialRecord, as_json: bool) -> Dict:
    row = {
        'trial_id': trial.trial_id,
        'subject_id': trial.subject_id,
        'attended_stimulus': trial.attended,
        'unattended_stimuli': list(trial.unattended) if as_json else PAIR_SEPARATOR.join(trial.unattended),
    }
    if trial.eeg_ref:
        row['eeg_ref'] = trial.eeg_ref
    if trial.envelope_refs:
        row['envelope_refs'] = dict(trial.envelope_refs) if as_json else PAIR_SEPARATOR.join(
            f"{s}={ref}" for s, ref in trial.envelope_refs.items())
    return row


def serialize_trial_metadata(dataset: Dataset, destination: Union[str, Path], fmt: Optional[str] = None) -> Path:
    """Write `dataset` in the metadata CSV or JSON format."""
    path = Path(destination)
    fmt = (fmt or ('json' if path.suffix.lower() == '.json' else 'csv')).lower()
    path.parent.mkdir(parents=True, exist_ok=True)

    if fmt == 'json':
        rows = [_trial_to_row(trial, as_json=True) for trial in dataset]
        path.write_text(json.dumps(rows, indent=2) + "\n", encoding='utf-8')
    else:
        rows = [_trial_to_row(trial, as_json=False) for trial in dataset]
        columns = list(METADATA_COLUMNS)
        columns += [c for c in OPTIONAL_COLUMNS if any(c in row for row in rows)]
        pd.DataFrame(rows, columns=columns).fillna('').to_csv(path, index=False, lineterminator='\n')

    logger.info(f"Wrote {len(dataset)} trials to {path}")
    return path


# Validation report

@dataclass(frozen=True)
class ValidationIssue:
    level: str  # "error" or "warning"
    code: str
    message: str
    trial_id: Optional[str] = None

    def to_dict(self) -> Dict:
        return {'level': self.level, 'code': self.code, 'message': self.message, 'trial_id': self.trial_id}


@dataclass
class ValidationReport:
    issues: List[ValidationIssue] = field(default_factory=list)

    @property
    def violations(self) -> List[ValidationIssue]:
        return [issue for issue in self.issues if issue.level == 'error']

    @property
    def warnings(self) -> List[ValidationIssue]:
        return [issue for issue in self.issues if issue.level == 'warning']

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self) -> int:
        return len(self.issues)

    def to_dict(self) -> Dict:
        return {
            'schema_version': 1,
            'ok': self.ok,
            'violations': [issue.to_dict() for issue in self.violations],
            'warnings': [issue.to_dict() for issue in self.warnings],
        }


def validate_dataset(dataset: Dataset, require_signals: bool = False,
                     data_dir: Optional[Union[str, Path]] = None) -> ValidationReport:
    """
    Report dataset problems without raising.

    Args:
        dataset: Dataset to check
        require_signals: Also check that EEG and envelope files exist
        data_dir: Root the signal references are resolved against

    Returns:
        ValidationReport, empty iff every invariant holds
    """
    report = ValidationReport()

    if not dataset.trials:
        report.issues.append(ValidationIssue('error', 'empty_dataset', 'Dataset contains no trials'))
        return report

    counts: Dict[str, int] = {}
    for trial in dataset:
        counts[trial.trial_id] = counts.get(trial.trial_id, 0) + 1
    for trial_id, count in counts.items():
        if count > 1:
            report.issues.append(ValidationIssue(
                'error', 'duplicate_trial_id', f"trial_id appears {count} times", trial_id))

    speaker_counts = sorted({trial.n_speakers for trial in dataset})
    if len(speaker_counts) > 1:
        report.issues.append(ValidationIssue(
            'warning', 'mixed_speaker_counts',
            f"Trials mix speaker counts {speaker_counts}; chance level differs across trials"))

    if require_signals:
        root = Path(data_dir or '.')
        for trial in dataset:
            eeg = trial.eeg_path(root)
            if not eeg.exists():
                report.issues.append(ValidationIssue(
                    'error', 'missing_eeg', f"EEG file not found: {eeg}", trial.trial_id))
            for stimulus in trial.stimuli:
                envelope = trial.envelope_path(stimulus, root)
                if not envelope.exists():
                    report.issues.append(ValidationIssue(
                        'error', 'missing_envelope', f"Envelope file for {stimulus} not found: {envelope}",
                        trial.trial_id))

    if report.issues:
        logger.warning(f"Validation of '{dataset.name}': {len(report.violations)} violations, "
                       f"{len(report.warnings)} warnings")
    return report
