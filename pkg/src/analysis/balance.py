"""
Stimulus-role balance of a dataset.

The balance index averages, over every distinct stimulus j, the role
imbalance |n_att - n_unatt| / (n_att + n_unatt). It is 0 when every stimulus
is attended exactly as often as it is ignored and 1 when every stimulus is
locked to a single role.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from ..core.dataset import Dataset, StimulusId, TrialRecord, canonical_pair
from ..core.errors import NoFeasibleSubset

logger = logging.getLogger(__name__)

BALANCED = "balanced"
EXCLUSIVE = "exclusive"
SUBSET_TARGETS = (BALANCED, EXCLUSIVE)


@dataclass(frozen=True)
class RoleCount:
    attended: int = 0
    unattended: int = 0

    @property
    def total(self) -> int:
        return self.attended + self.unattended

    @property
    def imbalance(self) -> float:
        return abs(self.attended - self.unattended) / self.total


@dataclass(frozen=True)
class RoleCounts:
    """Per-stimulus attended/unattended counts."""

    counts: Mapping[StimulusId, RoleCount]

    @property
    def n_audio(self) -> int:
        return len(self.counts)

    def __getitem__(self, stimulus: StimulusId) -> RoleCount:
        return self.counts[stimulus]

    def as_tuples(self) -> Dict[StimulusId, Tuple[int, int]]:
        return {s: (c.attended, c.unattended) for s, c in self.counts.items()}


@dataclass(frozen=True)
class BalanceReport:
    counts: RoleCounts
    bi: float
    per_stimulus_imbalance: Mapping[StimulusId, float]

    def to_dict(self) -> Dict:
        return {
            'schema_version': 1,
            'n_audio': self.counts.n_audio,
            'balance_index': self.bi,
            'counts': {s: {'attended': c.attended, 'unattended': c.unattended}
                       for s, c in self.counts.counts.items()},
            'per_stimulus_imbalance': dict(self.per_stimulus_imbalance),
        }


def role_counts(dataset: Dataset) -> RoleCounts:
    """
    Count how often each stimulus is attended and unattended.

    Every trial adds one attended count to its attended stimulus and one
    unattended count to each competitor, so 3-speaker trials contribute two
    unattended counts.
    """
    dataset.require_non_empty()

    attended: Dict[StimulusId, int] = {}
    unattended: Dict[StimulusId, int] = {}
    for trial in dataset:
        attended[trial.attended] = attended.get(trial.attended, 0) + 1
        for stimulus in trial.unattended:
            unattended[stimulus] = unattended.get(stimulus, 0) + 1

    stimuli = sorted(set(attended) | set(unattended))
    return RoleCounts({s: RoleCount(attended.get(s, 0), unattended.get(s, 0)) for s in stimuli})


def balance_index(dataset: Dataset) -> BalanceReport:
    """Balance index of the pooled dataset together with its per-stimulus terms."""
    counts = role_counts(dataset)
    imbalance = {s: c.imbalance for s, c in counts.counts.items()}
    bi = float(np.mean(list(imbalance.values())))
    logger.debug(f"Balance index of '{dataset.name}': {bi:.4f} over {counts.n_audio} stimuli")
    return BalanceReport(counts=counts, bi=bi, per_stimulus_imbalance=imbalance)


def balance_index_per_subject(dataset: Dataset) -> Dict[str, BalanceReport]:
    dataset.require_non_empty()
    return {subject: balance_index(dataset.for_subject(subject)) for subject in dataset.subjects}


# Extreme subsets

@dataclass(frozen=True)
class ExtremeSubset:
    dataset: Dataset
    report: BalanceReport
    target: str
    dropped: Tuple[str, ...]


def _role_conflict(attended: Dict[str, int], unattended: Dict[str, int]) -> int:
    return sum(min(attended.get(s, 0), unattended.get(s, 0)) for s in set(attended) | set(unattended))


def _conflict_reduction(trial: TrialRecord, attended: Dict[str, int], unattended: Dict[str, int]) -> int:
    """How much the role conflict drops when `trial` is removed."""
    reduction = 0
    if attended.get(trial.attended, 0) <= unattended.get(trial.attended, 0):
        reduction += 1
    for stimulus in trial.unattended:
        if unattended.get(stimulus, 0) <= attended.get(stimulus, 0):
            reduction += 1
    return reduction


def _exclusive_subset(dataset: Dataset) -> List[TrialRecord]:
    kept = list(dataset.trials)
    attended: Dict[str, int] = {}
    unattended: Dict[str, int] = {}
    for trial in kept:
        attended[trial.attended] = attended.get(trial.attended, 0) + 1
        for stimulus in trial.unattended:
            unattended[stimulus] = unattended.get(stimulus, 0) + 1

    while _role_conflict(attended, unattended) > 0:
        # max() keeps the first trial on ties, i.e. metadata order
        drop = max(range(len(kept)), key=lambda i: _conflict_reduction(kept[i], attended, unattended))
        trial = kept.pop(drop)
        attended[trial.attended] -= 1
        for stimulus in trial.unattended:
            unattended[stimulus] -= 1
        logger.debug(f"Exclusive subset: dropped trial {trial.trial_id}")

    return kept


def _prune_acyclic(edges: Dict[int, Tuple[str, str]]) -> None:
    """Drop edges out of stimuli never ignored or into stimuli never attended; they lie on no cycle."""
    while True:
        tails = {att for att, _ in edges.values()}
        heads = {unatt for _, unatt in edges.values()}
        dead = [position for position, (att, unatt) in edges.items() if att not in heads or unatt not in tails]
        if not dead:
            return
        for position in dead:
            del edges[position]


def _extract_cycle(edges: Dict[int, Tuple[str, str]], order: List[int]) -> List[int]:
    """Walk attended -> ignored edges until a stimulus repeats; every stimulus left has an outgoing edge."""
    outgoing: Dict[str, List[int]] = {}
    for position in order:
        if position in edges:
            outgoing.setdefault(edges[position][0], []).append(position)

    start = edges[next(p for p in order if p in edges)][0]
    visited: Dict[str, int] = {}
    path: List[int] = []
    stimulus = start
    while stimulus not in visited:
        visited[stimulus] = len(path)
        position = outgoing[stimulus][0]
        path.append(position)
        stimulus = edges[position][1]
    return path[visited[stimulus]:]


def _balanced_subset(dataset: Dataset, seed: Optional[int]) -> List[TrialRecord]:
    # Only 2-speaker trials can balance: each trial adds one attended count
    # and |unattended| unattended counts. A 2-speaker trial is an edge
    # attended -> ignored, and equal role counts for every kept stimulus means
    # the kept edges form a union of directed cycles.
    edges = {position: (trial.attended, trial.unattended[0])
             for position, trial in enumerate(dataset.trials) if trial.n_speakers == 2}

    order = sorted(edges)
    if seed is not None:
        order = [order[i] for i in np.random.default_rng(seed).permutation(len(order))]

    # Opposite-role repeats of one pair first, so pair-level balance is kept where it exists
    by_pair: Dict[Tuple[str, str], Dict[str, List[int]]] = {}
    for position in order:
        attended, unattended = edges[position]
        pair = canonical_pair(attended, unattended)
        by_pair.setdefault((pair.first, pair.second), {pair.first: [], pair.second: []})[attended].append(position)

    keep: List[int] = []
    for key in sorted(by_pair):
        first, second = (by_pair[key][s] for s in key)
        n = min(len(first), len(second))
        for position in first[:n] + second[:n]:
            keep.append(position)
            del edges[position]

    _prune_acyclic(edges)
    while edges:
        cycle = _extract_cycle(edges, order)
        keep.extend(cycle)
        for position in cycle:
            del edges[position]
        _prune_acyclic(edges)

    return [dataset.trials[position] for position in sorted(keep)]


def extreme_subset(dataset: Dataset, target: str, seed: Optional[int] = None) -> ExtremeSubset:
    """
    Build a balance-extreme sub-dataset.

    Args:
        dataset: Source dataset
        target: "exclusive" (no stimulus in both roles, BI = 1) or
            "balanced" (equal role counts for every kept stimulus, BI = 0)
        seed: For "balanced", choose surplus trials by a seeded draw instead
            of keeping the first ones in metadata order

    Returns:
        ExtremeSubset with the kept trials and their BalanceReport
    """
    dataset.require_non_empty()
    if target == EXCLUSIVE:
        kept = _exclusive_subset(dataset)
    elif target == BALANCED:
        kept = _balanced_subset(dataset, seed)
    else:
        raise ValueError(f"Unknown subset target: {target}")

    if not kept:
        raise NoFeasibleSubset(f"No non-empty {target} subset exists for dataset '{dataset.name}'")

    subset = Dataset(tuple(kept), f"{dataset.name}-{target}")
    kept_ids = {trial.trial_id for trial in kept}
    dropped = tuple(t.trial_id for t in dataset if t.trial_id not in kept_ids)
    report = balance_index(subset)
    logger.info(f"{target.title()} subset of '{dataset.name}': kept {len(kept)}/{len(dataset)} trials, "
                f"BI = {report.bi:.3f}")
    return ExtremeSubset(dataset=subset, report=report, target=target, dropped=dropped)


# Dataset summary

@dataclass(frozen=True)
class DatasetSummary:
    name: str
    n_subjects: int
    n_trials: int
    n_stimuli: int
    speaker_counts: Tuple[int, ...]
    chance_level: float
    balance_index: float
    n_pairs: Optional[int]
    pair_to_trial_ratio: Optional[float]

    def to_dict(self) -> Dict:
        return {
            'schema_version': 1,
            'name': self.name,
            'subjects': self.n_subjects,
            'trials': self.n_trials,
            'stimuli': self.n_stimuli,
            'speaker_counts': list(self.speaker_counts),
            'chance_level': self.chance_level,
            'balance_index': self.balance_index,
            'unique_pairs': self.n_pairs,
            'pair_to_trial_ratio': self.pair_to_trial_ratio,
        }


def describe_dataset(dataset: Dataset) -> DatasetSummary:
    """
    Dataset summary row: subjects, trials, stimuli, speakers, chance level and BI.

    Pair statistics are only defined for 2-speaker trials; a pair-to-trial
    ratio of 1 means no stimulus pair ever repeats.
    """
    dataset.require_non_empty()
    speakers = tuple(sorted({trial.n_speakers for trial in dataset}))
    chance = float(np.mean([1.0 / trial.n_speakers for trial in dataset]))

    two_speaker = [trial for trial in dataset if trial.n_speakers == 2]
    if two_speaker:
        pairs = {canonical_pair(t.attended, t.unattended[0]) for t in two_speaker}
        n_pairs, ratio = len(pairs), len(pairs) / len(two_speaker)
    else:
        n_pairs, ratio = None, None

    return DatasetSummary(
        name=dataset.name,
        n_subjects=len(dataset.subjects),
        n_trials=len(dataset),
        n_stimuli=len(dataset.stimuli),
        speaker_counts=speakers,
        chance_level=chance,
        balance_index=balance_index(dataset).bi,
        n_pairs=n_pairs,
        pair_to_trial_ratio=ratio,
    )
