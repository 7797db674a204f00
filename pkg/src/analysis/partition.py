"""
Leakage-safe cross-validation partitions.

All three strategies share one mechanism: every trial maps to a grouping
key, keys are dealt into K folds, and each ordered (test fold, validation
fold) choice yields one partition with the remaining folds as training set.

    LOTO  - key is the trial itself
    LOPEO - key is the unordered (attended, unattended) stimulus pair
    LOEO  - key is the attended stimulus
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.dataset import Dataset, TrialRecord, canonical_pair
from ..core.errors import (
    ConfigError,
    InsufficientKeys,
    MalformedRow,
    NeedThreeFolds,
    PairUndefined,
    PlanMismatch,
    SchemaVersionMismatch,
    UnknownTrial,
)

logger = logging.getLogger(__name__)

LOTO = "loto"
LOPEO = "lopeo"
LOEO = "loeo"
STRATEGIES = (LOTO, LOPEO, LOEO)

KEY_TAGS = {LOTO: "trial", LOPEO: "pair", LOEO: "attended"}
MIN_FOLDS = 3
FOLDS_SCHEMA_VERSION = 1


def normalize_strategy(strategy: str) -> str:
    value = str(strategy).lower()
    if value not in STRATEGIES:
        raise ConfigError(f"Unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    return value


@dataclass(frozen=True, order=True)
class GroupKey:
    tag: str
    value: str

    def __str__(self) -> str:
        return self.value


def group_key(strategy: str, trial: TrialRecord) -> GroupKey:
    """Grouping key of `trial` under `strategy`."""
    strategy = normalize_strategy(strategy)
    if strategy == LOTO:
        return GroupKey(KEY_TAGS[LOTO], trial.trial_id)
    if strategy == LOPEO:
        if len(trial.unattended) != 1:
            raise PairUndefined(
                f"Trial {trial.trial_id} has {len(trial.unattended)} competitors; "
                f"stimulus pairs are only defined for 2-speaker trials (use LOEO instead)")
        return GroupKey(KEY_TAGS[LOPEO], canonical_pair(trial.attended, trial.unattended[0]).encode())
    return GroupKey(KEY_TAGS[LOEO], trial.attended)


@dataclass(frozen=True)
class FoldPlan:
    strategy: str
    k: int
    seed: int
    folds: Tuple[Tuple[GroupKey, ...], ...]

    def fold_of(self) -> Dict[GroupKey, int]:
        return {key: index for index, fold in enumerate(self.folds) for key in fold}

    @property
    def fold_sizes(self) -> List[int]:
        return [len(fold) for fold in self.folds]


@dataclass(frozen=True)
class Partition:
    t: int
    v: int
    train: FrozenSet[str]
    val: FrozenSet[str]
    test: FrozenSet[str]

    def to_dict(self, order: Optional[Sequence[str]] = None) -> Dict:
        """JSON form; trial ids follow `order` (metadata order) when given."""
        def ordered(ids: FrozenSet[str]) -> List[str]:
            return [tid for tid in order if tid in ids] if order is not None else sorted(ids)
        return {'t': self.t, 'v': self.v, 'train': ordered(self.train),
                'val': ordered(self.val), 'test': ordered(self.test)}


def collect_keys(dataset: Dataset, strategy: str) -> List[GroupKey]:
    """Distinct keys in order of first appearance in the metadata."""
    keys: Dict[GroupKey, None] = {}
    for trial in dataset:
        keys.setdefault(group_key(strategy, trial), None)
    return list(keys)


def make_fold_plan(dataset: Dataset, strategy: str, k: int, seed: int) -> FoldPlan:
    """
    Deal the dataset's grouping keys into `k` folds.

    Keys are shuffled with a seeded generator and assigned round-robin, so fold
    sizes (in keys, not trials) differ by at most one.
    """
    strategy = normalize_strategy(strategy)
    if k < MIN_FOLDS:
        raise NeedThreeFolds(f"K must be >= {MIN_FOLDS} so train, validation and test are all non-empty (got {k})")
    dataset.require_non_empty()

    keys = collect_keys(dataset, strategy)
    if len(keys) < k:
        raise InsufficientKeys(f"{strategy.upper()} on '{dataset.name}' yields {len(keys)} distinct keys, "
                               f"fewer than K={k}")

    order = np.random.default_rng(seed).permutation(len(keys))
    shuffled = [keys[i] for i in order]
    folds = tuple(tuple(shuffled[i::k]) for i in range(k))

    logger.info(f"{strategy.upper()} fold plan: {len(keys)} keys into {k} folds (sizes {[len(f) for f in folds]}, seed {seed})")
    return FoldPlan(strategy=strategy, k=k, seed=seed, folds=folds)


def enumerate_partitions(plan: FoldPlan, dataset: Dataset, val_per_test: Optional[int] = None) -> List[Partition]:
    """
    Every ordered (t, v) fold choice with v != t as a concrete trial split.

    Args:
        plan: Fold plan built from `dataset`
        dataset: Trials to route
        val_per_test: Limit validation folds per test fold (v = t+1, t+2, ... mod K)

    Returns:
        K*(K-1) partitions (K*val_per_test when limited), ordered by (t, v)
    """
    fold_of = plan.fold_of()
    trial_fold: Dict[str, int] = {}
    for trial in dataset:
        key = group_key(plan.strategy, trial)
        if key not in fold_of:
            raise PlanMismatch(f"Key {key.tag}:{key.value} of trial {trial.trial_id} is absent from every fold")
        trial_fold[trial.trial_id] = fold_of[key]

    if val_per_test is not None and not 1 <= val_per_test <= plan.k - 1:
        raise ConfigError(f"val_per_test must be within [1, {plan.k - 1}], got {val_per_test}")
    offsets = range(1, (val_per_test or plan.k - 1) + 1)

    partitions = []
    for t in range(plan.k):
        for v in sorted((t + offset) % plan.k for offset in offsets):
            test = frozenset(tid for tid, f in trial_fold.items() if f == t)
            val = frozenset(tid for tid, f in trial_fold.items() if f == v)
            train = frozenset(tid for tid, f in trial_fold.items() if f not in (t, v))
            partitions.append(Partition(t=t, v=v, train=train, val=val, test=test))

    logger.debug(f"Enumerated {len(partitions)} partitions from a {plan.k}-fold {plan.strategy.upper()} plan")
    return partitions


# Audit

@dataclass(frozen=True)
class Violation:
    test_trial: str
    leaking_trial: str
    leaked_key: str
    split: str
    kind: str

    def to_dict(self) -> Dict:
        return {'test_trial': self.test_trial, 'leaking_trial': self.leaking_trial,
                'leaked_key': self.leaked_key, 'split': self.split, 'kind': self.kind}


@dataclass
class AuditReport:
    strategy: str
    t: int
    v: int
    violations: List[Violation] = field(default_factory=list)
    split_sizes: Dict[str, int] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> Dict:
        return {'strategy': self.strategy, 't': self.t, 'v': self.v, 'passed': self.passed,
                'split_sizes': self.split_sizes,
                'violations': [violation.to_dict() for violation in self.violations]}


def audit_partition(partition: Partition, dataset: Dataset, strategy: str) -> AuditReport:
    """
    Check a partition for leakage under `strategy`.

    LOTO requires disjoint trial sets. LOPEO additionally forbids a test
    trial's stimulus pair in any train/val trial; LOEO forbids the test
    trial's attended stimulus as the attended stimulus of any train/val trial.
    Each violation names (test_trial, leaking_trial, leaked_key).
    """
    strategy = normalize_strategy(strategy)
    index = dataset.index()
    for tid in partition.train | partition.val | partition.test:
        if tid not in index:
            raise UnknownTrial(f"Partition (t={partition.t}, v={partition.v}) references unknown trial {tid!r}")

    report = AuditReport(strategy=strategy, t=partition.t, v=partition.v, split_sizes={
        'train': len(partition.train), 'val': len(partition.val), 'test': len(partition.test)})

    # disjointness, shared by all strategies
    for held, held_name in ((partition.test, 'test'), (partition.val, 'val')):
        others = (('train', partition.train),) if held_name == 'val' else (
            ('train', partition.train), ('val', partition.val))
        for split, ids in others:
            for tid in sorted(held & ids):
                report.violations.append(Violation(tid, tid, f"trial:{tid}", split, 'overlap'))

    if strategy == LOTO:
        return report

    keys = {tid: group_key(strategy, index[tid]) for tid in partition.test | partition.train | partition.val}
    for split, ids in (('train', partition.train), ('val', partition.val)):
        holders: Dict[GroupKey, List[str]] = {}
        for other_tid in sorted(ids):
            holders.setdefault(keys[other_tid], []).append(other_tid)
        for test_tid in sorted(partition.test):
            leaked = keys[test_tid]
            for other_tid in holders.get(leaked, []):
                if other_tid != test_tid:
                    report.violations.append(Violation(
                        test_tid, other_tid, f"{leaked.tag}:{leaked.value}", split, leaked.tag))

    return report


# folds.json

@dataclass
class FoldManifest:
    plan: FoldPlan
    partitions: List[Partition]

    def to_dict(self, dataset: Optional[Dataset] = None) -> Dict:
        order = dataset.trial_ids if dataset is not None else None
        return {
            'schema_version': FOLDS_SCHEMA_VERSION,
            'strategy': self.plan.strategy,
            'k': self.plan.k,
            'seed': self.plan.seed,
            'folds': [[key.value for key in fold] for fold in self.plan.folds],
            'partitions': [p.to_dict(order) for p in self.partitions],
        }


def build_fold_manifest(dataset: Dataset, strategy: str, k: int, seed: int,
                        val_per_test: Optional[int] = None) -> FoldManifest:
    plan = make_fold_plan(dataset, strategy, k, seed)
    return FoldManifest(plan=plan, partitions=enumerate_partitions(plan, dataset, val_per_test))


def save_fold_manifest(manifest: FoldManifest, path: Union[str, Path], dataset: Optional[Dataset] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest.to_dict(dataset), indent=2) + "\n", encoding='utf-8')
    logger.info(f"Wrote {len(manifest.partitions)} partitions to {path}")
    return path


def check_fold_manifest(manifest: FoldManifest, dataset: Dataset) -> None:
    """
    Re-derive every stored partition from the manifest's plan and compare.

    Raises PlanMismatch when the plan leaves a dataset trial uncovered, a
    partition names a trial the dataset lacks, or a stored split differs from
    the one its (t, v) fold choice yields.
    """
    plan = manifest.plan
    if len(plan.folds) != plan.k:
        raise PlanMismatch(f"Manifest declares K={plan.k} but stores {len(plan.folds)} folds")
    seen: Dict[GroupKey, int] = {}
    for index, fold in enumerate(plan.folds):
        for key in fold:
            if key in seen:
                raise PlanMismatch(f"Key {key.value} appears in folds {seen[key]} and {index}")
            seen[key] = index

    known = set(dataset.trial_ids)
    derived = {(p.t, p.v): p for p in enumerate_partitions(plan, dataset)}
    for stored in manifest.partitions:
        unknown = sorted((stored.train | stored.val | stored.test) - known)
        if unknown:
            raise PlanMismatch(f"Partition (t={stored.t}, v={stored.v}) names trials absent from "
                               f"'{dataset.name}': {unknown[:5]}")
        expected = derived.get((stored.t, stored.v))
        if expected is None:
            raise PlanMismatch(f"Partition (t={stored.t}, v={stored.v}) is not a fold choice of a K={plan.k} plan")
        for split in ('train', 'val', 'test'):
            if getattr(stored, split) != getattr(expected, split):
                raise PlanMismatch(f"Partition (t={stored.t}, v={stored.v}): stored {split} split differs "
                                   f"from the one its folds yield")

    unused = set(plan.fold_of()) - set(collect_keys(dataset, plan.strategy))
    if unused:
        logger.warning(f"{len(unused)} fold keys match no trial of '{dataset.name}'")


def load_fold_manifest(path: Union[str, Path], dataset: Optional[Dataset] = None) -> FoldManifest:
    """Read folds.json; with `dataset`, the stored partitions are checked against the plan."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except (OSError, json.JSONDecodeError) as e:
        raise MalformedRow(f"Cannot read fold manifest: {e}", source=str(path)) from e

    version = data.get('schema_version', FOLDS_SCHEMA_VERSION)
    if version != FOLDS_SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"{path}: fold manifest schema {version}, expected {FOLDS_SCHEMA_VERSION}")

    try:
        strategy = normalize_strategy(data['strategy'])
        tag = KEY_TAGS[strategy]
        plan = FoldPlan(
            strategy=strategy,
            k=int(data['k']),
            seed=int(data['seed']),
            folds=tuple(tuple(GroupKey(tag, str(value)) for value in fold) for fold in data['folds']),
        )
        partitions = [
            Partition(t=int(p['t']), v=int(p['v']), train=frozenset(p['train']),
                      val=frozenset(p['val']), test=frozenset(p['test']))
            for p in data['partitions']
        ]
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedRow(f"Malformed fold manifest: {e}", source=str(path)) from e

    manifest = FoldManifest(plan=plan, partitions=partitions)
    if dataset is not None:
        check_fold_manifest(manifest, dataset)
    return manifest


def audit_fold_manifest(manifest: FoldManifest, dataset: Dataset, strategy: Optional[str] = None) -> List[AuditReport]:
    """Audit every partition of a manifest (under its own strategy by default)."""
    strategy = normalize_strategy(strategy or manifest.plan.strategy)
    reports = [audit_partition(p, dataset, strategy) for p in manifest.partitions]
    leaks = sum(len(r.violations) for r in reports)
    if leaks:
        logger.warning(f"{strategy.upper()} audit: {leaks} violations across "
                       f"{sum(not r.passed for r in reports)}/{len(reports)} partitions")
    else:
        logger.info(f"{strategy.upper()} audit: all {len(reports)} partitions clean")
    return reports
