"""Grouping keys, fold plans, partition enumeration and leakage audits."""

import json
from collections import Counter

import numpy as np
import pytest

from src.analysis.partition import (
    LOEO,
    LOPEO,
    LOTO,
    GroupKey,
    Partition,
    audit_fold_manifest,
    audit_partition,
    build_fold_manifest,
    enumerate_partitions,
    group_key,
    load_fold_manifest,
    make_fold_plan,
    save_fold_manifest,
)
from src.core.errors import (
    ConfigError,
    InsufficientKeys,
    NeedThreeFolds,
    PairUndefined,
    PlanMismatch,
    UnknownTrial,
)

from conftest import make_dataset, paired_dataset, trial


def random_two_speaker_dataset(rng):
    n_stimuli = int(rng.integers(4, 9))
    n_trials = int(rng.integers(12, 30))
    rows = []
    for i in range(n_trials):
        a, b = rng.choice(n_stimuli, size=2, replace=False)
        rows.append((f"T{i}", f"S{a}", f"S{b}"))
    return make_dataset(rows, "random")


class TestGroupKey:
    def test_loto(self):
        assert group_key(LOTO, trial("t7", "A", "B")) == GroupKey("trial", "t7")

    def test_lopeo_is_order_insensitive(self):
        assert group_key(LOPEO, trial("T1", "A", "B")) == group_key(LOPEO, trial("T2", "B", "A"))
        assert group_key(LOPEO, trial("T1", "B", "A")).value == "A|B"

    def test_loeo(self):
        assert group_key(LOEO, trial("T1", "A", ("B", "C"))) == GroupKey("attended", "A")

    def test_lopeo_needs_two_speakers(self):
        with pytest.raises(PairUndefined):
            group_key(LOPEO, trial("T1", "A", ("B", "C")))

    def test_unknown_strategy(self):
        with pytest.raises(ConfigError):
            group_key("lofo", trial("T1", "A", "B"))

    def test_strategy_is_case_insensitive(self):
        assert group_key("LOPEO", trial("T1", "A", "B")).tag == "pair"


class TestFoldPlan:
    def test_round_robin_sizes(self):
        plan = make_fold_plan(paired_dataset(n_pairs=6, repeats=2), LOPEO, 3, seed=0)
        assert plan.fold_sizes == [2, 2, 2]

    def test_sizes_differ_by_at_most_one(self):
        plan = make_fold_plan(paired_dataset(n_pairs=7, repeats=2), LOTO, 4, seed=0)
        assert max(plan.fold_sizes) - min(plan.fold_sizes) <= 1
        assert sum(plan.fold_sizes) == 14

    def test_folds_cover_every_key_once(self):
        dataset = paired_dataset(n_pairs=5, repeats=2)
        plan = make_fold_plan(dataset, LOPEO, 3, seed=4)
        keys = [key for fold in plan.folds for key in fold]
        assert len(keys) == len(set(keys)) == 5

    def test_single_pair_is_insufficient(self):
        with pytest.raises(InsufficientKeys):
            make_fold_plan(paired_dataset(n_pairs=1, repeats=6), LOPEO, 3, seed=0)

    def test_needs_three_folds(self):
        with pytest.raises(NeedThreeFolds):
            make_fold_plan(paired_dataset(), LOTO, 2, seed=0)

    def test_deterministic(self):
        dataset = paired_dataset(n_pairs=6)
        assert make_fold_plan(dataset, LOPEO, 3, seed=11) == make_fold_plan(dataset, LOPEO, 3, seed=11)


class TestEnumeratePartitions:
    def test_count_k3(self):
        dataset = paired_dataset(n_pairs=6)
        assert len(enumerate_partitions(make_fold_plan(dataset, LOPEO, 3, 0), dataset)) == 6

    def test_k4_test_fold_coverage(self):
        dataset = paired_dataset(n_pairs=8)
        partitions = enumerate_partitions(make_fold_plan(dataset, LOPEO, 4, 0), dataset)
        assert len(partitions) == 12
        assert Counter(p.t for p in partitions) == {0: 3, 1: 3, 2: 3, 3: 3}
        assert all(p.v != p.t for p in partitions)

    def test_each_trial_tested_k_minus_one_times(self):
        dataset = paired_dataset(n_pairs=8)
        partitions = enumerate_partitions(make_fold_plan(dataset, LOTO, 4, 0), dataset)
        tested = Counter(tid for p in partitions for tid in p.test)
        assert set(tested.values()) == {3}
        assert set(tested) == set(dataset.trial_ids)

    def test_splits_are_disjoint_and_cover(self):
        dataset = paired_dataset(n_pairs=6)
        for p in enumerate_partitions(make_fold_plan(dataset, LOPEO, 3, 2), dataset):
            assert not (p.train & p.val or p.train & p.test or p.val & p.test)
            assert p.train | p.val | p.test == set(dataset.trial_ids)

    def test_val_per_test_limits_partitions(self):
        dataset = paired_dataset(n_pairs=8)
        partitions = enumerate_partitions(make_fold_plan(dataset, LOTO, 4, 0), dataset, val_per_test=1)
        assert [(p.t, p.v) for p in partitions] == [(0, 1), (1, 2), (2, 3), (3, 0)]

    def test_plan_mismatch(self):
        dataset = paired_dataset(n_pairs=4)
        plan = make_fold_plan(dataset, LOPEO, 3, 0)
        other = make_dataset([("T999", "X", "Y")])
        with pytest.raises(PlanMismatch):
            enumerate_partitions(plan, other)


class TestAudit:
    def test_lopeo_partitions_pass_lopeo_and_loto(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            dataset = random_two_speaker_dataset(rng)
            n_pairs = len({group_key(LOPEO, t) for t in dataset})
            for k in (3, 4, 5):
                if n_pairs < k:
                    continue
                plan = make_fold_plan(dataset, LOPEO, k, int(rng.integers(1000)))
                for p in enumerate_partitions(plan, dataset):
                    assert audit_partition(p, dataset, LOPEO).passed
                    assert audit_partition(p, dataset, LOTO).passed

    def test_swapped_roles_leak_under_lopeo_only(self):
        dataset = make_dataset([("T1", "A", "B"), ("T2", "B", "A"), ("T3", "C", "D")])
        p = Partition(t=0, v=1, train=frozenset({"T2"}), val=frozenset({"T3"}), test=frozenset({"T1"}))
        assert audit_partition(p, dataset, LOTO).passed
        report = audit_partition(p, dataset, LOPEO)
        assert not report.passed
        (violation,) = report.violations
        assert (violation.test_trial, violation.leaking_trial, violation.leaked_key) == ("T1", "T2", "pair:A|B")

    def test_shared_trial_fails_both(self):
        dataset = make_dataset([("T1", "A", "B"), ("T2", "C", "D"), ("T3", "E", "F")])
        p = Partition(t=0, v=1, train=frozenset({"T1", "T3"}), val=frozenset({"T2"}), test=frozenset({"T1"}))
        assert len(audit_partition(p, dataset, LOTO).violations) == 1
        assert len(audit_partition(p, dataset, LOPEO).violations) == 1

    def test_loeo_is_weaker_than_lopeo(self):
        # T2 shares T1's pair but attends the other stimulus
        dataset = make_dataset([("T1", "A", "B"), ("T2", "B", "A"), ("T3", "C", "D")])
        p = Partition(t=0, v=1, train=frozenset({"T2"}), val=frozenset({"T3"}), test=frozenset({"T1"}))
        assert audit_partition(p, dataset, LOEO).passed
        assert not audit_partition(p, dataset, LOPEO).passed

    def test_loeo_partitions_pass_loeo_audit(self):
        dataset = make_dataset([(f"T{i}", f"S{i % 5}", (f"S{(i + 1) % 5}", f"S{(i + 2) % 5}")) for i in range(15)])
        plan = make_fold_plan(dataset, LOEO, 3, 1)
        assert all(audit_partition(p, dataset, LOEO).passed for p in enumerate_partitions(plan, dataset))

    def test_unknown_trial(self):
        dataset = make_dataset([("T1", "A", "B")])
        p = Partition(t=0, v=1, train=frozenset({"T9"}), val=frozenset(), test=frozenset({"T1"}))
        with pytest.raises(UnknownTrial):
            audit_partition(p, dataset, LOTO)


class TestFoldManifest:
    def test_save_load_and_audit(self, tmp_path):
        dataset = paired_dataset(n_pairs=6)
        manifest = build_fold_manifest(dataset, LOPEO, 3, seed=9)
        path = save_fold_manifest(manifest, tmp_path / "folds.json", dataset)
        loaded = load_fold_manifest(path)
        assert loaded.plan == manifest.plan
        assert loaded.partitions == manifest.partitions
        assert all(r.passed for r in audit_fold_manifest(loaded, dataset))

    def test_load_with_dataset_rederives_partitions(self, tmp_path):
        dataset = paired_dataset(n_pairs=6)
        manifest = build_fold_manifest(dataset, LOPEO, 3, seed=9, val_per_test=1)
        path = save_fold_manifest(manifest, tmp_path / "folds.json", dataset)
        assert load_fold_manifest(path, dataset).partitions == manifest.partitions

    @staticmethod
    def edited_manifest(tmp_path, edit):
        dataset = paired_dataset(n_pairs=6)
        path = save_fold_manifest(build_fold_manifest(dataset, LOTO, 3, seed=2), tmp_path / "folds.json", dataset)
        document = json.loads(path.read_text(encoding="utf-8"))
        edit(document)
        path.write_text(json.dumps(document), encoding="utf-8")
        return path, dataset

    def test_uncovered_trial(self, tmp_path):
        path, dataset = self.edited_manifest(tmp_path, lambda d: d['folds'][0].pop())
        with pytest.raises(PlanMismatch):
            load_fold_manifest(path, dataset)

    def test_unknown_trial_in_partition(self, tmp_path):
        path, dataset = self.edited_manifest(tmp_path, lambda d: d['partitions'][0]['train'].append("T999"))
        with pytest.raises(PlanMismatch):
            load_fold_manifest(path, dataset)

    def test_edited_split(self, tmp_path):
        def move(document):
            first = document['partitions'][0]
            first['train'].append(first['test'].pop())
        path, dataset = self.edited_manifest(tmp_path, move)
        with pytest.raises(PlanMismatch):
            load_fold_manifest(path, dataset)
        # without a dataset the stored splits are kept for auditing
        assert load_fold_manifest(path).partitions[0].test != build_fold_manifest(dataset, LOTO, 3, 2).partitions[0].test

    def test_fold_choice_outside_plan(self, tmp_path):
        def retarget(document):
            document['partitions'][0]['v'] = document['partitions'][0]['t']
        path, dataset = self.edited_manifest(tmp_path, retarget)
        with pytest.raises(PlanMismatch):
            load_fold_manifest(path, dataset)

    def test_key_in_two_folds(self, tmp_path):
        path, dataset = self.edited_manifest(tmp_path, lambda d: d['folds'][1].append(d['folds'][0][0]))
        with pytest.raises(PlanMismatch):
            load_fold_manifest(path, dataset)

    def test_byte_identical_for_same_seed(self, tmp_path):
        dataset = paired_dataset(n_pairs=6)
        a = save_fold_manifest(build_fold_manifest(dataset, LOTO, 4, 3), tmp_path / "a.json", dataset)
        b = save_fold_manifest(build_fold_manifest(dataset, LOTO, 4, 3), tmp_path / "b.json", dataset)
        assert a.read_bytes() == b.read_bytes()

    def test_loto_manifest_leaks_under_lopeo(self, tmp_path):
        dataset = paired_dataset(n_pairs=3, repeats=4)
        manifest = build_fold_manifest(dataset, LOTO, 4, seed=0)
        reports = audit_fold_manifest(manifest, dataset, LOPEO)
        assert any(not r.passed for r in reports)
