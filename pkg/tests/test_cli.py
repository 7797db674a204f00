"""Command-line surface: output documents and exit codes."""

import json

import pytest

from src.cli import main
from src.core.dataset import serialize_trial_metadata
from src.core.experiment import ExperimentResults
from src.utils.data_processor import PartitionResult, ResultsProcessor

from conftest import paired_dataset


@pytest.fixture(autouse=True)
def single_worker(monkeypatch):
    monkeypatch.setenv("AAD_EVALKIT_JOBS", "1")
    monkeypatch.setenv("AAD_EVALKIT_LOG_LEVEL", "WARNING")


@pytest.fixture
def pairs_csv(tmp_path):
    return serialize_trial_metadata(paired_dataset(n_pairs=6, repeats=4), tmp_path / "pairs.csv")


def stdout_json(capsys):
    return json.loads(capsys.readouterr().out)


def write_results(path, values, shift=0.0):
    parts = [PartitionResult(i // 2, i % 2, acc + shift, acc / 2 + shift, 0.1, acc / 2 + shift - 0.1, 10)
             for i, acc in enumerate(values)]
    processor = ResultsProcessor(parts)
    row = processor.aggregate("lopeo", "demo", 0.5, 0.0, "least-squares", "ridge")
    return ExperimentResults([row], processor.partitions).save(path)


class TestBalanceCommands:
    def test_compute(self, metadata_csv, capsys):
        assert main(["balance", "compute", "--metadata", str(metadata_csv), "--per-subject"]) == 0
        document = stdout_json(capsys)
        assert document['n_audio'] == 3
        assert 0.0 <= document['balance_index'] <= 1.0
        assert document['counts']['A'] == {'attended': 2, 'unattended': 1}
        assert set(document['per_subject']) == {"sub01", "sub02"}

    def test_subset_writes_metadata(self, pairs_csv, tmp_path, capsys):
        out = tmp_path / "exclusive.csv"
        code = main(["balance", "subset", "--metadata", str(pairs_csv), "--target", "exclusive", "--out", str(out)])
        assert code == 0
        document = stdout_json(capsys)
        assert document['balance_index'] == 1.0
        assert len(document['kept']) + len(document['dropped']) == 24
        assert out.exists()

    def test_describe_csv(self, pairs_csv, capsys):
        assert main(["balance", "describe", "--metadata", str(pairs_csv), "--format", "csv"]) == 0
        header, row = capsys.readouterr().out.splitlines()
        assert header.startswith("name,subjects,trials")
        assert ",24," in row

    def test_describe_markdown(self, pairs_csv, tmp_path):
        out = tmp_path / "summary.md"
        assert main(["balance", "describe", "--metadata", str(pairs_csv), "--format", "md", "--out", str(out)]) == 0
        lines = out.read_text(encoding="utf-8").splitlines()
        assert lines[0].startswith("| Dataset |")
        assert "| 24 | 12 | 2 | 0.5000 | 0.0000 | 6 | 0.2500 |" in lines[2]

    def test_validate_missing_signals(self, metadata_csv, tmp_path, capsys):
        code = main(["--data-dir", str(tmp_path), "balance", "validate", "--metadata", str(metadata_csv), "--signals"])
        assert code == 2
        assert stdout_json(capsys)['ok'] is False

    def test_malformed_metadata(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("trial_id,subject_id,attended_stimulus,unattended_stimuli\nT1,sub01,A,A\n", encoding="utf-8")
        assert main(["balance", "compute", "--metadata", str(path)]) == 2


class TestSplitAndAudit:
    def test_lopeo_split_passes_audit(self, pairs_csv, tmp_path, capsys):
        folds = tmp_path / "folds.json"
        assert main(["split", "--metadata", str(pairs_csv), "--strategy", "lopeo", "--k", "3",
                     "--out", str(folds)]) == 0
        assert main(["audit", "--metadata", str(pairs_csv), "--folds", str(folds)]) == 0
        document = stdout_json(capsys)
        assert document['passed'] is True
        assert len(document['partitions']) == 6

    def test_loto_split_leaks_under_lopeo(self, pairs_csv, tmp_path, capsys):
        folds = tmp_path / "folds.json"
        main(["split", "--metadata", str(pairs_csv), "--strategy", "loto", "--k", "4", "--out", str(folds)])
        code = main(["audit", "--metadata", str(pairs_csv), "--folds", str(folds), "--strategy", "lopeo"])
        assert code == 3
        assert stdout_json(capsys)['passed'] is False

    def test_audit_rejects_edited_manifest(self, pairs_csv, tmp_path):
        folds = tmp_path / "folds.json"
        main(["split", "--metadata", str(pairs_csv), "--strategy", "lopeo", "--k", "3", "--out", str(folds)])
        document = json.loads(folds.read_text(encoding="utf-8"))
        first = document['partitions'][0]
        first['val'].append(first['test'].pop())
        folds.write_text(json.dumps(document), encoding="utf-8")
        assert main(["audit", "--metadata", str(pairs_csv), "--folds", str(folds)]) == 2

    def test_split_to_stdout_is_seeded(self, pairs_csv, capsys):
        main(["--seed", "5", "split", "--metadata", str(pairs_csv), "--strategy", "loto", "--k", "4"])
        first = capsys.readouterr().out
        main(["split", "--metadata", str(pairs_csv), "--strategy", "loto", "--k", "4", "--seed", "5"])
        assert capsys.readouterr().out == first
        assert json.loads(first)['seed'] == 5

    def test_too_few_folds(self, pairs_csv):
        assert main(["split", "--metadata", str(pairs_csv), "--strategy", "loto", "--k", "2"]) == 2

    def test_unknown_strategy_is_a_usage_error(self, pairs_csv):
        with pytest.raises(SystemExit) as excinfo:
            main(["split", "--metadata", str(pairs_csv), "--strategy", "lofo", "--k", "3"])
        assert excinfo.value.code == 2


class TestStatsAndReport:
    def test_stats(self, tmp_path, capsys):
        values = [0.6, 0.62, 0.65, 0.7, 0.58, 0.61]
        a = write_results(tmp_path / "a.json", values, 0.05)
        b = write_results(tmp_path / "b.json", values)
        assert main(["stats", "--results-a", str(a), "--results-b", str(b), "--m", "2"]) == 0
        document = stdout_json(capsys)
        assert document['pairs'] == 6
        assert document['metrics']['acc']['p_value'] == pytest.approx(2 / 64)
        assert document['metrics']['acc']['p_adjusted'] == pytest.approx(4 / 64)

    def test_stats_mismatched_plans(self, tmp_path):
        a = write_results(tmp_path / "a.json", [0.6, 0.62, 0.65, 0.7, 0.58, 0.61])
        b = write_results(tmp_path / "b.json", [0.6, 0.62, 0.65, 0.7])
        assert main(["stats", "--results-a", str(a), "--results-b", str(b)]) == 2

    def test_report_markdown(self, tmp_path, capsys):
        path = write_results(tmp_path / "a.json", [0.6, 0.8])
        assert main(["report", str(path), "--format", "md"]) == 0
        assert "| LOPEO | demo |" in capsys.readouterr().out

    def test_report_rejects_tampered_file(self, tmp_path):
        path = write_results(tmp_path / "a.json", [0.6, 0.8])
        document = json.loads(path.read_text(encoding="utf-8"))
        document['rows'][0]['acc_mean'] = 0.99
        path.write_text(json.dumps(document), encoding="utf-8")
        assert main(["report", str(path)]) == 2


@pytest.mark.slow
class TestEndToEnd:
    def test_synth_train_report(self, tmp_path, capsys):
        config = tmp_path / "scenario.json"
        config.write_text(json.dumps({"n_pairs": 4, "repeats_per_pair": 4, "channels": 4,
                                      "trial_seconds": 30.0, "seed": 3}), encoding="utf-8")
        data = tmp_path / "data"
        assert main(["synth", "--config", str(config), "--out", str(data), "--sigma", "2.0",
                     "--design", "exclusive"]) == 0
        manifest = stdout_json(capsys)
        assert manifest['balance_index'] == 1.0
        assert manifest['config']['noise_sigma'] == 2.0

        results = tmp_path / "results.json"
        assert main(["--data-dir", str(data), "train", "--metadata", str(data / "trials.csv"),
                     "--strategy", "lopeo", "--k", "3", "--val-per-test", "1", "--out", str(results)]) == 0
        document = json.loads(results.read_text(encoding="utf-8"))
        assert document['rows'][0]['strategy'] == "lopeo"
        assert len(document['per_partition']) == 3

        capsys.readouterr()
        assert main(["report", str(results), "--format", "csv"]) == 0
        assert capsys.readouterr().out.splitlines()[1].startswith("lopeo,synthetic-exclusive,")
