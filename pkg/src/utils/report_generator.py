"""
Results report generator for aad-evalkit.
Merges results files into a decoding-performance table rendered as JSON, CSV
or a markdown table, and renders the `balance describe` dataset row.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import pandas as pd
from jinja2 import Environment, FileSystemLoader

from ..analysis.balance import DatasetSummary
from ..analysis.partition import STRATEGIES
from ..core.errors import InconsistentResults
from .data_processor import RESULTS_SCHEMA_VERSION, TOLERANCE, ResultsRow, rows_frame, verify_results

logger = logging.getLogger(__name__)

FORMATS = ('json', 'csv', 'md')
TABLE_COLUMNS = ['strategy', 'dataset', 'chance_level', 'balance_index', 'loss',
                 'acc_mean', 'acc_std', 'rho_a_mean', 'rho_a_std', 'rho_u_mean', 'rho_u_std',
                 'delta_rho_mean', 'delta_rho_std']
FOOTNOTE = "Values are mean ± sample standard deviation across partitions."


def _mean_std(mean: float, std: Optional[float]) -> str:
    return f"{mean:.4f}" if std is None else f"{mean:.4f}±{std:.4f}"


def template_environment() -> Environment:
    template_dir = Path(__file__).parent.parent / "templates"
    env = Environment(loader=FileSystemLoader(str(template_dir)), keep_trailing_newline=True)
    env.filters['mean_std'] = _mean_std
    return env


def render_dataset_summary(summary: DatasetSummary, fmt: str = 'json') -> str:
    """Render one `balance describe` row as JSON, CSV or a markdown table."""
    document = summary.to_dict()
    if fmt == 'json':
        return json.dumps(document, indent=2, sort_keys=True) + "\n"
    if fmt == 'csv':
        frame = pd.DataFrame([document]).drop(columns=['schema_version'])
        frame['speaker_counts'] = frame['speaker_counts'].map(lambda c: "/".join(map(str, c)))
        return frame.to_csv(index=False, lineterminator='\n')
    if fmt in ('md', 'markdown'):
        return template_environment().get_template("dataset_summary.md.j2").render(summary=summary)
    raise ValueError(f"Unknown summary format {fmt!r}; expected one of {FORMATS}")


def load_results(path: Union[str, Path]) -> Dict[str, Any]:
    """Read and verify one results file."""
    path = Path(path)
    try:
        results = json.loads(path.read_text(encoding='utf-8'))
    except (OSError, json.JSONDecodeError) as e:
        raise InconsistentResults(f"Cannot read results file {path}: {e}") from e
    verify_results(results)
    return results


class ResultsReportGenerator:
    """
    Build the decoding-performance table from one or more results documents.
    """

    def __init__(self, results: Sequence[Dict[str, Any]]):
        if not results:
            raise InconsistentResults("At least one results file is needed for a report")
        self.results = list(results)

        self.jinja_env = template_environment()

    @classmethod
    def from_files(cls, paths: Sequence[Union[str, Path]]) -> "ResultsReportGenerator":
        return cls([load_results(path) for path in paths])

    def rows(self) -> List[ResultsRow]:
        """All rows, delta_rho re-checked, sorted by strategy then balance index."""
        rows = []
        for results in self.results:
            for values in results['rows']:
                row = ResultsRow.from_dict(values)
                recomputed = row.rho_a_mean - row.rho_u_mean
                if abs(recomputed - row.delta_rho_mean) > TOLERANCE:
                    raise InconsistentResults(
                        f"Row {row.strategy}/{row.dataset}: delta_rho {row.delta_rho_mean} != {recomputed}")
                rows.append(row)

        def order(row: ResultsRow):
            strategy = STRATEGIES.index(row.strategy) if row.strategy in STRATEGIES else len(STRATEGIES)
            return strategy, row.strategy, row.balance_index, row.dataset, row.loss

        return sorted(rows, key=order)

    def to_json(self) -> str:
        document = {'schema_version': RESULTS_SCHEMA_VERSION, 'rows': [row.to_dict() for row in self.rows()]}
        return json.dumps(document, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        return rows_frame(self.rows())[TABLE_COLUMNS].to_csv(index=False, lineterminator='\n')

    def to_markdown(self) -> str:
        template = self.jinja_env.get_template("results_table.md.j2")
        return template.render(rows=self.rows(), footnote=FOOTNOTE)

    def render(self, fmt: str = 'json') -> str:
        if fmt == 'json':
            return self.to_json()
        if fmt == 'csv':
            return self.to_csv()
        if fmt in ('md', 'markdown'):
            return self.to_markdown()
        raise ValueError(f"Unknown report format {fmt!r}; expected one of {FORMATS}")


def summarize_results(paths: Sequence[Union[str, Path]], fmt: str = 'json') -> str:
    """
    Merge results files into one decoding-performance table.

    Args:
        paths: Results files written by run_experiment
        fmt: 'json', 'csv' or 'md'

    Returns:
        The rendered report
    """
    generator = ResultsReportGenerator.from_files(paths)
    report = generator.render(fmt)
    logger.info(f"Summarized {len(paths)} results files into {len(generator.rows())} rows ({fmt})")
    return report
