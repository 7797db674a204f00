"""
Results processing for aad-evalkit.
Aggregates per-partition decoding scores into fold-averaged result rows and
checks stored results files for internal consistency.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Mapping, Optional, Sequence

import pandas as pd

from ..core.errors import InconsistentResults, SchemaVersionMismatch

logger = logging.getLogger(__name__)

RESULTS_SCHEMA_VERSION = 1
METRICS = ('acc', 'rho_a', 'rho_u', 'delta_rho')
TOLERANCE = 1e-9


@dataclass(frozen=True)
class PartitionResult:
    """Scores of one (t, v) partition, pooled over its test windows."""

    t: int
    v: int
    acc: float
    rho_a: float
    rho_u: float
    delta_rho: float
    n_windows: int
    skipped_windows: int = 0
    details: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        values['details'] = dict(self.details)
        return values


@dataclass(frozen=True)
class ResultsRow:
    """One table row: mean and sample std (ddof=1) of each metric across partitions."""

    strategy: str
    dataset: str
    chance_level: float
    balance_index: float
    loss: str
    decoder: str
    n_partitions: int
    acc_mean: float
    acc_std: Optional[float]
    rho_a_mean: float
    rho_a_std: Optional[float]
    rho_u_mean: float
    rho_u_std: Optional[float]
    delta_rho_mean: float
    delta_rho_std: Optional[float]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> "ResultsRow":
        return cls(**{name: values[name] for name in cls.__dataclass_fields__})


class ResultsProcessor:
    """
    Aggregates partition results of one experiment.
    Keeps them in a pandas DataFrame ordered by (t, v).
    """

    def __init__(self, partitions: Sequence[PartitionResult]):
        self.partitions = sorted(partitions, key=lambda p: (p.t, p.v))
        self.frame = pd.DataFrame(
            [{'t': p.t, 'v': p.v, **{m: getattr(p, m) for m in METRICS}} for p in self.partitions],
            columns=['t', 'v', *METRICS],
        )

    def summary(self) -> Dict[str, Dict[str, Optional[float]]]:
        """metric -> {'mean', 'std'}; std is None below two partitions."""
        summary = {}
        for metric in METRICS:
            values = self.frame[metric].astype(float)
            std = float(values.std(ddof=1)) if len(values) > 1 else None
            summary[metric] = {'mean': float(values.mean()), 'std': std}
        return summary

    def aggregate(self, strategy: str, dataset: str, chance_level: float, balance_index: float,
                  loss: str, decoder: str) -> ResultsRow:
        if not self.partitions:
            raise InconsistentResults("No partition results to aggregate")
        summary = self.summary()
        row = ResultsRow(
            strategy=strategy, dataset=dataset, chance_level=chance_level, balance_index=balance_index,
            loss=loss, decoder=decoder, n_partitions=len(self.partitions),
            **{f"{m}_{stat}": summary[m][stat] for m in METRICS for stat in ('mean', 'std')},
        )
        logger.info(f"{strategy.upper()} on '{dataset}': acc {row.acc_mean:.4f} over {row.n_partitions} partitions")
        return row


def _close(a: Optional[float], b: Optional[float], tolerance: float = TOLERANCE) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return abs(a - b) <= tolerance * max(1.0, abs(a), abs(b))


def verify_results(results: Mapping[str, Any]) -> None:
    """
    Check a results document against its own per-partition values.

    Raises:
        SchemaVersionMismatch: Unknown schema version
        InconsistentResults: An aggregate or delta_rho does not match
    """
    version = results.get('schema_version')
    if version != RESULTS_SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"Results schema version {version!r} is not supported (expected {RESULTS_SCHEMA_VERSION})")

    per_partition = results.get('per_partition', [])
    for entry in per_partition:
        if not _close(entry['delta_rho'], entry['rho_a'] - entry['rho_u']):
            raise InconsistentResults(f"Partition ({entry['t']}, {entry['v']}): delta_rho != rho_a - rho_u")

    rows = results.get('rows', [])
    if not rows:
        raise InconsistentResults("Results hold no aggregate rows")

    summary = ResultsProcessor([
        PartitionResult(e['t'], e['v'], e['acc'], e['rho_a'], e['rho_u'], e['delta_rho'], e.get('n_windows', 0))
        for e in per_partition
    ]).summary()
    for row in rows:
        if row['n_partitions'] != len(per_partition):
            raise InconsistentResults(
                f"Row reports {row['n_partitions']} partitions, file holds {len(per_partition)}")
        if not _close(row['delta_rho_mean'], row['rho_a_mean'] - row['rho_u_mean']):
            raise InconsistentResults("delta_rho mean differs from rho_a mean - rho_u mean")
        for metric in METRICS:
            for stat in ('mean', 'std'):
                if not _close(row[f"{metric}_{stat}"], summary[metric][stat]):
                    raise InconsistentResults(
                        f"{metric} {stat} {row[f'{metric}_{stat}']} disagrees with per-partition value "
                        f"{summary[metric][stat]}")


def rows_frame(rows: Sequence[ResultsRow]) -> pd.DataFrame:
    return pd.DataFrame([row.to_dict() for row in rows], columns=list(ResultsRow.__dataclass_fields__))
