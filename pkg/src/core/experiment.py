"""
Experiment runner for aad-evalkit.
Builds the fold plan, trains one decoder per (t, v) partition, scores each
test split and aggregates the fold-averaged results.
"""

import json
import logging
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .. import __version__
from ..analysis.balance import SUBSET_TARGETS, balance_index, describe_dataset, extreme_subset
from ..analysis.metrics import LOSSES, PCC, EvalWindowing, WindowScores, score_windows
from ..analysis.partition import (
    MIN_FOLDS,
    Partition,
    audit_partition,
    enumerate_partitions,
    load_fold_manifest,
    make_fold_plan,
    normalize_strategy,
)
from ..decoders import DECODERS, GRADIENT, MEMORIZING, RIDGE
from ..decoders.linear import DEFAULT_LAG_MS, DEFAULT_LAMBDA_GRID, fit_ridge, lag_window_samples
from ..decoders.memorizing import DEFAULT_ALPHA, DEFAULT_THRESHOLD, build_memorizing_decoder
from ..decoders.training import TrainConfig, fit_gradient_decoder
from ..utils.data_processor import RESULTS_SCHEMA_VERSION, PartitionResult, ResultsProcessor, ResultsRow
from .dataset import Dataset, parse_trial_metadata, validate_dataset
from .errors import (
    ConfigError,
    ConstantSeries,
    LeakageDetected,
    MetadataError,
    MissingEnvelope,
    PartitionFailure,
    SignalFileError,
)
from .signals import SignalSeries, TrialSignals, load_trial_signals

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[PartitionResult], None]


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs; validated before any compute starts."""

    metadata: Optional[Path] = None
    data_dir: Path = Path(".")
    strategy: str = "loto"
    k: int = 4
    seed: int = 0
    decoder: str = RIDGE
    loss: str = PCC
    window_seconds: float = 10.0
    output: Optional[Path] = None
    jobs: int = 1
    val_per_test: Optional[int] = None
    folds: Optional[Path] = None
    subset: Optional[str] = None
    label: Optional[str] = None
    lambda_grid: Tuple[float, ...] = DEFAULT_LAMBDA_GRID
    lag_ms: Tuple[float, float] = DEFAULT_LAG_MS
    alpha: float = DEFAULT_ALPHA
    threshold: float = DEFAULT_THRESHOLD
    purity_weighted: bool = False
    train: TrainConfig = TrainConfig()

    def validate(self, need_files: bool = True):
        """Reject every bad setting up front; nothing here needs the data."""
        if need_files:
            if self.metadata is None or not Path(self.metadata).is_file():
                raise ConfigError(f"Metadata file not found: {self.metadata}")
            if not Path(self.data_dir).is_dir():
                raise ConfigError(f"Data directory not found: {self.data_dir}")
        if self.folds is not None and not Path(self.folds).is_file():
            raise ConfigError(f"Fold manifest not found: {self.folds}")
        normalize_strategy(self.strategy)
        if self.decoder not in DECODERS:
            raise ConfigError(f"Unknown decoder {self.decoder!r}; expected one of {DECODERS}")
        if self.loss not in LOSSES:
            raise ConfigError(f"Unknown loss {self.loss!r}; expected one of {LOSSES}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if not self.window_seconds > 0:
            raise ConfigError(f"window_seconds must be positive, got {self.window_seconds}")
        if not self.lambda_grid:
            raise ConfigError("lambda_grid is empty")
        if any(not lam >= 0 for lam in self.lambda_grid):
            raise ConfigError(f"Ridge lambdas must be non-negative, got {list(self.lambda_grid)}")
        if len(self.lag_ms) != 2 or self.lag_ms[0] > self.lag_ms[1]:
            raise ConfigError(f"lag_ms must be a (min, max) window, got {self.lag_ms}")
        if self.folds is None:
            if self.k < MIN_FOLDS:
                raise ConfigError(f"k must be >= {MIN_FOLDS}, got {self.k}")
            if self.val_per_test is not None and not 1 <= self.val_per_test <= self.k - 1:
                raise ConfigError(f"val_per_test must be within [1, {self.k - 1}], got {self.val_per_test}")
        if self.subset is not None and self.subset not in SUBSET_TARGETS:
            raise ConfigError(f"Unknown subset {self.subset!r}; expected one of {SUBSET_TARGETS}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not -1.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must lie in [-1, 1], got {self.threshold}")
        try:
            replace(self.train, loss=self.loss)
        except ValueError as e:
            raise ConfigError(f"Invalid training settings: {e}") from e

    @property
    def loss_label(self) -> str:
        """Loss column of the results table; closed-form fits are least squares."""
        return self.loss if self.decoder == GRADIENT else "least-squares"

    def to_dict(self) -> Dict:
        values = asdict(self)
        for name in ('metadata', 'data_dir', 'output', 'folds'):
            values[name] = str(values[name]) if values[name] is not None else None
        values['strategy'] = normalize_strategy(self.strategy)
        values['lambda_grid'] = list(self.lambda_grid)
        values['lag_ms'] = list(self.lag_ms)
        return values


@dataclass
class ExperimentResults:
    rows: List[ResultsRow]
    per_partition: List[PartitionResult]
    provenance: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            'schema_version': RESULTS_SCHEMA_VERSION,
            'rows': [row.to_dict() for row in self.rows],
            'per_partition': [p.to_dict() for p in self.per_partition],
            'provenance': self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding='utf-8')
        logger.info(f"Results written to {path}")
        return path


def _envelope_map(dataset: Dataset, signals: Dict[str, TrialSignals]) -> Dict[str, SignalSeries]:
    envelopes: Dict[str, SignalSeries] = {}
    for trial in dataset:
        trial_signals = signals[trial.trial_id]
        envelopes.setdefault(trial.attended, trial_signals.attended)
        for stimulus, envelope in zip(trial.unattended, trial_signals.unattended):
            envelopes.setdefault(stimulus, envelope)
    return envelopes


class ExperimentRunner:
    """
    Cross-validated decoding experiment over one dataset.

    Features:
    - Fails fast: metadata, signals and partitions are checked before training
    - Audits every partition for leakage under its strategy
    - Trains partitions on a bounded thread pool
    - Seeds every partition from (seed, t, v) so results do not depend on scheduling
    """

    def __init__(self, cfg: ExperimentConfig, dataset: Optional[Dataset] = None,
                 signals: Optional[Dict[str, TrialSignals]] = None):
        cfg.validate(need_files=dataset is None or signals is None)
        self.cfg = cfg
        self.dataset = dataset
        self.signals = signals
        self.windowing = EvalWindowing(cfg.window_seconds)
        self.partitions: List[Partition] = []
        self.strategy = normalize_strategy(cfg.strategy)
        self.envelopes: Dict[str, SignalSeries] = {}

    def prepare(self):
        """Load metadata and signals and build the audited partitions."""
        cfg = self.cfg
        if self.dataset is None:
            self.dataset = parse_trial_metadata(cfg.metadata)
        if cfg.subset:
            self.dataset = extreme_subset(self.dataset, cfg.subset).dataset
        self.dataset.require_non_empty()

        if self.signals is None:
            report = validate_dataset(self.dataset, require_signals=True, data_dir=cfg.data_dir)
            if not report.ok:
                first = report.violations[0]
                errors = {'missing_eeg': SignalFileError, 'missing_envelope': MissingEnvelope}
                raise errors.get(first.code, MetadataError)(
                    f"{len(report.violations)} dataset problem(s); first: {first.message}")
            self.signals = load_trial_signals(self.dataset, cfg.data_dir)
        missing = [tid for tid in self.dataset.trial_ids if tid not in self.signals]
        if missing:
            raise SignalFileError(f"No signals for trials {missing[:5]}")
        self.envelopes = _envelope_map(self.dataset, self.signals)

        if cfg.folds is not None:
            manifest = load_fold_manifest(cfg.folds, self.dataset)
            if manifest.plan.strategy != self.strategy:
                raise ConfigError(f"Fold manifest {cfg.folds} holds a {manifest.plan.strategy.upper()} plan, "
                                  f"but {self.strategy.upper()} was requested")
            self.partitions = list(manifest.partitions)
        else:
            plan = make_fold_plan(self.dataset, self.strategy, cfg.k, cfg.seed)
            self.partitions = enumerate_partitions(plan, self.dataset, cfg.val_per_test)

        for partition in self.partitions:
            audit = audit_partition(partition, self.dataset, self.strategy)
            if not audit.passed:
                raise LeakageDetected(
                    f"Partition (t={partition.t}, v={partition.v}) fails the {self.strategy.upper()} audit: "
                    f"{len(audit.violations)} violation(s)")
            if not partition.train or not partition.val or not partition.test:
                raise ConfigError(f"Partition (t={partition.t}, v={partition.v}) has an empty split")
        logger.info(f"Prepared {len(self.partitions)} {self.strategy.upper()} partitions "
                    f"over {len(self.dataset)} trials")

    def _split(self, ids) -> List[TrialSignals]:
        return [self.signals[tid] for tid in self.dataset.trial_ids if tid in ids]

    def _fit(self, partition: Partition, train: List[TrialSignals], val: List[TrialSignals]):
        cfg = self.cfg
        lag_window = lag_window_samples(train[0].eeg.sample_rate_hz, cfg.lag_ms)
        if cfg.decoder == GRADIENT:
            seed = int(np.random.SeedSequence([cfg.seed, partition.t, partition.v]).generate_state(1)[0])
            decoder, log = fit_gradient_decoder(train, val, replace(cfg.train, loss=cfg.loss, seed=seed), lag_window)
            return decoder, {'best_epoch': log.best_epoch, 'stopped_epoch': log.stopped_epoch,
                             'lr_changes': len(log.lr_changes)}

        decoder = fit_ridge([(s.eeg, s.attended) for s in train], lag_window, cfg.lambda_grid,
                            [(s.eeg, s.attended) for s in val])
        details = {'lambda': decoder.meta['lambda']}
        if cfg.decoder == MEMORIZING:
            memorizing = build_memorizing_decoder(decoder, partition, self.dataset, self.envelopes,
                                                  cfg.alpha, cfg.threshold, self.strategy, cfg.window_seconds,
                                                  purity_weighted=cfg.purity_weighted)
            details['stored'] = len(memorizing.stored_envelopes)
            return memorizing, details
        return decoder, details

    def run_partition(self, partition: Partition) -> PartitionResult:
        train, val, test = self._split(partition.train), self._split(partition.val), self._split(partition.test)
        decoder, details = self._fit(partition, train, val)

        scores = [score_windows(decoder.reconstruct(s.eeg), s.attended, s.unattended, self.windowing)
                  for s in test]
        pooled = WindowScores.merge(scores)
        if pooled.n_windows == 0:
            raise ConstantSeries(f"Every test window of partition (t={partition.t}, v={partition.v}) was constant")
        acc, rho_a, rho_u = pooled.summary()
        logger.debug(f"Partition (t={partition.t}, v={partition.v}): acc={acc:.4f} rho_a={rho_a:.4f}")
        return PartitionResult(partition.t, partition.v, acc, rho_a, rho_u, rho_a - rho_u,
                               pooled.n_windows, pooled.skipped, details)

    def _guarded(self, partition: Partition) -> PartitionResult:
        try:
            return self.run_partition(partition)
        except Exception as e:
            raise PartitionFailure(partition.t, partition.v, e) from e

    def run(self, progress: Optional[ProgressCallback] = None) -> ExperimentResults:
        if not self.partitions:
            self.prepare()

        results: List[PartitionResult] = []
        with ThreadPoolExecutor(max_workers=self.cfg.jobs) as pool:
            futures = [pool.submit(self._guarded, partition) for partition in self.partitions]
            pending = set(futures)
            while pending:
                done, pending = wait(pending, return_when=FIRST_EXCEPTION)
                for future in done:
                    if future.exception() is not None:
                        for other in pending:
                            other.cancel()
                        raise future.exception()
                    results.append(future.result())
                    if progress:
                        progress(future.result())

        return self._aggregate(results)

    def _aggregate(self, results: Sequence[PartitionResult]) -> ExperimentResults:
        cfg = self.cfg
        processor = ResultsProcessor(results)
        summary = describe_dataset(self.dataset)
        row = processor.aggregate(
            strategy=self.strategy,
            dataset=cfg.label or self.dataset.name,
            chance_level=summary.chance_level,
            balance_index=balance_index(self.dataset).bi,
            loss=cfg.loss_label,
            decoder=cfg.decoder,
        )
        provenance = {
            'tool_version': __version__,
            'config': cfg.to_dict(),
            'seed': cfg.seed,
            'strategy': self.strategy,
            'n_trials': len(self.dataset),
            'partitions': len(self.partitions),
            'split_sizes': [[p.t, p.v, len(p.train), len(p.val), len(p.test)] for p in self.partitions],
        }
        return ExperimentResults(rows=[row], per_partition=processor.partitions, provenance=provenance)


def run_experiment(cfg: ExperimentConfig, dataset: Optional[Dataset] = None,
                   signals: Optional[Dict[str, TrialSignals]] = None,
                   progress: Optional[ProgressCallback] = None) -> ExperimentResults:
    """
    Run one cross-validated experiment and write the results when `cfg.output` is set.

    Args:
        cfg: Experiment settings
        dataset: Preloaded metadata, instead of `cfg.metadata`
        signals: Preloaded trial signals, instead of reading `cfg.data_dir`
        progress: Called with each finished partition

    Returns:
        ExperimentResults with one aggregate row and every partition's scores
    """
    runner = ExperimentRunner(cfg, dataset, signals)
    runner.prepare()
    results = runner.run(progress)
    if cfg.output is not None:
        results.save(cfg.output)
    return results
