"""
aad-evalkit command line.

Machine-readable output (JSON, CSV, markdown) goes to stdout or --out;
status panels, tables and progress go to stderr.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from rich.console import Console
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TaskProgressColumn, TextColumn
from rich.table import Table

from . import __version__
from .analysis.balance import (
    SUBSET_TARGETS,
    balance_index,
    balance_index_per_subject,
    describe_dataset,
    extreme_subset,
)
from .analysis.metrics import LOSSES, PCC
from .analysis.partition import (
    LOTO,
    MIN_FOLDS,
    STRATEGIES,
    audit_fold_manifest,
    build_fold_manifest,
    load_fold_manifest,
    save_fold_manifest,
)
from .analysis.stats import compare_results
from .core.config import Settings, setup_logging
from .core.dataset import parse_trial_metadata, serialize_trial_metadata, validate_dataset
from .core.errors import EvalKitError, LeakageDetected
from .core.experiment import ExperimentConfig, ExperimentRunner
from .decoders import DECODERS, RIDGE
from .decoders.memorizing import DEFAULT_ALPHA, DEFAULT_THRESHOLD
from .synth.scenario import DESIGNS, ScenarioConfig, build_scenario
from .utils.report_generator import FORMATS, load_results, render_dataset_summary, summarize_results

logger = logging.getLogger(__name__)

# Rich console for status output; stdout stays machine-readable
console = Console(stderr=True)


def _emit(text: str, out: Optional[Path] = None):
    if out is None:
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding='utf-8')
        console.print(f"[green]✅ Wrote {out}[/green]")


def _emit_json(document: Dict[str, Any], out: Optional[Path] = None):
    _emit(json.dumps(document, indent=2, sort_keys=True) + "\n", out)


def _load_dataset(args: argparse.Namespace):
    dataset = parse_trial_metadata(args.metadata)
    console.print(f"[cyan]Loaded {len(dataset)} trials from {args.metadata}[/cyan]")
    return dataset


# balance

def cmd_balance(args: argparse.Namespace, settings: Settings) -> int:
    dataset = _load_dataset(args)

    if args.balance_command == 'compute':
        report = balance_index(dataset)
        document = report.to_dict()
        if args.per_subject:
            document['per_subject'] = {s: r.to_dict() for s, r in balance_index_per_subject(dataset).items()}
        console.print(f"Balance index: [bold]{report.bi:.4f}[/bold] over {report.counts.n_audio} stimuli")
        _emit_json(document, args.out)

    elif args.balance_command == 'subset':
        subset = extreme_subset(dataset, args.target, seed=args.subset_seed)
        console.print(Panel.fit(
            f"[bold]{args.target}[/bold] subset: kept {len(subset.dataset)}/{len(dataset)} trials\n"
            f"balance index {subset.report.bi:.4f}",
            border_style="cyan"))
        if args.out is not None:
            serialize_trial_metadata(subset.dataset, args.out)
            console.print(f"[green]✅ Wrote {args.out}[/green]")
        document = subset.report.to_dict()
        document['kept'] = subset.dataset.trial_ids
        document['dropped'] = list(subset.dropped)
        _emit_json(document)

    elif args.balance_command == 'describe':
        _emit(render_dataset_summary(describe_dataset(dataset), settings_format(args)), args.out)

    elif args.balance_command == 'validate':
        report = validate_dataset(dataset, require_signals=args.signals, data_dir=settings.data_dir)
        _emit_json(report.to_dict(), args.out)
        if not report.ok:
            console.print(f"[red]❌ {len(report.violations)} violation(s)[/red]")
            return 2
    return 0


def settings_format(args: argparse.Namespace) -> str:
    return getattr(args, 'format', None) or 'json'


# split / audit

def cmd_split(args: argparse.Namespace, settings: Settings) -> int:
    dataset = _load_dataset(args)
    manifest = build_fold_manifest(dataset, args.strategy, args.k, settings.seed, args.val_per_test)
    console.print(f"[cyan]{args.strategy.upper()}: {len(manifest.partitions)} partitions, "
                  f"fold sizes {manifest.plan.fold_sizes}[/cyan]")
    if args.out is not None:
        save_fold_manifest(manifest, args.out, dataset)
        console.print(f"[green]✅ Wrote {args.out}[/green]")
    else:
        _emit_json(manifest.to_dict(dataset))
    return 0


def cmd_audit(args: argparse.Namespace, settings: Settings) -> int:
    dataset = _load_dataset(args)
    manifest = load_fold_manifest(args.folds, dataset)
    reports = audit_fold_manifest(manifest, dataset, args.strategy)

    table = Table(title=f"{(args.strategy or manifest.plan.strategy).upper()} audit")
    table.add_column("t", justify="right")
    table.add_column("v", justify="right")
    table.add_column("train/val/test", justify="right")
    table.add_column("violations", justify="right")
    for report in reports:
        sizes = report.split_sizes
        status = "[green]0[/green]" if report.passed else f"[red]{len(report.violations)}[/red]"
        table.add_row(str(report.t), str(report.v), f"{sizes['train']}/{sizes['val']}/{sizes['test']}", status)
    console.print(table)

    _emit_json({'schema_version': 1, 'passed': all(r.passed for r in reports),
                'partitions': [r.to_dict() for r in reports]}, args.out)
    if not all(r.passed for r in reports):
        leaks = sum(len(r.violations) for r in reports)
        raise LeakageDetected(f"{leaks} leakage violation(s) across {sum(not r.passed for r in reports)} partitions")
    console.print("[green]✅ No leakage found[/green]")
    return 0


# synth

def cmd_synth(args: argparse.Namespace, settings: Settings) -> int:
    cfg = ScenarioConfig.from_json(args.config) if args.config else ScenarioConfig(seed=settings.seed)
    overrides = {'design': args.design, 'noise_sigma': args.sigma}
    if getattr(args, 'seed', None) is not None:
        overrides['seed'] = settings.seed
    cfg = ScenarioConfig.from_dict({**cfg.to_dict(), **{k: v for k, v in overrides.items() if v is not None}})

    with console.status("[cyan]Generating scenario...[/cyan]"):
        scenario = build_scenario(cfg, args.out)
    manifest = scenario.manifest()
    console.print(Panel.fit(
        f"[bold cyan]{scenario.dataset.name}[/bold cyan]\n"
        f"{len(scenario.dataset)} trials, {cfg.channels} channels at {cfg.sample_rate_hz:g} Hz\n"
        f"noise sigma {scenario.noise_sigma:g}, balance index {manifest['balance_index']:.3f}",
        border_style="cyan"))
    _emit_json(manifest)
    return 0


# train

def cmd_train(args: argparse.Namespace, settings: Settings) -> int:
    strategy = args.strategy
    if strategy is None:
        strategy = load_fold_manifest(args.folds).plan.strategy if args.folds is not None else LOTO
    cfg = ExperimentConfig(
        metadata=args.metadata,
        data_dir=settings.data_dir,
        strategy=strategy,
        k=args.k,
        seed=settings.seed,
        decoder=args.decoder,
        loss=args.loss,
        window_seconds=args.window_sec or settings.window_sec,
        output=args.out,
        jobs=settings.jobs,
        val_per_test=args.val_per_test,
        folds=args.folds,
        subset=args.subset,
        label=args.label,
        alpha=args.alpha,
        threshold=args.threshold,
        purity_weighted=args.purity_weighted,
    )
    console.print(Panel.fit(
        f"[bold cyan]{cfg.decoder} decoder[/bold cyan], {cfg.loss_label} loss\n"
        f"[dim]{args.metadata} • {cfg.window_seconds:g}s windows • {cfg.jobs} worker(s) • seed {cfg.seed}[/dim]",
        border_style="cyan"))

    with Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"), BarColumn(),
                  TaskProgressColumn(), console=console) as progress:
        task = progress.add_task("[cyan]Training partitions...", total=None)

        def advance(result):
            progress.update(task, advance=1, description=f"[cyan]Partition ({result.t}, {result.v}) acc {result.acc:.3f}")

        runner = ExperimentRunner(cfg)
        runner.prepare()
        progress.update(task, total=len(runner.partitions))
        results = runner.run(advance)

    display_results(results.rows)
    if cfg.output is not None:
        results.save(cfg.output)
        console.print(f"[green]✅ Wrote {cfg.output}[/green]")
    else:
        _emit(results.to_json())
    return 0


def display_results(rows) -> None:
    table = Table(title="Decoding performance")
    for column in ("Strategy", "Dataset", "Chance", "BI", "Loss", "Acc", "ρ_a", "ρ_u", "Δρ"):
        table.add_column(column)
    for row in rows:
        def cell(mean, std):
            return f"{mean:.4f}" if std is None else f"{mean:.4f}±{std:.4f}"
        table.add_row(row.strategy.upper(), row.dataset, f"{row.chance_level:.3f}", f"{row.balance_index:.3f}",
                      row.loss, cell(row.acc_mean, row.acc_std), cell(row.rho_a_mean, row.rho_a_std),
                      cell(row.rho_u_mean, row.rho_u_std), cell(row.delta_rho_mean, row.delta_rho_std))
    console.print(table)


# stats / report

def cmd_stats(args: argparse.Namespace, settings: Settings) -> int:
    a, b = load_results(args.results_a), load_results(args.results_b)
    comparison = compare_results(a['per_partition'], b['per_partition'], args.m)

    table = Table(title=f"Wilcoxon signed-rank (m={args.m})")
    for column in ("metric", "W", "p", "p (Bonferroni)"):
        table.add_column(column)
    for metric, values in comparison['metrics'].items():
        table.add_row(metric, f"{values['statistic']:g}", f"{values['p_value']:.4g}", f"{values['p_adjusted']:.4g}")
    console.print(table)
    _emit_json(comparison, args.out)
    return 0


def cmd_report(args: argparse.Namespace, settings: Settings) -> int:
    fmt = settings_format(args)
    _emit(summarize_results(args.results, fmt), args.out)
    return 0


# parser

def _common_parser() -> argparse.ArgumentParser:
    """Global flags, accepted before or after the subcommand."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=argparse.SUPPRESS, help='Random seed (AAD_EVALKIT_SEED)')
    common.add_argument('--jobs', type=int, default=argparse.SUPPRESS, help='Worker threads (AAD_EVALKIT_JOBS)')
    common.add_argument('--data-dir', type=Path, default=argparse.SUPPRESS,
                        help='Root for signal references (AAD_EVALKIT_DATA_DIR)')
    common.add_argument('--log-level', default=argparse.SUPPRESS, help='Logging level (AAD_EVALKIT_LOG_LEVEL)')
    common.add_argument('--format', choices=FORMATS, default=argparse.SUPPRESS,
                        help='Output format for tables (default json)')
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog='aad-evalkit', parents=[common],
                                     description='Leakage-aware evaluation of auditory attention decoding')
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest='command', required=True)

    balance = commands.add_parser('balance', help='Stimulus-role balance of a dataset')
    balance_commands = balance.add_subparsers(dest='balance_command', required=True)
    for name, help_text in (('compute', 'Balance index and per-stimulus role counts'),
                            ('subset', 'Extreme (balanced or exclusive) sub-dataset'),
                            ('describe', 'Dataset summary row'),
                            ('validate', 'Check metadata invariants and signal files')):
        sub = balance_commands.add_parser(name, parents=[common], help=help_text)
        sub.add_argument('--metadata', type=Path, required=True)
        sub.add_argument('--out', type=Path)
        if name == 'compute':
            sub.add_argument('--per-subject', action='store_true', help='Add one report per subject')
        if name == 'subset':
            sub.add_argument('--target', choices=SUBSET_TARGETS, required=True)
            sub.add_argument('--subset-seed', type=int, help='Draw surplus balanced trials with this seed')
        if name == 'validate':
            sub.add_argument('--signals', action='store_true', help='Also require EEG and envelope files')

    split = commands.add_parser('split', parents=[common], help='Build a fold plan and its partitions')
    split.add_argument('--metadata', type=Path, required=True)
    split.add_argument('--strategy', choices=STRATEGIES, required=True)
    split.add_argument('--k', type=int, required=True, help=f'Fold count (>= {MIN_FOLDS})')
    split.add_argument('--val-per-test', type=int, help='Validation folds per test fold (default K-1)')
    split.add_argument('--out', type=Path)

    audit = commands.add_parser('audit', parents=[common], help='Audit a fold manifest for leakage')
    audit.add_argument('--metadata', type=Path, required=True)
    audit.add_argument('--folds', type=Path, required=True)
    audit.add_argument('--strategy', choices=STRATEGIES, help="Audit under this strategy (default: the manifest's)")
    audit.add_argument('--out', type=Path)

    synth = commands.add_parser('synth', parents=[common], help='Generate a synthetic scenario')
    synth.add_argument('--config', type=Path, help='Scenario JSON (defaults apply when omitted)')
    synth.add_argument('--out', type=Path, required=True)
    synth.add_argument('--design', choices=DESIGNS)
    synth.add_argument('--sigma', type=float, help='Noise sigma; calibrated when neither this nor the config sets it')

    train = commands.add_parser('train', parents=[common], help='Cross-validated decoder training and evaluation')
    train.add_argument('--metadata', type=Path, required=True)
    train.add_argument('--folds', type=Path, help='Fold manifest; built from --strategy/--k when omitted')
    train.add_argument('--strategy', choices=STRATEGIES,
                       help="Split strategy (default: the manifest's with --folds, else loto)")
    train.add_argument('--k', type=int, default=4)
    train.add_argument('--val-per-test', type=int)
    train.add_argument('--decoder', choices=DECODERS, default=RIDGE)
    train.add_argument('--loss', choices=LOSSES, default=PCC)
    train.add_argument('--window-sec', type=float)
    train.add_argument('--subset', choices=SUBSET_TARGETS, help='Evaluate on an extreme subset of the metadata')
    train.add_argument('--label', help='Dataset label in the results table')
    train.add_argument('--alpha', type=float, default=DEFAULT_ALPHA, help="Memorizing decoder blend weight")
    train.add_argument('--threshold', type=float, default=DEFAULT_THRESHOLD, help="Memorizing decoder match threshold")
    train.add_argument('--purity-weighted', action='store_true',
                       help="Scale the memorizing blend by each stimulus' training role purity")
    train.add_argument('--out', type=Path)

    stats = commands.add_parser('stats', parents=[common], help='Fold-paired Wilcoxon test of two results files')
    stats.add_argument('--results-a', type=Path, required=True)
    stats.add_argument('--results-b', type=Path, required=True)
    stats.add_argument('--m', type=int, default=1, help='Comparison count for the Bonferroni adjustment')
    stats.add_argument('--out', type=Path)

    report = commands.add_parser('report', parents=[common], help='Merge results files into one table')
    report.add_argument('results', type=Path, nargs='+')
    report.add_argument('--out', type=Path)

    return parser


COMMANDS = {
    'balance': cmd_balance,
    'split': cmd_split,
    'audit': cmd_audit,
    'synth': cmd_synth,
    'train': cmd_train,
    'stats': cmd_stats,
    'report': cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main application entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        settings = Settings.from_env().override(
            seed=getattr(args, 'seed', None),
            jobs=getattr(args, 'jobs', None),
            data_dir=getattr(args, 'data_dir', None),
            log_level=getattr(args, 'log_level', None),
        )
        setup_logging(settings)
        return COMMANDS[args.command](args, settings)

    except EvalKitError as e:
        console.print(f"[red]❌ {type(e).__name__}: {e}[/red]")
        logger.debug("Command failed", exc_info=True)
        return e.exit_code
    except KeyboardInterrupt:
        console.print("\n[yellow]Interrupted[/yellow]")
        return 130
    except Exception as e:
        console.print(f"[red]❌ Unexpected error: {e}[/red]")
        logger.exception("Unexpected error")
        return 1


if __name__ == "__main__":
    sys.exit(main())
