"""
Paired significance testing of fold-level results.

Two-sided Wilcoxon signed-rank test (exact for small samples) with a
Bonferroni adjustment, and the fold-paired comparison of two result sets.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np
from scipy.stats import norm, rankdata

from ..core.errors import AllZeroDifferences, ConfigError, InvalidProbability, LengthMismatch, PlanMismatch, TooFewPairs

logger = logging.getLogger(__name__)

MIN_PAIRS = 5
EXACT_MAX_N = 12
COMPARED_METRICS = ('acc', 'rho_a', 'rho_u', 'delta_rho')


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n: int
    exact: bool


def _exact_two_sided_p(ranks: np.ndarray, w_plus: float) -> float:
    n = ranks.shape[0]
    signs = np.array(list(itertools.product((0.0, 1.0), repeat=n)))
    distribution = signs @ ranks
    mu = ranks.sum() / 2.0
    observed = abs(w_plus - mu)
    # rank sums are multiples of 0.5, the tolerance only absorbs rounding
    extreme = np.abs(distribution - mu) >= observed - 1e-9
    return float(extreme.mean())


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> Tuple[float, float]:
    """
    Two-sided paired Wilcoxon signed-rank test.

    Zero differences are dropped first. For n <= 12 remaining pairs the p-value
    is exact, by enumerating all 2^n sign assignments of the (average-tied)
    ranks. Larger samples use the normal approximation with tie correction.

    Args:
        a: Per-fold values of condition A
        b: Per-fold values of condition B, paired with `a`

    Returns:
        (statistic, p_value): statistic is min(W+, W-)
    """
    result = wilcoxon_test(a, b)
    return result.statistic, result.p_value


def wilcoxon_test(a: Sequence[float], b: Sequence[float]) -> WilcoxonResult:
    x, y = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"Paired samples differ in shape: {x.shape} vs {y.shape}")

    diff = x - y
    diff = diff[diff != 0]
    if diff.size == 0:
        raise AllZeroDifferences("All paired differences are zero; the test is undefined")
    n = diff.size
    if n < MIN_PAIRS:
        raise TooFewPairs(f"Need at least {MIN_PAIRS} non-zero paired differences, got {n}")

    ranks = rankdata(np.abs(diff))
    w_plus = float(ranks[diff > 0].sum())
    w_minus = float(ranks[diff < 0].sum())
    statistic = min(w_plus, w_minus)

    if n <= EXACT_MAX_N:
        p = _exact_two_sided_p(ranks, w_plus)
        exact = True
    else:
        mu = n * (n + 1) / 4.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        variance = n * (n + 1) * (2 * n + 1) / 24.0 - (tie_counts ** 3 - tie_counts).sum() / 48.0
        z = (w_plus - mu) / np.sqrt(variance)
        p = float(min(1.0, 2.0 * norm.sf(abs(z))))
        exact = False

    logger.debug(f"Wilcoxon n={n} W={statistic} p={p:.4g} ({'exact' if exact else 'normal'})")
    return WilcoxonResult(statistic=statistic, p_value=p, n=n, exact=exact)


def bonferroni_adjust(p_values: Sequence[float], m: int) -> List[float]:
    """p' = min(1, m * p) for each p."""
    p = np.asarray(p_values, dtype=np.float64)
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise InvalidProbability(f"p-values must lie in [0, 1], got {p.tolist()}")
    if m < max(1, p.size):
        raise ConfigError(f"Comparison count m={m} is smaller than the {p.size} p-values given")
    return np.minimum(1.0, m * p).tolist()


def _index_rows(rows: Sequence[Mapping]) -> Dict[Tuple[int, int], Mapping]:
    return {(int(row['t']), int(row['v'])): row for row in rows}


def compare_results(a_rows: Sequence[Mapping], b_rows: Sequence[Mapping], m: int = 1,
                    metrics: Sequence[str] = COMPARED_METRICS) -> Dict:
    """
    Fold-paired Wilcoxon test of two experiments, metric by metric.

    Per-partition rows are paired by their (t, v) index, so both experiments
    must cover the same partition grid.

    Returns:
        JSON-ready dict with statistic, raw and Bonferroni-adjusted p per metric
    """
    a_index, b_index = _index_rows(a_rows), _index_rows(b_rows)
    if set(a_index) != set(b_index):
        raise PlanMismatch(
            f"Result sets cover different partitions: {len(a_index)} vs {len(b_index)} (t, v) indices")
    keys = sorted(a_index)

    comparisons = {}
    for metric in metrics:
        a = [float(a_index[key][metric]) for key in keys]
        b = [float(b_index[key][metric]) for key in keys]
        result = wilcoxon_test(a, b)
        comparisons[metric] = {
            'statistic': result.statistic,
            'p_value': result.p_value,
            'p_adjusted': bonferroni_adjust([result.p_value], m)[0],
            'n': result.n,
            'exact': result.exact,
            'mean_a': float(np.mean(a)),
            'mean_b': float(np.mean(b)),
        }
        logger.info(f"{metric}: W={result.statistic} p={result.p_value:.4g} "
                    f"(adjusted {comparisons[metric]['p_adjusted']:.4g})")

    return {'schema_version': 1, 'pairs': len(keys), 'm': m, 'metrics': comparisons}
