"""
Dataset analysis: stimulus-role balance, leakage-aware cross-validation,
decoding metrics and significance tests.
"""

from .balance import BalanceReport, balance_index, balance_index_per_subject, describe_dataset, extreme_subset, role_counts
from .metrics import EvalWindowing, contrastive_pcc_loss, pcc_gradient, pcc_loss, pearson, windowed_accuracy
from .partition import (
    FoldPlan,
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
from .stats import bonferroni_adjust, compare_results, wilcoxon_signed_rank

__all__ = [
    'BalanceReport', 'balance_index', 'balance_index_per_subject', 'describe_dataset', 'extreme_subset',
    'role_counts',
    'EvalWindowing', 'contrastive_pcc_loss', 'pcc_gradient', 'pcc_loss', 'pearson', 'windowed_accuracy',
    'FoldPlan', 'Partition', 'audit_fold_manifest', 'audit_partition', 'build_fold_manifest',
    'enumerate_partitions', 'group_key', 'load_fold_manifest', 'make_fold_plan', 'save_fold_manifest',
    'bonferroni_adjust', 'compare_results', 'wilcoxon_signed_rank',
]
