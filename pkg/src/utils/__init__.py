"""
Utility modules for aad-evalkit.

This module contains utility functions and classes:
- Results aggregation and consistency checks (data_processor.py)
- Report generation (report_generator.py)
"""

from .data_processor import PartitionResult, ResultsProcessor, ResultsRow, verify_results
from .report_generator import ResultsReportGenerator, render_dataset_summary, summarize_results

__all__ = [
    'PartitionResult',
    'ResultsProcessor',
    'ResultsRow',
    'verify_results',
    'ResultsReportGenerator',
    'render_dataset_summary',
    'summarize_results'
]
