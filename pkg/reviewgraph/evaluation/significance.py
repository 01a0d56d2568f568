#!/usr/bin/env python
"""
significance.py: Paired significance testing between two evaluation reports.
"""

import numpy as np
from scipy import stats

from reviewgraph.evaluation.metrics import EvalReport
from reviewgraph.logger import setup_logger

logger = setup_logger(__name__)


def paired_t_test(report_a: EvalReport, report_b: EvalReport, metric: str) -> float:
    """Two-sided paired t-test on per-user differences of ``metric``.

    Users present in only one report are ignored. When every difference is
    identical the t statistic is undefined: the p-value is 1.0 for a zero
    difference and 0.0 otherwise.

    Args:
        report_a: First report.
        report_b: Second report.
        metric: Column name, e.g. ``"N@5"``.

    Returns:
        The p-value.

    Raises:
        KeyError: If ``metric`` is not a column of both reports.
        ValueError: If fewer than two users are common to both reports.
    """
    merged = report_a.per_user[["user", metric]].merge(
        report_b.per_user[["user", metric]], on="user", suffixes=("_a", "_b")
    )
    if len(merged) < 2:
        raise ValueError("paired t-test needs at least two common users")
    a = merged[f"{metric}_a"].to_numpy()
    b = merged[f"{metric}_b"].to_numpy()
    differences = a - b
    if np.allclose(differences, differences[0], rtol=0.0, atol=1e-15):
        logger.warning("Zero-variance differences in %s; t statistic undefined", metric)
        return 1.0 if abs(differences[0]) <= 1e-15 else 0.0
    return float(stats.ttest_rel(a, b).pvalue)
