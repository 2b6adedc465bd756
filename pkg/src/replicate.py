"""End-to-end goodness-of-fit pipeline on the bundled COVID-Twitter sentiment counts.

The fixture holds only the observed counts of 21 clusters (one day in three,
positive and negative posts). Everything else is recomputed and, when
``check`` is on, compared against the published reference values.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from contingency import read_contingency
from error_handler import AcceptanceMiss
from gof import (
    DfConvention,
    PStarMode,
    build_p_star,
    classical_chi2,
    gof_test,
    likelihood_curve,
    ljung_box,
    mle_estimate,
    t_statistic,
)
from reporter import portmanteau_table, table3_mirror

logger = logging.getLogger(__name__)

REFERENCE_ETA = 0.4363572
REFERENCE_LAMBDA = 2.728098
REFERENCE_AGGREGATE_P = 0.4579297
REFERENCE_THRESHOLD = 10.48
REFERENCE_CLASSICAL = 5507.803
REFERENCE_TOTAL_SIZE = 699450
# Box-Pierce form of the portmanteau statistic on the Q series, lags 1..10
REFERENCE_PORTMANTEAU = (
    (3.454, 0.063), (3.624, 0.163), (4.209, 0.240), (4.640, 0.326), (5.065, 0.408),
    (7.103, 0.311), (8.660, 0.278), (8.812, 0.358), (10.360, 0.322), (12.852, 0.232),
)
TABLE_TOLERANCE = 0.01


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    expected: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return abs(self.value - self.expected) <= self.tolerance

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'value': self.value,
            'expected': self.expected,
            'tolerance': self.tolerance,
            'passed': self.passed,
        }


def load_published_table(path: Union[str, Path]) -> Dict[str, Dict[str, float]]:
    with open(path, 'r', newline='', encoding='utf-8') as f:
        return {row['label']: {k: float(v) for k, v in row.items() if k != 'label'} for row in csv.DictReader(f)}


def _table_check(mirror, published: Dict[str, Dict[str, float]]) -> Check:
    worst = 0.0
    for _, row in mirror.iterrows():
        reference = published.get(row['label'])
        if reference is None:
            continue
        for column, expected in reference.items():
            worst = max(worst, abs(float(row[column]) - expected))
    return Check('table3_max_cell_error', worst, 0.0, TABLE_TOLERANCE)


def acceptance_checks(result: Dict[str, Any], published: Optional[Dict[str, Dict[str, float]]] = None) -> List[Check]:
    primary = result['mle'][DfConvention.L_MINUS_1.value]
    checks = [
        Check('total_size', float(result['total_size']), float(REFERENCE_TOTAL_SIZE), 0.0),
        Check('classical_chi2', result['classical']['statistic'], REFERENCE_CLASSICAL, 0.05),
        Check('eta_hat', primary['eta_hat'], REFERENCE_ETA, 1e-4),
        Check('lambda_hat', primary['lambda_hat'], REFERENCE_LAMBDA, 1e-3),
        Check('aggregate_p', result['gof']['aggregate_p'], REFERENCE_AGGREGATE_P, 1e-3),
        Check('threshold_95', result['threshold'], REFERENCE_THRESHOLD, 0.01),
    ]
    for row, (stat, p_value) in zip(result['portmanteau'], REFERENCE_PORTMANTEAU):
        checks.append(Check(f"portmanteau_lag{row['lag']}_stat", row['box_pierce'], stat, 0.1))
        checks.append(Check(f"portmanteau_lag{row['lag']}_p", row['bp_p'], p_value, 0.01))
    if published is not None:
        checks.append(_table_check(result['_mirror'], published))
    return checks


def run_covid_pipeline(
    fixture: Union[str, Path],
    df_convention: Union[DfConvention, str] = DfConvention.L_MINUS_1,
    max_lag: int = 10,
    level: float = 0.95,
    grid_points: int = 200,
    reference: Optional[Union[str, Path]] = None,
    check: bool = True,
) -> Dict[str, Any]:
    """Classical test, MLE under both df conventions, the corrected test and its diagnostics.

    Raises AcceptanceMiss when ``check`` is set and a computed value misses
    its published counterpart.
    """
    convention = DfConvention.parse(df_convention)
    clusters = build_p_star(PStarMode.POOLED, read_contingency(fixture))
    k = clusters[0].k
    t = [t_statistic(c) for c in clusters]
    sizes = [c.size for c in clusters]

    statistic, p_value, df = classical_chi2(clusters, convention)
    logger.info(f"Classical chi2 = {statistic:.7g} on {df} df, p = {p_value:.3g}")

    mle = {conv.value: mle_estimate(t, sizes, k, conv) for conv in DfConvention}
    primary = mle[convention.value]
    gof = gof_test(clusters, primary.eta_hat, primary.lambda_hat, convention)
    threshold = gof.threshold(level)
    q_series = [c.Q for c in gof.per_cluster]
    portmanteau = portmanteau_table(ljung_box(q_series, max_lag))
    mirror = table3_mirror(clusters, primary.eta_hat)
    curve = likelihood_curve(t, sizes, k, grid_points, convention.count(len(clusters)))

    result: Dict[str, Any] = {
        'clusters': len(clusters),
        'k': k,
        'total_size': int(np.sum(sizes)),
        'p_star': clusters[0].p_star.tolist(),
        'df_convention': convention.value,
        'classical': {'statistic': statistic, 'p_value': p_value, 'df': df},
        'mle': {name: m.to_dict() for name, m in mle.items()},
        'gof': gof.to_dict(),
        'threshold_level': level,
        'threshold': threshold,
        'exceeding': [c.label for c in gof.exceeding(level)],
        'q_series': [{'label': c.label, 'Q': c.Q} for c in gof.per_cluster],
        'likelihood_curve': [{'eta': eta, 'loglik': value} for eta, value in curve],
        'portmanteau': portmanteau.to_dict(orient='records'),
        'table3': mirror.to_dict(orient='records'),
    }

    if check and convention is DfConvention.L_MINUS_1:
        published = load_published_table(reference) if reference is not None else None
        checks = acceptance_checks({**result, '_mirror': mirror}, published)
        result['checks'] = [c.to_dict() for c in checks]
        misses = [c for c in checks if not c.passed]
        if misses:
            raise AcceptanceMiss(
                f"{len(misses)} reference value(s) missed: {', '.join(c.name for c in misses)}",
                misses=[c.to_dict() for c in misses],
            )
        logger.info(f"All {len(checks)} reference checks passed")
    return result
