"""Report generation: experiment CSV/JSON files and the goodness-of-fit tables."""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from gof import ClusterSample, GofResult, PortmanteauRow, q_statistic, t_statistic
from montecarlo import CltReport, ExperimentResult, HorizonSummaries
from urn import WeightProfile

logger = logging.getLogger(__name__)

HORIZON_COLUMNS = ['replica', 'component', 'xi_bar', 'psi_bar', 'theta_bar', 'standardized', 'remainder']


def _json_default(value: Any):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if hasattr(value, 'value'):
        return value.value
    return str(value)


def table3_mirror(clusters: Sequence[ClusterSample], eta: float) -> pd.DataFrame:
    """Obs, Exp, per-category chi2 and its deflated chi2 / N^eta; Q is the row sum of the latter."""
    rows = []
    for cluster in clusters:
        expected = cluster.expected()
        deflate = float(cluster.size) ** eta
        row: Dict[str, Any] = {'label': cluster.label, 'N': cluster.size}
        for i in range(cluster.k):
            row[f'obs_{i + 1}'] = int(cluster.counts[i])
        for i in range(cluster.k):
            row[f'exp_{i + 1}'] = float(expected[i])
        cells = (cluster.counts - expected) ** 2 / expected
        for i in range(cluster.k):
            row[f'chi2_{i + 1}'] = float(cells[i])
        for i in range(cluster.k):
            row[f'chi2c_{i + 1}'] = float(cells[i] / deflate)
        T = t_statistic(cluster)
        row['T'] = T
        row['Q'] = q_statistic(T, cluster.size, eta)
        rows.append(row)
    return pd.DataFrame(rows)


def pvalue_table(result: GofResult) -> pd.DataFrame:
    return pd.DataFrame([
        {'label': c.label, 'N': c.size, 'T': c.T, 'Q': c.Q, 'p_value': c.p_value}
        for c in result.per_cluster
    ])


def portmanteau_table(rows: Sequence[PortmanteauRow]) -> pd.DataFrame:
    return pd.DataFrame([
        {
            'lag': r.lag,
            'ljung_box': r.lb_stat,
            'lb_p': r.lb_pvalue,
            'box_pierce': r.bp_stat,
            'bp_p': r.bp_pvalue,
        }
        for r in rows
    ])


def format_table(frame: pd.DataFrame, precision: int = 7) -> str:
    """Fixed rendering for stdout: every float with `precision` significant digits."""
    return frame.to_string(index=False, float_format=lambda x: f"{x:.{precision}g}")


class Reporter:
    """Write experiment and goodness-of-fit results under one output directory."""

    def __init__(self, output_dir: str = 'output', precision: int = 7):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.precision = precision
        self.reports_generated: List[str] = []

    def _fmt(self, value: float) -> str:
        return f"{value:.17g}"

    def generate_experiment_reports(
        self,
        result: ExperimentResult,
        clt_reports: Optional[Dict[int, CltReport]] = None,
    ) -> List[str]:
        """Per-horizon CSVs, the manifest and (when available) the CLT report JSON."""
        self.reports_generated = []
        clt_reports = clt_reports or {}

        for summaries in result.horizons:
            path = self.generate_horizon_csv(summaries, clt_reports.get(summaries.horizon))
            self.reports_generated.append(path)

        self.reports_generated.append(self.write_json_report('manifest.json', result.to_manifest()))
        if clt_reports:
            payload = {str(h): report.to_dict() for h, report in sorted(clt_reports.items())}
            self.reports_generated.append(self.write_json_report('clt_report.json', payload))

        logger.info(f"Generated {len(self.reports_generated)} experiment reports in {self.output_dir}")
        return self.reports_generated

    def generate_horizon_csv(self, summaries: HorizonSummaries, report: Optional[CltReport] = None) -> str:
        file_path = self.output_dir / f'horizon_{summaries.horizon}.csv'
        with open(file_path, 'w', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(HORIZON_COLUMNS)
            for row, s in enumerate(summaries.replicas):
                for i in range(summaries.k):
                    standardized = self._fmt(report.standardized[row, i]) if report is not None else ''
                    remainder = self._fmt(report.remainder[row, i]) if report is not None else ''
                    writer.writerow([
                        s.replica,
                        i + 1,
                        self._fmt(s.xi_bar[i]),
                        self._fmt(s.psi_bar[i]),
                        self._fmt(s.theta_bar[i]),
                        standardized,
                        remainder,
                    ])
        logger.info(f"Generated horizon report: {file_path}")
        return str(file_path)

    def generate_weight_profile(self, profile: WeightProfile, file_name: str = 'weights.csv') -> str:
        file_path = self.output_dir / file_name
        with open(file_path, 'w', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(['h', 'weight'])
            for h, weight in enumerate(profile.weights, start=1):
                writer.writerow([h, self._fmt(weight)])
        logger.info(f"Generated weight profile (h*={profile.h_star}): {file_path}")
        return str(file_path)

    def write_table(self, frame: pd.DataFrame, file_name: str) -> str:
        file_path = self.output_dir / file_name
        frame.to_csv(file_path, index=False, lineterminator='\n', float_format='%.17g')
        logger.info(f"Generated table: {file_path}")
        return str(file_path)

    def write_json_report(self, file_name: str, data: Dict[str, Any]) -> str:
        """Write a JSON report; keys are sorted so equal data gives equal bytes."""
        file_path = self.output_dir / file_name
        file_path.parent.mkdir(parents=True, exist_ok=True)
        with open(file_path, 'w') as f:
            json.dump(data, f, indent=2, sort_keys=True, default=_json_default)
            f.write('\n')
        logger.info(f"Generated JSON report: {file_path}")
        return str(file_path)
