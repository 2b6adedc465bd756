"""Integration tests for the end-to-end COVID-Twitter goodness-of-fit workflow."""

import json
import sys
from pathlib import Path

import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from contingency import ContingencyFile, read_contingency_file, thin_clusters, write_contingency
from error_handler import AcceptanceMiss
from gof import DfConvention
from replicate import (
    REFERENCE_PORTMANTEAU,
    acceptance_checks,
    load_published_table,
    run_covid_pipeline,
)
from reporter import Reporter

DATA_DIR = Path(__file__).parent.parent / 'data'
FIXTURE = DATA_DIR / 'covid_table3.csv'
PUBLISHED = DATA_DIR / 'covid_table3_published.csv'


class TestIntegration:
    """Integration test suite for the complete pipeline."""

    @pytest.fixture(scope='class')
    def pipeline(self):
        return run_covid_pipeline(FIXTURE, reference=PUBLISHED)

    def test_reference_values(self, pipeline):
        assert pipeline['clusters'] == 21
        assert pipeline['k'] == 2
        assert pipeline['total_size'] == 699450
        assert pipeline['classical']['df'] == 20
        primary = pipeline['mle']['L_minus_1']
        assert primary['eta_hat'] == pytest.approx(0.4363572, abs=1e-6)
        assert primary['lambda_hat'] == pytest.approx(2.728098, abs=1e-5)
        assert pipeline['mle']['L']['eta_hat'] == pytest.approx(0.6484840, abs=1e-6)
        assert pipeline['gof']['aggregate_stat'] == pytest.approx(54.561976, abs=1e-4)
        assert pipeline['threshold'] == pytest.approx(10.48, abs=0.01)

    def test_all_checks_pass(self, pipeline):
        names = {check['name'] for check in pipeline['checks']}
        assert 'table3_max_cell_error' in names
        assert 'portmanteau_lag10_stat' in names
        assert all(check['passed'] for check in pipeline['checks'])

    def test_portmanteau_rows(self, pipeline):
        rows = pipeline['portmanteau']
        assert [row['lag'] for row in rows] == list(range(1, 11))
        for row, (stat, p_value) in zip(rows, REFERENCE_PORTMANTEAU):
            assert row['box_pierce'] == pytest.approx(stat, abs=0.1)
            assert row['bp_p'] == pytest.approx(p_value, abs=0.01)
            assert row['ljung_box'] > row['box_pierce']
        assert rows[-1]['ljung_box'] == pytest.approx(20.2494, abs=0.01)

    def test_table3_mirror_matches_published(self, pipeline):
        published = load_published_table(PUBLISHED)
        assert len(published) == 21
        for row in pipeline['table3']:
            reference = published[row['label']]
            for column, expected in reference.items():
                assert row[column] == pytest.approx(expected, abs=0.01), (row['label'], column)

    def test_exceeding_clusters_are_flagged(self, pipeline):
        flagged = {row['label'] for row in pipeline['q_series'] if row['Q'] > pipeline['threshold']}
        assert set(pipeline['exceeding']) == flagged

    def test_likelihood_curve_peaks_at_estimate(self, pipeline):
        curve = pipeline['likelihood_curve']
        best = max(curve, key=lambda point: point['loglik'])
        assert best['eta'] == pytest.approx(0.436, abs=0.01)

    def test_deterministic(self, pipeline, tmp_path):
        again = run_covid_pipeline(FIXTURE, reference=PUBLISHED)
        reporter = Reporter(str(tmp_path))
        first = reporter.write_json_report('first.json', pipeline)
        second = reporter.write_json_report('second.json', again)
        assert Path(first).read_bytes() == Path(second).read_bytes()
        assert json.loads(Path(first).read_text())['total_size'] == 699450

    def test_miss_raises(self, pipeline):
        tampered = dict(pipeline, total_size=699451)
        checks = acceptance_checks(tampered)
        assert [c.name for c in checks if not c.passed] == ['total_size']

    def test_altered_data_fails_acceptance(self, tmp_path):
        table = read_contingency_file(FIXTURE)
        label, counts = table.rows[1]
        rows = (table.rows[0], (label, (counts[0] + 5000, counts[1])), *table.rows[2:])
        altered = write_contingency(tmp_path / 'altered.csv', ContingencyFile(table.header, rows))
        with pytest.raises(AcceptanceMiss) as exc_info:
            run_covid_pipeline(altered)
        assert exc_info.value.details['misses']
        result = run_covid_pipeline(altered, check=False)
        assert 'checks' not in result

    def test_l_convention_runs_without_checks(self):
        result = run_covid_pipeline(FIXTURE, df_convention=DfConvention.L)
        assert result['df_convention'] == 'L'
        assert 'checks' not in result
        assert result['gof']['df_shape'] == 10.5

    def test_thinned_sample_pipeline(self, tmp_path):
        table = read_contingency_file(FIXTURE)
        thinned = ContingencyFile(table.header, tuple(thin_clusters(table.rows, 2)))
        path = write_contingency(tmp_path / 'thinned.csv', thinned)
        result = run_covid_pipeline(path, check=False)
        assert result['clusters'] == 11
        assert 0.0 <= result['mle']['L_minus_1']['eta_hat'] <= 1.0
