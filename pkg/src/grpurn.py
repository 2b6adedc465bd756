#!/usr/bin/env python3
"""grp-urn - simulation and goodness-of-fit tooling for generalized rescaled Polya urns."""

import functools
import json
import sys
from pathlib import Path
from typing import List, Optional

import click
import numpy as np
import pandas as pd

from config import Config
from contingency import read_contingency
from error_handler import EXIT_BAD_FIT, ErrorHandler, GrpUrnError, UsageError
from gof import (
    DfConvention,
    MleCase,
    PStarMode,
    build_p_star,
    gof_test,
    lambda_of_eta,
    mle_estimate,
    t_statistic,
)
from logger import get_logger, log_duration, setup_logging
from montecarlo import ExperimentConfig, clt_report, run_experiment
from replicate import run_covid_pipeline
from reporter import Reporter, format_table, pvalue_table, table3_mirror
from schedules import ScheduleSpec, ScheduleVariant, build_schedule
from urn import UrnParams, make_rng, run_trajectory, weight_profile, write_trajectory_csv

logger = get_logger(__name__)

PROJECT_ROOT = Path(__file__).resolve().parent.parent
CLT_VARIANTS = (ScheduleVariant.EXAMPLE1, ScheduleVariant.EXAMPLE2)


def _load_config(ctx: click.Context) -> Config:
    """Load configuration and initialize logging."""
    cfg = Config(config_file=ctx.obj['config_path'])
    setup_logging(
        log_level=cfg.get('logging.level', 'INFO'),
        log_file=cfg.get('logging.file'),
        verbose=ctx.obj['verbose'],
    )
    return cfg


def _data_path(cfg: Config, key: str) -> Path:
    """Configured data file, falling back to the copy bundled with the project."""
    path = cfg.resolve_path(cfg.get(key))
    if not path.exists():
        bundled = PROJECT_ROOT / 'data' / path.name
        if bundled.exists():
            return bundled
    return path


def _parse_vector(text: str, name: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(',') if v.strip()], dtype=float)
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}", param_hint=name) from None


def _parse_horizons(text: str) -> List[int]:
    try:
        return [int(float(v)) for v in text.split(',') if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {text!r}", param_hint='--horizons') from None


def _handled(fn):
    """Route toolkit errors through ErrorHandler and exit with their code."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except GrpUrnError as exc:
            ctx = click.get_current_context()
            handler = ctx.obj.setdefault('errors', ErrorHandler())
            handler.handle(exc)
            summary = handler.get_error_summary()
            logger.debug(f"Errors so far: {summary['errors_by_type']}")
            sys.exit(summary['worst_exit_code'])
    return wrapper


def _urn_params(b0: str, B0: Optional[str], required: Optional[float]) -> UrnParams:
    b0_vec = _parse_vector(b0, '--b0')
    if B0 is not None:
        return UrnParams(b0_vec, _parse_vector(B0, '--B0'))
    if required is not None:
        return UrnParams.with_B0_norm(b0_vec, required)
    return UrnParams(b0_vec, np.zeros_like(b0_vec))


def _clusters_with_p_star(data: Path, pstar: str, first_sample: Optional[Path]):
    clusters = read_contingency(data)
    if pstar.startswith('benchmark:'):
        return build_p_star(PStarMode.BENCHMARK_CLUSTER, clusters, benchmark=pstar.split(':', 1)[1])
    if pstar == PStarMode.FROM_FIRST_SAMPLE.value:
        if first_sample is None:
            raise UsageError("--pstar from_first_sample needs --first-sample")
        return build_p_star(PStarMode.FROM_FIRST_SAMPLE, clusters, first_sample=read_contingency(first_sample))
    return build_p_star(pstar, clusters)


@click.group()
@click.option(
    '-c',
    '--config',
    'config_path',
    default='grp-urn-config.yaml',
    show_default=True,
    help='Path to configuration file.',
)
@click.option('-v', '--verbose', is_flag=True, help='Enable debug logging output.')
@click.pass_context
def cli(ctx: click.Context, config_path: str, verbose: bool) -> None:
    """Simulate GRP urns and test clustered categorical data for fit."""
    ctx.ensure_object(dict)
    ctx.obj['config_path'] = config_path
    ctx.obj['verbose'] = verbose
    ctx.obj['errors'] = ErrorHandler()


@cli.command()
@click.option('--schedule', 'schedule_path', required=True, type=click.Path(path_type=Path), help='Schedule spec JSON.')
@click.option('--b0', required=True, help='Comma-separated intrinsic weights b0.')
@click.option('--B0', 'B0', default=None, help='Comma-separated initial balls B0 (default: what the schedule needs).')
@click.option('--horizons', default=None, help='Comma-separated increasing horizons N.')
@click.option('--replicas', type=int, default=None, help='Number of replicas R.')
@click.option('--seed', type=int, default=None, help='Base seed.')
@click.option('--threads', type=int, default=None, help='Worker threads.')
@click.option('--out', 'out_dir', type=click.Path(path_type=Path), default=None, help='Output directory.')
@click.pass_context
@_handled
def simulate(ctx, schedule_path, b0, B0, horizons, replicas, seed, threads, out_dir):
    """Run seeded replicas and write per-horizon CSVs, a manifest and CLT reports."""
    cfg = _load_config(ctx)
    sim = cfg.get_section('simulation')
    spec = ScheduleSpec.load(schedule_path)
    schedule = build_schedule(spec)

    config = ExperimentConfig(
        params=_urn_params(b0, B0, schedule.required_B0_norm),
        schedule=spec,
        horizons=_parse_horizons(horizons) if horizons else sim['horizons'],
        replicas=replicas if replicas is not None else sim['replicas'],
        base_seed=seed if seed is not None else sim['seed'],
        threads=threads if threads is not None else sim['threads'],
        batch_size=sim['batch_size'],
        step_budget=float(sim['step_budget']),
        chunk_size=sim['chunk_size'],
        renormalize_every=sim['renormalize_every'],
        record=frozenset(sim['record']),
    )
    with log_duration(logger, f"simulate {spec.variant.value} R={config.replicas}"):
        result = run_experiment(config)

    reports = {}
    if spec.variant in CLT_VARIANTS and config.replicas > 1:
        reports = {h.horizon: clt_report(h) for h in result.horizons}

    output = out_dir or cfg.resolve_path(cfg.get('output.directory'))
    reporter = Reporter(str(output), cfg.get('output.precision', 7))
    files = reporter.generate_experiment_reports(result, reports)

    precision = cfg.get('output.precision', 7)
    click.echo(format_table(result.horizon_table(), precision))
    for horizon, report in sorted(reports.items()):
        click.echo(
            f"N={horizon}: e={report.e:.{precision}g} lambda_theory={report.lambda_theory:.{precision}g} "
            f"lambda_hat={report.lambda_hat:.{precision}g} ks_p={report.ks_pvalue:.4g}"
        )
    click.echo(f"Wrote {len(files)} files to {output}")


@cli.command()
@click.option('--data', required=True, type=click.Path(path_type=Path), help='Contingency CSV.')
@click.option('--pstar', default=None, help='pooled | uniform | benchmark:<label> | from_first_sample.')
@click.option('--first-sample', type=click.Path(path_type=Path), default=None, help='Earlier sample for from_first_sample.')
@click.option('--df', 'df_convention', default=None, help='Independent-cluster count: L or L-1.')
@click.pass_context
@_handled
def estimate(ctx, data, pstar, first_sample, df_convention):
    """Maximum-likelihood (eta, lambda); exits 3 on a boundary bad fit."""
    cfg = _load_config(ctx)
    clusters = _clusters_with_p_star(data, pstar or cfg.get('gof.pstar'), first_sample)
    convention = DfConvention.parse(df_convention or cfg.get('gof.df_convention'))
    t = [t_statistic(c) for c in clusters]
    result = mle_estimate(t, [c.size for c in clusters], clusters[0].k, convention, cfg.get('gof.bisection_xtol'))

    click.echo(json.dumps(result.to_dict(), indent=2, sort_keys=True))
    if result.case is MleCase.BOUNDARY_BAD_FIT:
        sys.exit(EXIT_BAD_FIT)


@cli.command()
@click.option('--data', required=True, type=click.Path(path_type=Path), help='Contingency CSV.')
@click.option('--eta', 'eta_text', default='fit', show_default=True, help="Exponent eta in [0, 1], or 'fit'.")
@click.option('--lambda', 'lambda_text', default='fit', show_default=True, help="Variance factor lambda > 0, or 'fit'.")
@click.option('--pstar', default=None, help='pooled | uniform | benchmark:<label> | from_first_sample.')
@click.option('--first-sample', type=click.Path(path_type=Path), default=None, help='Earlier sample for from_first_sample.')
@click.option('--df', 'df_convention', default=None, help='Independent-cluster count: L or L-1.')
@click.option('--json', 'json_path', type=click.Path(path_type=Path), default=None, help='Where to write the GofResult JSON.')
@click.pass_context
@_handled
def gof(ctx, data, eta_text, lambda_text, pstar, first_sample, df_convention, json_path):
    """Corrected chi-squared test with per-cluster and aggregate p-values."""
    cfg = _load_config(ctx)
    clusters = _clusters_with_p_star(data, pstar or cfg.get('gof.pstar'), first_sample)
    convention = DfConvention.parse(df_convention or cfg.get('gof.df_convention'))
    k = clusters[0].k
    t = [t_statistic(c) for c in clusters]
    sizes = [c.size for c in clusters]

    try:
        if eta_text == 'fit':
            mle = mle_estimate(t, sizes, k, convention)
            eta = mle.eta_hat
            lam = mle.lambda_hat if lambda_text == 'fit' else float(lambda_text)
        else:
            eta = float(eta_text)
            lam = (
                lambda_of_eta(eta, t, sizes, k, convention.count(len(clusters)))
                if lambda_text == 'fit' else float(lambda_text)
            )
    except ValueError:
        raise click.BadParameter("--eta and --lambda take a number or 'fit'") from None

    result = gof_test(clusters, eta, lam, convention)
    precision = cfg.get('output.precision', 7)
    level = cfg.get('gof.quantile_level', 0.95)

    click.echo(format_table(table3_mirror(clusters, eta), precision))
    click.echo()
    click.echo(format_table(pvalue_table(result), precision))
    click.echo(f"\neta={eta:.{precision}g} lambda={lam:.{precision}g}")
    click.echo(f"sum_Q={result.aggregate_stat:.{precision}g} shape={result.df_shape:g} p={result.aggregate_p:.{precision}g}")
    click.echo(f"threshold_{level:g}={result.threshold(level):.{precision}g}")

    target = json_path or cfg.resolve_path(cfg.get('output.directory')) / 'gof_result.json'
    reporter = Reporter(str(Path(target).parent))
    reporter.write_json_report(Path(target).name, result.to_dict())
    reporter.write_table(pvalue_table(result), Path(target).stem + '_pvalues.csv')


@cli.command()
@click.option('--schedule', 'schedule_path', required=True, type=click.Path(path_type=Path), help='Schedule spec JSON.')
@click.option('--n', 'n', type=int, required=True, help='Number of past draws.')
@click.option('--out', 'out_path', type=click.Path(path_type=Path), default=None, help='Weight-profile CSV.')
@click.pass_context
@_handled
def weights(ctx, schedule_path, n, out_path):
    """Weights f(h, n) of past draws in the predictive mean, and h*."""
    cfg = _load_config(ctx)
    profile = weight_profile(build_schedule(ScheduleSpec.load(schedule_path)), n)
    target = Path(out_path) if out_path else cfg.resolve_path(cfg.get('output.directory')) / 'weights.csv'
    Reporter(str(target.parent)).generate_weight_profile(profile, target.name)
    click.echo(f"h_star={profile.h_star}")
    click.echo(f"eventually_increasing={str(profile.eventually_increasing).lower()}")


@cli.command('replicate-covid')
@click.option('--data', type=click.Path(path_type=Path), default=None, help='Contingency CSV (default: bundled fixture).')
@click.option('--df', 'df_convention', default=None, help='Independent-cluster count: L or L-1.')
@click.option('--json', 'json_path', type=click.Path(path_type=Path), default=None, help='Write the full result as JSON.')
@click.option('--no-check', is_flag=True, help='Skip comparison with the published values.')
@click.pass_context
@_handled
def replicate_covid(ctx, data, df_convention, json_path, no_check):
    """Full goodness-of-fit pipeline on the COVID-Twitter sentiment clusters."""
    cfg = _load_config(ctx)
    precision = cfg.get('output.precision', 7)
    level = cfg.get('gof.quantile_level', 0.95)
    fixture = data or _data_path(cfg, 'data.covid_fixture')
    reference = _data_path(cfg, 'data.covid_reference') if data is None else None

    with log_duration(logger, "replicate-covid"):
        result = run_covid_pipeline(
            fixture,
            df_convention=df_convention or cfg.get('gof.df_convention'),
            max_lag=cfg.get('gof.max_lag', 10),
            level=level,
            grid_points=cfg.get('gof.likelihood_grid', 200),
            reference=reference if reference is not None and reference.exists() else None,
            check=not no_check,
        )

    primary = result['mle'][result['df_convention']]
    click.echo(f"classical_chi2={result['classical']['statistic']:.{precision}g} "
               f"df={result['classical']['df']} p={result['classical']['p_value']:.{precision}g}")
    click.echo(f"eta_hat={primary['eta_hat']:.{precision}g}")
    click.echo(f"lambda_hat={primary['lambda_hat']:.{precision}g}")
    for name, mle in sorted(result['mle'].items()):
        click.echo(f"  [{name}] eta_hat={mle['eta_hat']:.{precision}g} lambda_hat={mle['lambda_hat']:.{precision}g} case={mle['case']}")
    click.echo(f"aggregate_p={result['gof']['aggregate_p']:.{precision}g}")

    click.echo("\n" + format_table(pd.DataFrame(result['table3']), precision))
    click.echo(f"\nQ series (threshold_{level:g}={result['threshold']:.{precision}g})")
    for row in result['q_series']:
        flag = ' *' if row['label'] in result['exceeding'] else ''
        click.echo(f"  {row['label']}  {row['Q']:.{precision}g}{flag}")
    click.echo("\n" + format_table(pd.DataFrame(result['portmanteau']), precision))

    curve = result['likelihood_curve']
    click.echo("\nprofile log-likelihood samples")
    for point in curve[::max(1, len(curve) // 10)]:
        click.echo(f"  eta={point['eta']:.4f} loglik={point['loglik']:.{precision}g}")

    if json_path:
        Reporter(str(Path(json_path).parent)).write_json_report(Path(json_path).name, result)


@cli.command()
@click.option('--schedule', 'schedule_path', required=True, type=click.Path(path_type=Path), help='Schedule spec JSON.')
@click.option('--b0', required=True, help='Comma-separated intrinsic weights b0.')
@click.option('--B0', 'B0', default=None, help='Comma-separated initial balls B0.')
@click.option('--steps', type=int, required=True, help='Number of draws.')
@click.option('--seed', type=int, default=None, help='Seed of the random stream.')
@click.option('--out', 'out_path', type=click.Path(path_type=Path), required=True, help='Trajectory CSV.')
@click.pass_context
@_handled
def trajectory(ctx, schedule_path, b0, B0, steps, seed, out_path):
    """Dump one seeded trajectory as n,xi_index,psi_1..psi_k,r_star."""
    cfg = _load_config(ctx)
    if steps < 1:
        raise click.BadParameter("must be >= 1", param_hint='--steps')
    schedule = build_schedule(ScheduleSpec.load(schedule_path))
    params = _urn_params(b0, B0, schedule.required_B0_norm)
    rng = make_rng(seed if seed is not None else cfg.get('simulation.seed'))
    path = write_trajectory_csv(run_trajectory(params, schedule, steps, rng, record=True), out_path)
    click.echo(f"Wrote {steps} steps to {path}")


if __name__ == '__main__':
    cli()
