"""Replica harness for the GRP urn: seeded trajectories summarized at a set of
horizons, CLT reports for both schedule regimes, the scaled chi-squared check
and the random-limit diagnostic."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from error_handler import (
    EmptySample,
    InvalidParams,
    MinimumHorizon,
    ResourceLimit,
    UsageError,
    WrongRegime,
    ZeroProbability,
    ZeroVariance,
)
from moments import MomentAccumulator
from schedules import Schedule, ScheduleSpec, ScheduleVariant, build_schedule
from specfun import GammaDist, ks_test, normal_cdf
from urn import CHUNK_SIZE, RENORMALIZE_EVERY, UrnBatch, UrnParams, replica_seed, theta_second_moment

logger = logging.getLogger(__name__)

RECORD_FLAGS = frozenset({'late_window'})
REQUIRED_B0_RTOL = 1e-9
RANDOM_LIMIT_FACTOR = 10.0


@dataclass(frozen=True)
class ExperimentConfig:
    params: UrnParams
    schedule: ScheduleSpec
    horizons: Tuple[int, ...]
    replicas: int
    base_seed: int
    threads: int = 1
    batch_size: int = 250
    step_budget: float = 2e9
    chunk_size: int = CHUNK_SIZE
    renormalize_every: int = RENORMALIZE_EVERY
    record: FrozenSet[str] = frozenset({'late_window'})

    def __post_init__(self):
        object.__setattr__(self, 'horizons', tuple(int(h) for h in self.horizons))
        object.__setattr__(self, 'record', frozenset(self.record))

    @property
    def max_horizon(self) -> int:
        return self.horizons[-1]

    def validate(self) -> Schedule:
        """Check the configuration and build its schedule."""
        if self.replicas < 1:
            raise InvalidParams(f"replicas must be >= 1, got {self.replicas}", replicas=self.replicas)
        if not self.horizons:
            raise MinimumHorizon("at least one horizon is required")
        if min(self.horizons) < 1:
            raise MinimumHorizon(f"horizons must be >= 1 (the empirical mean needs a draw), got {list(self.horizons)}")
        if any(b <= a for a, b in zip(self.horizons, self.horizons[1:])):
            raise InvalidParams(f"horizons must be strictly increasing, got {list(self.horizons)}")
        if self.threads < 1 or self.batch_size < 1:
            raise InvalidParams("threads and batch_size must be >= 1")
        unknown = self.record - RECORD_FLAGS
        if unknown:
            raise InvalidParams(f"unknown record flags {sorted(unknown)}; valid: {sorted(RECORD_FLAGS)}")

        steps = self.replicas * self.max_horizon
        if steps > self.step_budget:
            raise ResourceLimit(
                f"{self.replicas} replicas x {self.max_horizon} steps exceeds the step budget {self.step_budget:.3g}",
                steps=steps,
                step_budget=self.step_budget,
            )

        schedule = build_schedule(self.schedule)
        required = schedule.required_B0_norm
        if required is not None and abs(self.params.B0_norm - required) > REQUIRED_B0_RTOL * max(1.0, required):
            raise InvalidParams(
                f"{self.schedule.variant.value} schedule needs |B0| = {required:.17g}, got {self.params.B0_norm:.17g}",
                required_B0_norm=required,
                B0_norm=self.params.B0_norm,
            )
        if 'b0_norm' in self.schedule.params:
            expected = float(self.schedule.params['b0_norm'])
            if abs(expected - self.params.b0_norm) > REQUIRED_B0_RTOL * expected:
                raise InvalidParams(
                    f"schedule was built for |b0| = {expected}, urn has |b0| = {self.params.b0_norm}",
                    schedule_b0_norm=expected,
                    b0_norm=self.params.b0_norm,
                )
        return schedule

    def to_dict(self) -> Dict[str, Any]:
        return {
            'params': self.params.to_dict(),
            'schedule': self.schedule.to_dict(),
            'horizons': list(self.horizons),
            'replicas': self.replicas,
            'base_seed': self.base_seed,
            'seed_rule': 'base_seed XOR splitmix64(replica)',
            'batch_size': self.batch_size,
            'chunk_size': self.chunk_size,
            'renormalize_every': self.renormalize_every,
            'record': sorted(self.record),
        }


@dataclass(frozen=True)
class ReplicaSummary:
    """One replica observed at horizon N."""

    replica: int
    horizon: int
    xi_bar: np.ndarray
    psi_bar: np.ndarray
    theta_bar: np.ndarray
    psi_final: np.ndarray
    chi2_stat: float
    counts: np.ndarray
    p0: np.ndarray
    late_psi_var: Optional[np.ndarray] = None

    @property
    def martingale_mean(self) -> np.ndarray:
        """(1/N) sum of the increments xi_n - psi_{n-1}."""
        return self.xi_bar - self.psi_bar


def _chi2_distance(counts: np.ndarray, N: int, p0: np.ndarray) -> float:
    # colors with p0 = 0 carry no information about the fit
    mask = p0 > 0
    expected = N * p0[mask]
    return float(np.sum((counts[mask] - expected) ** 2 / expected))


@dataclass
class HorizonSummaries:
    horizon: int
    spec: ScheduleSpec
    p0: np.ndarray
    replicas: List[ReplicaSummary]
    xi_moments: MomentAccumulator = None

    def _stack(self, name: str) -> np.ndarray:
        return np.vstack([getattr(s, name) for s in self.replicas])

    @property
    def size(self) -> int:
        return len(self.replicas)

    @property
    def k(self) -> int:
        return int(self.p0.size)

    @property
    def xi_bar(self) -> np.ndarray:
        return self._stack('xi_bar')

    @property
    def psi_bar(self) -> np.ndarray:
        return self._stack('psi_bar')

    @property
    def theta_bar(self) -> np.ndarray:
        return self._stack('theta_bar')

    @property
    def psi_final(self) -> np.ndarray:
        return self._stack('psi_final')

    @property
    def chi2(self) -> np.ndarray:
        return np.array([s.chi2_stat for s in self.replicas])

    @property
    def late_psi_var(self) -> Optional[np.ndarray]:
        if any(s.late_psi_var is None for s in self.replicas):
            return None
        return self._stack('late_psi_var')


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    schedule: Schedule
    horizons: List[HorizonSummaries]

    def at(self, horizon: int) -> HorizonSummaries:
        for summaries in self.horizons:
            if summaries.horizon == horizon:
                return summaries
        raise UsageError(f"horizon {horizon} was not recorded; have {[h.horizon for h in self.horizons]}")

    @property
    def final(self) -> HorizonSummaries:
        return self.horizons[-1]

    def horizon_table(self) -> pd.DataFrame:
        """Mean and spread of xi_bar across replicas per horizon and component."""
        rows = []
        for summaries in self.horizons:
            moments = summaries.xi_moments
            sd = moments.std(ddof=1) if moments.count > 1 else np.full(summaries.k, np.nan)
            for i in range(summaries.k):
                rows.append({
                    'horizon': summaries.horizon,
                    'component': i + 1,
                    'p0': float(summaries.p0[i]),
                    'mean_xi_bar': float(moments.mean[i]),
                    'sd_xi_bar': float(sd[i]),
                    'mc_se': float(sd[i] / math.sqrt(moments.count)),
                })
        return pd.DataFrame(rows)

    def lambda_table(self) -> List[Dict[str, Any]]:
        if self.config.schedule.variant not in (ScheduleVariant.EXAMPLE1, ScheduleVariant.EXAMPLE2):
            return []
        table = []
        for summaries in self.horizons:
            if summaries.size < 2:
                continue
            try:
                report = clt_report(summaries)
            except ZeroVariance:
                continue
            table.append({
                'horizon': summaries.horizon,
                'e': report.e,
                'lambda_theory': report.lambda_theory,
                'lambda_hat': report.lambda_hat,
                'ks_pvalue': report.ks_pvalue,
                'mean_remainder': report.mean_remainder,
            })
        return table

    def to_manifest(self) -> Dict[str, Any]:
        """Everything needed to regenerate the figures: config, seeds, lambda table."""
        return {
            'config': self.config.to_dict(),
            'schedule': self.schedule.descriptor,
            'seeds': [replica_seed(self.config.base_seed, r) for r in range(self.config.replicas)],
            'horizon_table': self.horizon_table().to_dict(orient='records'),
            'lambda_table': self.lambda_table(),
        }


def _run_batch(
    config: ExperimentConfig,
    schedule: Schedule,
    replica_ids: Sequence[int],
) -> Dict[int, Tuple[List[ReplicaSummary], MomentAccumulator]]:
    params = config.params
    p0 = params.p0
    batch = UrnBatch(
        params,
        schedule,
        [replica_seed(config.base_seed, r) for r in replica_ids],
        chunk_size=config.chunk_size,
        renormalize_every=config.renormalize_every,
        total_steps=config.max_horizon,
    )

    late = None
    late_start = config.max_horizon - config.max_horizon // 2
    if 'late_window' in config.record:
        late = MomentAccumulator((batch.size, params.k))

    out = {}
    for horizon in config.horizons:
        while batch.n < horizon:
            batch.step()
            if late is not None and batch.n > late_start:
                late.update(batch.psi[None])

        xi_bar = batch.counts / horizon
        psi_bar = batch.psi_sum / horizon
        late_var = late.variance(ddof=0) if late is not None and horizon == config.max_horizon else None
        summaries = [
            ReplicaSummary(
                replica=r,
                horizon=horizon,
                xi_bar=xi_bar[i].copy(),
                psi_bar=psi_bar[i].copy(),
                theta_bar=psi_bar[i] - p0,
                psi_final=batch.psi[i].copy(),
                chi2_stat=_chi2_distance(batch.counts[i], horizon, p0),
                counts=batch.counts[i].copy(),
                p0=p0,
                late_psi_var=None if late_var is None else late_var[i].copy(),
            )
            for i, r in enumerate(replica_ids)
        ]
        moments = MomentAccumulator((params.k,)).update(xi_bar)
        out[horizon] = (summaries, moments)
    return out


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run R seeded replicas, each observed at every horizon of one trajectory.

    Replicas are split into batches of ``batch_size`` that run on ``threads``
    workers. Results are ordered by replica index, so they do not depend on
    the worker count.
    """
    schedule = config.validate()
    starts = list(range(0, config.replicas, config.batch_size))
    batches = [list(range(s, min(s + config.batch_size, config.replicas))) for s in starts]
    logger.info(
        f"Running {config.replicas} replicas of {schedule.variant.value if schedule.variant else 'custom'} "
        f"to N={config.max_horizon} in {len(batches)} batches on {config.threads} threads"
    )

    results: Dict[int, Dict[int, Tuple[List[ReplicaSummary], MomentAccumulator]]] = {}
    if config.threads == 1 or len(batches) == 1:
        for start, ids in zip(starts, batches):
            results[start] = _run_batch(config, schedule, ids)
            logger.debug(f"Batch starting at replica {start} done")
    else:
        with ThreadPoolExecutor(max_workers=config.threads) as executor:
            future_to_start = {
                executor.submit(_run_batch, config, schedule, ids): start
                for start, ids in zip(starts, batches)
            }
            for future in as_completed(future_to_start):
                start = future_to_start[future]
                results[start] = future.result()
                logger.debug(f"Batch starting at replica {start} done")

    horizons = []
    for horizon in config.horizons:
        parts = [results[start][horizon] for start in starts]
        replicas = [summary for part, _ in parts for summary in part]
        moments = MomentAccumulator.pooled((m for _, m in parts), shape=(config.params.k,))
        horizons.append(HorizonSummaries(horizon, config.schedule, config.params.p0, replicas, moments))

    logger.info(f"Experiment finished: {len(horizons)} horizons x {config.replicas} replicas")
    return ExperimentResult(config, schedule, horizons)


@dataclass
class CltReport:
    horizon: int
    e: float
    lambda_theory: float
    lambda_hat: float
    standardized: np.ndarray
    dominant: np.ndarray
    remainder: np.ndarray
    remainder_norms: np.ndarray
    variance_ratios: np.ndarray
    ks_pvalues: np.ndarray = field(default=None)

    @property
    def ks_pvalue(self) -> float:
        return float(np.min(self.ks_pvalues))

    @property
    def mean_remainder(self) -> float:
        return float(np.mean(self.remainder_norms))

    def normality_passes(self, alpha: float = 0.01) -> bool:
        """KS normality per component, Bonferroni-corrected over components."""
        return self.ks_pvalue > alpha / len(self.ks_pvalues)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'horizon': self.horizon,
            'e': self.e,
            'lambda_theory': self.lambda_theory,
            'lambda_hat': self.lambda_hat,
            'variance_ratios': self.variance_ratios.tolist(),
            'ks_pvalues': self.ks_pvalues.tolist(),
            'mean_remainder': self.mean_remainder,
        }


def _informative(p0: np.ndarray) -> np.ndarray:
    mask = (p0 > 0) & (p0 < 1)
    if not mask.any():
        raise ZeroVariance("every component of p0 is 0 or 1; nothing to standardize")
    return mask


def _lambda_hat(scaled: np.ndarray, p0: np.ndarray) -> Tuple[float, np.ndarray]:
    """Component-averaged Var_R[N^e (xi_bar - p0)] / (p0 (1 - p0)) and the per-component variances."""
    if scaled.shape[0] < 2:
        raise EmptySample("lambda_hat needs at least two replicas")
    mask = _informative(p0)
    variances = np.var(scaled, axis=0, ddof=1)
    ratios = variances[mask] / (p0[mask] * (1.0 - p0[mask]))
    lambda_hat = float(np.mean(ratios))
    if not lambda_hat > 0:
        raise ZeroVariance("replicas show no spread; lambda_hat is zero", horizon=None)
    return lambda_hat, variances


def _build_report(
    summaries: HorizonSummaries,
    e: float,
    lambda_theory: float,
    dominant: np.ndarray,
    remainder: np.ndarray,
) -> CltReport:
    p0 = summaries.p0
    N = summaries.horizon
    scaled = N ** e * (summaries.xi_bar - p0)
    lambda_hat, variances = _lambda_hat(scaled, p0)
    mask = _informative(p0)

    scale = np.ones_like(p0)
    scale[mask] = np.sqrt(lambda_hat * p0[mask] * (1.0 - p0[mask]))
    standardized = np.where(mask, scaled / scale, 0.0)

    ratios = np.full(p0.shape, np.nan)
    ratios[mask] = variances[mask] / (lambda_theory * p0[mask] * (1.0 - p0[mask]))
    ks_pvalues = np.array([ks_test(standardized[:, i], normal_cdf)[1] for i in np.nonzero(mask)[0]])

    report = CltReport(
        horizon=N,
        e=e,
        lambda_theory=lambda_theory,
        lambda_hat=lambda_hat,
        standardized=standardized,
        dominant=dominant,
        remainder=remainder,
        remainder_norms=np.linalg.norm(remainder, axis=1),
        variance_ratios=ratios,
        ks_pvalues=ks_pvalues,
    )
    logger.info(
        f"CLT report N={N}: e={e:.4g} lambda_theory={lambda_theory:.7g} "
        f"lambda_hat={lambda_hat:.7g} min KS p={report.ks_pvalue:.4g}"
    )
    return report


def _require_variant(summaries: HorizonSummaries, variant: ScheduleVariant, report: str):
    if summaries.spec.variant is not variant:
        raise WrongRegime(
            f"{report} needs a {variant.value} schedule, got {summaries.spec.variant.value}",
            variant=summaries.spec.variant.value,
        )


def clt_report_theorem2(
    summaries: HorizonSummaries,
    c: Optional[float] = None,
    eps: Optional[float] = None,
) -> CltReport:
    """Report for eps_n = (1+n)^-eps, delta_n = c eps_n.

    sqrt(N)(xi_bar - p0) splits into the dominant term (c+1) sqrt(N)(xi_bar - psi_bar)
    minus the remainder sqrt(N) D_N, D_N = c(xi_bar - psi_bar) - (psi_bar - p0).
    """
    _require_variant(summaries, ScheduleVariant.EXAMPLE1, 'clt_report_theorem2')
    c = float(summaries.spec.params['c'] if c is None else c)
    eps = float(summaries.spec.params['eps'] if eps is None else eps)
    root_n = math.sqrt(summaries.horizon)
    xi_bar, psi_bar = summaries.xi_bar, summaries.psi_bar

    dominant = (c + 1.0) * root_n * (xi_bar - psi_bar)
    remainder = root_n * (c * (xi_bar - psi_bar) - (psi_bar - summaries.p0))
    lambda_theory = (c + 1.0) ** 2 if eps < 1.0 else 2.0 * c * (c + 1.0) + 1.0
    return _build_report(summaries, 0.5, lambda_theory, dominant, remainder)


def clt_report_theorem3(
    summaries: HorizonSummaries,
    c: Optional[float] = None,
    eps: Optional[float] = None,
    delta: Optional[float] = None,
) -> CltReport:
    """Report for eps_n = (n+1)^-eps, delta_n ~ c (n+1)^-delta with delta < eps.

    e = 1/2 - (eps - delta); the dominant term is N^e theta_bar.
    """
    _require_variant(summaries, ScheduleVariant.EXAMPLE2, 'clt_report_theorem3')
    params = summaries.spec.params
    c = float(1.0 / params['b0_norm'] if c is None else c)
    eps = float(params['eps'] if eps is None else eps)
    delta = float(params['delta'] if delta is None else delta)
    if not delta < eps:
        raise WrongRegime(f"need delta < eps, got eps={eps}, delta={delta}", eps=eps, delta=delta)

    gamma = eps - delta
    e = 0.5 - gamma
    scale = summaries.horizon ** e
    dominant = scale * summaries.theta_bar
    remainder = scale * (summaries.xi_bar - summaries.p0) - dominant
    lambda_theory = c * c / (1.0 + 2.0 * gamma)
    return _build_report(summaries, e, lambda_theory, dominant, remainder)


def clt_report(summaries: HorizonSummaries) -> CltReport:
    variant = summaries.spec.variant
    if variant is ScheduleVariant.EXAMPLE1:
        return clt_report_theorem2(summaries)
    if variant is ScheduleVariant.EXAMPLE2:
        return clt_report_theorem3(summaries)
    raise WrongRegime(
        f"no CLT report for {variant.value}; only example1 and example2 schedules have one",
        variant=variant.value,
    )


def chi2_scaled_statistic(summary: ReplicaSummary, e: float, N: int) -> float:
    """N^-(1-2e) sum_i (O_i - N p0_i)^2 / (N p0_i)."""
    p0 = np.asarray(summary.p0, dtype=float)
    if np.any(p0 <= 0):
        raise ZeroProbability("chi-squared statistic needs every p0_i > 0", p0=p0)
    expected = N * p0
    classical = float(np.sum((np.asarray(summary.counts, dtype=float) - expected) ** 2 / expected))
    return classical * N ** (-(1.0 - 2.0 * e))


@dataclass(frozen=True)
class Chi2LimitReport:
    e: float
    lam: float
    df: int
    statistics: np.ndarray
    ks_stat: float
    ks_pvalue: float

    @property
    def limit(self) -> GammaDist:
        return GammaDist.scaled_chi2(self.df, self.lam)

    def passes(self, alpha: float = 0.01) -> bool:
        return self.ks_pvalue > alpha


def chi2_limit_check(summaries: HorizonSummaries, e: float, lam: float) -> Chi2LimitReport:
    """KS test of the scaled statistics against Gamma((k-1)/2, 1/(2 lambda))."""
    N = summaries.horizon
    statistics = np.array([chi2_scaled_statistic(s, e, N) for s in summaries.replicas])
    limit = GammaDist.scaled_chi2(summaries.k - 1, lam)
    ks_stat, ks_pvalue = ks_test(statistics, limit.cdf)
    logger.info(f"Scaled chi2 at N={N}: mean={statistics.mean():.4g} (limit {limit.mean:.4g}), KS p={ks_pvalue:.4g}")
    return Chi2LimitReport(e, lam, summaries.k - 1, statistics, ks_stat, ks_pvalue)


@dataclass(frozen=True)
class RandomLimitReport:
    horizon: int
    across_var: np.ndarray
    within_var: np.ndarray
    factor: float

    @property
    def random_limit(self) -> bool:
        """True when psi_N varies across replicas far more than along a late trajectory."""
        return bool(np.any(self.across_var > self.factor * self.within_var))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'horizon': self.horizon,
            'across_var': self.across_var.tolist(),
            'within_var': self.within_var.tolist(),
            'factor': self.factor,
            'random_limit': self.random_limit,
        }


def random_limit_check(summaries: HorizonSummaries, factor: float = RANDOM_LIMIT_FACTOR) -> RandomLimitReport:
    """Across-replica variance of psi_N against the mean late-window variance."""
    within = summaries.late_psi_var
    if within is None:
        raise UsageError("random_limit_check needs an experiment run with record={'late_window'}")
    if summaries.size < 2:
        raise EmptySample("random_limit_check needs at least two replicas")
    across = np.var(summaries.psi_final, axis=0, ddof=1)
    report = RandomLimitReport(summaries.horizon, across, within.mean(axis=0), factor)
    if report.random_limit:
        logger.info(f"Random limit detected at N={summaries.horizon}: across-replica variance {across}")
    return report


@dataclass(frozen=True)
class MomentDecay:
    horizons: Tuple[int, ...]
    mean_sq_norm: Tuple[float, ...]
    slope: float
    exact_mean_sq: Optional[Tuple[float, ...]] = None
    exact_slope: Optional[float] = None


def theta_moment_decay(
    horizons: Sequence[HorizonSummaries],
    params: Optional[UrnParams] = None,
    schedule: Optional[Schedule] = None,
) -> MomentDecay:
    """Log-log slope of the replica average of ||theta_N||^2 across horizons.

    With ``params`` and ``schedule`` the exact second moment is attached for comparison.
    """
    if len(horizons) < 2:
        raise UsageError("theta_moment_decay needs at least two horizons")
    Ns = np.array([h.horizon for h in horizons], dtype=float)
    mean_sq = np.array([np.mean(np.sum((h.psi_final - h.p0) ** 2, axis=1)) for h in horizons])
    if np.any(mean_sq <= 0):
        raise ZeroVariance("theta_N is identically zero at some horizon")
    slope = float(np.polyfit(np.log(Ns), np.log(mean_sq), 1)[0])
    exact_mean_sq = exact_slope = None
    if params is not None and schedule is not None:
        exact = theta_second_moment(params, schedule, [int(n) for n in Ns])
        exact_mean_sq = tuple(float(v) for v in exact)
        if np.all(exact > 0):
            exact_slope = float(np.polyfit(np.log(Ns), np.log(exact), 1)[0])
    return MomentDecay(
        tuple(int(n) for n in Ns),
        tuple(float(v) for v in mean_sq),
        slope,
        exact_mean_sq=exact_mean_sq,
        exact_slope=exact_slope,
    )
