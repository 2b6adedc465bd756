"""Chi-squared goodness of fit for clustered, correlated categorical data.

Each cluster l of size N_l yields the classical distance
T_l = sum_i (O_i - N_l p*_i)^2 / (N_l p*_i). Under the reinforced-urn model,
Q_l = T_l / N_l^eta is asymptotically Gamma((k-1)/2, 1/(2 lambda)).

The likelihood counts D independent clusters, where D is L or L - 1 (pooled
reference probabilities cost one cluster's worth of freedom):

    loglik(eta) = -(k-1)/2 * D * ln(sum_l t_l / N_l^eta) - (k-1)/2 * eta * sum_l ln N_l
    lambda(eta) = sum_l t_l / N_l^eta / (D (k-1))
"""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize

from error_handler import DegenerateClusters, UsageError, ZeroProbability, ZeroVariance
from specfun import GammaDist, chi2_sf, gamma_quantile, gamma_sf

logger = logging.getLogger(__name__)

BISECTION_XTOL = 1e-12


class DfConvention(str, Enum):
    """How many clusters count as independent: L, or L - 1 for pooled p*."""

    L = 'L'
    L_MINUS_1 = 'L_minus_1'

    @classmethod
    def parse(cls, value: Union[str, 'DfConvention']) -> 'DfConvention':
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        if text in ('l-1', 'l_1', 'l_minus_1'):
            return cls.L_MINUS_1
        if text == 'l':
            return cls.L
        raise UsageError(f"Unknown df convention {value!r}; use 'L' or 'L-1'")

    def count(self, n_clusters: int) -> int:
        return n_clusters if self is DfConvention.L else n_clusters - 1


class MleCase(str, Enum):
    COV_NON_POSITIVE = 'CovNonPositive'
    INTERIOR = 'Interior'
    BOUNDARY_BAD_FIT = 'BoundaryBadFit'


class PStarMode(str, Enum):
    UNIFORM = 'uniform'
    FROM_FIRST_SAMPLE = 'from_first_sample'
    BENCHMARK_CLUSTER = 'benchmark_cluster'
    POOLED = 'pooled'


@dataclass(frozen=True)
class ClusterSample:
    """Counts O_i(l) of one cluster and its reference probabilities p*(l)."""

    label: str
    counts: np.ndarray
    p_star: Optional[np.ndarray] = None

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64).ravel()
        if np.any(counts < 0):
            raise UsageError(f"cluster {self.label}: negative count")
        if counts.sum() < 1:
            raise UsageError(f"cluster {self.label}: empty cluster")
        object.__setattr__(self, 'counts', counts)
        if self.p_star is not None:
            p = np.asarray(self.p_star, dtype=float).ravel()
            if p.shape != counts.shape:
                raise UsageError(f"cluster {self.label}: p* has {p.size} entries for {counts.size} categories")
            if abs(p.sum() - 1.0) > 1e-12 or np.any(p < 0):
                raise UsageError(f"cluster {self.label}: p* must be a probability vector", p_star=p)
            object.__setattr__(self, 'p_star', p)

    @property
    def k(self) -> int:
        return int(self.counts.size)

    @property
    def size(self) -> int:
        return int(self.counts.sum())

    def with_p_star(self, p_star: Sequence[float]) -> 'ClusterSample':
        return replace(self, p_star=np.asarray(p_star, dtype=float))

    def expected(self) -> np.ndarray:
        return self.size * self._require_p_star()

    def _require_p_star(self) -> np.ndarray:
        if self.p_star is None:
            raise UsageError(f"cluster {self.label}: reference probabilities not set")
        return self.p_star


@dataclass(frozen=True)
class MleResult:
    eta_hat: float
    lambda_hat: float
    case: MleCase
    g0: float
    g1: float
    cov_lnN_T: float
    cov_lnN_ToverN: float
    normalization: DfConvention
    bad_fit: bool
    clusters: int

    @property
    def valid_for_testing(self) -> bool:
        return not self.bad_fit

    def to_dict(self) -> Dict[str, Any]:
        return {
            'eta_hat': self.eta_hat,
            'lambda_hat': self.lambda_hat,
            'case': self.case.value,
            'g0': self.g0,
            'g1': self.g1,
            'cov_lnN_T': self.cov_lnN_T,
            'cov_lnN_ToverN': self.cov_lnN_ToverN,
            'normalization': self.normalization.value,
            'bad_fit': self.bad_fit,
            'clusters': self.clusters,
        }


@dataclass(frozen=True)
class ClusterStat:
    label: str
    size: int
    T: Optional[float]
    Q: float
    p_value: float


@dataclass(frozen=True)
class GofResult:
    per_cluster: List[ClusterStat]
    aggregate_stat: float
    aggregate_p: float
    df_shape: float
    lambda_used: float
    eta_used: Optional[float]
    k: int
    df_convention: DfConvention

    @property
    def cluster_dist(self) -> GammaDist:
        return GammaDist.scaled_chi2(self.k - 1, self.lambda_used)

    def threshold(self, level: float = 0.95) -> float:
        """Per-cluster rejection threshold: the level-quantile of Gamma((k-1)/2, 1/(2 lambda))."""
        return gamma_quantile(self.cluster_dist, level)

    def exceeding(self, level: float = 0.95) -> List[ClusterStat]:
        limit = self.threshold(level)
        return [c for c in self.per_cluster if c.Q > limit]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'per_cluster': [
                {'label': c.label, 'size': c.size, 'T': c.T, 'Q': c.Q, 'p_value': c.p_value}
                for c in self.per_cluster
            ],
            'aggregate_stat': self.aggregate_stat,
            'aggregate_p': self.aggregate_p,
            'df_shape': self.df_shape,
            'lambda_used': self.lambda_used,
            'eta_used': self.eta_used,
            'k': self.k,
            'df_convention': self.df_convention.value,
        }


@dataclass(frozen=True)
class PortmanteauRow:
    lag: int
    lb_stat: float
    lb_pvalue: float
    bp_stat: float
    bp_pvalue: float


def t_statistic(cluster: ClusterSample) -> float:
    """T = sum_i (O_i - N p*_i)^2 / (N p*_i)."""
    p = cluster._require_p_star()
    if np.any(p <= 0):
        raise ZeroProbability(f"cluster {cluster.label}: p* has a zero entry", label=cluster.label)
    expected = cluster.size * p
    return float(np.sum((cluster.counts - expected) ** 2 / expected))


def q_statistic(T: float, N: int, eta: float) -> float:
    """Q = T / N^eta."""
    if N < 1:
        raise UsageError(f"cluster size must be >= 1, got {N}")
    if not 0.0 <= eta <= 1.0:
        raise UsageError(f"eta must lie in [0, 1], got {eta}")
    return T / N ** eta


def _prepare(t: Sequence[float], N: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    t_arr = np.asarray(t, dtype=float).ravel()
    log_n = np.log(np.asarray(N, dtype=float).ravel())
    if t_arr.shape != log_n.shape:
        raise UsageError(f"t and N differ in length ({t_arr.size} vs {log_n.size})")
    if np.any(t_arr < 0):
        raise UsageError("t values must be non-negative")
    if not t_arr.sum() > 0:
        raise DegenerateClusters("every cluster statistic is zero; the likelihood has no maximum")
    if np.ptp(log_n) == 0.0:
        raise DegenerateClusters("all cluster sizes are equal; only lambda * N0^eta is identifiable")
    return t_arr, log_n


def _tilted_weights(eta: float, t: np.ndarray, log_n: np.ndarray) -> np.ndarray:
    """p(eta, l) proportional to t_l / N_l^eta, shifted by the largest log-weight."""
    with np.errstate(divide='ignore'):
        log_w = np.log(t) - eta * log_n
    w = np.exp(log_w - np.max(log_w))
    return w / w.sum()


def _df_count(df_count: Optional[int], n_clusters: int) -> int:
    count = n_clusters if df_count is None else int(df_count)
    if count < 1:
        raise UsageError(f"degrees-of-freedom count must be >= 1, got {count}")
    return count


def g_function(eta: float, t: Sequence[float], N: Sequence[int], df_count: Optional[int] = None) -> float:
    """g(eta) = sum_l p(eta, l) ln N_l - (1/D) sum_l ln N_l, with D = L unless given.

    Strictly decreasing in eta; its root is the profile-likelihood maximizer.
    """
    t_arr, log_n = _prepare(t, N)
    D = _df_count(df_count, t_arr.size)
    return float(_tilted_weights(eta, t_arr, log_n) @ log_n - log_n.sum() / D)


def lambda_of_eta(eta: float, t: Sequence[float], N: Sequence[int], k: int, df_count: Optional[int] = None) -> float:
    t_arr = np.asarray(t, dtype=float)
    D = _df_count(df_count, t_arr.size)
    return float(np.sum(t_arr / np.asarray(N, dtype=float) ** eta) / (D * (k - 1)))


def profile_loglik(eta: float, t: Sequence[float], N: Sequence[int], k: int, df_count: Optional[int] = None) -> float:
    """Log-likelihood at (eta, lambda(eta)), up to an additive constant."""
    t_arr = np.asarray(t, dtype=float)
    log_n = np.log(np.asarray(N, dtype=float))
    D = _df_count(df_count, t_arr.size)
    total = np.sum(t_arr * np.exp(-eta * log_n))
    return float(-(k - 1) / 2.0 * D * math.log(total) - (k - 1) / 2.0 * eta * log_n.sum())


def likelihood_curve(
    t: Sequence[float], N: Sequence[int], k: int, points: int = 200, df_count: Optional[int] = None
) -> List[Tuple[float, float]]:
    """Profile log-likelihood sampled on an evenly spaced eta grid over [0, 1]."""
    grid = np.linspace(0.0, 1.0, points)
    return [(float(eta), profile_loglik(eta, t, N, k, df_count)) for eta in grid]


def _covariances(t: np.ndarray, log_n: np.ndarray, sizes: np.ndarray) -> Tuple[float, float]:
    """Population (1/L) covariances Cov(ln N, T) and Cov(ln N, T/N)."""
    cov_t = float(np.mean(log_n * t) - log_n.mean() * t.mean())
    ratio = t / sizes
    cov_ratio = float(np.mean(log_n * ratio) - log_n.mean() * ratio.mean())
    return cov_t, cov_ratio


def mle_estimate(
    t: Sequence[float],
    N: Sequence[int],
    k: int,
    convention: Union[DfConvention, str] = DfConvention.L,
    xtol: float = BISECTION_XTOL,
) -> MleResult:
    """Maximum-likelihood (eta, lambda) over [0, 1] x (0, inf).

    g(0) <= 0: eta = 0 (ties included). g(1) >= 0: eta = 1, flagged as a bad
    fit. Otherwise eta is the unique root of g, found by bisection.
    """
    convention = DfConvention.parse(convention)
    t_arr = np.asarray(t, dtype=float).ravel()
    sizes = np.asarray(N, dtype=float).ravel()
    L = t_arr.size
    if L < 2:
        raise DegenerateClusters(
            "at least two clusters of different sizes are needed",
            identifiable_product=float(t_arr.sum() / max(1, (k - 1) * L)) if L else None,
        )
    D = convention.count(L)
    if np.ptp(sizes) == 0.0:
        raise DegenerateClusters(
            f"all {L} clusters have size {int(sizes[0])}; only lambda * N0^eta is identifiable",
            identifiable_product=float(t_arr.sum() / ((k - 1) * D)),
        )
    t_arr, log_n = _prepare(t_arr, sizes)

    cov_t, cov_ratio = _covariances(t_arr, log_n, sizes)

    def g(eta: float) -> float:
        return float(_tilted_weights(eta, t_arr, log_n) @ log_n - log_n.sum() / D)

    g0, g1 = g(0.0), g(1.0)
    if g0 <= 0.0:
        case, eta_hat = MleCase.COV_NON_POSITIVE, 0.0
    elif g1 >= 0.0:
        case, eta_hat = MleCase.BOUNDARY_BAD_FIT, 1.0
    else:
        case = MleCase.INTERIOR
        eta_hat = float(optimize.bisect(g, 0.0, 1.0, xtol=xtol, maxiter=200))

    lambda_hat = lambda_of_eta(eta_hat, t_arr, sizes, k, D)
    bad_fit = case is MleCase.BOUNDARY_BAD_FIT or (case is MleCase.COV_NON_POSITIVE and lambda_hat <= 1.0)
    if bad_fit:
        logger.warning(f"MLE verdict: bad fit (case={case.value}, lambda_hat={lambda_hat:.7g})")
    else:
        logger.info(f"MLE case={case.value} eta_hat={eta_hat:.7g} lambda_hat={lambda_hat:.7g} (D={D})")

    return MleResult(
        eta_hat=eta_hat,
        lambda_hat=lambda_hat,
        case=case,
        g0=g0,
        g1=g1,
        cov_lnN_T=cov_t,
        cov_lnN_ToverN=cov_ratio,
        normalization=convention,
        bad_fit=bad_fit,
        clusters=L,
    )


def cluster_test(Q: float, lam: float, k: int) -> float:
    """Upper tail of Gamma((k-1)/2, 1/(2 lambda)) at Q."""
    return gamma_sf(GammaDist.scaled_chi2(k - 1, lam), Q)


def aggregate_test(
    Q_list: Sequence[float],
    lam: float,
    k: int,
    df_convention: Union[DfConvention, str],
    T_list: Optional[Sequence[float]] = None,
    labels: Optional[Sequence[str]] = None,
    sizes: Optional[Sequence[int]] = None,
    eta: Optional[float] = None,
) -> GofResult:
    """Per-cluster p-values and the aggregate test of sum Q against Gamma(D(k-1)/2, 1/(2 lambda))."""
    convention = DfConvention.parse(df_convention)
    Qs = [float(q) for q in Q_list]
    L = len(Qs)
    D = convention.count(L)
    if D < 1:
        raise UsageError(f"aggregate test needs at least {2 if convention is DfConvention.L_MINUS_1 else 1} clusters")
    labels = list(labels) if labels is not None else [str(i + 1) for i in range(L)]
    Ts = list(T_list) if T_list is not None else [None] * L
    Ns = list(sizes) if sizes is not None else [0] * L

    per_cluster = [
        ClusterStat(label=labels[i], size=int(Ns[i]), T=Ts[i], Q=Qs[i], p_value=cluster_test(Qs[i], lam, k))
        for i in range(L)
    ]
    shape = D * (k - 1) / 2.0
    total = float(sum(Qs))
    aggregate_p = gamma_sf(GammaDist(shape, 1.0 / (2.0 * lam)), total)
    logger.info(f"Aggregate test: sum Q={total:.7g}, shape={shape}, p={aggregate_p:.7g}")
    return GofResult(
        per_cluster=per_cluster,
        aggregate_stat=total,
        aggregate_p=aggregate_p,
        df_shape=shape,
        lambda_used=lam,
        eta_used=eta,
        k=k,
        df_convention=convention,
    )


def gof_test(
    clusters: Sequence[ClusterSample],
    eta: float,
    lam: float,
    df_convention: Union[DfConvention, str],
) -> GofResult:
    """Full test on clusters with p* set: T, Q, per-cluster and aggregate p-values."""
    if not clusters:
        raise UsageError("no clusters to test")
    k = clusters[0].k
    Ts = [t_statistic(c) for c in clusters]
    Qs = [q_statistic(T, c.size, eta) for T, c in zip(Ts, clusters)]
    return aggregate_test(
        Qs, lam, k, df_convention,
        T_list=Ts,
        labels=[c.label for c in clusters],
        sizes=[c.size for c in clusters],
        eta=eta,
    )


def classical_chi2(
    clusters: Sequence[ClusterSample],
    df_convention: Union[DfConvention, str] = DfConvention.L_MINUS_1,
) -> Tuple[float, float, int]:
    """sum_l T_l with its chi2(D(k-1)) tail; returns (statistic, p_value, df)."""
    convention = DfConvention.parse(df_convention)
    if not clusters:
        raise UsageError("classical chi-squared needs at least one cluster")
    statistic = float(sum(t_statistic(c) for c in clusters))
    df = convention.count(len(clusters)) * (clusters[0].k - 1)
    if df < 1:
        raise UsageError("classical chi-squared needs at least one degree of freedom")
    return statistic, chi2_sf(statistic, df), df


def build_p_star(
    mode: Union[PStarMode, str],
    clusters: Sequence[ClusterSample],
    first_sample: Optional[Sequence[ClusterSample]] = None,
    benchmark: Optional[str] = None,
) -> List[ClusterSample]:
    """Attach reference probabilities to clusters.

    uniform           1/k everywhere
    from_first_sample per-cluster frequencies of an earlier sample (matched by label)
    benchmark_cluster frequencies of the benchmark cluster; it is dropped from the result
    pooled            overall frequencies of all clusters
    """
    try:
        mode = PStarMode(mode)
    except ValueError:
        raise UsageError(f"Unknown p* mode {mode!r}; valid: {', '.join(m.value for m in PStarMode)}") from None
    if not clusters:
        raise UsageError("no clusters given")
    k = clusters[0].k
    if any(c.k != k for c in clusters):
        raise UsageError("clusters disagree on the number of categories")

    if mode is PStarMode.UNIFORM:
        result = [c.with_p_star(np.full(k, 1.0 / k)) for c in clusters]
    elif mode is PStarMode.POOLED:
        totals = np.sum([c.counts for c in clusters], axis=0).astype(float)
        result = [c.with_p_star(totals / totals.sum()) for c in clusters]
    elif mode is PStarMode.BENCHMARK_CLUSTER:
        matches = [c for c in clusters if c.label == benchmark]
        if not matches:
            raise UsageError(f"benchmark cluster {benchmark!r} not found")
        reference = matches[0].counts / matches[0].size
        result = [c.with_p_star(reference) for c in clusters if c.label != benchmark]
    else:
        if first_sample is None:
            raise UsageError("from_first_sample mode needs the first-period sample")
        by_label = {c.label: c for c in first_sample}
        result = []
        for c in clusters:
            earlier = by_label.get(c.label)
            if earlier is None:
                raise UsageError(f"cluster {c.label} missing from the first-period sample")
            result.append(c.with_p_star(earlier.counts / earlier.size))

    for c in result:
        if np.any(c.p_star <= 0):
            raise ZeroProbability(f"cluster {c.label}: reference probability is zero", label=c.label)
    return result


def autocorrelation(series: Sequence[float], max_lag: int) -> np.ndarray:
    """Sample autocorrelations rho_1..rho_H (mean-centered, common denominator)."""
    x = np.asarray(series, dtype=float).ravel()
    centered = x - x.mean()
    denominator = float(centered @ centered)
    if denominator == 0.0:
        raise ZeroVariance("series has zero sample variance")
    return np.array([centered[h:] @ centered[:-h] / denominator for h in range(1, max_lag + 1)])


def ljung_box(series: Sequence[float], max_lag: int) -> List[PortmanteauRow]:
    """Ljung-Box and Box-Pierce statistics for lags 1..H with chi2(h) p-values.

    Q_LB(h) = n(n+2) sum_{j<=h} rho_j^2 / (n-j);  Q_BP(h) = n sum_{j<=h} rho_j^2.
    """
    n = len(series)
    if not 1 <= max_lag < n:
        raise UsageError(f"need 1 <= max_lag < n, got max_lag={max_lag}, n={n}")
    rho = autocorrelation(series, max_lag)
    lags = np.arange(1, max_lag + 1)
    lb = n * (n + 2) * np.cumsum(rho ** 2 / (n - lags))
    bp = n * np.cumsum(rho ** 2)
    return [
        PortmanteauRow(
            lag=int(h),
            lb_stat=float(lb[i]),
            lb_pvalue=chi2_sf(float(lb[i]), h),
            bp_stat=float(bp[i]),
            bp_pvalue=chi2_sf(float(bp[i]), h),
        )
        for i, h in enumerate(lags)
    ]


def chi2_quadratic_form(counts: Sequence[int], p_star: Sequence[float]) -> Tuple[float, float]:
    """Both sides of the truncated quadratic-form identity.

    sum_i N (p^_i - p_i)^2 / p_i equals N d' [diag(1/p_i) + 11'/p_k] d with
    d the first k-1 components of p^ - p.
    """
    counts = np.asarray(counts, dtype=float)
    p = np.asarray(p_star, dtype=float)
    if np.any(p <= 0):
        raise ZeroProbability("p* has a zero entry")
    N = counts.sum()
    diff = counts / N - p
    lhs = float(N * np.sum(diff ** 2 / p))
    d = diff[:-1]
    matrix = np.diag(1.0 / p[:-1]) + np.ones((d.size, d.size)) / p[-1]
    rhs = float(N * d @ matrix @ d)
    return lhs, rhs
