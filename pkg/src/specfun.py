"""Special functions: log-gamma, regularized incomplete gamma, Gamma/chi-squared
distributions, the standard normal CDF and a one-sample Kolmogorov-Smirnov test.

Gamma distributions use the rate parameterization: density proportional to
x^(a-1) exp(-b x).
"""

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

import numpy as np

from error_handler import ConvergenceError, DomainError, EmptySample

MAX_ITERATIONS = 300
TOLERANCE = 1e-15
TINY = 1e-300
KOLMOGOROV_TERMS = 100

LANCZOS_G = 7
LANCZOS_COEFFICIENTS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def ln_gamma(a: float) -> float:
    """log Gamma(a) for a > 0 (Lanczos, g = 7)."""
    if not a > 0 or not math.isfinite(a):
        raise DomainError(f"ln_gamma requires a finite a > 0, got {a}", a=a)
    if a < 0.5:
        # reflection: Gamma(a) Gamma(1-a) = pi / sin(pi a)
        return math.log(math.pi / math.sin(math.pi * a)) - ln_gamma(1.0 - a)
    x = a - 1.0
    series = LANCZOS_COEFFICIENTS[0]
    for i, coefficient in enumerate(LANCZOS_COEFFICIENTS[1:], start=1):
        series += coefficient / (x + i)
    t = x + LANCZOS_G + 0.5
    return HALF_LOG_2PI + (x + 0.5) * math.log(t) - t + math.log(series)


def _prefactor(a: float, x: float) -> float:
    return math.exp(-x + a * math.log(x) - ln_gamma(a))


def _lower_series(a: float, x: float) -> float:
    """P(a, x) by its power series; used for x < a + 1."""
    ap = a
    term = total = 1.0 / a
    for _ in range(MAX_ITERATIONS):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * TOLERANCE:
            return total * _prefactor(a, x)
    raise ConvergenceError(f"incomplete gamma series did not converge for a={a}, x={x}", a=a, x=x)


def _upper_fraction(a: float, x: float) -> float:
    """Q(a, x) by the modified Lentz continued fraction; used for x >= a + 1."""
    b = x + 1.0 - a
    c = 1.0 / TINY
    d = 1.0 / b
    h = d
    for i in range(1, MAX_ITERATIONS + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < TINY:
            d = TINY
        c = b + an / c
        if abs(c) < TINY:
            c = TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < TOLERANCE:
            return _prefactor(a, x) * h
    raise ConvergenceError(f"incomplete gamma continued fraction did not converge for a={a}, x={x}", a=a, x=x)


def regularized_lower(a: float, x: float) -> float:
    """P(a, x) = gamma(a, x) / Gamma(a)."""
    if not a > 0:
        raise DomainError(f"incomplete gamma requires a > 0, got {a}", a=a)
    if x <= 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return min(1.0, _lower_series(a, x))
    return max(0.0, 1.0 - _upper_fraction(a, x))


def regularized_upper(a: float, x: float) -> float:
    """Q(a, x) = 1 - P(a, x), computed without cancellation for large x."""
    if not a > 0:
        raise DomainError(f"incomplete gamma requires a > 0, got {a}", a=a)
    if x <= 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _lower_series(a, x))
    return min(1.0, _upper_fraction(a, x))


@dataclass(frozen=True)
class GammaDist:
    """Gamma(shape, rate); chi2(d) is GammaDist(d/2, 1/2)."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and math.isfinite(self.shape)):
            raise DomainError(f"Gamma shape must be positive, got {self.shape}", shape=self.shape)
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise DomainError(f"Gamma rate must be positive, got {self.rate}", rate=self.rate)

    @classmethod
    def chi2(cls, df: float) -> 'GammaDist':
        return cls(df / 2.0, 0.5)

    @classmethod
    def scaled_chi2(cls, df: float, lam: float) -> 'GammaDist':
        """Law of lam * W0 with W0 ~ chi2(df): Gamma(df/2, 1/(2 lam))."""
        if not lam > 0:
            raise DomainError(f"lambda must be positive, got {lam}", lam=lam)
        return cls(df / 2.0, 1.0 / (2.0 * lam))

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    @property
    def var(self) -> float:
        return self.shape / self.rate ** 2

    def pdf(self, x: float) -> float:
        return gamma_pdf(self, x)

    def cdf(self, x: float) -> float:
        return gamma_cdf(self, x)

    def sf(self, x: float) -> float:
        return gamma_sf(self, x)

    def ppf(self, p: float) -> float:
        return gamma_quantile(self, p)


def gamma_pdf(dist: GammaDist, x: float) -> float:
    if x < 0:
        return 0.0
    if x == 0:
        if dist.shape < 1:
            return math.inf
        return dist.rate if dist.shape == 1 else 0.0
    log_density = (
        (dist.shape - 1.0) * math.log(x)
        + dist.shape * math.log(dist.rate)
        - dist.rate * x
        - ln_gamma(dist.shape)
    )
    return math.exp(log_density)


def gamma_cdf(dist: GammaDist, x: float) -> float:
    if math.isnan(x):
        raise DomainError("gamma_cdf called with NaN")
    return regularized_lower(dist.shape, dist.rate * x)


def gamma_sf(dist: GammaDist, x: float) -> float:
    if math.isnan(x):
        raise DomainError("gamma_sf called with NaN")
    return regularized_upper(dist.shape, dist.rate * x)


def gamma_quantile(dist: GammaDist, p: float) -> float:
    """x with cdf(x) = p, by bracketing plus safeguarded Newton steps."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"quantile level must be in (0, 1), got {p}", p=p)

    lo, hi = 0.0, max(dist.mean, 1.0 / dist.rate)
    while gamma_cdf(dist, hi) < p:
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            raise ConvergenceError(f"could not bracket the {p} quantile", p=p)

    x = 0.5 * (lo + hi)
    for _ in range(MAX_ITERATIONS):
        error = gamma_cdf(dist, x) - p
        if abs(error) <= 1e-14:
            return x
        if error > 0:
            hi = x
        else:
            lo = x
        density = gamma_pdf(dist, x)
        candidate = x - error / density if density > 0 and math.isfinite(density) else math.nan
        if not lo < candidate < hi:
            candidate = 0.5 * (lo + hi)
        if hi - lo <= 4e-16 * hi:
            return candidate
        x = candidate
    raise ConvergenceError(f"gamma quantile iteration did not converge for p={p}", p=p)


def chi2_cdf(x: float, df: float) -> float:
    return gamma_cdf(GammaDist.chi2(df), x)


def chi2_sf(x: float, df: float) -> float:
    return gamma_sf(GammaDist.chi2(df), x)


def chi2_quantile(p: float, df: float) -> float:
    return gamma_quantile(GammaDist.chi2(df), p)


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def kolmogorov_sf(lam: float) -> float:
    """P(K > lam) for the Kolmogorov distribution, series truncated at 100 terms."""
    if lam < 0.2:
        return 1.0
    total = 0.0
    sign = 1.0
    for j in range(1, KOLMOGOROV_TERMS + 1):
        total += sign * math.exp(-2.0 * j * j * lam * lam)
        sign = -sign
    return min(1.0, max(0.0, 2.0 * total))


def ks_test(sample: Sequence[float], cdf: Callable[[float], float]) -> Tuple[float, float]:
    """One-sample Kolmogorov-Smirnov test; returns (D, p_value)."""
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise EmptySample("KS test needs at least one observation")
    cdf_values = np.array([cdf(float(v)) for v in x])
    ranks = np.arange(1, n + 1)
    d_plus = np.max(ranks / n - cdf_values)
    d_minus = np.max(cdf_values - (ranks - 1) / n)
    statistic = float(max(d_plus, d_minus))
    root_n = math.sqrt(n)
    p_value = kolmogorov_sf((root_n + 0.12 + 0.11 / root_n) * statistic)
    return statistic, p_value
