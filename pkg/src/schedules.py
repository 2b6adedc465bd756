"""Reinforcement schedules (alpha_n, beta_n) for the GRP urn.

Every named variant can be rebuilt from a ``ScheduleSpec`` and serialized as
``{"variant": "...", "params": {...}}``. Parameters are written in a fixed
order per variant with 17 significant digits, so a spec survives a JSON
round trip bit for bit.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, Union

import numpy as np

from error_handler import (
    Degenerate,
    OutOfRange,
    PositivityFailure,
    ScheduleDomain,
    UnknownVariant,
    UsageError,
)

logger = logging.getLogger(__name__)

ArrayFn = Callable[[np.ndarray], np.ndarray]

MAX_OFFSET = 10_000
# Indices checked when validating a schedule: every n up to DENSE_CHECK,
# then log-spaced up to SPARSE_CHECK.
DENSE_CHECK = 1_000
SPARSE_CHECK = 1_000_000


class ScheduleVariant(str, Enum):
    EXAMPLE1 = 'example1'
    EXAMPLE2 = 'example2'
    STANDARD_POLYA = 'standard_polya'
    RESCALED_POLYA = 'rescaled_polya'
    PEMANTLE_POWER = 'pemantle_power'
    PEMANTLE_EXP = 'pemantle_exp'
    MEMORY_ONE = 'memory_one'

    @classmethod
    def parse(cls, value: Union[str, 'ScheduleVariant']) -> 'ScheduleVariant':
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise UnknownVariant(
                f"Unknown schedule variant {value!r}; valid variants: {', '.join(valid_variants())}",
                variant=value,
                valid=valid_variants(),
            ) from None


def valid_variants() -> Tuple[str, ...]:
    return tuple(v.value for v in ScheduleVariant)


# Canonical parameter order per variant.
FIELD_ORDER: Dict[ScheduleVariant, Tuple[str, ...]] = {
    ScheduleVariant.EXAMPLE1: ('c', 'eps', 'b0_norm', 'burn_in'),
    ScheduleVariant.EXAMPLE2: ('eps', 'delta', 'b0_norm', 'offset'),
    ScheduleVariant.STANDARD_POLYA: ('alpha',),
    ScheduleVariant.RESCALED_POLYA: ('alpha', 'beta'),
    ScheduleVariant.PEMANTLE_POWER: ('a', 'exponent'),
    ScheduleVariant.PEMANTLE_EXP: ('b', 'a'),
    ScheduleVariant.MEMORY_ONE: ('alpha',),
}

_OPTIONAL_FIELDS = {
    ScheduleVariant.EXAMPLE1: {'burn_in': False},
    ScheduleVariant.EXAMPLE2: {'offset': None},
}


def _format_param(value: Any) -> str:
    if value is None:
        return 'null'
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return '%.17g' % float(value)


@dataclass(frozen=True)
class ScheduleSpec:
    """Serializable description of a named schedule."""

    variant: ScheduleVariant
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        variant = ScheduleVariant.parse(self.variant)
        object.__setattr__(self, 'variant', variant)
        order = FIELD_ORDER[variant]
        params = dict(_OPTIONAL_FIELDS.get(variant, {}))
        params.update(self.params or {})
        unknown = sorted(set(params) - set(order))
        missing = [name for name in order if name not in params]
        if unknown or missing:
            raise OutOfRange(
                f"Bad parameters for {variant.value}: missing={missing} unknown={unknown}",
                variant=variant.value,
                expected=list(order),
            )
        object.__setattr__(self, 'params', {name: params[name] for name in order})

    def to_json(self) -> str:
        body = ', '.join(f'"{name}": {_format_param(value)}' for name, value in self.params.items())
        return f'{{"variant": "{self.variant.value}", "params": {{{body}}}}}'

    def to_dict(self) -> Dict[str, Any]:
        return json.loads(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> 'ScheduleSpec':
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"Schedule JSON is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ScheduleSpec':
        if not isinstance(data, dict) or 'variant' not in data:
            raise UsageError("Schedule JSON must be an object with 'variant' and 'params'")
        return cls(ScheduleVariant.parse(data['variant']), dict(data.get('params') or {}))

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'ScheduleSpec':
        return cls.from_json(Path(path).read_text(encoding='utf-8'))

    def save(self, path: Union[str, Path]) -> str:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(self.to_json() + '\n', encoding='utf-8')
        return str(target)


class Schedule:
    """Pure parameter sequences alpha_n (n >= 1) and beta_n (n >= 0).

    The underlying functions are vectorized over numpy index arrays. Scalar
    access through ``alpha``/``beta`` validates the value at that index.
    """

    def __init__(
        self,
        alpha_fn: ArrayFn,
        beta_fn: ArrayFn,
        spec: Optional[ScheduleSpec] = None,
        *,
        required_B0_norm: Optional[float] = None,
        first_valid_index: int = 0,
        burn_in: bool = False,
    ):
        self._alpha_fn = alpha_fn
        self._beta_fn = beta_fn
        self.spec = spec
        self.required_B0_norm = required_B0_norm
        self.first_valid_index = first_valid_index
        self.burn_in = burn_in

    @property
    def variant(self) -> Optional[ScheduleVariant]:
        return self.spec.variant if self.spec else None

    @property
    def descriptor(self) -> Dict[str, Any]:
        desc: Dict[str, Any] = self.spec.to_dict() if self.spec else {'variant': 'custom', 'params': {}}
        desc['first_valid_index'] = self.first_valid_index
        desc['burn_in'] = self.burn_in
        if self.required_B0_norm is not None:
            desc['required_B0_norm'] = self.required_B0_norm
        return desc

    def to_json(self) -> str:
        if self.spec is None:
            raise UsageError("Schedules built from arbitrary callables cannot be serialized")
        return self.spec.to_json()

    def alpha(self, n: int) -> float:
        if n < 1:
            raise ScheduleDomain(f"alpha is defined for n >= 1, got {n}", index=n)
        value = self._eval(self._alpha_fn, n, 'alpha')
        if not value > 0.0:
            raise ScheduleDomain(f"alpha_{n} = {value!r} is not strictly positive", index=n, value=value)
        return value

    def beta(self, n: int) -> float:
        if n < 0:
            raise ScheduleDomain(f"beta is defined for n >= 0, got {n}", index=n)
        value = self._eval(self._beta_fn, n, 'beta')
        if value < 0.0:
            raise ScheduleDomain(f"beta_{n} = {value!r} is negative", index=n, value=value)
        return value

    def alpha_array(self, indices: np.ndarray) -> np.ndarray:
        return self._eval_array(self._alpha_fn, indices, 'alpha')

    def beta_array(self, indices: np.ndarray) -> np.ndarray:
        return self._eval_array(self._beta_fn, indices, 'beta')

    @staticmethod
    def _eval(fn: ArrayFn, n: int, name: str) -> float:
        try:
            with np.errstate(over='raise', invalid='raise', divide='raise'):
                value = float(np.asarray(fn(np.asarray(n, dtype=float))))
        except (FloatingPointError, OverflowError, ValueError, ZeroDivisionError) as exc:
            raise ScheduleDomain(f"{name}_{n} could not be evaluated: {exc}", index=n) from exc
        if not math.isfinite(value):
            raise ScheduleDomain(f"{name}_{n} = {value!r} is not finite", index=n, value=value)
        return value

    @staticmethod
    def _eval_array(fn: ArrayFn, indices: np.ndarray, name: str) -> np.ndarray:
        idx = np.asarray(indices, dtype=float)
        with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
            values = np.broadcast_to(np.asarray(fn(idx), dtype=float), idx.shape).copy()
        bad = ~np.isfinite(values)
        if bad.any():
            n = int(idx[bad][0])
            raise ScheduleDomain(f"{name}_{n} is not finite", index=n)
        return values

    def __repr__(self) -> str:
        return f"Schedule({self.spec.to_json() if self.spec else 'custom'})"


def _check_positive(schedule: Schedule, name: str):
    """Spot-check alpha > 0 and beta >= 0 over dense then log-spaced indices."""
    idx = np.unique(np.concatenate([
        np.arange(1, DENSE_CHECK + 1),
        np.round(np.logspace(3, math.log10(SPARSE_CHECK), 60)),
    ]))
    alphas = schedule.alpha_array(idx)
    betas = schedule.beta_array(idx - 1)
    bad_alpha = np.nonzero(alphas <= 0.0)[0]
    bad_beta = np.nonzero(betas < 0.0)[0]
    if bad_alpha.size:
        n = int(idx[bad_alpha[0]])
        raise OutOfRange(f"{name}: alpha_{n} <= 0", index=n)
    if bad_beta.size:
        n = int(idx[bad_beta[0]] - 1)
        raise OutOfRange(f"{name}: beta_{n} < 0", index=n)


def _b0_norm(b0: Union[float, np.ndarray, list]) -> float:
    arr = np.atleast_1d(np.asarray(b0, dtype=float))
    norm = float(arr.sum()) if arr.size > 1 else float(arr[0])
    if not norm > 0.0:
        raise OutOfRange(f"|b0| must be positive, got {norm}")
    return norm


def example1(
    c: float,
    eps: float,
    b0: Union[float, np.ndarray, list],
    burn_in: bool = False,
) -> Tuple[Schedule, float]:
    """Schedule with eps_n = (1+n)^-eps and delta_n = c * eps_n.

    beta_n = 1 - (1+c)(1+n)^-eps and alpha_n = c|b0|(1+c) n^-eps. The caller
    must start from |B0| = c|b0| (returned) so that r*_n = (1+c)|b0|.

    For small n, beta_n is negative whenever (1+c)(1+n)^-eps > 1. Without
    ``burn_in`` this raises Degenerate. With ``burn_in`` those indices use
    beta_n = 0 and alpha_{n+1} = c|b0|, which keeps r*_n constant.
    """
    if not (c > 0 and math.isfinite(c)):
        raise OutOfRange(f"example1 requires c > 0, got {c}", c=c)
    if not 0.0 < eps <= 1.0:
        raise OutOfRange(f"example1 requires eps in (0, 1], got {eps}", eps=eps)
    norm = _b0_norm(b0)
    scale = 1.0 + c

    def raw_beta(n):
        return 1.0 - scale * (1.0 + n) ** (-eps)

    first_valid = max(0, math.ceil(scale ** (1.0 / eps) - 1.0))
    while raw_beta(first_valid) < 0.0:
        first_valid += 1
    while first_valid > 0 and raw_beta(first_valid - 1) >= 0.0:
        first_valid -= 1

    if first_valid > 0 and not burn_in:
        raise Degenerate(
            f"example1(c={c}, eps={eps}) gives beta_0 < 0; first usable index is {first_valid}",
            first_offending_index=0,
            first_valid_index=first_valid,
        )

    def beta_fn(n):
        raw = raw_beta(n)
        return np.where(n < first_valid, 0.0, raw) if first_valid else raw

    def alpha_fn(n):
        raw = c * norm * scale * n ** (-eps)
        # alpha_{n} pairs with beta_{n-1}
        return np.where(n - 1 < first_valid, c * norm, raw) if first_valid else raw

    spec = ScheduleSpec(ScheduleVariant.EXAMPLE1, {'c': c, 'eps': eps, 'b0_norm': norm, 'burn_in': bool(burn_in)})
    if first_valid:
        logger.debug(f"example1 burn-in clamps beta_n for n < {first_valid}")
    required = c * norm
    schedule = Schedule(
        alpha_fn, beta_fn, spec,
        required_B0_norm=required,
        first_valid_index=first_valid,
        burn_in=bool(burn_in) and first_valid > 0,
    )
    return schedule, required


def _example2_fns(eps: float, delta: float, norm: float, offset: int) -> Tuple[ArrayFn, ArrayFn]:
    gamma = eps - delta

    def beta_fn(n):
        m = n + offset
        return 1.0 - (1.0 + m) ** (-delta) / norm

    def alpha_fn(j):
        m = j - 1 + offset
        decay = (1.0 + m) ** (-delta)
        return (m + 1.0) ** gamma - m ** gamma * (1.0 - decay / norm) - decay

    return alpha_fn, beta_fn


def _example2_valid(eps: float, delta: float, norm: float, offset: int) -> bool:
    if offset < 1 or offset ** (eps - delta) < norm:
        return False
    alpha_fn, beta_fn = _example2_fns(eps, delta, norm, offset)
    probe = Schedule(alpha_fn, beta_fn)
    try:
        _check_positive(probe, 'example2')
    except OutOfRange:
        return False
    return True


def example2(eps: float, delta: float, b0_norm: float, offset: Optional[int] = None) -> Schedule:
    """Schedule with eps_n = (n+1+offset)^-eps and delta_n ~ c(n+1+offset)^-delta, c = 1/|b0|.

    r*_n = (n+offset)^gamma with gamma = eps - delta, so the urn must start
    from |B0| = offset^gamma - |b0| (``required_B0_norm``). ``offset=None``
    picks the smallest offset that keeps every alpha positive.
    """
    if not 0.0 < eps < 1.0:
        raise OutOfRange(f"example2 requires eps in (0, 1), got {eps}", eps=eps)
    if not eps / 2.0 < delta < eps:
        raise OutOfRange(f"example2 requires delta in (eps/2, eps), got {delta}", eps=eps, delta=delta)
    norm = _b0_norm(b0_norm)

    if offset is None:
        chosen = next(
            (o for o in range(1, MAX_OFFSET + 1) if _example2_valid(eps, delta, norm, o)),
            None,
        )
        if chosen is None:
            raise PositivityFailure(
                f"No offset <= {MAX_OFFSET} makes example2(eps={eps}, delta={delta}, |b0|={norm}) valid",
                max_offset=MAX_OFFSET,
            )
        logger.info(f"example2 offset search selected offset={chosen}")
        offset = chosen
    else:
        offset = int(offset)
        if offset < 0:
            raise OutOfRange(f"offset must be >= 0, got {offset}")
        if not _example2_valid(eps, delta, norm, offset):
            suggested = next(
                (o for o in range(offset + 1, MAX_OFFSET + 1) if _example2_valid(eps, delta, norm, o)),
                None,
            )
            raise PositivityFailure(
                f"example2 with offset={offset} has a non-positive alpha, negative beta or negative |B0|",
                offset=offset,
                suggested_offset=suggested,
            )

    alpha_fn, beta_fn = _example2_fns(eps, delta, norm, offset)
    spec = ScheduleSpec(
        ScheduleVariant.EXAMPLE2,
        {'eps': eps, 'delta': delta, 'b0_norm': norm, 'offset': offset},
    )
    return Schedule(alpha_fn, beta_fn, spec, required_B0_norm=offset ** (eps - delta) - norm)


def standard_polya(alpha: float) -> Schedule:
    if not (alpha > 0 and math.isfinite(alpha)):
        raise OutOfRange(f"standard_polya requires alpha > 0, got {alpha}", alpha=alpha)
    return Schedule(
        lambda n: np.full_like(n, alpha, dtype=float),
        lambda n: np.ones_like(n, dtype=float),
        ScheduleSpec(ScheduleVariant.STANDARD_POLYA, {'alpha': alpha}),
    )


def rescaled_polya(alpha: float, beta: float) -> Schedule:
    """Constant alpha and beta. beta > 1 is accepted."""
    if not (alpha > 0 and math.isfinite(alpha)):
        raise OutOfRange(f"rescaled_polya requires alpha > 0, got {alpha}", alpha=alpha)
    if not (beta >= 0 and math.isfinite(beta)):
        raise OutOfRange(f"rescaled_polya requires beta >= 0, got {beta}", beta=beta)
    return Schedule(
        lambda n: np.full_like(n, alpha, dtype=float),
        lambda n: np.full_like(n, beta, dtype=float),
        ScheduleSpec(ScheduleVariant.RESCALED_POLYA, {'alpha': alpha, 'beta': beta}),
    )


def pemantle_power(a: float, exponent: float) -> Schedule:
    """beta_n = 1, alpha_n = a * n^-exponent."""
    if not (a > 0 and math.isfinite(a)):
        raise OutOfRange(f"pemantle_power requires a > 0, got {a}", a=a)
    if not math.isfinite(exponent):
        raise OutOfRange(f"pemantle_power requires a finite exponent, got {exponent}")
    return Schedule(
        lambda n: a * n ** (-exponent),
        lambda n: np.ones_like(n, dtype=float),
        ScheduleSpec(ScheduleVariant.PEMANTLE_POWER, {'a': a, 'exponent': exponent}),
    )


def pemantle_exp(b: float, a: float) -> Schedule:
    """beta_n = 1, cumulative weight A_n = exp(b n^a), alpha_n = A_n - A_{n-1}."""
    if not (b > 0 and math.isfinite(b)):
        raise OutOfRange(f"pemantle_exp requires b > 0, got {b}", b=b)
    if not 0.0 < a < 0.5:
        raise OutOfRange(f"pemantle_exp requires a in (0, 0.5), got {a}", a=a)

    def alpha_fn(n):
        prev = b * (n - 1.0) ** a
        return np.exp(prev) * np.expm1(b * n ** a - prev)

    return Schedule(
        alpha_fn,
        lambda n: np.ones_like(n, dtype=float),
        ScheduleSpec(ScheduleVariant.PEMANTLE_EXP, {'b': b, 'a': a}),
    )


def memory_one(alpha_fn: Union[float, Callable[[int], float]]) -> Schedule:
    """beta_n = 0: psi_n depends only on the last extraction.

    A constant alpha is serializable; a callable is library-only.
    """
    if callable(alpha_fn):
        user_fn = alpha_fn

        def alpha(n):
            return np.vectorize(lambda j: float(user_fn(int(j))), otypes=[float])(n)

        return Schedule(alpha, lambda n: np.zeros_like(n, dtype=float))

    value = float(alpha_fn)
    if not (value > 0 and math.isfinite(value)):
        raise OutOfRange(f"memory_one requires alpha > 0, got {value}", alpha=value)
    return Schedule(
        lambda n: np.full_like(n, value, dtype=float),
        lambda n: np.zeros_like(n, dtype=float),
        ScheduleSpec(ScheduleVariant.MEMORY_ONE, {'alpha': value}),
    )


def build_schedule(spec: Union[ScheduleSpec, Dict[str, Any], str]) -> Schedule:
    """Build the Schedule described by a spec, a dict or a JSON string."""
    if isinstance(spec, str):
        spec = ScheduleSpec.from_json(spec)
    elif isinstance(spec, dict):
        spec = ScheduleSpec.from_dict(spec)
    p = spec.params
    variant = spec.variant
    if variant is ScheduleVariant.EXAMPLE1:
        schedule, _ = example1(float(p['c']), float(p['eps']), float(p['b0_norm']), burn_in=bool(p['burn_in']))
        return schedule
    if variant is ScheduleVariant.EXAMPLE2:
        offset = None if p['offset'] is None else int(p['offset'])
        return example2(float(p['eps']), float(p['delta']), float(p['b0_norm']), offset)
    if variant is ScheduleVariant.STANDARD_POLYA:
        return standard_polya(float(p['alpha']))
    if variant is ScheduleVariant.RESCALED_POLYA:
        return rescaled_polya(float(p['alpha']), float(p['beta']))
    if variant is ScheduleVariant.PEMANTLE_POWER:
        return pemantle_power(float(p['a']), float(p['exponent']))
    if variant is ScheduleVariant.PEMANTLE_EXP:
        return pemantle_exp(float(p['b']), float(p['a']))
    return memory_one(float(p['alpha']))
