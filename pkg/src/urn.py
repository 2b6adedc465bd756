"""Generalized Rescaled Polya urn: state, one-step update and derived quantities.

The urn holds b0 + B_n balls. After drawing color i with probability
psi_n = (b0 + B_n) / r*_n, the rescalable part becomes
B_{n+1} = beta_n B_n + alpha_{n+1} e_i.
"""

import csv
import itertools
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from error_handler import InvalidParams, NumericalDrift, UsageError
from schedules import Schedule

logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-12
DRIFT_TOL = 1e-9
RENORMALIZE_EVERY = 10_000
CHUNK_SIZE = 2048

_MASK64 = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class UrnParams:
    """Immutable urn configuration: intrinsic part b0 and rescalable part B0."""

    b0: np.ndarray
    B0: np.ndarray
    k: int = field(init=False)
    p0: np.ndarray = field(init=False)

    def __post_init__(self):
        b0 = np.asarray(self.b0, dtype=float).ravel()
        B0 = np.asarray(self.B0, dtype=float).ravel()
        if b0.size == 0 or b0.shape != B0.shape:
            raise InvalidParams(f"b0 and B0 must be non-empty and of equal length, got {b0.size} and {B0.size}")
        if not (np.all(np.isfinite(b0)) and np.all(np.isfinite(B0))):
            raise InvalidParams("b0 and B0 must be finite")
        if np.any(b0 < 0) or np.any(B0 < 0):
            raise InvalidParams("b0 and B0 must be non-negative", b0=b0, B0=B0)
        if np.any(b0 + B0 <= 0):
            bad = int(np.nonzero(b0 + B0 <= 0)[0][0])
            raise InvalidParams(f"b0_i + B0_i must be positive for every color (color {bad + 1})", color=bad + 1)
        if not b0.sum() > 0:
            raise InvalidParams("|b0| must be positive")
        b0.setflags(write=False)
        B0.setflags(write=False)
        p0 = b0 / b0.sum()
        p0.setflags(write=False)
        object.__setattr__(self, 'b0', b0)
        object.__setattr__(self, 'B0', B0)
        object.__setattr__(self, 'k', int(b0.size))
        object.__setattr__(self, 'p0', p0)

    @property
    def b0_norm(self) -> float:
        return float(self.b0.sum())

    @property
    def B0_norm(self) -> float:
        return float(self.B0.sum())

    @classmethod
    def with_B0_norm(cls, b0: Sequence[float], B0_norm: float) -> 'UrnParams':
        """Spread a required |B0| proportionally to b0 (keeps psi_0 = p0)."""
        b0_arr = np.asarray(b0, dtype=float)
        return cls(b0_arr, b0_arr / b0_arr.sum() * B0_norm)

    def to_dict(self) -> Dict[str, list]:
        return {'b0': self.b0.tolist(), 'B0': self.B0.tolist(), 'p0': self.p0.tolist()}


@dataclass
class UrnState:
    """Live state of one trajectory after n extractions."""

    params: UrnParams
    n: int
    B: np.ndarray
    r_star: float
    psi: np.ndarray
    counts: np.ndarray

    @property
    def theta(self) -> np.ndarray:
        return self.psi - self.params.p0

    @property
    def xi_bar(self) -> np.ndarray:
        if self.n == 0:
            raise UsageError("empirical mean undefined before the first extraction")
        return self.counts / self.n


@dataclass(frozen=True)
class StepRecord:
    """One extraction: xi_n, psi_{n-1}, Delta M_n and the gains eps_{n-1}, delta_{n-1}."""

    n: int
    xi: np.ndarray
    psi_before: np.ndarray
    delta_m: np.ndarray
    eps: float
    delta: float
    r_star: float

    @property
    def xi_index(self) -> int:
        return int(np.argmax(self.xi))


@dataclass(frozen=True)
class WeightProfile:
    """f(h, n) for h = 1..n and the index h* after which it is non-decreasing."""

    n: int
    weights: np.ndarray
    h_star: int
    log_weights: Optional[np.ndarray] = None

    @property
    def eventually_increasing(self) -> bool:
        """False when the profile is still decreasing just before n."""
        return self.h_star < self.n


def new_state(params: UrnParams) -> UrnState:
    r_star = params.b0_norm + params.B0_norm
    return UrnState(
        params=params,
        n=0,
        B=params.B0.copy(),
        r_star=r_star,
        psi=(params.b0 + params.B0) / r_star,
        counts=np.zeros(params.k, dtype=np.int64),
    )


def draw_index(psi: np.ndarray, u: float) -> int:
    """Categorical draw by cumulative-sum inversion; u in (0, 1].

    Boundary ties resolve to the lower index and zero-probability colors
    are never selected.
    """
    cumulative = np.cumsum(psi)
    index = int(np.searchsorted(cumulative, u * cumulative[-1], side='left'))
    return min(index, psi.size - 1)


def uniform(rng: np.random.Generator) -> float:
    """A single uniform on (0, 1]."""
    return 1.0 - rng.random()


def epsilon_delta(schedule: Schedule, params: UrnParams, r_star_next: float, n: int) -> Tuple[float, float]:
    """eps_n = |b0|(1 - beta_n)/r*_{n+1} and delta_n = alpha_{n+1}/r*_{n+1}."""
    if not r_star_next > 0:
        raise UsageError(f"r*_{{n+1}} must be positive, got {r_star_next}")
    eps = params.b0_norm * (1.0 - schedule.beta(n)) / r_star_next
    delta = schedule.alpha(n + 1) / r_star_next
    return eps, delta


def step(
    state: UrnState,
    schedule: Schedule,
    rng: Optional[np.random.Generator] = None,
    draw: Optional[int] = None,
) -> Tuple[UrnState, StepRecord]:
    """Perform extraction n+1. ``draw`` forces the drawn color (0-based)."""
    params = state.params
    n = state.n
    beta = schedule.beta(n)
    alpha = schedule.alpha(n + 1)

    if draw is None:
        if rng is None:
            raise UsageError("step needs either a random stream or a forced draw")
        index = draw_index(state.psi, uniform(rng))
    else:
        index = int(draw)
        if not 0 <= index < params.k:
            raise UsageError(f"forced draw {draw} outside 0..{params.k - 1}")

    xi = np.zeros(params.k)
    xi[index] = 1.0
    B = beta * state.B + alpha * xi
    r_star = beta * state.r_star + (1.0 - beta) * params.b0_norm + alpha
    psi = (params.b0 + B) / r_star
    counts = state.counts.copy()
    counts[index] += 1
    eps, delta = epsilon_delta(schedule, params, r_star, n)

    record = StepRecord(
        n=n + 1,
        xi=xi,
        psi_before=state.psi,
        delta_m=xi - state.psi,
        eps=eps,
        delta=delta,
        r_star=r_star,
    )
    return UrnState(params, n + 1, B, r_star, psi, counts), record


def renormalize(state: UrnState) -> UrnState:
    """Re-sync r* with |b0| + |B| and rescale psi to the simplex.

    Raises NumericalDrift when the accumulated drift exceeds DRIFT_TOL.
    """
    exact = state.params.b0_norm + float(state.B.sum())
    drift = max(abs(float(state.psi.sum()) - 1.0), abs(state.r_star - exact) / exact)
    if drift > DRIFT_TOL:
        raise NumericalDrift(f"drift {drift:.3e} after {state.n} steps", n=state.n, drift=drift)
    return replace(state, r_star=exact, psi=(state.params.b0 + state.B) / exact)


@dataclass
class Trajectory:
    final: UrnState
    records: List[StepRecord]


def run_trajectory(
    params: UrnParams,
    schedule: Schedule,
    n_steps: int,
    rng: np.random.Generator,
    record: bool = False,
    renormalize_every: int = RENORMALIZE_EVERY,
) -> Trajectory:
    """Run one trajectory, optionally keeping every StepRecord."""
    state = new_state(params)
    records: List[StepRecord] = []
    for _ in range(n_steps):
        state, rec = step(state, schedule, rng)
        if record:
            records.append(rec)
        if state.n % renormalize_every == 0:
            state = renormalize(state)
    return Trajectory(state, records)


def replay(params: UrnParams, schedule: Schedule, history: Sequence[int]) -> Trajectory:
    """Deterministic trajectory through a given sequence of drawn colors."""
    state = new_state(params)
    records = []
    for index in history:
        state, rec = step(state, schedule, draw=index)
        records.append(rec)
    return Trajectory(state, records)


def write_trajectory_csv(trajectory: Trajectory, path: Union[str, Path]) -> str:
    """Dump ``n,xi_index,psi_1..psi_k,r_star``; psi is the value after draw n."""
    params = trajectory.final.params
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    psis = [rec.psi_before for rec in trajectory.records[1:]] + [trajectory.final.psi]
    with open(target, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['n', 'xi_index'] + [f'psi_{i + 1}' for i in range(params.k)] + ['r_star'])
        for rec, psi in zip(trajectory.records, psis):
            writer.writerow([rec.n, rec.xi_index + 1] + ['%.17g' % v for v in psi] + ['%.17g' % rec.r_star])
    logger.info(f"Wrote trajectory with {len(trajectory.records)} steps to {target}")
    return str(target)


def _one_hot_indices(history: Sequence, k: int) -> List[int]:
    indices = []
    for pos, entry in enumerate(history):
        if np.ndim(entry) == 0:
            index = int(entry)
        else:
            vec = np.asarray(entry, dtype=float)
            if vec.shape != (k,) or np.count_nonzero(vec) != 1 or vec.sum() != 1.0:
                raise UsageError(f"history entry {pos + 1} is not a one-hot vector of length {k}")
            index = int(np.argmax(vec))
        if not 0 <= index < k:
            raise UsageError(f"history entry {pos + 1} selects color {index} outside 0..{k - 1}")
        indices.append(index)
    return indices


def closed_form_psi(params: UrnParams, schedule: Schedule, history: Sequence) -> np.ndarray:
    """psi_n from the explicit sum over past draws weighted by f(h, n).

    ``history`` holds xi_1..xi_n as one-hot vectors or as color indices.
    """
    indices = _one_hot_indices(history, params.k)
    n = len(indices)
    if n == 0:
        return (params.b0 + params.B0) / (params.b0_norm + params.B0_norm)

    betas = schedule.beta_array(np.arange(n))
    # suffix[h] = prod_{j=h}^{n-1} beta_j, suffix[n] = 1
    suffix = np.append(np.cumprod(betas[::-1])[::-1], 1.0)
    alphas = schedule.alpha_array(np.arange(1, n + 1))
    f = alphas * suffix[1:]

    numerator = params.b0 + params.B0 * suffix[0]
    numerator = numerator + np.bincount(indices, weights=f, minlength=params.k)
    denominator = params.b0_norm + params.B0_norm * suffix[0] + f.sum()
    return numerator / denominator


def weight_profile(schedule: Schedule, n: int) -> WeightProfile:
    """f(h, n) = alpha_h prod_{j=h}^{n-1} beta_j for h = 1..n, in log space.

    h* is located on the log profile so that weights beyond float range
    still order correctly. Zero weights sit at -inf and never count as a decrease.
    """
    if n < 1:
        raise UsageError(f"weight_profile needs n >= 1, got {n}")
    alphas = schedule.alpha_array(np.arange(1, n + 1))
    betas = schedule.beta_array(np.arange(1, n))
    with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        log_betas = np.log(betas)
        # log_tail[h-1] = sum_{j=h}^{n-1} log beta_j
        log_tail = np.append(np.cumsum(log_betas[::-1])[::-1], 0.0)
        log_weights = np.log(alphas) + log_tail
        weights = np.exp(log_weights)
        steps = np.diff(log_weights)
        # -inf to -inf gives nan, which is not a decrease
        decreasing = np.nonzero(np.nan_to_num(steps, nan=0.0) < 0)[0]

    h_star = int(decreasing[-1]) + 2 if decreasing.size else 1
    return WeightProfile(n=n, weights=weights, h_star=h_star, log_weights=log_weights)


def check_recursions(params: UrnParams, trajectory: Trajectory) -> Dict[str, float]:
    """Largest gaps of the theta- and mu-recursions along a recorded trajectory.

    theta_{n+1} = (1 - eps_n) theta_n + delta_n dM_{n+1}
    mu_{n+1} - mu_n = (-(mu_n - theta_n) + dM_{n+1}) / (n+1), for n >= 0 with mu_0 = 0
    """
    records = trajectory.records
    if not records:
        return {'theta_gap': 0.0, 'mu_gap': 0.0, 'simplex_gap': 0.0}
    p0 = params.p0
    psis = [rec.psi_before for rec in records] + [trajectory.final.psi]
    theta_gap = mu_gap = simplex_gap = 0.0
    counts = np.zeros(params.k)
    mu = np.zeros(params.k)
    for n, rec in enumerate(records):
        theta_n = psis[n] - p0
        theta_next = psis[n + 1] - p0
        predicted = (1.0 - rec.eps) * theta_n + rec.delta * rec.delta_m
        theta_gap = max(theta_gap, float(np.max(np.abs(theta_next - predicted))))

        counts += rec.xi
        mu_next = counts / (n + 1) - p0
        if n > 0:
            predicted_mu = mu + (-(mu - theta_n) + rec.delta_m) / (n + 1)
            mu_gap = max(mu_gap, float(np.max(np.abs(mu_next - predicted_mu))))
        mu = mu_next
        simplex_gap = max(simplex_gap, abs(float(psis[n + 1].sum()) - 1.0))
    return {'theta_gap': theta_gap, 'mu_gap': mu_gap, 'simplex_gap': simplex_gap}


def theta_second_moment(params: UrnParams, schedule: Schedule, horizons: Sequence[int]) -> np.ndarray:
    """Exact E||theta_N||^2 for each N in ``horizons``.

    r*_n is deterministic, so the gains are too. With m_n = E[theta_n] and
    v_n = E||theta_n||^2,
        m_{n+1} = (1 - eps_n) m_n
        v_{n+1} = (1 - eps_n)^2 v_n + delta_n^2 (1 - |p0|^2 - 2 p0.m_n - v_n)
    since E[|dM_{n+1}|^2 | F_n] = 1 - |psi_n|^2.
    """
    wanted = sorted({int(h) for h in horizons})
    if not wanted or wanted[0] < 0:
        raise UsageError(f"horizons must be non-negative, got {list(horizons)}")
    p0 = params.p0
    p0_sq = float(p0 @ p0)
    state = new_state(params)
    mean = state.theta.copy()
    second = float(mean @ mean)
    r_star = state.r_star
    found: Dict[int, float] = {}
    for n in range(wanted[-1] + 1):
        if n in wanted:
            found[n] = second
        if n == wanted[-1]:
            break
        beta = schedule.beta(n)
        r_star = beta * r_star + (1.0 - beta) * params.b0_norm + schedule.alpha(n + 1)
        eps, delta = epsilon_delta(schedule, params, r_star, n)
        noise = 1.0 - p0_sq - 2.0 * float(p0 @ mean) - second
        second = (1.0 - eps) ** 2 * second + delta ** 2 * noise
        mean = (1.0 - eps) * mean
    return np.array([found[int(h)] for h in horizons])


def exact_count_law(params: UrnParams, schedule: Schedule, n: int, color: int = 0) -> np.ndarray:
    """Exact law of the number of draws of ``color`` in n steps by path enumeration.

    Path probability is the product of psi values along the path. Only for
    small instances: k**n paths are visited.
    """
    if params.k ** n > 1 << 16 or n > 16:
        raise UsageError(f"path enumeration over {params.k}**{n} paths is too large")
    law = np.zeros(n + 1)
    for path in itertools.product(range(params.k), repeat=n):
        state = new_state(params)
        prob = 1.0
        for index in path:
            prob *= state.psi[index]
            if prob == 0.0:
                break
            state, _ = step(state, schedule, draw=index)
        law[sum(1 for index in path if index == color)] += prob
    return law


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def replica_seed(base_seed: int, replica: int) -> int:
    """Stream seed for replica r: base_seed XOR splitmix64(r)."""
    if replica < 0:
        raise UsageError("replica index must be non-negative")
    return (int(base_seed) & _MASK64) ^ splitmix64(replica)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


class UrnBatch:
    """R replicas advanced in lock-step, each with its own random stream.

    Uniforms are pre-drawn per replica in chunks of ``chunk_size`` and consumed
    in order, so replica r reproduces the trajectory of repeated ``step`` calls
    on ``make_rng(seeds[r])``.
    """

    def __init__(
        self,
        params: UrnParams,
        schedule: Schedule,
        seeds: Sequence[int],
        chunk_size: int = CHUNK_SIZE,
        renormalize_every: int = RENORMALIZE_EVERY,
        total_steps: Optional[int] = None,
    ):
        self.params = params
        self.schedule = schedule
        self.rngs = [make_rng(s) for s in seeds]
        self.size = len(self.rngs)
        self.chunk_size = chunk_size
        self.renormalize_every = renormalize_every
        self.total_steps = total_steps

        R, k = self.size, params.k
        self.n = 0
        self.B = np.tile(params.B0, (R, 1))
        self.r_star = np.full(R, params.b0_norm + params.B0_norm)
        self.psi = (params.b0 + self.B) / self.r_star[:, None]
        self.counts = np.zeros((R, k), dtype=np.int64)
        # running sum of psi_{n-1} over extractions
        self.psi_sum = np.zeros((R, k))
        self._uniforms = np.empty((R, 0))
        self._cursor = 0

    @property
    def theta(self) -> np.ndarray:
        return self.psi - self.params.p0

    def _next_uniforms(self) -> np.ndarray:
        if self._cursor >= self._uniforms.shape[1]:
            size = self.chunk_size
            if self.total_steps is not None:
                size = max(1, min(size, self.total_steps - self.n))
            self._uniforms = np.stack([1.0 - rng.random(size) for rng in self.rngs])
            self._cursor = 0
        u = self._uniforms[:, self._cursor]
        self._cursor += 1
        return u

    def step(self) -> np.ndarray:
        """Advance every replica by one extraction; returns drawn indices."""
        n = self.n
        beta = self.schedule.beta(n)
        alpha = self.schedule.alpha(n + 1)
        u = self._next_uniforms()

        cumulative = np.cumsum(self.psi, axis=1)
        targets = u * cumulative[:, -1]
        # count of cumulative entries strictly below the target = searchsorted(side='left')
        indices = np.minimum((cumulative < targets[:, None]).sum(axis=1), self.params.k - 1)

        self.psi_sum += self.psi
        rows = np.arange(self.size)
        self.B *= beta
        self.B[rows, indices] += alpha
        self.r_star = beta * self.r_star + (1.0 - beta) * self.params.b0_norm + alpha
        self.psi = (self.params.b0 + self.B) / self.r_star[:, None]
        self.counts[rows, indices] += 1
        self.n = n + 1

        if self.n % self.renormalize_every == 0:
            self.renormalize()
        return indices

    def advance(self, steps: int, on_step=None):
        for _ in range(steps):
            self.step()
            if on_step is not None:
                on_step(self)

    def renormalize(self):
        exact = self.params.b0_norm + self.B.sum(axis=1)
        drift = max(
            float(np.max(np.abs(self.psi.sum(axis=1) - 1.0))),
            float(np.max(np.abs(self.r_star - exact) / exact)),
        )
        if drift > DRIFT_TOL:
            raise NumericalDrift(f"drift {drift:.3e} after {self.n} steps", n=self.n, drift=drift)
        self.r_star = exact
        self.psi = (self.params.b0 + self.B) / exact[:, None]
