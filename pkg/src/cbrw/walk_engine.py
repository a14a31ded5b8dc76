"""Continuous-time lattice random walk and taboo hitting-time estimators.

The walk holds at each site for an exponential time and jumps by i.i.d.
increments (a compound Poisson path). Laws may carry an atom at the zero
vector; such ticks do not move the particle, so the effective exit rate is
``rate_q * P(jump != 0)`` and the exit time of a site is the first position
change.

Hitting times follow the taboo convention: the clock for a target ``y``
starts at the exit from the start site, and the path is disqualified the
moment it touches the taboo set at or after the exit jump. Whether the
start itself lies in the taboo set is irrelevant (the taboo applies only
after the exit), which is the convention used throughout.

Monte Carlo batches draw one independent substream per path index
(:mod:`cbrw.seeding`), so estimates are reproducible under any work
partition, and re-running the same batch with a larger horizon or a larger
taboo set replays identical trajectories path-by-path (common random
numbers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .jump_laws import sample_nonzero_jumps
from .seeding import derive_master, path_generators

__all__ = [
    "WalkConfig",
    "WalkPath",
    "HittingOutcome",
    "HittingBatch",
    "EmpiricalCdf",
    "LaplaceEstimate",
    "EscapeEstimate",
    "simulate_walk",
    "hitting_time_taboo",
    "simulate_hitting_batch",
    "empirical_hitting_cdf",
    "laplace_taboo_mc",
    "laplace_from_batch",
    "escape_probability",
    "positions_at_times",
]

_CHUNK0 = 32
_CHUNK_MAX = 8192
_FAR = np.iinfo(np.int64).max


@dataclass(frozen=True)
class WalkConfig:
    """Walk parameters: holding rate (per unit time) and jump law."""

    rate_q: float
    law: object

    def __post_init__(self):
        if self.rate_q <= 0:
            raise ValueError("rate_q must be positive")
        if self.law.zero_prob >= 1.0:
            raise ValueError("jump law must place mass on nonzero jumps")

    @property
    def dimension(self) -> int:
        return self.law.dimension

    @property
    def exit_rate(self) -> float:
        """Rate of the first position change: rate_q * P(jump != 0)."""
        return self.rate_q * (1.0 - self.law.zero_prob)


@dataclass
class WalkPath:
    """Right-continuous piecewise-constant trajectory.

    ``times[0] == 0`` and ``positions[k]`` is the state on
    [times[k], times[k+1]). Ticks that drew the zero jump are recorded, so
    ``n_ticks`` counts the full Poisson clock.
    """

    times: np.ndarray
    positions: np.ndarray
    t_end: float

    @property
    def n_ticks(self) -> int:
        return len(self.times) - 1

    def position(self, t: float) -> np.ndarray:
        if t < 0 or t > self.t_end:
            raise ValueError("t outside the simulated interval")
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.positions[k]


def simulate_walk(cfg: WalkConfig, start, t_end: float, rng: np.random.Generator) -> WalkPath:
    """Exact jump-by-jump simulation of the walk on [0, t_end]."""
    if t_end < 0:
        raise ValueError("t_end must be non-negative")
    start = np.asarray(start, dtype=np.int64)
    times = [0.0]
    positions = [start.copy()]
    t = 0.0
    scale = 1.0 / cfg.rate_q
    while True:
        t += rng.exponential(scale)
        if t > t_end:
            break
        jump = cfg.law.sample(rng)
        times.append(t)
        positions.append(positions[-1] + jump)
    return WalkPath(np.array(times), np.array(positions, dtype=np.int64), t_end)


@dataclass(frozen=True)
class HittingOutcome:
    """Result of one taboo hitting simulation.

    ``time`` is the total hitting time (exit from the start plus the lag to
    the target) and is meaningful only when ``hit``. ``absorbed`` marks
    paths disqualified by touching the taboo set; those are genuine
    non-hits, unlike horizon censoring.
    """

    hit: bool
    time: float
    exit_time: float
    censored_at: float
    absorbed: bool = False


@dataclass
class HittingBatch:
    """Per-path taboo hitting outcomes under a shared horizon.

    Reusing one batch across Laplace arguments is the common-random-number
    device that makes estimated transforms exactly monotone in lambda.
    """

    hit: np.ndarray
    total_time: np.ndarray
    exit_time: np.ndarray
    absorbed: np.ndarray
    censor_time: np.ndarray
    horizon: float
    master_seed: int
    purpose: str

    @property
    def n_paths(self) -> int:
        return len(self.hit)

    @property
    def hit_fraction(self) -> float:
        return float(self.hit.mean())

    @property
    def censored_fraction(self) -> float:
        """Fraction still undecided at the horizon (not hit, not absorbed)."""
        return float((~self.hit & ~self.absorbed).mean())

    def cdf_at(self, t) -> np.ndarray:
        """Improper c.d.f. of the total hitting time at times ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        hits = np.sort(self.total_time[self.hit])
        return np.searchsorted(hits, t, side="right") / self.n_paths

    def lag_cdf_at(self, t) -> np.ndarray:
        """Improper c.d.f. of the post-exit lag (total - exit) at ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        lags = np.sort(self.total_time[self.hit] - self.exit_time[self.hit])
        return np.searchsorted(lags, t, side="right") / self.n_paths


def _first_index(mask: np.ndarray) -> int:
    k = int(mask.argmax())
    return k if mask[k] else -1


def _run_hitting_path(law, exit_rate, start, target, taboo, horizon, rng):
    """Chunked discrete-event simulation of one taboo hitting attempt.

    Draw order per chunk is fixed (holding times, then jumps), and the
    chunk-size schedule is deterministic, so a path's trajectory depends
    only on its generator: changing the horizon or the taboo set can only
    shorten the consumed prefix.
    """
    pos = np.asarray(start, dtype=np.int64)
    t = 0.0
    exit_time = -1.0
    scale = 1.0 / exit_rate
    chunk = _CHUNK0
    while True:
        dts = rng.exponential(scale, size=chunk)
        jumps = sample_nonzero_jumps(law, chunk, rng)
        times = t + np.cumsum(dts)
        path = pos + np.cumsum(jumps, axis=0)
        if exit_time < 0:
            exit_time = times[0]
        k_hit = _first_index((path == target).all(axis=1))
        if taboo.size:
            in_taboo = (path[:, None, :] == taboo[None, :, :]).all(axis=2).any(axis=1)
            k_tab = _first_index(in_taboo)
        else:
            k_tab = -1
        k_over = _first_index(times > horizon) if times[-1] > horizon else -1
        k_hit = k_hit if k_hit >= 0 else _FAR
        k_tab = k_tab if k_tab >= 0 else _FAR
        k_over = k_over if k_over >= 0 else _FAR
        k_first = min(k_hit, k_tab, k_over)
        if k_first != _FAR:
            if k_over <= k_first:
                return HittingOutcome(False, math.nan, exit_time, horizon)
            if k_hit == k_first:
                return HittingOutcome(True, float(times[k_hit]), exit_time, horizon)
            return HittingOutcome(
                False, math.nan, exit_time, float(times[k_tab]), absorbed=True
            )
        t = float(times[-1])
        pos = path[-1]
        chunk = min(chunk * 2, _CHUNK_MAX)


def _taboo_array(taboo, dimension: int) -> np.ndarray:
    if taboo is None:
        return np.empty((0, dimension), dtype=np.int64)
    arr = np.asarray(list(taboo), dtype=np.int64)
    if arr.size == 0:
        return np.empty((0, dimension), dtype=np.int64)
    return np.atleast_2d(arr)


def hitting_time_taboo(
    cfg: WalkConfig, start, target, taboo, horizon: float, rng: np.random.Generator
) -> HittingOutcome:
    """Single taboo hitting simulation from ``start`` towards ``target``."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    target = np.asarray(target, dtype=np.int64)
    taboo_arr = _taboo_array(taboo, cfg.dimension)
    if taboo_arr.size and np.any(np.all(taboo_arr == target, axis=1)):
        raise ValueError("target must not lie in the taboo set")
    return _run_hitting_path(
        cfg.law, cfg.exit_rate, start, target, taboo_arr, horizon, rng
    )


def simulate_hitting_batch(
    cfg: WalkConfig,
    start,
    target,
    taboo,
    horizon: float,
    n_paths: int,
    master_seed: int,
    purpose: str = "hitting",
) -> HittingBatch:
    """Batch of independent taboo hitting simulations keyed by path index."""
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    target = np.asarray(target, dtype=np.int64)
    taboo_arr = _taboo_array(taboo, cfg.dimension)
    if taboo_arr.size and np.any(np.all(taboo_arr == target, axis=1)):
        raise ValueError("target must not lie in the taboo set")

    hit = np.zeros(n_paths, dtype=bool)
    total = np.full(n_paths, np.nan)
    exit_t = np.zeros(n_paths)
    absorbed = np.zeros(n_paths, dtype=bool)
    censor = np.full(n_paths, horizon)
    for i, rng in enumerate(path_generators(master_seed, purpose, n_paths)):
        out = _run_hitting_path(
            cfg.law, cfg.exit_rate, start, target, taboo_arr, horizon, rng
        )
        hit[i] = out.hit
        total[i] = out.time
        exit_t[i] = out.exit_time
        absorbed[i] = out.absorbed
        censor[i] = out.censored_at
    return HittingBatch(hit, total, exit_t, absorbed, censor, horizon, master_seed, purpose)


def extend_batch(cfg: WalkConfig, batch: HittingBatch, start, target, taboo, new_horizon: float) -> HittingBatch:
    """Re-run a batch to a larger horizon with the same per-path streams."""
    if new_horizon <= batch.horizon:
        return batch
    return simulate_hitting_batch(
        cfg, start, target, taboo, new_horizon, batch.n_paths, batch.master_seed, batch.purpose
    )


@dataclass
class EmpiricalCdf:
    """Empirical improper c.d.f. on a time grid with binomial error bars."""

    grid: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    mass_at_infinity: float
    n_samples: int

    def __post_init__(self):
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(np.diff(self.values) < 0):
            raise ValueError("values must be non-decreasing")
        if self.values[-1] + self.mass_at_infinity > 1.0 + 1e-12:
            raise ValueError("total mass exceeds 1")

    def to_rows(self):
        for t, v, s in zip(self.grid, self.values, self.stderr):
            yield float(t), float(v), float(s), self.mass_at_infinity


def empirical_hitting_cdf(
    cfg: WalkConfig,
    start,
    target,
    taboo,
    horizon: float,
    n_paths: int,
    grid,
    rng_or_seed,
    purpose: str = "hitting-cdf",
) -> EmpiricalCdf:
    """Empirical c.d.f. of the total taboo hitting time on ``grid``.

    ``mass_at_infinity`` is the non-hit fraction; it conflates taboo
    absorption, genuine escape, and not-yet-hit-at-horizon.
    """
    seed = derive_master(rng_or_seed)
    batch = simulate_hitting_batch(cfg, start, target, taboo, horizon, n_paths, seed, purpose)
    grid = np.asarray(grid, dtype=float)
    values = batch.cdf_at(grid)
    stderr = np.sqrt(values * (1.0 - values) / n_paths)
    return EmpiricalCdf(grid, values, stderr, 1.0 - batch.hit_fraction, n_paths)


@dataclass(frozen=True)
class LaplaceEstimate:
    """Laplace-transform estimate with its MC error and censoring bias bound."""

    estimate: float
    std_error: float
    bias_bound: float
    n_paths: int
    bias_dominated: bool = False

    def __iter__(self):
        return iter((self.estimate, self.std_error))


def laplace_from_batch(batch: HittingBatch, lam: float, after_exit: bool = False) -> LaplaceEstimate:
    """Evaluate mean(exp(-lam * tau) ; hit) on a frozen batch.

    ``after_exit`` transforms the post-exit lag instead of the total time
    (that is the quantity entering the mean-growth matrix). The bias bound
    sums, over censored paths, the largest value an unobserved future hit
    could still contribute.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    tau = batch.total_time - batch.exit_time if after_exit else batch.total_time
    vals = np.where(batch.hit, np.exp(-lam * np.where(batch.hit, tau, 0.0)), 0.0)
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(batch.n_paths)) if batch.n_paths > 1 else 0.0
    open_paths = ~batch.hit & ~batch.absorbed
    if lam == 0:
        bias = float(open_paths.mean())
    else:
        slack = batch.horizon - (batch.exit_time if after_exit else 0.0)
        contrib = np.where(open_paths, np.exp(-lam * np.maximum(slack, 0.0)), 0.0)
        bias = float(contrib.mean())
    return LaplaceEstimate(est, se, bias, batch.n_paths)


def laplace_taboo_mc(
    cfg: WalkConfig,
    start,
    target,
    taboo,
    lam: float,
    n_paths: int,
    horizon: float,
    rng_or_seed,
    after_exit: bool = False,
    bias_tol: float | None = None,
    purpose: str = "laplace",
) -> LaplaceEstimate:
    """Monte Carlo Laplace transform of the taboo hitting time.

    Censored and absorbed paths contribute 0, so the estimate lives in
    [0, 1] and is downward-biased by at most ``bias_bound``. When
    ``bias_tol`` is given and the bound exceeds it, the result is flagged
    ``bias_dominated``.
    """
    seed = derive_master(rng_or_seed)
    batch = simulate_hitting_batch(cfg, start, target, taboo, horizon, n_paths, seed, purpose)
    out = laplace_from_batch(batch, lam, after_exit=after_exit)
    if bias_tol is not None and out.bias_bound > bias_tol:
        return LaplaceEstimate(out.estimate, out.std_error, out.bias_bound, out.n_paths, True)
    return out


@dataclass
class EscapeEstimate:
    """Escape probability (never returning to the start after leaving it)."""

    estimate: float
    std_error: float
    horizons: list[float]
    return_freqs: list[float]

    def __iter__(self):
        return iter((self.estimate, self.std_error))


def escape_probability(
    cfg: WalkConfig,
    n_paths: int,
    horizon: float,
    rng_or_seed,
    max_doublings: int = 5,
    purpose: str = "escape",
) -> EscapeEstimate:
    """1 - (return frequency within the horizon), doubling the horizon
    until the frequency plateaus within half a standard error.

    Upward-biased by censoring: paths that would return later count as
    escaped. The doubling report shows the remaining drift.
    """
    seed = derive_master(rng_or_seed)
    origin = np.zeros(cfg.dimension, dtype=np.int64)
    horizons: list[float] = []
    freqs: list[float] = []
    h = horizon
    batch = simulate_hitting_batch(cfg, origin, origin, None, h, n_paths, seed, purpose)
    horizons.append(h)
    freqs.append(batch.hit_fraction)
    for _ in range(max_doublings):
        se = math.sqrt(max(freqs[-1] * (1 - freqs[-1]), 1.0 / n_paths) / n_paths)
        if len(freqs) >= 2 and freqs[-1] - freqs[-2] <= 0.5 * se:
            break
        h *= 2
        batch = extend_batch(cfg, batch, origin, origin, None, h)
        horizons.append(h)
        freqs.append(batch.hit_fraction)
    p_return = freqs[-1]
    se = math.sqrt(p_return * (1 - p_return) / n_paths)
    return EscapeEstimate(1.0 - p_return, se, horizons, freqs)


def positions_at_times(
    cfg: WalkConfig,
    start,
    times,
    n_paths: int,
    master_seed: int,
    purpose: str = "marginals",
) -> np.ndarray:
    """Walk positions at fixed times for ``n_paths`` independent paths.

    Exploits the compound-Poisson representation: per path, the number of
    position changes on [0, t_end] is Poisson(exit_rate * t_end) and their
    epochs are uniform order statistics. Returns int64 positions of shape
    (n_paths, len(times), d).
    """
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("times must be non-negative")
    t_end = float(times.max(initial=0.0))
    start = np.asarray(start, dtype=np.int64)
    d = cfg.dimension
    out = np.empty((n_paths, len(times), d), dtype=np.int64)
    lam = cfg.exit_rate * t_end
    for i, rng in enumerate(path_generators(master_seed, purpose, n_paths)):
        k = int(rng.poisson(lam)) if t_end > 0 else 0
        if k == 0:
            out[i] = start
            continue
        epochs = np.sort(rng.random(k)) * t_end
        jumps = sample_nonzero_jumps(cfg.law, k, rng)
        cum = np.vstack([np.zeros((1, d), dtype=np.int64), np.cumsum(jumps, axis=0)])
        counts = np.searchsorted(epochs, times, side="right")
        out[i] = start + cum[counts]
    return out
