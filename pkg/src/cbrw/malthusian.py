"""Mean-growth matrix, regime classification, and the Malthusian parameter.

For catalysts w_1..w_N the matrix D(lambda) has entries

    d_ij(lambda) = delta_ij * alpha_i * m_i * bstar_i(lambda)
                   + (1 - alpha_i) * bstar_i(lambda) * Fbar*_ij(lambda),

where bstar_i(lambda) = beta_i / (beta_i + lambda) is the transform of the
exponential sojourn at w_i and Fbar*_ij is the transform of the post-exit
hitting time of w_j from w_i under taboo on the other catalysts. The system
is supercritical when the Perron root of D(0) exceeds 1, and then the
Malthusian parameter nu is the unique positive root of rho(D(lambda)) = 1.

Off-diagonal transforms have no closed form for general jump laws, so they
are estimated by Monte Carlo hitting batches; one frozen batch per (i, j)
pair is reused across every lambda, which keeps the estimated map
lambda -> rho(D(lambda)) exactly non-increasing and makes bisection sound
per seed. A Monte Carlo budget of 0 switches to the closed-form path that
assumes the walk never revisits a catalyst (all taboo transforms vanish).
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .seeding import derive_master
from .walk_engine import (
    HittingBatch,
    WalkConfig,
    extend_batch,
    laplace_from_batch,
    simulate_hitting_batch,
)

__all__ = [
    "OffspringLaw",
    "CatalystSpec",
    "DMatrix",
    "RegimeReport",
    "PerronResult",
    "perron_root",
    "build_D",
    "classify_regime",
    "solve_malthusian",
    "taboo_batches",
]

BIAS_TARGET = 1e-6
NU_TOL = 1e-6


@dataclass(frozen=True)
class OffspringLaw:
    """Finite offspring distribution on {0, ..., K}."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probs must be a non-empty vector")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probs must be non-negative and sum to 1")
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "_cdf", list(np.cumsum(p)))

    @classmethod
    def deterministic(cls, k: int) -> "OffspringLaw":
        p = np.zeros(k + 1)
        p[k] = 1.0
        return cls(p)

    @classmethod
    def poisson(cls, mean: float, cap: int = 40) -> "OffspringLaw":
        """Poisson(mean) truncated at ``cap`` and renormalized."""
        k = np.arange(cap + 1)
        logp = k * math.log(mean) - mean - np.cumsum(np.log(np.maximum(k, 1)))
        p = np.exp(logp)
        return cls(p / p.sum())

    @classmethod
    def geometric(cls, mean: float, cap: int = 80) -> "OffspringLaw":
        """Geometric on {0, 1, ...} with the given mean, truncated at ``cap``."""
        s = mean / (1.0 + mean)
        k = np.arange(cap + 1)
        p = (1 - s) * s**k
        return cls(p / p.sum())

    @property
    def mean(self) -> float:
        return float(np.arange(len(self.probs)) @ self.probs)

    def pgf(self, s):
        """Probability generating function, vectorized in ``s``."""
        s = np.asarray(s, dtype=float)
        powers = s[..., None] ** np.arange(len(self.probs))
        out = powers @ self.probs
        return float(out) if out.ndim == 0 else out

    def sample(self, rng: np.random.Generator) -> int:
        idx = bisect.bisect_right(self._cdf, rng.random())
        return min(idx, len(self.probs) - 1)


@dataclass(frozen=True)
class CatalystSpec:
    """One catalyst site: position, sojourn rate, branch probability, offspring."""

    position: tuple[int, ...]
    beta: float
    alpha: float
    offspring: OffspringLaw

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(int(c) for c in self.position))
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")

    @property
    def offspring_mean(self) -> float:
        return self.offspring.mean

    def sojourn_transform(self, lam: float) -> float:
        """Laplace transform beta / (beta + lambda) of the sojourn time."""
        return self.beta / (self.beta + lam)


def _check_catalysts(catalysts) -> None:
    if not catalysts:
        raise ValueError("need at least one catalyst")
    positions = [c.position for c in catalysts]
    if len(set(positions)) != len(positions):
        raise ValueError("catalyst positions must be distinct")


@dataclass
class DMatrix:
    """Estimated D(lambda) with entry-wise uncertainty."""

    lam: float
    entries: np.ndarray
    entry_stderr: np.ndarray
    entry_bias: np.ndarray
    censored_fraction: float = 0.0

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def irreducible(self) -> bool:
        """Strong connectivity of the positive-entry digraph."""
        n = self.size
        reach = (self.entries > 0) | np.eye(n, dtype=bool)
        for _ in range(max(1, int(math.ceil(math.log2(n))) + 1)):
            reach = reach | (reach.astype(int) @ reach.astype(int) > 0)
        return bool(reach.all())


@dataclass
class PerronResult:
    value: float
    right: np.ndarray
    left: np.ndarray
    iterations: int
    residual: float


class PerronConvergenceError(RuntimeError):
    """Power iteration failed to converge (degenerate or near-defective input)."""


def _power_iteration(m: np.ndarray, tol: float, max_iter: int):
    n = m.shape[0]
    x = np.full(n, 1.0 / math.sqrt(n))
    lam = 0.0
    for it in range(1, max_iter + 1):
        y = m @ x
        norm = float(np.linalg.norm(y))
        if norm == 0.0:
            return 0.0, x, it, 0.0
        x_new = y / norm
        lam_new = float(x_new @ (m @ x_new))
        residual = float(np.max(np.abs(m @ x_new - lam_new * x_new)))
        done = residual <= tol * max(1.0, lam_new) and abs(lam_new - lam) <= tol * max(1.0, lam_new)
        x, lam = x_new, lam_new
        if done:
            return lam, x, it, residual
    raise PerronConvergenceError(
        f"power iteration did not converge in {max_iter} steps (last residual {residual:.3e})"
    )


def perron_root(matrix, tol: float = 1e-12, max_iter: int = 200_000) -> PerronResult:
    """Spectral radius and positive left/right eigenvectors of a
    non-negative matrix by shifted power iteration.

    The shift by max(1, max row sum) removes periodicity, so permutation
    matrices and reducible guard cases converge too.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    if np.any(m < 0):
        raise ValueError("matrix must be non-negative")
    n = m.shape[0]
    if n == 1:
        v = np.ones(1)
        return PerronResult(float(m[0, 0]), v, v, 0, 0.0)
    shift = max(1.0, float(m.sum(axis=1).max()))
    shifted = m + shift * np.eye(n)
    lam, right, iters, res = _power_iteration(shifted, tol, max_iter)
    lam_t, left, iters_t, _ = _power_iteration(shifted.T, tol, max_iter)
    value = max(lam - shift, 0.0)
    return PerronResult(value, right, left, iters + iters_t, res)


def perron_sensitivity(result: PerronResult, entry_stderr: np.ndarray) -> float:
    """First-order bound |d rho| <= y' |dD| x / (y' x) with coherent signs."""
    denom = float(result.left @ result.right)
    if denom <= 0:
        return float(np.sum(entry_stderr))
    return float(result.left @ entry_stderr @ result.right) / denom


def taboo_batches(
    catalysts,
    walk: WalkConfig,
    horizon: float,
    n_paths: int,
    master_seed: int,
) -> dict[tuple[int, int], HittingBatch]:
    """One hitting batch per ordered catalyst pair (i, j): start w_i,
    target w_j, taboo on every other catalyst."""
    _check_catalysts(catalysts)
    positions = [np.asarray(c.position, dtype=np.int64) for c in catalysts]
    batches = {}
    for i, src in enumerate(positions):
        for j, dst in enumerate(positions):
            taboo = [p for k, p in enumerate(positions) if k != j]
            batches[(i, j)] = simulate_hitting_batch(
                walk, src, dst, taboo, horizon, n_paths, master_seed, purpose=f"dmat-{i}-{j}"
            )
    return batches


def _assemble_D(catalysts, lam: float, batches, stderr_scale: float = 0.0) -> DMatrix:
    n = len(catalysts)
    entries = np.zeros((n, n))
    stderr = np.zeros((n, n))
    bias = np.zeros((n, n))
    censored = 0.0
    for i, cat in enumerate(catalysts):
        g_star = cat.sojourn_transform(lam)
        entries[i, i] = cat.alpha * cat.offspring_mean * g_star
        for j in range(n):
            if batches is None:
                continue
            est = laplace_from_batch(batches[(i, j)], lam, after_exit=True)
            weight = (1.0 - cat.alpha) * g_star
            entries[i, j] += weight * max(0.0, est.estimate + stderr_scale * est.std_error)
            stderr[i, j] = weight * est.std_error
            bias[i, j] = weight * est.bias_bound
            censored = max(censored, batches[(i, j)].censored_fraction)
    return DMatrix(lam, entries, stderr, bias, censored)


def build_D(
    catalysts,
    walk: WalkConfig,
    lam: float,
    mc_budget: int,
    rng_or_seed,
    horizon: float | None = None,
    batches: dict | None = None,
) -> DMatrix:
    """Estimate D(lambda).

    With ``mc_budget == 0`` the taboo transforms are taken to be exactly 0
    (a walk that never revisits catalysts), which makes the matrix diagonal
    and the result deterministic. Passing ``batches`` reuses frozen paths
    (common random numbers across lambda).
    """
    _check_catalysts(catalysts)
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if batches is None and mc_budget > 0:
        seed = derive_master(rng_or_seed)
        if horizon is None:
            horizon = 50.0 / max(lam, 0.1)
        batches = taboo_batches(catalysts, walk, horizon, mc_budget, seed)
    return _assemble_D(catalysts, lam, batches)


@dataclass
class RegimeReport:
    """Classification of the system with the growth rate when it exists."""

    regime: str
    perron_at_zero: float
    perron_stderr: float = 0.0
    censored_fraction: float = 0.0
    nu: float | None = None
    nu_ci: tuple[float, float] | None = None
    residual: float | None = None
    mc_budget: int = 0
    seed: int = 0

    def to_json_dict(self) -> dict:
        return {
            "regime": self.regime,
            "perron_at_zero": self.perron_at_zero,
            "perron_stderr": self.perron_stderr,
            "censored_fraction": self.censored_fraction,
            "nu": self.nu,
            "nu_ci": list(self.nu_ci) if self.nu_ci is not None else None,
            "residual": self.residual,
            "mc_budget": self.mc_budget,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"


def _nu_guess(catalysts) -> float:
    guess = 0.0
    for c in catalysts:
        if c.alpha * c.offspring_mean > 1.0:
            guess = max(guess, c.beta * (c.alpha * c.offspring_mean - 1.0))
    return guess if guess > 0 else 0.1


def classify_regime(
    catalysts,
    walk: WalkConfig,
    mc_budget: int,
    rng_or_seed,
    horizon: float | None = None,
    batches: dict | None = None,
    seed_label: int | None = None,
) -> RegimeReport:
    """Decide super/sub/criticality from rho(D(0)).

    The decision accounts for both the MC standard error and the horizon
    censoring (whose unresolved mass can only push rho up); when 1 falls
    inside that interval the verdict is ``inconclusive``.
    """
    _check_catalysts(catalysts)
    seed = derive_master(rng_or_seed) if seed_label is None else seed_label
    if mc_budget == 0:
        d0 = _assemble_D(catalysts, 0.0, None)
        rho = perron_root(d0.entries).value
        if rho > 1.0 + 1e-12:
            regime = "supercritical"
        elif rho < 1.0 - 1e-12:
            regime = "subcritical"
        else:
            regime = "critical"
        return RegimeReport(regime, rho, mc_budget=0, seed=seed)

    if batches is None:
        if horizon is None:
            horizon = 50.0 / _nu_guess(catalysts)
        batches = taboo_batches(catalysts, walk, horizon, mc_budget, seed)
    d0 = _assemble_D(catalysts, 0.0, batches)
    res = perron_root(d0.entries)
    sigma = perron_sensitivity(res, d0.entry_stderr)
    upper = perron_root(d0.entries + d0.entry_bias).value
    upper_sigma = perron_sensitivity(res, d0.entry_stderr)
    if res.value - 2.0 * sigma > 1.0:
        regime = "supercritical"
    elif upper + 2.0 * upper_sigma < 1.0:
        regime = "subcritical"
    else:
        regime = "inconclusive"
    return RegimeReport(
        regime,
        res.value,
        perron_stderr=sigma,
        censored_fraction=d0.censored_fraction,
        mc_budget=mc_budget,
        seed=seed,
    )


def _rho_at(catalysts, lam: float, batches, stderr_scale: float = 0.0) -> float:
    return perron_root(_assemble_D(catalysts, lam, batches, stderr_scale).entries).value


def _bisect_nu(catalysts, batches, lam_hi_start: float, stderr_scale: float = 0.0) -> float:
    """Root of rho(D(lambda)) = 1 by bracket doubling plus bisection.

    The map is non-increasing in lambda exactly (shared batches), so the
    bracket logic is deterministic per seed.
    """
    lo = 0.0
    hi = max(lam_hi_start, NU_TOL)
    for _ in range(200):
        if _rho_at(catalysts, hi, batches, stderr_scale) < 1.0:
            break
        lo = hi
        hi *= 2.0
    else:
        raise RuntimeError("could not bracket the Malthusian parameter")
    while hi - lo > NU_TOL:
        mid = 0.5 * (lo + hi)
        if _rho_at(catalysts, mid, batches, stderr_scale) >= 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_malthusian(
    catalysts,
    walk: WalkConfig,
    mc_budget: int,
    rng_or_seed,
    horizon: float | None = None,
) -> RegimeReport:
    """Solve rho(D(lambda)) = 1 for the Malthusian parameter.

    Refuses unless the regime is supercritical. The horizon doubles until
    the censoring bias bound exp(-nu * horizon) clears ``BIAS_TARGET``, and
    the confidence interval re-solves at entries shifted by +-2 standard
    errors (a conservative, coherent perturbation).
    """
    _check_catalysts(catalysts)
    seed = derive_master(rng_or_seed)
    guess = _nu_guess(catalysts)

    if mc_budget == 0:
        report = classify_regime(catalysts, walk, 0, seed)
        if report.regime != "supercritical":
            raise ValueError(f"system is {report.regime}; nu is defined only supercritically")
        nu = _bisect_nu(catalysts, None, guess)
        residual = abs(_rho_at(catalysts, nu, None) - 1.0)
        return RegimeReport(
            "supercritical",
            report.perron_at_zero,
            nu=nu,
            nu_ci=(nu, nu),
            residual=residual,
            mc_budget=0,
            seed=seed,
        )

    h = horizon if horizon is not None else 50.0 / guess
    batches = taboo_batches(catalysts, walk, h, mc_budget, seed)
    for _ in range(8):
        report = classify_regime(catalysts, walk, mc_budget, seed, batches=batches, seed_label=seed)
        if report.regime != "supercritical":
            raise ValueError(f"system is {report.regime}; nu is defined only supercritically")
        nu = _bisect_nu(catalysts, batches, guess)
        if math.exp(-nu * h) < BIAS_TARGET:
            break
        h *= 2.0
        positions = [np.asarray(c.position, dtype=np.int64) for c in catalysts]
        batches = {
            (i, j): extend_batch(
                walk,
                b,
                positions[i],
                positions[j],
                [p for k, p in enumerate(positions) if k != j],
                h,
            )
            for (i, j), b in batches.items()
        }
    nu_lo = _bisect_nu(catalysts, batches, guess, stderr_scale=-2.0)
    nu_hi = _bisect_nu(catalysts, batches, guess, stderr_scale=+2.0)
    residual = abs(_rho_at(catalysts, nu, batches) - 1.0)
    return RegimeReport(
        "supercritical",
        report.perron_at_zero,
        perron_stderr=report.perron_stderr,
        censored_fraction=report.censored_fraction,
        nu=nu,
        nu_ci=(nu_lo, nu_hi),
        residual=residual,
        mc_budget=mc_budget,
        seed=seed,
    )
