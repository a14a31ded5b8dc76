"""Limiting front shape, shell statistics, and the renewal cross-check.

The normalized particle cloud of a supercritical system concentrates, for
large times, on the star-shaped region bounded by the surface

    H(z) = sum_i |z_i| ** gamma_i(sign(z_i)) = nu,

where each coordinate is normalized by (t / l2) ** (1 / gamma) with the
sign-matched tail parameters. ``shell_containment`` measures how often a
simulated ensemble violates the outer bound (should tend to 0) and how
often it produces witnesses beyond the inner bound (should tend to 1).

``volterra_hit_probability`` solves, on a time grid, the nonlinear renewal
equation satisfied by the probability that some particle sits in a fixed
target set at time t, with the walk-dependent ingredients estimated by
Monte Carlo. It is an independent route to the same quantity the particle
simulation estimates directly, which makes the two mutually checkable.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .jump_laws import JumpLaw, inverse_norm
from .malthusian import CatalystSpec
from .seeding import derive_master
from .walk_engine import WalkConfig, positions_at_times, simulate_hitting_batch

__all__ = [
    "FrontShape",
    "ShellReport",
    "BoxTarget",
    "VolterraResult",
    "GridTooCoarseError",
    "shape_value",
    "classify_point",
    "sample_shape_surface",
    "nonconvexity_witness",
    "normalize_positions",
    "shell_containment",
    "directional_limit_check",
    "volterra_hit_probability",
]

SURFACE_TOL = 1e-9


@dataclass(frozen=True)
class FrontShape:
    """Front surface data: growth rate nu and per-axis tail exponents.

    ``exponents[i]`` is the (plus, minus) pair for coordinate i.
    """

    nu: float
    exponents: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError("nu must be positive")
        object.__setattr__(
            self, "exponents", tuple((float(p), float(m)) for p, m in self.exponents)
        )
        for gp, gm in self.exponents:
            if not (0 < gp < 1 and 0 < gm < 1):
                raise ValueError("exponents must lie in (0, 1)")

    @classmethod
    def from_law(cls, law: JumpLaw, nu: float) -> "FrontShape":
        return cls(nu, tuple((a.gamma_plus, a.gamma_minus) for a in law.axes))

    @property
    def dimension(self) -> int:
        return len(self.exponents)

    def gamma_for(self, i: int, value: float) -> float:
        gp, gm = self.exponents[i]
        return gp if value >= 0 else gm


def shape_value(front: FrontShape, z) -> float:
    """H(z): sum of |z_i| to the sign-matched exponent."""
    z = np.asarray(z, dtype=float)
    if z.shape != (front.dimension,):
        raise ValueError(f"point must have dimension {front.dimension}")
    total = 0.0
    for i, zi in enumerate(z):
        total += abs(zi) ** front.gamma_for(i, zi)
    return total


def shape_values(front: FrontShape, pts: np.ndarray) -> np.ndarray:
    """Vectorized H over points of shape (n, d)."""
    pts = np.asarray(pts, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != front.dimension:
        raise ValueError("pts must have shape (n, d)")
    total = np.zeros(len(pts))
    for i, (gp, gm) in enumerate(front.exponents):
        col = pts[:, i]
        total += np.abs(col) ** np.where(col >= 0, gp, gm)
    return total


def classify_point(front: FrontShape, z, epsilon: float) -> str:
    """Place z in the inner region, the shell, or the outer region."""
    if not 0 <= epsilon < front.nu:
        raise ValueError("epsilon must lie in [0, nu)")
    h = shape_value(front, z)
    if h < front.nu - epsilon:
        return "inside_Q_eps"
    if h > front.nu + epsilon:
        return "outside_O_eps"
    return "shell"


def _ray_solve(front: FrontShape, direction: np.ndarray) -> np.ndarray:
    """Radial scalar r with H(r * direction) = nu, by bisection.

    H is strictly increasing along rays from the origin, H(0) = 0.
    """
    nu = front.nu
    hi = 1.0
    for _ in range(200):
        if shape_value(front, hi * direction) >= nu:
            break
        hi *= 2.0
    lo = 0.0
    for _ in range(500):
        mid = 0.5 * (lo + hi)
        h = shape_value(front, mid * direction)
        if abs(h - nu) <= SURFACE_TOL:
            return mid * direction
        if h < nu:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi) * direction


def _orthant_directions(d: int, resolution: int) -> list[np.ndarray]:
    """Strictly interior unit directions of the positive orthant on a
    hyperspherical angle grid, ordered lexicographically by angle index."""
    angles = [(j + 0.5) * (math.pi / 2) / resolution for j in range(resolution)]
    dirs = []
    for combo in itertools.product(angles, repeat=d - 1):
        u = np.ones(d)
        for k, phi in enumerate(combo):
            u[k] *= math.cos(phi)
            u[k + 1 :] *= math.sin(phi)
        dirs.append(u)
    return dirs


def sample_shape_surface(front: FrontShape, resolution: int = 32):
    """Points on the front surface, one block per orthant plus the 2d axis
    extremes, each solving |H(z) - nu| <= 1e-9.

    Returns (points, orthant_labels) with points of shape (n, d); labels
    are sign tuples, axis points labelled by their signed axis.
    """
    if resolution < 8:
        raise ValueError("resolution must be at least 8")
    d = front.dimension
    points: list[np.ndarray] = []
    labels: list[tuple] = []
    if d == 1:
        gp, gm = front.exponents[0]
        points.append(np.array([front.nu ** (1.0 / gp)]))
        labels.append((1,))
        points.append(np.array([-(front.nu ** (1.0 / gm))]))
        labels.append((-1,))
        return np.array(points), labels
    base_dirs = _orthant_directions(d, resolution)
    for signs in itertools.product((1, -1), repeat=d):
        sv = np.array(signs, dtype=float)
        for u in base_dirs:
            points.append(_ray_solve(front, sv * u))
            labels.append(signs)
    for i in range(d):
        for s in (1, -1):
            gp, gm = front.exponents[i]
            g = gp if s > 0 else gm
            z = np.zeros(d)
            z[i] = s * front.nu ** (1.0 / g)
            points.append(z)
            labels.append(("axis", i, s))
    return np.array(points), labels


@dataclass(frozen=True)
class NonconvexityWitness:
    point_a: np.ndarray
    point_b: np.ndarray
    midpoint: np.ndarray
    midpoint_value: float


def nonconvexity_witness(front: FrontShape) -> NonconvexityWitness:
    """Two axis points of the surface whose midpoint lies strictly outside
    {H <= nu}, certifying non-convexity; for equal exponents the midpoint
    value is exactly 2**(1-gamma) * nu."""
    if front.dimension < 2:
        raise ValueError("non-convexity witness needs dimension >= 2")
    d = front.dimension
    g0 = front.exponents[0][0]
    g1 = front.exponents[1][0]
    a = np.zeros(d)
    a[0] = front.nu ** (1.0 / g0)
    b = np.zeros(d)
    b[1] = front.nu ** (1.0 / g1)
    mid = 0.5 * (a + b)
    value = shape_value(front, mid)
    if value <= front.nu:
        raise RuntimeError("midpoint unexpectedly inside the body")
    return NonconvexityWitness(a, b, mid, value)


def normalize_positions(positions: np.ndarray, law: JumpLaw, t: float) -> np.ndarray:
    """Divide each coordinate by its sign-matched normalizer at time t.

    At t = 0 the normalizer vanishes and the normalized value is defined
    as 0.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    out = np.zeros_like(positions)
    if t <= 0:
        return out
    for i, axis in enumerate(law.axes):
        rp = inverse_norm(axis, "+", t)
        rm = inverse_norm(axis, "-", t)
        col = positions[:, i]
        factor = np.where(col >= 0, rp, rm)
        out[:, i] = np.divide(col, factor, out=np.zeros_like(col), where=factor > 0)
    return out


def _visits_proxy(run) -> bool:
    from .cbrw_sim import visits_catalysts_indicator

    return visits_catalysts_indicator(run)


@dataclass
class ShellReport:
    """Per-time violation and witness fractions for the front shell."""

    epsilon: float
    times: np.ndarray
    frac_outside_O: np.ndarray
    frac_beyond_Q: np.ndarray
    n_runs: int
    n_proxy_runs: int

    def to_rows(self):
        for t, fo, fq in zip(self.times, self.frac_outside_O, self.frac_beyond_Q):
            yield float(t), float(fo), float(fq), self.n_runs, self.n_proxy_runs


def shell_containment(runs, front: FrontShape, law: JumpLaw, epsilon: float) -> ShellReport:
    """Ensemble fractions against the outer set O_eps and inner set Q_eps.

    Outer fraction: share of all runs with some normalized particle at
    H > nu + eps (violations of the outer bound; expected to fall towards
    0). Inner fraction: share of catalyst-visiting runs with some particle
    at H >= nu - eps (witnesses beyond the inner bound; expected to rise
    towards 1). Runs must be untruncated.
    """
    runs = list(runs)
    if not runs:
        raise ValueError("empty ensemble")
    if not 0 < epsilon < front.nu:
        raise ValueError("epsilon must lie in (0, nu)")
    for r in runs:
        if r.truncated:
            raise ValueError("shell statistics require untruncated runs")
    times = np.array([s.time for s in runs[0].snapshots])
    proxy = [_visits_proxy(r) for r in runs]
    n_proxy = int(sum(proxy))
    out_frac = np.zeros(len(times))
    beyond_frac = np.full(len(times), np.nan)
    for ti, t in enumerate(times):
        outs = 0
        beyond = 0
        for r, is_proxy in zip(runs, proxy):
            snap = r.snapshots[ti]
            if snap.total == 0:
                continue
            h = shape_values(front, normalize_positions(snap.positions, law, t))
            if np.any(h > front.nu + epsilon):
                outs += 1
            if is_proxy and np.any(h >= front.nu - epsilon):
                beyond += 1
        out_frac[ti] = outs / len(runs)
        if n_proxy:
            beyond_frac[ti] = beyond / n_proxy
    return ShellReport(epsilon, times, out_frac, beyond_frac, len(runs), n_proxy)


def directional_limit_check(
    runs, front: FrontShape, law: JumpLaw, y, radius: float
) -> np.ndarray:
    """Per-time fraction of catalyst-visiting runs with a normalized
    particle within ``radius`` (Euclidean) of the surface point ``y``."""
    y = np.asarray(y, dtype=float)
    if abs(shape_value(front, y) - front.nu) > 1e-6:
        raise ValueError("y must lie on the front surface")
    runs = list(runs)
    if not runs:
        raise ValueError("empty ensemble")
    times = np.array([s.time for s in runs[0].snapshots])
    proxy_runs = [r for r in runs if _visits_proxy(r)]
    if not proxy_runs:
        return np.full(len(times), np.nan)
    fracs = np.zeros(len(times))
    for ti, t in enumerate(times):
        near = 0
        for r in proxy_runs:
            snap = r.snapshots[ti]
            if snap.total == 0:
                continue
            norm = normalize_positions(snap.positions, law, t)
            dist = np.linalg.norm(norm - y, axis=1)
            if np.any(dist <= radius):
                near += 1
        fracs[ti] = near / len(proxy_runs)
    return fracs


# ---------------------------------------------------------------------------
# Renewal-equation route to the hit probability
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxTarget:
    """Lattice box prod_i [lower_i, upper_i] (inclusive, +-inf allowed)."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise ValueError("lower and upper must have equal length")
        if all(lo <= 0 <= up for lo, up in zip(self.lower, self.upper)):
            raise ValueError("target must exclude the origin")

    @classmethod
    def half_line(cls, threshold: float, dimension: int = 1, axis: int = 0, side: str = "+"):
        lo = [-math.inf] * dimension
        up = [math.inf] * dimension
        if side == "+":
            lo[axis] = threshold
        else:
            up[axis] = -threshold
        return cls(tuple(lo), tuple(up))

    @property
    def dimension(self) -> int:
        return len(self.lower)

    def contains(self, positions: np.ndarray) -> np.ndarray:
        pos = np.asarray(positions, dtype=float)
        lo = np.asarray(self.lower)
        up = np.asarray(self.upper)
        return np.all((pos >= lo) & (pos <= up), axis=-1)


class GridTooCoarseError(RuntimeError):
    """Grid halving moved the solution by more than the tolerated error."""


def _stieltjes_conv(a: np.ndarray, db: np.ndarray) -> np.ndarray:
    """c[n] = int_0^{t_n} a(t_n - s) dB(s) on a uniform grid, trapezoid in
    the integrand; ``db`` holds the panel masses of B."""
    n = len(a)
    c = np.zeros(n)
    for k in range(1, n):
        seg = a[k:0:-1]
        c[k] = float((0.5 * (seg + a[k - 1 :: -1])) @ db[:k])
    return c


def _march(grid, d_g1, d_g11, i_term, alpha, pgf):
    """Forward solve of the renewal equation on a uniform grid.

    Trapezoid panels make the newest point implicit through a scalar
    contraction, solved by fixed-point iteration at each step.
    """
    m = len(grid)
    e = np.zeros(m)
    phi = np.zeros(m)

    def phi_of(x: float) -> float:
        return 1.0 - pgf(1.0 - x)

    aa = alpha * 0.5 * d_g1[0] if m > 1 else 0.0
    bb = (1.0 - alpha) * 0.5 * d_g11[0] if m > 1 else 0.0
    for n in range(1, m):
        # panel k of int_0^{t_n} psi(t_n - s) dB(s) pairs psi[n-k] with
        # psi[n-k-1]; the k=0 slot holds the unknown psi[n], zeroed here and
        # reinstated through the aa/bb coefficients below
        w_phi = phi[n - 1 :: -1]
        u_phi = np.concatenate(([0.0], w_phi[:-1]))
        w_e = e[n - 1 :: -1]
        u_e = np.concatenate(([0.0], w_e[:-1]))
        known_a = alpha * 0.5 * float((u_phi + w_phi) @ d_g1[:n])
        known_b = (1.0 - alpha) * 0.5 * float((u_e + w_e) @ d_g11[:n])
        r = known_a + known_b + i_term[n]
        x = e[n - 1]
        for _ in range(200):
            x_new = min(1.0, max(0.0, aa * phi_of(x) + bb * x + r))
            if abs(x_new - x) < 1e-13:
                x = x_new
                break
            x = x_new
        e[n] = x
        phi[n] = phi_of(x)
    return e


def _monotone_unit(v: np.ndarray) -> np.ndarray:
    return np.clip(np.maximum.accumulate(v), 0.0, 1.0)


def _solve_on_grid(grid, f00, fbar, p_u, catalyst: CatalystSpec, q_eff: float):
    beta, alpha = catalyst.beta, catalyst.alpha
    g1 = 1.0 - np.exp(-beta * grid)
    d_g1 = np.diff(g1)
    g11 = _stieltjes_conv(g1, np.diff(fbar))
    d_g11 = np.diff(g11)
    d_f00 = np.diff(f00)
    conv_pu_f00 = _stieltjes_conv(p_u, d_f00)
    b3 = g1 - _stieltjes_conv(g1, d_f00)
    conv_pu_b3 = _stieltjes_conv(p_u, np.diff(b3))
    c0 = (1.0 - alpha) * beta / q_eff
    i_term = c0 * (p_u - conv_pu_f00 - ((beta - q_eff) / beta) * conv_pu_b3)
    return _march(grid, d_g1, d_g11, i_term, alpha, catalyst.offspring.pgf)


@dataclass
class VolterraResult:
    """Renewal-equation hit probability on the requested grid."""

    grid: np.ndarray
    estimate: np.ndarray
    mc_band: np.ndarray
    grid_diff: np.ndarray
    n_paths: int

    def to_rows(self):
        for t, e, b, g in zip(self.grid, self.estimate, self.mc_band, self.grid_diff):
            yield float(t), float(e), float(b), float(g)


def volterra_hit_probability(
    catalyst: CatalystSpec,
    walk: WalkConfig,
    target: BoxTarget,
    t_end: float,
    grid_step: float,
    mc_budget: int,
    rng_or_seed,
    max_grid_error: float = 0.02,
    exact_ingredients: dict | None = None,
) -> VolterraResult:
    """Probability that some particle occupies ``target`` at each grid time,
    solved from the renewal equation of the single-catalyst system.

    The catalyst must sit at the origin (also the starting point). The walk
    ingredients (return-time c.d.f.s and the free-walk occupation
    probability of the target) are estimated from ``mc_budget`` paths;
    ``exact_ingredients`` may instead supply callables ``f00``, ``fbar``,
    ``p_u`` for analytically known cases. The equation is solved on the
    requested grid and on its two-fold refinement; if the two disagree by
    more than the Monte Carlo band plus ``max_grid_error`` the grid is
    rejected. The returned values come from the refined solve.
    """
    if any(c != 0 for c in catalyst.position):
        raise ValueError("the renewal route requires the catalyst at the origin")
    if target.dimension != walk.dimension:
        raise ValueError("target dimension mismatch")
    if grid_step <= 0 or t_end <= 0:
        raise ValueError("t_end and grid_step must be positive")
    m = max(2, int(round(t_end / grid_step)))
    grid = np.linspace(0.0, m * grid_step, m + 1)
    fine = np.linspace(0.0, m * grid_step, 2 * m + 1)
    q_eff = walk.exit_rate
    origin = np.zeros(walk.dimension, dtype=np.int64)

    if exact_ingredients is not None:
        f00_f = _monotone_unit(np.asarray([exact_ingredients["f00"](t) for t in fine]))
        fbar_f = _monotone_unit(np.asarray([exact_ingredients["fbar"](t) for t in fine]))
        pu_f = np.clip(np.asarray([exact_ingredients["p_u"](t) for t in fine]), 0.0, 1.0)
        se_f00 = se_fbar = np.zeros_like(f00_f)
        se_pu = np.zeros_like(pu_f)
        n_paths = 0
    else:
        if mc_budget < 2:
            raise ValueError("mc_budget must be at least 2 (or pass exact_ingredients)")
        seed = derive_master(rng_or_seed)
        batch = simulate_hitting_batch(
            walk, origin, origin, None, float(grid[-1]), mc_budget, seed, "volterra-return"
        )
        f00_f = batch.cdf_at(fine)
        fbar_f = batch.lag_cdf_at(fine)
        se_f00 = np.sqrt(f00_f * (1 - f00_f) / mc_budget)
        se_fbar = np.sqrt(fbar_f * (1 - fbar_f) / mc_budget)
        marg = positions_at_times(walk, origin, fine, mc_budget, seed, "volterra-marginal")
        pu_f = target.contains(marg).mean(axis=0)
        se_pu = np.sqrt(pu_f * (1 - pu_f) / mc_budget)
        n_paths = mc_budget

    e_fine = _solve_on_grid(fine, f00_f, fbar_f, pu_f, catalyst, q_eff)
    e_coarse = _solve_on_grid(grid, f00_f[::2], fbar_f[::2], pu_f[::2], catalyst, q_eff)
    grid_diff = np.abs(e_fine[::2] - e_coarse)

    e_hi = _solve_on_grid(
        fine,
        _monotone_unit(f00_f + se_f00),
        _monotone_unit(fbar_f + se_fbar),
        np.clip(pu_f + se_pu, 0, 1),
        catalyst,
        q_eff,
    )
    e_lo = _solve_on_grid(
        fine,
        _monotone_unit(f00_f - se_f00),
        _monotone_unit(fbar_f - se_fbar),
        np.clip(pu_f - se_pu, 0, 1),
        catalyst,
        q_eff,
    )
    band = np.maximum(np.abs(e_hi - e_fine), np.abs(e_fine - e_lo))[::2]

    if np.any(grid_diff > band + max_grid_error):
        raise GridTooCoarseError(
            f"halving the grid step moved the solution by up to {grid_diff.max():.3g}, "
            f"beyond the error band; refine grid_step={grid_step}"
        )
    return VolterraResult(grid, e_fine[::2], band, grid_diff, n_paths)
