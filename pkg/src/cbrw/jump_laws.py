"""Semi-exponential (discrete Weibull) jump laws on the integer lattice.

A jump vector has independent coordinates. Each coordinate splits into a
positive and a negative part, at most one of which is nonzero; side ``+``
fires with probability ``l1_plus``, side ``-`` with ``l1_minus``, and the
coordinate is 0 with the remaining mass (zero under the standard
normalization l1_plus + l1_minus = 1). Conditioned on firing, the magnitude
follows the integer law with tail

    P(magnitude > y) = exp(-l2 * y**gamma),   y = 0, 1, 2, ...

so the unconditional one-sided tail is l1 * exp(-l2 * y**gamma) with
gamma in (0, 1): heavier than exponential, lighter than polynomial.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

__all__ = [
    "AxisTailLaw",
    "JumpLaw",
    "TableJumpLaw",
    "tail_prob",
    "solve_mean_zero_weights",
    "mean_axis",
    "sample_component",
    "sample_jump",
    "inverse_norm",
    "weibull_tail_sum",
]

#: truncation error target for the tail series sums
SERIES_TOL = 1e-12
#: hard cap on the number of summed terms before giving up
SERIES_MAX_TERMS = 10**7
_SERIES_BLOCK = 1 << 16


class SeriesTruncationError(RuntimeError):
    """Tail series could not reach the requested truncation error."""


def weibull_tail_sum(gamma: float, l2: float, tol: float = SERIES_TOL) -> float:
    """Sum of exp(-l2 * y**gamma) over y = 0, 1, 2, ...

    Terms are accumulated in blocks until the integral bound on the
    remainder drops below ``tol``. The bound is exact because the summand
    is decreasing:

        sum_{y > Y} exp(-l2 y^g) <= int_Y^inf exp(-l2 t^g) dt
                                  = Gamma(1/g, l2 Y^g) / (g l2^(1/g)).
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if l2 <= 0.0:
        raise ValueError(f"l2 must be positive, got {l2}")
    a = 1.0 / gamma
    total = 0.0
    start = 0
    while start < SERIES_MAX_TERMS:
        y = np.arange(start, start + _SERIES_BLOCK, dtype=float)
        total += float(np.exp(-l2 * y**gamma).sum())
        start += _SERIES_BLOCK
        x = l2 * float(start - 1) ** gamma
        tail = special.gammaincc(a, x) * special.gamma(a) / (gamma * l2**a)
        if tail < tol:
            return total
    raise SeriesTruncationError(
        f"tail series for gamma={gamma}, l2={l2} did not reach tol={tol} "
        f"within {SERIES_MAX_TERMS} terms"
    )


def solve_mean_zero_weights(
    gamma_plus: float, gamma_minus: float, l2_plus: float, l2_minus: float
) -> tuple[float, float]:
    """Side weights (l1_plus, l1_minus) making the component mean zero.

    Solves the 2x2 system  l1p + l1m = 1,  l1p*S_plus - l1m*S_minus = 0,
    where S is the one-sided tail series. The solution is explicit:
    l1p = S_minus / (S_plus + S_minus).
    """
    s_plus = weibull_tail_sum(gamma_plus, l2_plus)
    s_minus = weibull_tail_sum(gamma_minus, l2_minus)
    l1_plus = s_minus / (s_plus + s_minus)
    return l1_plus, 1.0 - l1_plus


@dataclass(frozen=True)
class AxisTailLaw:
    """Per-axis, per-sign tail parameters of one jump coordinate."""

    gamma_plus: float
    gamma_minus: float
    l1_plus: float
    l1_minus: float
    l2_plus: float
    l2_minus: float

    def __post_init__(self):
        for name in ("gamma_plus", "gamma_minus"):
            g = getattr(self, name)
            if not 0.0 < g < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {g}")
        for name in ("l2_plus", "l2_minus"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        for name in ("l1_plus", "l1_minus"):
            w = getattr(self, name)
            if not 0.0 < w < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {w}")
        if self.l1_plus + self.l1_minus > 1.0 + 1e-9:
            raise ValueError("l1_plus + l1_minus must not exceed 1")

    @classmethod
    def calibrated(
        cls, gamma_plus: float, gamma_minus: float, l2_plus: float, l2_minus: float
    ) -> "AxisTailLaw":
        """Axis with side weights solved so the component mean is zero."""
        l1p, l1m = solve_mean_zero_weights(gamma_plus, gamma_minus, l2_plus, l2_minus)
        return cls(gamma_plus, gamma_minus, l1p, l1m, l2_plus, l2_minus)

    def gamma(self, side: str) -> float:
        return self.gamma_plus if side == "+" else self.gamma_minus

    def l1(self, side: str) -> float:
        return self.l1_plus if side == "+" else self.l1_minus

    def l2(self, side: str) -> float:
        return self.l2_plus if side == "+" else self.l2_minus

    @property
    def zero_prob(self) -> float:
        """Atom at 0 of the signed component (0 for calibrated laws)."""
        return max(0.0, 1.0 - self.l1_plus - self.l1_minus)


def _check_side(side: str) -> None:
    if side not in ("+", "-"):
        raise ValueError(f"side must be '+' or '-', got {side!r}")


def tail_prob(axis: AxisTailLaw, side: str, y) -> float | np.ndarray:
    """P(one-sided part > y) = l1 * exp(-l2 * y**gamma) for integer y >= 0."""
    _check_side(side)
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("y must be non-negative")
    out = axis.l1(side) * np.exp(-axis.l2(side) * y ** axis.gamma(side))
    return float(out) if out.ndim == 0 else out


def mean_axis(axis: AxisTailLaw) -> float:
    """Signed component mean l1p*S_plus - l1m*S_minus via tail sums."""
    s_plus = weibull_tail_sum(axis.gamma_plus, axis.l2_plus)
    s_minus = weibull_tail_sum(axis.gamma_minus, axis.l2_minus)
    return axis.l1_plus * s_plus - axis.l1_minus * s_minus


def inverse_norm(axis: AxisTailLaw, side: str, s) -> float | np.ndarray:
    """Normalizing factor (s / l2)**(1/gamma), the asymptotic inverse of
    y -> -ln tail_prob(y) for constant slowly-varying factors."""
    _check_side(side)
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("s must be non-negative")
    out = (s / axis.l2(side)) ** (1.0 / axis.gamma(side))
    return float(out) if out.ndim == 0 else out


def _magnitudes(gamma: float, l2: float, v: np.ndarray) -> np.ndarray:
    """Inverse-transform of the conditional magnitude law on {1, 2, ...}.

    For uniform v, the smallest y >= 1 with 1 - exp(-l2 y^g) >= v is
    ceil((-ln(1-v)/l2)^(1/g)).
    """
    w = -np.log1p(-v) / l2
    return np.maximum(1, np.ceil(w ** (1.0 / gamma))).astype(np.int64)


def sample_component(axis: AxisTailLaw, rng: np.random.Generator) -> int:
    """One signed component draw: pick side by the l1 weights, then the
    conditional magnitude by inverse transform. Consumes two uniforms."""
    u = rng.random()
    v = rng.random()
    if u < axis.l1_plus:
        w = -math.log1p(-v) / axis.l2_plus
        return max(1, math.ceil(w ** (1.0 / axis.gamma_plus)))
    if u < axis.l1_plus + axis.l1_minus:
        w = -math.log1p(-v) / axis.l2_minus
        return -max(1, math.ceil(w ** (1.0 / axis.gamma_minus)))
    return 0


def sample_components(axis: AxisTailLaw, n: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorized ``sample_component``; returns int64 array of shape (n,)."""
    u = rng.random(n)
    v = rng.random(n)
    out = np.zeros(n, dtype=np.int64)
    plus = u < axis.l1_plus
    minus = (~plus) & (u < axis.l1_plus + axis.l1_minus)
    if plus.any():
        out[plus] = _magnitudes(axis.gamma_plus, axis.l2_plus, v[plus])
    if minus.any():
        out[minus] = -_magnitudes(axis.gamma_minus, axis.l2_minus, v[minus])
    return out


@dataclass(frozen=True)
class JumpLaw:
    """Product law of d independent semi-exponential coordinates.

    Construction requires every axis to be mean-zero within ``MEAN_TOL``;
    use :meth:`AxisTailLaw.calibrated` or pass explicit weights that already
    balance. The joint jump may be the zero vector only through the per-axis
    atoms at 0 (probability 0 for normalized weights).
    """

    axes: tuple[AxisTailLaw, ...]
    MEAN_TOL = 1e-8

    def __post_init__(self):
        if not self.axes:
            raise ValueError("JumpLaw needs at least one axis")
        object.__setattr__(self, "axes", tuple(self.axes))
        for i, axis in enumerate(self.axes):
            m = mean_axis(axis)
            if abs(m) > self.MEAN_TOL:
                raise ValueError(
                    f"axis {i} is not mean-zero (mean={m:.3e}); "
                    "calibrate the l1 weights first"
                )
        p = 1.0
        for axis in self.axes:
            p *= axis.zero_prob
        object.__setattr__(self, "_zero_prob", p)

    @property
    def dimension(self) -> int:
        return len(self.axes)

    @property
    def zero_prob(self) -> float:
        return self._zero_prob

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([sample_component(a, rng) for a in self.axes], dtype=np.int64)

    def sample_n(self, n: int, rng: np.random.Generator) -> np.ndarray:
        cols = [sample_components(a, n, rng) for a in self.axes]
        return np.stack(cols, axis=1)


@dataclass(frozen=True)
class TableJumpLaw:
    """Finite-support jump law given by explicit offsets and probabilities.

    Not semi-exponential; used for degenerate and nearest-neighbour walks
    in diagnostics and tests. Offsets may include the zero vector.
    """

    offsets: np.ndarray = field(repr=False)
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        offsets = np.atleast_2d(np.asarray(self.offsets, dtype=np.int64))
        probs = np.asarray(self.probs, dtype=float)
        if offsets.shape[0] != probs.shape[0]:
            raise ValueError("offsets and probs must have equal length")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("probs must be non-negative and sum to 1")
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "_cdf", np.cumsum(probs))
        object.__setattr__(self, "_cdf_list", list(np.cumsum(probs)))
        object.__setattr__(self, "_offset_tuples", [tuple(map(int, row)) for row in offsets])
        zero_rows = np.all(offsets == 0, axis=1)
        object.__setattr__(self, "_zero_prob", float(probs[zero_rows].sum()))

    @classmethod
    def one_dimensional(cls, table: dict[int, float]) -> "TableJumpLaw":
        items = sorted(table.items())
        return cls(np.array([[k] for k, _ in items]), np.array([p for _, p in items]))

    @classmethod
    def nearest_neighbour(cls, dimension: int) -> "TableJumpLaw":
        """Simple symmetric walk: +-1 along a single coordinate."""
        offsets = []
        for i in range(dimension):
            for s in (1, -1):
                e = [0] * dimension
                e[i] = s
                offsets.append(e)
        probs = np.full(2 * dimension, 1.0 / (2 * dimension))
        return cls(np.array(offsets), probs)

    @property
    def dimension(self) -> int:
        return self.offsets.shape[1]

    @property
    def zero_prob(self) -> float:
        return self._zero_prob

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        idx = min(bisect.bisect_right(self._cdf_list, rng.random()), len(self.probs) - 1)
        return np.asarray(self._offset_tuples[idx], dtype=np.int64)

    def sample_n(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = np.minimum(
            np.searchsorted(self._cdf, rng.random(n), side="right"),
            len(self.probs) - 1,
        )
        return self.offsets[idx]


def sample_jump(law, rng: np.random.Generator) -> np.ndarray:
    """One jump vector from any law exposing ``sample``."""
    return law.sample(rng)


def sample_nonzero_jumps(law, n: int, rng: np.random.Generator) -> np.ndarray:
    """n jumps conditioned on being nonzero, by exact rejection."""
    p_zero = law.zero_prob
    if p_zero >= 1.0:
        raise ValueError("law has no nonzero jumps")
    out = law.sample_n(n, rng)
    if p_zero == 0.0:
        return out
    bad = np.all(out == 0, axis=1)
    while bad.any():
        out[bad] = law.sample_n(int(bad.sum()), rng)
        bad = np.all(out == 0, axis=1)
    return out


def sample_nonzero_jump(law, rng: np.random.Generator) -> np.ndarray:
    while True:
        j = law.sample(rng)
        if np.any(j != 0):
            return j
