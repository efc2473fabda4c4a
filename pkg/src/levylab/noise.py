"""Stochastic inputs: Brownian increments, jump marks, Levy-measure integrals.

The Levy measure nu on R^l minus the origin is described in two pieces,
split at |u| = 1:

* ``small`` part on the annulus {delta <= |u| < 1}.  Simulation truncates
  jumps below the cutoff delta; the neglected mean-square mass
  integral(|u|^2, |u|<delta) is exposed as ``truncation_ms_error`` so
  callers can see the approximation they are buying.
* ``large`` part on {|u| >= 1} with finite total rate; marks are sampled
  i.i.d. and event times form a Poisson process.

Mark samplers draw a fixed number of standard normals per mark, row by
row, so a batch of n marks consumes exactly the same stream values as n
single marks.  Uniform variates are obtained through the normal CDF.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import ndtr

from .errors import EventBudgetError, QuadratureError
from .rng import LANE_BROWNIAN, LANE_COUNTS, LANE_LARGE, LANE_MARKS, RngStream

__all__ = [
    "JumpEvent",
    "LevyMeasureSpec",
    "PowerLawSmallPart",
    "UniformAnnulusSmallPart",
    "DiscreteSmallPart",
    "PointMassLargePart",
    "DiscreteLargePart",
    "UniformAnnulusLargePart",
    "IntegralResult",
    "sample_brownian_increments",
    "sample_large_jump_events",
    "sample_small_jump_events",
    "levy_integral",
]


@dataclass
class JumpEvent:
    """One jump: absolute time, mark in R^l, and which region it came from."""

    time: float
    mark: np.ndarray
    kind: str  # "small" or "large"


def sphere_surface(l: int) -> float:
    """Surface measure of the unit sphere in R^l (2 points for l = 1)."""
    return 2.0 * math.pi ** (l / 2.0) / gamma_fn(l / 2.0)


def ball_volume(l: int) -> float:
    return math.pi ** (l / 2.0) / gamma_fn(l / 2.0 + 1.0)


def _directions(l: int, n: int) -> np.ndarray:
    """Deterministic direction set for quadrature over the unit sphere."""
    if l == 1:
        return np.array([[1.0], [-1.0]])
    if l == 2:
        ang = 2.0 * math.pi * (np.arange(n) + 0.5) / n
        return np.column_stack([np.cos(ang), np.sin(ang)])
    if l == 3:
        # Fibonacci sphere
        i = np.arange(n) + 0.5
        phi = math.pi * (1.0 + math.sqrt(5.0)) * i
        z = 1.0 - 2.0 * i / n
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(58214, spawn_key=(l,))))
    pts = gen.standard_normal((n, l))
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def _marks_from_normals(z: np.ndarray, radius_icdf, l: int) -> np.ndarray:
    """Build marks from per-mark normal rows: col 0 -> radius, rest -> direction."""
    u01 = ndtr(z[:, 0])
    r = radius_icdf(u01)
    if l == 1:
        return np.where(z[:, 1] > 0.0, r, -r)[:, None]
    d = z[:, 1:]
    nrm = np.linalg.norm(d, axis=1, keepdims=True)
    nrm[nrm < 1e-300] = 1.0
    return r[:, None] * d / nrm


class _RadialQuadrature:
    """Gauss-Legendre in radius times a deterministic direction set.

    Integrates f against a radially symmetric density c(r) du, i.e.
    integral = int_{r0}^{r1} [int_{S^{l-1}} f(r w) dS(w)] c(r) r^{l-1} dr.
    """

    def __init__(self, l, r0, r1, radial_density, n_radial=48, n_dirs=None):
        if n_dirs is None:
            n_dirs = {1: 2, 2: 64, 3: 128}.get(l, 192)
        x, w = np.polynomial.legendre.leggauss(n_radial)
        r = 0.5 * (r1 - r0) * x + 0.5 * (r1 + r0)
        wr = 0.5 * (r1 - r0) * w * radial_density(r) * r ** (l - 1)
        dirs = _directions(l, n_dirs)
        m = dirs.shape[0]
        # nodes (n_radial * m, l); weights absorb the surface factor
        self.nodes = (r[:, None, None] * dirs[None, :, :]).reshape(-1, l)
        self.weights = np.repeat(wr, m) * (sphere_surface(l) / m)
        # coarse sub-rule for the error estimate
        self._coarse = None
        if n_radial >= 8:
            self._coarse = _RadialQuadrature(
                l, r0, r1, radial_density, n_radial // 2, max(2, m // 2)
            )

    def integrate(self, f):
        val = _weighted_eval(f, self.nodes, self.weights)
        if self._coarse is None:
            return val, np.abs(val) * 0.0
        coarse = _weighted_eval(f, self._coarse.nodes, self._coarse.weights)
        return val, np.abs(val - coarse)


def _weighted_eval(f, nodes, weights):
    vals = _eval_batch(f, nodes)
    if not np.all(np.isfinite(vals)):
        raise QuadratureError("integrand returned a non-finite value")
    return np.tensordot(weights, vals, axes=(0, 0))


def _eval_batch(f, nodes):
    """Evaluate f on rows of ``nodes``; try the batched call first."""
    try:
        vals = np.asarray(f(nodes), dtype=float)
        if vals.shape[: 1] == (nodes.shape[0],):
            return vals
    except Exception:
        pass
    return np.asarray([f(u) for u in nodes], dtype=float)


# ---------------------------------------------------------------------------
# small-jump parts (support inside the unit ball, truncated below delta)
# ---------------------------------------------------------------------------


@dataclass
class PowerLawSmallPart:
    """Radial alpha-stable-like density c * |u|^(-l-alpha) on delta <= |u| < 1."""

    dim: int
    alpha: float
    intensity: float = 1.0
    delta: float = 1e-2

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ValueError("alpha must lie in (0, 2)")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("power-law small part requires a cutoff delta in (0, 1)")
        if self.intensity <= 0.0:
            raise ValueError("intensity must be positive")

    @property
    def mass(self) -> float:
        s = sphere_surface(self.dim)
        return self.intensity * s * (self.delta ** -self.alpha - 1.0) / self.alpha

    @property
    def mean_vector(self) -> np.ndarray:
        return np.zeros(self.dim)

    @property
    def truncation_ms_error(self) -> float:
        # integral of |u|^2 nu(du) over the discarded ball |u| < delta
        s = sphere_surface(self.dim)
        return self.intensity * s * self.delta ** (2.0 - self.alpha) / (2.0 - self.alpha)

    def sample_marks(self, gen: np.random.Generator, n: int) -> np.ndarray:
        z = gen.standard_normal((n, 1 + max(1, self.dim)))
        a, d = self.alpha, self.delta

        def icdf(u):
            return (d ** -a - u * (d ** -a - 1.0)) ** (-1.0 / a)

        return _marks_from_normals(z, icdf, self.dim)

    def quadrature(self):
        c, a = self.intensity, self.alpha
        return _RadialQuadrature(
            self.dim, self.delta, 1.0, lambda r: c * r ** (-self.dim - a)
        )


@dataclass
class UniformAnnulusSmallPart:
    """Finite-activity uniform density on the annulus delta <= |u| < r_outer."""

    dim: int
    mass: float
    delta: float = 1e-2
    r_outer: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.delta < self.r_outer <= 1.0:
            raise ValueError("need 0 <= delta < r_outer <= 1")
        if self.mass < 0.0:
            raise ValueError("mass must be non-negative")

    @property
    def _density(self) -> float:
        vol = ball_volume(self.dim) * (self.r_outer ** self.dim - self.delta ** self.dim)
        return self.mass / vol if vol > 0 else 0.0

    @property
    def mean_vector(self) -> np.ndarray:
        return np.zeros(self.dim)

    @property
    def truncation_ms_error(self) -> float:
        return 0.0  # finite activity: nothing below delta by construction

    def sample_marks(self, gen, n):
        z = gen.standard_normal((n, 1 + max(1, self.dim)))
        l, d, ro = self.dim, self.delta, self.r_outer

        def icdf(u):
            return (d ** l + u * (ro ** l - d ** l)) ** (1.0 / l)

        return _marks_from_normals(z, icdf, self.dim)

    def quadrature(self):
        rho = self._density
        return _RadialQuadrature(
            self.dim, self.delta, self.r_outer, lambda r: rho * np.ones_like(r)
        )


@dataclass
class DiscreteSmallPart:
    """Finitely many atoms ``(weight, point)`` inside the unit ball."""

    dim: int
    weights: np.ndarray
    points: np.ndarray
    delta: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape != (self.weights.size, self.dim):
            raise ValueError("points must have shape (n_atoms, dim)")
        norms = np.linalg.norm(self.points, axis=1)
        if np.any(norms >= 1.0) or np.any(norms < self.delta):
            raise ValueError("small-jump atoms must satisfy delta <= |u| < 1")
        if np.any(self.weights < 0.0):
            raise ValueError("weights must be non-negative")
        self._cum = np.cumsum(self.weights)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def mean_vector(self) -> np.ndarray:
        return self.weights @ self.points

    @property
    def truncation_ms_error(self) -> float:
        return 0.0

    def sample_marks(self, gen, n):
        z = gen.standard_normal((n, 1))
        u = ndtr(z[:, 0]) * self.mass
        idx = np.searchsorted(self._cum, u, side="right")
        idx = np.minimum(idx, self.weights.size - 1)
        return self.points[idx]

    def atoms(self):
        return self.weights, self.points


# ---------------------------------------------------------------------------
# large-jump parts (support outside the unit ball, finite total rate)
# ---------------------------------------------------------------------------


@dataclass
class PointMassLargePart:
    """Rate lambda with every mark equal to a fixed vector of norm >= 1."""

    dim: int
    rate: float
    mark: np.ndarray = None

    def __post_init__(self):
        if self.rate < 0.0:
            raise ValueError("rate must be non-negative")
        self.mark = np.asarray(self.mark, dtype=float).reshape(self.dim)
        if self.rate > 0.0 and np.linalg.norm(self.mark) < 1.0:
            raise ValueError("large-jump mark must have norm >= 1")

    def sample_marks(self, gen, n):
        return np.broadcast_to(self.mark, (n, self.dim)).copy()

    @property
    def mean_mark(self) -> np.ndarray:
        return self.mark.copy()

    def atoms(self):
        return np.array([self.rate]), self.mark[None, :]


@dataclass
class DiscreteLargePart:
    """Finitely many atoms ``(rate_i, point_i)`` with |point_i| >= 1."""

    dim: int
    weights: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape != (self.weights.size, self.dim):
            raise ValueError("points must have shape (n_atoms, dim)")
        if np.any(np.linalg.norm(self.points, axis=1) < 1.0):
            raise ValueError("large-jump atoms must have norm >= 1")
        if np.any(self.weights < 0.0):
            raise ValueError("rates must be non-negative")
        self._cum = np.cumsum(self.weights)

    @property
    def rate(self) -> float:
        return float(self.weights.sum())

    @property
    def mean_mark(self) -> np.ndarray:
        return self.weights @ self.points / self.rate

    def sample_marks(self, gen, n):
        z = gen.standard_normal((n, 1))
        u = ndtr(z[:, 0]) * self.rate
        idx = np.minimum(np.searchsorted(self._cum, u, side="right"), self.weights.size - 1)
        return self.points[idx]

    def atoms(self):
        return self.weights, self.points


@dataclass
class UniformAnnulusLargePart:
    """Rate lambda, marks uniform on the annulus r_inner <= |u| <= r_outer."""

    dim: int
    rate: float
    r_inner: float = 1.0
    r_outer: float = 2.0

    def __post_init__(self):
        if self.rate < 0.0:
            raise ValueError("rate must be non-negative")
        if not 1.0 <= self.r_inner < self.r_outer:
            raise ValueError("need 1 <= r_inner < r_outer")

    @property
    def mean_mark(self) -> np.ndarray:
        return np.zeros(self.dim)

    def sample_marks(self, gen, n):
        z = gen.standard_normal((n, 1 + max(1, self.dim)))
        l, ri, ro = self.dim, self.r_inner, self.r_outer

        def icdf(u):
            return (ri ** l + u * (ro ** l - ri ** l)) ** (1.0 / l)

        return _marks_from_normals(z, icdf, self.dim)

    def quadrature(self):
        vol = ball_volume(self.dim) * (self.r_outer ** self.dim - self.r_inner ** self.dim)
        rho = self.rate / vol
        return _RadialQuadrature(
            self.dim, self.r_inner, self.r_outer, lambda r: rho * np.ones_like(r)
        )


# ---------------------------------------------------------------------------
# the assembled Levy measure
# ---------------------------------------------------------------------------


@dataclass
class LevyMeasureSpec:
    """The Levy measure split at |u| = 1, plus the simulation cutoff.

    ``small`` may be None (no small jumps) and carries its own cutoff
    delta; ``large`` may be None (no large jumps).
    """

    dim: int
    small: object = None
    large: object = None

    def __post_init__(self):
        for part in (self.small, self.large):
            if part is not None and part.dim != self.dim:
                raise ValueError("part dimension differs from measure dimension")

    @property
    def small_mass(self) -> float:
        return 0.0 if self.small is None else self.small.mass

    @property
    def large_rate(self) -> float:
        return 0.0 if self.large is None else self.large.rate

    @property
    def delta(self) -> float:
        return 0.0 if self.small is None else getattr(self.small, "delta", 0.0)

    @property
    def truncation_ms_error(self) -> float:
        return 0.0 if self.small is None else self.small.truncation_ms_error

    def small_mean_vector(self) -> np.ndarray:
        if self.small is None:
            return np.zeros(self.dim)
        return np.asarray(self.small.mean_vector, dtype=float)


def merge_large_parts(a, b) -> DiscreteLargePart:
    """Superpose two atomic large parts (Poisson thinning consistency)."""
    wa, pa = a.atoms()
    wb, pb = b.atoms()
    return DiscreteLargePart(a.dim, np.concatenate([wa, wb]), np.vstack([pa, pb]))


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def sample_brownian_increments(k: int, dt: float, rng: RngStream) -> np.ndarray:
    """k independent N(0, dt) draws from the stream's Brownian lane."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if k < 1:
        raise ValueError("k must be a positive integer")
    gen = rng.substream(LANE_BROWNIAN).generator
    return math.sqrt(dt) * gen.standard_normal(k)


def sample_large_jump_events(levy: LevyMeasureSpec, horizon: float, rng: RngStream):
    """Poisson event times on (0, horizon] with i.i.d. large marks.

    Times are drawn first (one exponential spacing at a time), then all
    marks in one batch, from the stream's large-jump lane.
    """
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    rate = levy.large_rate
    if rate == 0.0:
        return []
    gen = rng.substream(LANE_LARGE).generator
    times = []
    t = gen.standard_exponential() / rate
    while t <= horizon:
        times.append(t)
        t += gen.standard_exponential() / rate
    marks = levy.large.sample_marks(gen, len(times))
    return [JumpEvent(ti, mi, "large") for ti, mi in zip(times, marks)]


def sample_small_jump_events(
    levy: LevyMeasureSpec, t: float, dt: float, rng: RngStream, event_budget: int = 100_000
):
    """Compound-Poisson batch of truncated small jumps on [t, t + dt).

    All events carry the step's left endpoint as their timestamp: the
    Euler scheme applies them at step resolution, so finer placement
    would only spend random numbers.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    mass = levy.small_mass
    if mass == 0.0:
        return []
    lam = mass * dt
    if lam > event_budget:
        raise EventBudgetError(lam, event_budget)
    n = int(rng.substream(LANE_COUNTS).generator.poisson(lam))
    if n == 0:
        return []
    marks = levy.small.sample_marks(rng.substream(LANE_MARKS).generator, n)
    return [JumpEvent(t, m, "small") for m in marks]


@dataclass
class IntegralResult:
    value: object
    error: object

    def __iter__(self):
        yield self.value
        yield self.error


def levy_integral(levy: LevyMeasureSpec, f, region: str, rng: RngStream = None,
                  n_mc: int = 20_000) -> IntegralResult:
    """integral of f(u) nu(du) over the small or large region.

    Atomic parts are summed exactly; radial densities use the
    deterministic product rule with a half-resolution error estimate;
    parts that only expose a sampler fall back to Monte Carlo with the
    standard error reported.
    """
    if region not in ("small", "large"):
        raise ValueError("region must be 'small' or 'large'")
    part = levy.small if region == "small" else levy.large
    if part is None:
        return IntegralResult(0.0, 0.0)

    if hasattr(part, "atoms"):
        w, pts = part.atoms()
        vals = _eval_batch(f, pts)
        if not np.all(np.isfinite(vals)):
            raise QuadratureError("integrand returned a non-finite value")
        val = np.tensordot(w, vals, axes=(0, 0))
        return IntegralResult(_as_scalar(val), _zero_like(val))

    if hasattr(part, "quadrature"):
        val, err = part.quadrature().integrate(f)
        return IntegralResult(_as_scalar(val), _as_scalar(err))

    # sampler-only part: Monte Carlo with reported standard error
    total = part.mass if region == "small" else part.rate
    gen = (rng or RngStream(0x51AB5)).generator
    pts = part.sample_marks(gen, n_mc)
    vals = _eval_batch(f, pts)
    if not np.all(np.isfinite(vals)):
        raise QuadratureError("integrand returned a non-finite value")
    val = total * vals.mean(axis=0)
    se = total * vals.std(axis=0, ddof=1) / math.sqrt(n_mc)
    return IntegralResult(_as_scalar(val), _as_scalar(se))


def _as_scalar(x):
    arr = np.asarray(x)
    return float(arr) if arr.ndim == 0 else arr


def _zero_like(x):
    arr = np.asarray(x)
    return 0.0 if arr.ndim == 0 else np.zeros_like(arr)
