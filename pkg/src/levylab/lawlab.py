"""Monte Carlo transition laws and distributional tests.

Distances between sample clouds use sliced Wasserstein-1 (exact sorted
coupling per random projection) or the energy statistic.  Absolute
thresholds are avoided everywhere: tests compare observed distances to a
same-law null baseline computed from half-ensembles, with a bootstrap
standard error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LawEstimationError
from .model import ModelSpec
from .rng import RngStream
from .simulate import StepConfig, simulate_snapshots

__all__ = [
    "EmpiricalMeasure",
    "LawDistanceReport",
    "estimate_law",
    "law_distance",
    "periodicity_test",
    "cesaro_average",
    "irreducibility_probe",
    "make_observable",
]

# analysis streams (distance projections, bootstraps) live far above any
# path stream id so they can never collide
ANALYSIS_STREAM_BASE = 2 ** 31


@dataclass
class EmpiricalMeasure:
    """A weighted sample cloud standing in for a transition law."""

    samples: np.ndarray
    weights: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        n = self.samples.shape[0]
        if self.weights is None:
            self.weights = np.full(n, 1.0 / n)
        else:
            self.weights = np.asarray(self.weights, dtype=float)
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def mean(self):
        return self.weights @ self.samples

    def is_uniform(self) -> bool:
        return bool(np.allclose(self.weights, 1.0 / self.n, atol=1e-15))


@dataclass
class LawDistanceReport:
    metric: str
    value: float
    se: float
    n_projections: int = 0

    def __float__(self):
        return self.value


def estimate_law(
    spec: ModelSpec,
    x0,
    s: float,
    t: float,
    n_paths: int,
    cfg: StepConfig,
    master_seed: int,
    threads: int = 1,
) -> EmpiricalMeasure:
    """Terminal cloud of an ensemble started at (s, x0)."""
    if t <= s:
        raise ValueError("need t > s")
    res = simulate_snapshots(spec, x0, s, [t], cfg, n_paths, master_seed,
                             threads=threads)
    alive = res.alive
    n_dead = int((~alive).sum())
    cloud = res.snapshots[0][alive]
    meta = {
        "s": s, "x0": np.asarray(x0, dtype=float), "t": t, "model": spec.name,
        "n_paths": n_paths, "seed": master_seed, "n_blown": n_dead,
    }
    if n_dead > 0.01 * n_paths:
        raise LawEstimationError(
            f"{n_dead} of {n_paths} paths blew up before t={t}",
            partial=EmpiricalMeasure(cloud, meta=meta),
        )
    return EmpiricalMeasure(cloud, meta=meta)


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------


def _w1_sorted_uniform(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact 1-d W1 between equally sized uniform clouds, rows = projections."""
    return np.abs(np.sort(a, axis=1) - np.sort(b, axis=1)).mean(axis=1)


def _w1_weighted(u, uw, v, vw):
    """Exact 1-d W1 between weighted samples via quantile coupling."""
    iu, iv = np.argsort(u), np.argsort(v)
    u, uw = u[iu], uw[iu]
    v, vw = v[iv], vw[iv]
    cu = np.cumsum(uw)[:-1]
    cv = np.cumsum(vw)[:-1]
    levels = np.sort(np.concatenate([cu, cv]))
    qu = u[np.searchsorted(cu, levels, side="right")]
    qv = v[np.searchsorted(cv, levels, side="right")]
    dq = np.diff(np.concatenate([[0.0], levels, [1.0]]))
    qu = np.concatenate([qu, [u[-1]]])
    qv = np.concatenate([qv, [v[-1]]])
    return float(np.sum(dq * np.abs(qu - qv)))


def _projections(dim: int, count: int, gen) -> np.ndarray:
    if dim == 1:
        return np.ones((1, 1))
    d = gen.standard_normal((count, dim))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _sliced_w1(mu: EmpiricalMeasure, nu: EmpiricalMeasure, dirs) -> float:
    pa = mu.samples @ dirs.T  # (n, P)
    pb = nu.samples @ dirs.T
    if mu.is_uniform() and nu.is_uniform() and mu.n == nu.n:
        return float(_w1_sorted_uniform(pa.T, pb.T).mean())
    vals = [
        _w1_weighted(pa[:, j], mu.weights, pb[:, j], nu.weights)
        for j in range(dirs.shape[0])
    ]
    return float(np.mean(vals))


def _energy_stat(a: np.ndarray, b: np.ndarray) -> float:
    def mean_pdist(x, y):
        total = 0.0
        block = 512
        for i in range(0, x.shape[0], block):
            d = np.linalg.norm(x[i:i + block, None, :] - y[None, :, :], axis=2)
            total += d.sum()
        return total / (x.shape[0] * y.shape[0])

    return 2.0 * mean_pdist(a, b) - mean_pdist(a, a) - mean_pdist(b, b)


def law_distance(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    metric: str = "sliced_wasserstein1",
    rng: RngStream = None,
    n_projections: int = 64,
    n_bootstrap: int = 200,
    energy_cap: int = 2048,
) -> LawDistanceReport:
    """Distance between two clouds with a bootstrap standard error.

    sliced_wasserstein1 averages exact sorted-coupling 1-d W1 over random
    unit projections; energy is the usual two-sample energy statistic
    (clouds above ``energy_cap`` are subsampled first).
    """
    if mu.dim != nu.dim:
        raise ValueError("dimension mismatch between clouds")
    rng = rng or RngStream(0xD157, ANALYSIS_STREAM_BASE)
    gen = rng.generator

    if metric == "sliced_wasserstein1":
        dirs = _projections(mu.dim, n_projections, gen)
        value = _sliced_w1(mu, nu, dirs)
        if n_bootstrap > 0:
            pa = np.sort(mu.samples @ dirs.T, axis=0)  # (n, P), per-proj sorted
            pb = np.sort(nu.samples @ dirs.T, axis=0)
            boots = np.empty(n_bootstrap)
            for bidx in range(n_bootstrap):
                wa = gen.multinomial(mu.n, np.full(mu.n, 1.0 / mu.n)) / mu.n
                wb = gen.multinomial(nu.n, np.full(nu.n, 1.0 / nu.n)) / nu.n
                # quantile reweighting against a fixed level grid
                boots[bidx] = _w1_level_grid(pa, wa, pb, wb)
            se = float(boots.std(ddof=1))
        else:
            se = 0.0
        return LawDistanceReport(metric, value, se, dirs.shape[0])

    if metric == "energy":
        a = _maybe_subsample(mu, energy_cap, gen)
        b = _maybe_subsample(nu, energy_cap, gen)
        value = float(_energy_stat(a, b))
        cap = min(512, a.shape[0], b.shape[0])
        boots = np.empty(max(0, n_bootstrap))
        for bidx in range(n_bootstrap):
            ia = gen.integers(0, a.shape[0], cap)
            ib = gen.integers(0, b.shape[0], cap)
            boots[bidx] = _energy_stat(a[ia], b[ib])
        se = float(boots.std(ddof=1)) if n_bootstrap else 0.0
        return LawDistanceReport(metric, value, se)

    raise ValueError(f"unknown metric {metric!r}")


def _w1_level_grid(pa, wa, pb, wb, n_levels: int = 512):
    """Approximate W1 between reweighted sorted projections on a level grid."""
    levels = (np.arange(n_levels) + 0.5) / n_levels
    ca = np.cumsum(wa)
    cb = np.cumsum(wb)
    ia = np.searchsorted(ca, levels, side="left").clip(max=wa.size - 1)
    ib = np.searchsorted(cb, levels, side="left").clip(max=wb.size - 1)
    return float(np.abs(pa[ia, :] - pb[ib, :]).mean())


def _maybe_subsample(mu: EmpiricalMeasure, cap: int, gen) -> np.ndarray:
    if mu.n <= cap and mu.is_uniform():
        return mu.samples
    idx = gen.choice(mu.n, size=min(cap, mu.n), p=mu.weights)
    return mu.samples[idx]


# ---------------------------------------------------------------------------
# periodic-law test
# ---------------------------------------------------------------------------


@dataclass
class PeriodicityReport:
    distances: np.ndarray        # d_k between clouds at s+k0 and s+(k+1)0
    distance_ses: np.ndarray
    null_value: float            # same-law half-ensemble baseline
    null_se: float
    in_band: np.ndarray          # d_k <= null + 3 * null_se
    first_in_band: int           # -1 when never
    tail_run: int                # trailing consecutive in-band count

    @property
    def band_edge(self) -> float:
        return self.null_value + 3.0 * self.null_se


def periodicity_test(
    spec: ModelSpec,
    x0,
    s: float,
    k_max: int,
    n_paths: int,
    cfg: StepConfig,
    master_seed: int,
    metric: str = "sliced_wasserstein1",
    n_projections: int = 64,
    n_bootstrap: int = 200,
    threads: int = 1,
) -> PeriodicityReport:
    """Distances between consecutive period-mark laws of one long ensemble.

    One ensemble runs to s + k_max * theta; clouds are extracted at every
    period mark.  The null baseline is the distance between the two
    halves of the final cloud, so "settled" means statistically
    indistinguishable from sampling noise at this ensemble size.  The
    settling index is reported, never applied as a burn-in.
    """
    if k_max < 2:
        raise ValueError("k_max must be >= 2")
    marks = [s + k * spec.theta for k in range(k_max + 1)]
    res = simulate_snapshots(spec, x0, s, marks, cfg, n_paths, master_seed,
                             threads=threads)
    alive = res.alive
    if (~alive).sum() > 0.01 * n_paths:
        raise LawEstimationError(
            f"{int((~alive).sum())} of {n_paths} paths blew up during the run"
        )
    clouds = [EmpiricalMeasure(res.snapshots[k][alive]) for k in range(k_max + 1)]

    dist_rng = RngStream(master_seed, ANALYSIS_STREAM_BASE)
    ds, ses = [], []
    for k in range(k_max):
        rep = law_distance(clouds[k], clouds[k + 1], metric, dist_rng,
                           n_projections, n_bootstrap)
        ds.append(rep.value)
        ses.append(rep.se)

    final = clouds[-1].samples
    half = final.shape[0] // 2
    null_rep = law_distance(
        EmpiricalMeasure(final[:half]), EmpiricalMeasure(final[half:2 * half]),
        metric, dist_rng, n_projections, n_bootstrap,
    )

    ds = np.asarray(ds)
    in_band = ds <= null_rep.value + 3.0 * null_rep.se
    first = int(np.argmax(in_band)) if in_band.any() else -1
    tail = 0
    for flag in in_band[::-1]:
        if flag:
            tail += 1
        else:
            break
    return PeriodicityReport(
        distances=ds,
        distance_ses=np.asarray(ses),
        null_value=null_rep.value,
        null_se=null_rep.se,
        in_band=in_band,
        first_in_band=first,
        tail_run=tail,
    )


# ---------------------------------------------------------------------------
# Cesaro averages over period marks
# ---------------------------------------------------------------------------


@dataclass
class CesaroReport:
    partial_averages: np.ndarray   # A_j, j = 1..n
    ses: np.ndarray                # per-path Monte Carlo standard errors
    period_means: np.ndarray       # plain ensemble mean of phi at each mark

    @property
    def final(self) -> float:
        return float(self.partial_averages[-1])


def cesaro_average(
    spec: ModelSpec,
    phi,
    s: float,
    x0,
    n: int,
    n_paths: int,
    cfg: StepConfig,
    master_seed: int,
    threads: int = 1,
) -> CesaroReport:
    """Running averages (1/j) sum_i E[phi(X(s + i*theta))] along one ensemble.

    Paths continue across periods (the semigroup composes along each
    path), so the partial averages share paths and their standard errors
    come from the per-path running means.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    marks = [s + i * spec.theta for i in range(1, n + 1)]
    res = simulate_snapshots(spec, x0, s, marks, cfg, n_paths, master_seed,
                             threads=threads)
    alive = res.alive
    if (~alive).sum() > 0.01 * n_paths:
        raise LawEstimationError(
            f"{int((~alive).sum())} of {n_paths} paths blew up during the run"
        )
    vals = np.stack([np.asarray(phi(res.snapshots[i][alive]), dtype=float)
                     for i in range(n)])            # (n, paths)
    run_means = np.cumsum(vals, axis=0) / np.arange(1, n + 1)[:, None]
    A = run_means.mean(axis=1)
    ses = run_means.std(axis=1, ddof=1) / math.sqrt(run_means.shape[1])
    return CesaroReport(A, ses, vals.mean(axis=1))


# ---------------------------------------------------------------------------
# irreducibility probe
# ---------------------------------------------------------------------------


@dataclass
class IrreducibilityReport:
    hit_count: int
    n_paths: int
    estimate: float
    ci_low: float
    ci_high: float
    verdict: str

    @property
    def reachable_evidence(self) -> bool:
        return self.ci_low > 0.0


def wilson_interval(hits: int, n: int, z: float = 1.959963984540054):
    """95% Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    if hits == 0:
        # center - half cancels exactly; avoid float residue
        return 0.0, (z * z / n) / (1.0 + z * z / n)
    p = hits / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo, hi = max(0.0, center - half), min(1.0, center + half)
    return lo, 1.0 if hits == n else hi


def irreducibility_probe(
    spec: ModelSpec,
    x0,
    s: float,
    y,
    radius: float,
    horizon: float,
    n_paths: int,
    cfg: StepConfig,
    master_seed: int,
    threads: int = 1,
) -> IrreducibilityReport:
    """Fraction of paths landing in the ball B(y, radius) at time s + horizon.

    Reports a Wilson interval; the verdict claims reachability evidence
    only when the interval excludes zero.  This is a statistical probe of
    positivity, never a proof.
    """
    if radius <= 0 or horizon <= 0:
        raise ValueError("radius and horizon must be positive")
    y = np.asarray(y, dtype=float).reshape(spec.m)
    res = simulate_snapshots(spec, x0, s, [s + horizon], cfg, n_paths, master_seed,
                             threads=threads)
    cloud = res.snapshots[0][res.alive]
    hits = int((np.linalg.norm(cloud - y, axis=1) < radius).sum())
    lo, hi = wilson_interval(hits, cloud.shape[0])
    verdict = "evidence of reachability" if lo > 0 else "no evidence"
    return IrreducibilityReport(hits, int(cloud.shape[0]), hits / max(1, cloud.shape[0]),
                                lo, hi, verdict)


# ---------------------------------------------------------------------------
# named observables (used by the CLI and the gradient probes)
# ---------------------------------------------------------------------------


def make_observable(name: str, m: int, coord: int = 0, bound: float = None,
                    center=None, radius: float = 1.0):
    """Build a vectorized observable by name; returns (phi, sup_bound).

    Bounded choices report their true sup norm; the unbounded identity
    reports ``inf`` unless clipped through ``bound``.
    """
    if name == "one":
        return (lambda x: np.ones(np.atleast_2d(x).shape[0])), 1.0
    if name == "coordinate":
        if bound is None:
            return (lambda x: np.atleast_2d(x)[:, coord]), math.inf
        b = float(bound)
        return (lambda x: np.clip(np.atleast_2d(x)[:, coord], -b, b)), b
    if name == "tanh":
        return (lambda x: np.tanh(np.atleast_2d(x)[:, coord])), 1.0
    if name == "indicator_ball":
        c = np.zeros(m) if center is None else np.asarray(center, dtype=float)
        return (
            lambda x: (np.linalg.norm(np.atleast_2d(x) - c, axis=1) < radius).astype(float)
        ), 1.0
    if name == "norm2":
        if bound is None:
            return (lambda x: np.sum(np.atleast_2d(x) ** 2, axis=1)), math.inf
        b = float(bound)
        return (lambda x: np.minimum(np.sum(np.atleast_2d(x) ** 2, axis=1), b)), b
    raise ValueError(f"unknown observable {name!r}")
