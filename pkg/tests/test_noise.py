"""Brownian draws, jump sampling, and Levy-measure quadrature against oracles."""

import math

import numpy as np
import pytest
from scipy import stats

from levylab.errors import EventBudgetError, QuadratureError
from levylab.noise import (
    DiscreteSmallPart,
    LevyMeasureSpec,
    PointMassLargePart,
    PowerLawSmallPart,
    UniformAnnulusLargePart,
    UniformAnnulusSmallPart,
    levy_integral,
    merge_large_parts,
    sample_brownian_increments,
    sample_large_jump_events,
    sample_small_jump_events,
)
from levylab.rng import RngStream


def test_brownian_rejects_bad_dt():
    with pytest.raises(ValueError):
        sample_brownian_increments(3, 0.0, RngStream(0))
    with pytest.raises(ValueError):
        sample_brownian_increments(3, -1.0, RngStream(0))


def test_brownian_moments():
    # k=1, dt=0.01, 1e6 draws: mean within 4 SE of 0, variance within 1% of dt
    rng = RngStream(2024, 0)
    draws = np.concatenate(
        [sample_brownian_increments(1, 0.01, rng) for _ in range(10)]
    )
    gen = rng.substream(0).generator  # keep drawing from the same lane, in bulk
    draws = np.concatenate([draws, math.sqrt(0.01) * gen.standard_normal(10 ** 6 - 10)])
    assert abs(draws.mean()) < 4 * 0.1 / 1e3
    assert abs(draws.var() - 0.01) < 0.01 * 0.01


def test_brownian_determinism():
    a = sample_brownian_increments(4, 0.5, RngStream(7, 3))
    b = sample_brownian_increments(4, 0.5, RngStream(7, 3))
    assert np.array_equal(a, b)


def test_brownian_increment_additivity_in_law():
    # var of (increment over dt) + (increment over dt) matches one over 2dt
    rng = RngStream(11, 0).substream(0).generator
    dt = 0.04
    z = math.sqrt(dt) * rng.standard_normal((200_000, 2))
    summed = z.sum(axis=1)
    assert abs(summed.var() - 2 * dt) < 4 * (2 * dt) * math.sqrt(2 / 200_000)


# ---------------------------------------------------------------------------
# large jumps
# ---------------------------------------------------------------------------


def test_large_jumps_empty_when_rate_zero():
    levy = LevyMeasureSpec(dim=1)
    assert sample_large_jump_events(levy, 5.0, RngStream(0)) == []


def test_large_jump_poisson_mean():
    # lambda=2, T=5: mean count within 1% of 10 over 1e5 runs
    levy = LevyMeasureSpec(
        dim=1, large=PointMassLargePart(dim=1, rate=2.0, mark=[1.5])
    )
    counts = np.array(
        [
            len(sample_large_jump_events(levy, 5.0, RngStream(99, i)))
            for i in range(100_000)
        ]
    )
    assert abs(counts.mean() - 10.0) < 0.1


def test_large_jump_structure():
    levy = LevyMeasureSpec(
        dim=2, large=UniformAnnulusLargePart(dim=2, rate=3.0, r_inner=1.0, r_outer=2.5)
    )
    events = sample_large_jump_events(levy, 20.0, RngStream(5, 0))
    times = [e.time for e in events]
    assert all(t2 > t1 for t1, t2 in zip(times, times[1:]))
    assert all(np.linalg.norm(e.mark) >= 1.0 for e in events)
    assert all(e.kind == "large" for e in events)


def test_poisson_thinning_merge_consistency():
    # counts and mark norms from merged(nu1, nu2) match sampling nu1 + nu2
    nu1 = PointMassLargePart(dim=1, rate=1.0, mark=[1.0])
    nu2 = PointMassLargePart(dim=1, rate=2.0, mark=[-3.0])
    merged = LevyMeasureSpec(dim=1, large=merge_large_parts(nu1, nu2))
    n_runs, T = 10_000, 2.0

    counts_m, norms_m = [], []
    for i in range(n_runs):
        ev = sample_large_jump_events(merged, T, RngStream(1000, i))
        counts_m.append(len(ev))
        norms_m.extend(abs(float(e.mark[0])) for e in ev)

    counts_s, norms_s = [], []
    for i in range(n_runs):
        e1 = sample_large_jump_events(
            LevyMeasureSpec(dim=1, large=nu1), T, RngStream(2000, i)
        )
        e2 = sample_large_jump_events(
            LevyMeasureSpec(dim=1, large=nu2), T, RngStream(3000, i)
        )
        counts_s.append(len(e1) + len(e2))
        norms_s.extend(abs(float(e.mark[0])) for e in e1 + e2)

    assert stats.ks_2samp(counts_m, counts_s).pvalue > 0.01
    assert stats.ks_2samp(norms_m, norms_s).pvalue > 0.01


# ---------------------------------------------------------------------------
# small jumps
# ---------------------------------------------------------------------------


def test_small_jumps_empty_when_no_small_part():
    levy = LevyMeasureSpec(dim=1)
    assert sample_small_jump_events(levy, 0.0, 0.1, RngStream(0)) == []


def test_small_jump_batch_mean_count():
    # total mass 3, dt=0.1: mean count within 2% of 0.3 over 1e5 batches
    levy = LevyMeasureSpec(
        dim=1, small=UniformAnnulusSmallPart(dim=1, mass=3.0, delta=0.05)
    )
    counts = np.array(
        [
            len(sample_small_jump_events(levy, 0.0, 0.1, RngStream(77, i)))
            for i in range(100_000)
        ]
    )
    assert abs(counts.mean() - 0.3) < 0.02 * 0.3


def test_small_jump_marks_in_annulus():
    levy = LevyMeasureSpec(
        dim=2, small=PowerLawSmallPart(dim=2, alpha=0.8, intensity=2.0, delta=0.05)
    )
    rng = RngStream(8, 0)
    marks = [
        e.mark
        for i in range(200)
        for e in sample_small_jump_events(levy, 0.0, 0.5, rng)
    ]
    norms = np.linalg.norm(np.array(marks), axis=1)
    assert norms.size > 50
    assert np.all(norms >= 0.05) and np.all(norms < 1.0)


def test_small_jump_budget_error():
    levy = LevyMeasureSpec(
        dim=1, small=PowerLawSmallPart(dim=1, alpha=1.5, intensity=1.0, delta=1e-4)
    )
    with pytest.raises(EventBudgetError):
        sample_small_jump_events(levy, 0.0, 1.0, RngStream(0), event_budget=1000)


def test_power_law_radius_distribution():
    part = PowerLawSmallPart(dim=1, alpha=1.2, intensity=1.0, delta=0.01)
    marks = part.sample_marks(RngStream(4, 0).generator, 200_000)
    r = np.abs(marks[:, 0])
    a, d = 1.2, 0.01

    def cdf(x):
        return (d ** -a - x ** -a) / (d ** -a - 1.0)

    assert stats.kstest(r, cdf).pvalue > 0.01
    # symmetric signs
    assert abs(np.mean(np.sign(marks[:, 0]))) < 4 / math.sqrt(marks.shape[0])


# ---------------------------------------------------------------------------
# levy_integral
# ---------------------------------------------------------------------------


def _power_levy(alpha=1.2, c=0.7, delta=0.05):
    return LevyMeasureSpec(
        dim=1, small=PowerLawSmallPart(dim=1, alpha=alpha, intensity=c, delta=delta)
    )


def test_levy_integral_zero_function():
    val, err = levy_integral(_power_levy(), lambda u: 0.0 * u[..., 0], "small")
    assert val == 0.0


def test_levy_integral_large_total_mass():
    levy = LevyMeasureSpec(dim=1, large=PointMassLargePart(dim=1, rate=2.5, mark=[2.0]))
    val, err = levy_integral(levy, lambda u: np.ones(u.shape[0]), "large")
    assert val == pytest.approx(2.5, abs=0)


def test_levy_integral_power_law_second_moment():
    # closed form: 2 c (1 - delta^(2-alpha)) / (2 - alpha)
    alpha, c, delta = 1.2, 0.7, 0.05
    levy = _power_levy(alpha, c, delta)
    val, err = levy_integral(levy, lambda u: u[..., 0] ** 2, "small")
    exact = 2 * c * (1 - delta ** (2 - alpha)) / (2 - alpha)
    assert val == pytest.approx(exact, abs=1e-8)
    assert err < 1e-8


def test_levy_integral_linearity_and_monotonicity():
    levy = _power_levy()
    f1 = lambda u: u[..., 0] ** 2
    f2 = lambda u: np.abs(u[..., 0]) ** 3
    v1, _ = levy_integral(levy, f1, "small")
    v2, _ = levy_integral(levy, f2, "small")
    v12, _ = levy_integral(levy, lambda u: 2.0 * f1(u) - 3.0 * f2(u), "small")
    assert v12 == pytest.approx(2 * v1 - 3 * v2, rel=1e-12)
    assert v1 > 0 and v2 > 0  # monotone: f >= 0 gives value >= 0


def test_levy_integral_vector_valued():
    levy = LevyMeasureSpec(
        dim=2, small=DiscreteSmallPart(dim=2, weights=[1.5, 0.5],
                                       points=[[0.3, 0.0], [0.0, -0.4]])
    )
    val, err = levy_integral(levy, lambda u: u, "small")
    assert np.allclose(val, [0.45, -0.2])
    assert np.all(np.asarray(err) == 0.0)


def test_levy_integral_nonfinite_integrand():
    with np.errstate(divide="ignore", invalid="ignore"):
        with pytest.raises(QuadratureError):
            levy_integral(_power_levy(), lambda u: 1.0 / (u[..., 0] - u[..., 0]), "small")


def test_truncation_ms_error_closed_form():
    part = PowerLawSmallPart(dim=1, alpha=1.5, intensity=1.0, delta=0.01)
    exact = 2 * 1.0 * 0.01 ** 0.5 / 0.5
    assert part.truncation_ms_error == pytest.approx(exact, rel=1e-12)
