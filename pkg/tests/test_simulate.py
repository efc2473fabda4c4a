"""Engine oracles: frozen dynamics, ODE limits, interlacing, truncation, Picard."""

import math

import numpy as np
import pytest

from levylab.errors import BlowUpError
from levylab.model import ModelSpec, builtin, coefficient_xt
from levylab.noise import (
    LevyMeasureSpec,
    PointMassLargePart,
    UniformAnnulusSmallPart,
)
from levylab.rng import RngStream
from levylab.simulate import (
    StepConfig,
    euler_step,
    picard_validate,
    simulate_ensemble,
    simulate_path,
    simulate_snapshots,
)


def frozen_spec(m=2):
    zero = coefficient_xt(lambda t, x: np.zeros_like(x))
    return ModelSpec(
        theta=1.0, m=m, k=m,
        drift=zero,
        diffusion=coefficient_xt(lambda t, x: np.zeros((x.shape[0], m, m))),
        diffusion_constant=True,
    )


def test_euler_step_frozen_dynamics():
    spec = frozen_spec()
    x = np.array([1.0, -2.0])
    out = euler_step(spec, 0.0, x, StepConfig(dt=0.3), RngStream(0))
    assert np.array_equal(out, x)


def test_euler_step_explicit_value():
    # scalar b = -x, sigma = 0, x = 1, dt = 0.01 -> 0.99
    spec = ModelSpec(
        theta=1.0, m=1, k=1,
        drift=coefficient_xt(lambda t, x: -x),
        diffusion=coefficient_xt(lambda t, x: np.zeros((x.shape[0], 1, 1))),
        diffusion_constant=True,
    )
    out = euler_step(spec, 0.0, np.array([1.0]), StepConfig(dt=0.01), RngStream(0))
    assert out[0] == pytest.approx(0.99, abs=1e-15)


def test_euler_step_symmetric_jump_mean():
    # H(t,x,u) = u with symmetric small part: compensator 0, jump mean ~ 0
    levy = LevyMeasureSpec(dim=1, small=UniformAnnulusSmallPart(dim=1, mass=5.0, delta=0.1))
    spec = builtin("periodic_ou", a=0.0, c=0.0, sigma=0.0, levy=levy, h_scale=1.0)
    assert np.allclose(spec.small_compensator(0.0, np.array([0.0])), 0.0)
    disp = []
    for i in range(100_000):
        out = euler_step(spec, 0.0, np.array([0.0]), StepConfig(dt=0.05), RngStream(31, i))
        disp.append(out[0])
    disp = np.asarray(disp)
    # E|mark| moments: uniform on +-[0.1, 1): E[u^2] = (1 - 0.001)/(3 * 0.9)
    var_per_event = (1 - 0.1 ** 3) / (3 * 0.9)
    se = math.sqrt(5.0 * 0.05 * var_per_event / disp.size)
    assert abs(disp.mean()) < 4 * se


def test_compound_poisson_displacement():
    # b=sigma=H=0, G=u, point mass at u0: X(T) - x0 = count * u0
    u0 = 1.5
    levy = LevyMeasureSpec(dim=1, large=PointMassLargePart(dim=1, rate=2.0, mark=[u0]))
    spec = builtin("periodic_ou", a=0.0, c=0.0, sigma=0.0, levy=levy, g_scale=1.0)
    res = simulate_snapshots(spec, np.zeros(1), 0.0, [5.0], StepConfig(dt=0.05),
                             n_paths=20_000, master_seed=404)
    term = res.snapshots[0][:, 0]
    counts = term / u0
    assert np.allclose(counts, np.round(counts), atol=1e-9)
    se = math.sqrt(10.0) * u0 / math.sqrt(term.size)
    assert abs(term.mean() - 10.0 * u0) < 4 * se


def test_deterministic_periodic_ou_against_ode():
    # sigma = 0: terminal within 5e-3 of the closed-form mean ODE solution
    spec = builtin("periodic_ou", a=1.0, c=1.0, sigma=0.0, theta=1.0)
    path = simulate_path(spec, np.array([5.0]), 0.0, 20.0, StepConfig(dt=1e-3),
                         RngStream(1))
    w = 2 * math.pi
    mp0 = 1.0 / (1.0 + w ** 2)

    def exact(t):
        mp = (math.cos(w * t) + w * math.sin(w * t)) / (1 + w ** 2)
        return math.exp(-t) * (5.0 - mp0) + mp

    assert abs(path.states[-1, 0] - exact(20.0)) < 5e-3
    assert path.times[0] == 0.0 and path.times[-1] == pytest.approx(20.0, abs=0)


def test_large_jump_events_recorded_on_path():
    levy = LevyMeasureSpec(dim=1, large=PointMassLargePart(dim=1, rate=1.0, mark=[2.0]))
    spec = builtin("periodic_ou", a=1.0, c=0.0, sigma=0.5, levy=levy, g_scale=1.0)
    path = simulate_path(spec, np.zeros(1), 0.0, 8.0, StepConfig(dt=0.01), RngStream(3))
    large = [e for e in path.events if e.kind == "large"]
    for e in large:
        assert np.linalg.norm(e.mark) >= 1.0
        # the event time is a path grid point (exact interlacing)
        assert np.min(np.abs(path.times - e.time)) == 0.0
    # jump count matches the pre-sampled Poisson times
    assert len(large) >= 1


def test_ensemble_path0_equals_simulate_path():
    levy = LevyMeasureSpec(
        dim=1,
        small=UniformAnnulusSmallPart(dim=1, mass=2.0, delta=0.1),
        large=PointMassLargePart(dim=1, rate=1.0, mark=[1.2]),
    )
    spec = builtin("periodic_ou", a=1.0, c=1.0, sigma=1.0, levy=levy)
    cfg = StepConfig(dt=0.01)
    paths = simulate_ensemble(spec, np.zeros(1), 0.0, 3.0, cfg, n_paths=3, master_seed=55)
    solo = simulate_path(spec, np.zeros(1), 0.0, 3.0, cfg, RngStream(55, 0))
    assert np.array_equal(paths[0].times, solo.times)
    assert np.array_equal(paths[0].states, solo.states)


def test_ensemble_replay_bit_identical():
    spec = builtin("lorenz")
    cfg = StepConfig(dt=5e-3)
    a = simulate_snapshots(spec, np.ones(3), 0.0, [0.5, 1.0], cfg, 64, master_seed=9)
    b = simulate_snapshots(spec, np.ones(3), 0.0, [0.5, 1.0], cfg, 64, master_seed=9)
    assert np.array_equal(a.snapshots, b.snapshots)


def test_snapshots_thread_count_invariance():
    spec = builtin("lorenz")
    cfg = StepConfig(dt=5e-3)
    a = simulate_snapshots(spec, np.ones(3), 0.0, [1.0], cfg, 50, master_seed=9, threads=1)
    b = simulate_snapshots(spec, np.ones(3), 0.0, [1.0], cfg, 50, master_seed=9, threads=4)
    assert np.array_equal(a.snapshots, b.snapshots)


def test_manual_euler_loop_reproduces_engine_path():
    # same lanes, same order: a hand-rolled euler_step loop equals simulate_path
    levy = LevyMeasureSpec(dim=1, small=UniformAnnulusSmallPart(dim=1, mass=3.0, delta=0.2))
    spec = builtin("periodic_ou", a=1.0, c=0.5, sigma=0.8, levy=levy, h_scale=0.3)
    cfg = StepConfig(dt=0.02)
    path = simulate_path(spec, np.array([0.7]), 0.0, 1.0, cfg, RngStream(77, 0))

    rng = RngStream(77, 0)
    x = np.array([0.7])
    xs = [x.copy()]
    for i in range(50):
        x = euler_step(spec, i * 0.02, x, cfg, rng)
        xs.append(x.copy())
    assert np.array_equal(np.array(xs), path.states)


def test_interlacing_machinery_inert_without_large_jumps():
    # G = 0: paths identical whether or not a (zero-rate) large part is present
    small = UniformAnnulusSmallPart(dim=1, mass=1.0, delta=0.1)
    spec_a = builtin("periodic_ou", levy=LevyMeasureSpec(dim=1, small=small))
    spec_b = builtin(
        "periodic_ou",
        levy=LevyMeasureSpec(
            dim=1, small=small, large=PointMassLargePart(dim=1, rate=0.0, mark=[1.5])
        ),
    )
    cfg = StepConfig(dt=0.01)
    pa = simulate_path(spec_a, np.zeros(1), 0.0, 2.0, cfg, RngStream(12, 0))
    pb = simulate_path(spec_b, np.zeros(1), 0.0, 2.0, cfg, RngStream(12, 0))
    assert np.array_equal(pa.states, pb.states)


def test_stationary_ou_ensemble_variance():
    spec = builtin("periodic_ou", a=1.0, c=0.0, sigma=1.0)
    res = simulate_snapshots(spec, np.zeros(1), 0.0, [8.0], StepConfig(dt=1e-3),
                             n_paths=4000, master_seed=2)
    v = res.snapshots[0][:, 0].var(ddof=1)
    se = 0.5 * math.sqrt(2.0 / (4000 - 1))
    assert abs(v - 0.5) < 3 * se


def test_strong_error_shrinks_with_dt():
    # Euler refinement on the linear model under a shared Brownian path
    spec = builtin("periodic_ou", a=1.0, c=1.0, sigma=1.0)
    T, n_paths = 1.0, 400
    dts = [0.02, 0.01, 0.005]
    n_fine = int(T / dts[-1])
    errs = []
    gaps = []
    for p in range(n_paths):
        zfine = RngStream(1001, p).generator.standard_normal(n_fine)
        vals = []
        for dt in dts:
            step = int(round(dt / dts[-1]))
            dB = math.sqrt(dts[-1]) * zfine.reshape(-1, step).sum(axis=1)
            x = 0.0
            for i in range(len(dB)):
                t = i * dt
                x = x + (-x + math.cos(2 * math.pi * t)) * dt + dB[i]
            vals.append(x)
        gaps.append([abs(vals[0] - vals[2]), abs(vals[1] - vals[2])])
    gaps = np.array(gaps)
    ratio = gaps[:, 0].mean() / gaps[:, 1].mean()
    assert ratio >= 1.3


def test_truncation_agreement_until_exit():
    spec = builtin("lorenz")
    cfg = StepConfig(dt=1e-3)
    cfg_tr = StepConfig(dt=1e-3, truncation_radius=8.0)
    base = simulate_path(spec, np.array([1.0, 1.0, 1.0]), 0.0, 2.0, cfg, RngStream(61, 0))
    trunc = simulate_path(spec, np.array([1.0, 1.0, 1.0]), 0.0, 2.0, cfg_tr,
                          RngStream(61, 0))
    assert trunc.exited is not None
    t_exit = trunc.exited.time
    upto = base.times <= t_exit
    assert np.array_equal(base.states[upto], trunc.states[upto])
    # and they genuinely diverge afterwards
    assert not np.array_equal(base.states, trunc.states)


def test_blow_up_detected_and_raised():
    spec = ModelSpec(
        theta=1.0, m=1, k=1,
        drift=coefficient_xt(lambda t, x: x ** 3),
        diffusion=coefficient_xt(lambda t, x: np.zeros((x.shape[0], 1, 1))),
        diffusion_constant=True,
    )
    with pytest.raises(BlowUpError) as exc:
        simulate_path(spec, np.array([4.0]), 0.0, 5.0, StepConfig(dt=0.5), RngStream(0))
    assert exc.value.partial_path is not None


# ---------------------------------------------------------------------------
# Picard validation
# ---------------------------------------------------------------------------


def test_picard_frozen_dynamics_fixed_point():
    rep = picard_validate(frozen_spec(1), np.zeros(1), 0.5, 4, StepConfig(dt=0.01),
                          RngStream(0))
    assert rep.distances[0] == 0.0


def test_picard_deterministic_contraction():
    spec = ModelSpec(
        theta=1.0, m=1, k=1,
        drift=coefficient_xt(lambda t, x: -x),
        diffusion=coefficient_xt(lambda t, x: np.zeros((x.shape[0], 1, 1))),
        diffusion_constant=True,
    )
    rep = picard_validate(spec, np.array([1.0]), 0.5, 8, StepConfig(dt=1e-3),
                          RngStream(0))
    r = rep.ratios()
    assert not rep.diverged
    assert np.all(r[1:] <= 0.6)  # from the second iterate on


def test_picard_stochastic_contraction_rate():
    # bounded state-dependent sigma, shared noise: geometric decay in >= 95/100 runs
    spec = ModelSpec(
        theta=1.0, m=1, k=1,
        drift=coefficient_xt(lambda t, x: -x),
        diffusion=coefficient_xt(lambda t, x: 0.25 * np.cos(x)[:, :, None]),
    )
    ok = 0
    for i in range(100):
        rep = picard_validate(spec, np.array([1.0]), 0.5, 6, StepConfig(dt=2e-3),
                              RngStream(500, i))
        r = rep.ratios()
        if np.all(r[1:] <= 0.6) and not rep.diverged:
            ok += 1
    assert ok >= 95


def test_picard_rejects_large_jumps():
    levy = LevyMeasureSpec(dim=1, large=PointMassLargePart(dim=1, rate=1.0, mark=[1.5]))
    spec = builtin("periodic_ou", levy=levy)
    with pytest.raises(ValueError):
        picard_validate(spec, np.zeros(1), 0.5, 3, StepConfig(dt=0.01), RngStream(0))
