"""Cross-module distributional invariants at their stated scales."""

import math

import numpy as np
import pytest

from _models import nonlinear_2d
from levylab.belgrad import bel_gradient
from levylab.generator import dynkin_check, reference_certificate
from levylab.lawlab import EmpiricalMeasure, law_distance, make_observable
from levylab.model import builtin
from levylab.rng import RngStream
from levylab.simulate import StepConfig, simulate_snapshots


def test_time_shift_periodicity_in_law_lorenz():
    # restarting at (s0 + theta, x0) versus (s0, x0): terminal laws match
    spec = builtin("lorenz", alpha=(10.0, [(0.0, 2.0)]), beta=8.0 / 3.0, mu=28.0,
                   noise_scale=1.0)
    cfg = StepConfig(dt=2e-3)
    x0 = np.array([1.0, 1.0, 1.0])
    n = 10_000
    horizon = 4.0
    a = simulate_snapshots(spec, x0, 0.0, [horizon], cfg, n, master_seed=600)
    b = simulate_snapshots(spec, x0, spec.theta, [spec.theta + horizon], cfg, n,
                           master_seed=601)
    mu = EmpiricalMeasure(a.snapshots[0][a.alive])
    nu = EmpiricalMeasure(b.snapshots[0][b.alive])
    d = law_distance(mu, nu, rng=RngStream(602), n_bootstrap=100)
    half = n // 2
    null = law_distance(
        EmpiricalMeasure(mu.samples[:half]), EmpiricalMeasure(mu.samples[half:]),
        rng=RngStream(603), n_bootstrap=100,
    )
    assert d.value <= null.value + 3 * (null.se + d.se)


_SPOT_SEEDS = {"dissipative": 71, "periodic_ou": 72, "lorenz": 73, "lemniscate": 74}

# The z denominator allows |rhs| * h * slope of quotient bias.  The
# lemniscate potential has |L^2 V| up to ~50 |L V| inside the lobes, so
# its allowance is widened accordingly; the quadratic certificates keep
# the default slope of 10.
_BIAS_SLOPES = {"dissipative": 10.0, "periodic_ou": 10.0, "lorenz": 10.0,
                "lemniscate": 50.0}


@pytest.mark.parametrize("name", sorted(_SPOT_SEEDS))
def test_dynkin_consistency_every_builtin(name):
    # z <= 3 at (h = 1e-3, n = 1e5) on 10 random spot points per model
    spec = builtin(name)
    cert = reference_certificate(spec)
    rng = np.random.default_rng(_SPOT_SEEDS[name])
    for i in range(10):
        x = rng.normal(0.0, 2.0, spec.m)
        t = float(rng.uniform(0.0, spec.theta))
        rep = dynkin_check(spec, cert.V, t, x, 1e-3, 100_000,
                           master_seed=700 + i,
                           tolerance_slope=_BIAS_SLOPES[name])
        assert rep.z_score <= 3.0, (name, i, rep)


@pytest.mark.parametrize("t_end", [0.5, 1.0, 2.0])
def test_bel_matches_central_difference_ou_ladder(t_end):
    spec = builtin("periodic_ou", a=1.0, c=1.0, sigma=1.0)
    phi, bound = make_observable("tanh", 1)
    # dt = 1e-3: the weight's O(dt) bias is magnified by 1/(t - s0)
    n, cfg = 20_000, StepConfig(dt=1e-3)
    est = bel_gradient(spec, phi, np.zeros(1), np.ones(1), 0.0, t_end, n, cfg,
                       810, phi_bound=bound)
    eps = 1e-2
    rp = simulate_snapshots(spec, np.array([eps]), 0.0, [t_end], cfg, n,
                            master_seed=810)
    rm = simulate_snapshots(spec, np.array([-eps]), 0.0, [t_end], cfg, n,
                            master_seed=810)
    diff = phi(rp.snapshots[0]) - phi(rm.snapshots[0])
    fd = float(diff.mean()) / (2 * eps)
    fd_se = float(diff.std(ddof=1)) / (2 * eps * math.sqrt(n))
    assert abs(est.value - fd) <= 3 * math.hypot(est.se, fd_se)


@pytest.mark.parametrize("t_end", [0.5, 2.0])
def test_bel_matches_central_difference_2d_ladder(t_end):
    spec = nonlinear_2d()
    phi, bound = make_observable("tanh", 2)
    n, cfg = 20_000, StepConfig(dt=1e-3)
    h = np.array([0.0, 1.0])
    x0 = np.array([-0.2, 0.4])
    est = bel_gradient(spec, phi, x0, h, 0.0, t_end, n, cfg, 820, phi_bound=bound)
    eps = 1e-2
    rp = simulate_snapshots(spec, x0 + eps * h, 0.0, [t_end], cfg, n, master_seed=820)
    rm = simulate_snapshots(spec, x0 - eps * h, 0.0, [t_end], cfg, n, master_seed=820)
    diff = phi(rp.snapshots[0]) - phi(rm.snapshots[0])
    fd = float(diff.mean()) / (2 * eps)
    fd_se = float(diff.std(ddof=1)) / (2 * eps * math.sqrt(n))
    assert abs(est.value - fd) <= 3 * math.hypot(est.se, fd_se)
