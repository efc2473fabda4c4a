"""Gradient estimator against closed forms and finite-difference oracles."""

import math

import numpy as np
import pytest

from levylab.belgrad import (
    bel_gradient,
    evolve_derivative_flow,
    feller_probe,
)
from levylab.errors import SingularDiffusionError
from levylab.lawlab import make_observable
from levylab.model import ModelSpec, builtin, coefficient_xt
from levylab.noise import LevyMeasureSpec, PointMassLargePart
from levylab.rng import RngStream
from levylab.simulate import StepConfig, simulate_snapshots


def nonlinear_2d(kappa=0.4):
    """Dissipative drift plus a bounded smooth nonlinearity, constant noise."""
    A = np.array([[1.0, 0.5], [-0.3, 1.0]])
    eye = np.eye(2)

    def drift(t, x):
        return -x + kappa * np.tanh(x @ A.T)

    def drift_jac(t, x):
        th = np.tanh(x @ A.T)  # (n, 2)
        sech2 = 1.0 - th ** 2
        return -eye[None, :, :] + kappa * sech2[:, :, None] * A[None, :, :]

    return ModelSpec(
        theta=1.0, m=2, k=2,
        drift=coefficient_xt(drift),
        diffusion=coefficient_xt(
            lambda t, x: np.broadcast_to(eye, (x.shape[0], 2, 2)).copy()
        ),
        drift_jac=coefficient_xt(drift_jac),
        diffusion_constant=True,
        name="nonlinear2d",
    )


def test_flow_frozen_linearization():
    zero = coefficient_xt(lambda t, x: np.zeros_like(x))
    spec = ModelSpec(
        theta=1.0, m=2, k=2,
        drift=zero,
        diffusion=coefficient_xt(
            lambda t, x: np.broadcast_to(np.eye(2), (x.shape[0], 2, 2)).copy()
        ),
        drift_jac=coefficient_xt(lambda t, x: np.zeros((x.shape[0], 2, 2))),
        diffusion_constant=True,
    )
    h = np.array([0.3, -0.8])
    st = evolve_derivative_flow(spec, np.zeros(2), h, 0.0, 1.0, StepConfig(dt=0.01),
                                RngStream(0, 0))
    assert np.array_equal(st.jh, h)
    # sigma = I, J = h const: w = <h, B(1)> has zero mean but is not zero here
    assert math.isfinite(st.w)


def test_flow_initial_condition_exact():
    spec = builtin("periodic_ou")
    h = np.array([2.5])
    st = evolve_derivative_flow(spec, np.zeros(1), h, 0.0, 1e-9 + 0.01,
                                StepConfig(dt=0.01), RngStream(1, 0))
    # after one step J = (1 + dt * (-a)) h, so at time ~0 it is h itself
    assert st.jh[0] == pytest.approx(2.5 * (1 - 0.01), rel=1e-12)


def test_flow_linear_model_closed_form():
    # scalar OU: J(T) = exp(-aT) h up to O(dt)
    a, T, dt = 1.3, 2.0, 1e-3
    spec = builtin("periodic_ou", a=a, c=0.0, sigma=0.7)
    st = evolve_derivative_flow(spec, np.array([0.4]), np.array([1.0]), 0.0, T,
                                StepConfig(dt=dt), RngStream(3, 0))
    assert st.jh[0] == pytest.approx(math.exp(-a * T), abs=5 * a * dt)


def test_flow_second_moment_bounded():
    spec = builtin("periodic_ou", a=1.0, c=1.0, sigma=1.0)
    vals = []
    for i in range(1000):
        st = evolve_derivative_flow(spec, np.zeros(1), np.array([1.0]), 0.0, 1.0,
                                    StepConfig(dt=5e-3), RngStream(40, i))
        vals.append(st.jh[0] ** 2)
    # numerical shadow of E|J h|^2 <= C |h|^2: deterministic flow here
    assert np.mean(vals) <= 1.0


def test_bel_gradient_constant_phi_zero():
    spec = builtin("periodic_ou", a=1.0, c=1.0, sigma=1.0)
    phi, _ = make_observable("one", 1)
    est = bel_gradient(spec, phi, np.zeros(1), np.ones(1), 0.0, 1.0, 20_000,
                       StepConfig(dt=2e-3), 11)
    assert abs(est.value) <= 3 * est.se + 1e-12
    # the weight itself is a discretized martingale: mean ~ 0
    assert abs(est.weight_mean) <= 3 * est.weight_se


def test_bel_gradient_ou_closed_form():
    # d/dx0 E[Z_1] = exp(-1) for the unit-rate linear model
    spec = builtin("periodic_ou", a=1.0, c=1.0, sigma=1.0)
    phi, bound = make_observable("coordinate", 1, bound=10.0)
    est = bel_gradient(spec, phi, np.zeros(1), np.ones(1), 0.0, 1.0, 100_000,
                       StepConfig(dt=1e-3), 17, phi_bound=bound)
    assert abs(est.value - math.exp(-1.0)) <= 3 * est.se


def test_bel_gradient_matches_finite_difference_tanh():
    spec = builtin("periodic_ou", a=1.0, c=1.0, sigma=1.0)
    phi, bound = make_observable("tanh", 1)
    t, n = 1.0, 40_000
    cfg = StepConfig(dt=2e-3)
    est = bel_gradient(spec, phi, np.zeros(1), np.ones(1), 0.0, t, n, cfg, 23,
                       phi_bound=bound)
    eps = 1e-2
    rp = simulate_snapshots(spec, np.array([eps]), 0.0, [t], cfg, n, master_seed=23)
    rm = simulate_snapshots(spec, np.array([-eps]), 0.0, [t], cfg, n, master_seed=23)
    diff = phi(rp.snapshots[0]) - phi(rm.snapshots[0])
    fd = float(diff.mean()) / (2 * eps)
    fd_se = float(diff.std(ddof=1)) / (2 * eps * math.sqrt(n))
    assert abs(est.value - fd) <= 3 * math.hypot(est.se, fd_se)


def test_bel_gradient_linear_in_direction():
    spec = nonlinear_2d()
    phi, bound = make_observable("tanh", 2)
    kw = dict(x0=np.array([0.2, -0.1]), s0=0.0, t=0.5, n_paths=2000,
              cfg=StepConfig(dt=5e-3), master_seed=31, phi_bound=bound)
    e1 = bel_gradient(spec, phi, h_dir=np.array([1.0, 0.0]), **kw)
    e2 = bel_gradient(spec, phi, h_dir=np.array([0.0, 1.0]), **kw)
    e12 = bel_gradient(spec, phi, h_dir=np.array([2.0, -3.0]), **kw)
    assert e12.value == pytest.approx(2 * e1.value - 3 * e2.value, abs=1e-10)


def test_bel_gradient_2d_nonlinear_vs_finite_difference():
    spec = nonlinear_2d()
    phi, bound = make_observable("tanh", 2)
    t, n = 1.0, 40_000
    cfg = StepConfig(dt=2e-3)
    h = np.array([1.0, 0.0])
    est = bel_gradient(spec, phi, np.array([0.3, 0.1]), h, 0.0, t, n, cfg, 37,
                       phi_bound=bound)
    eps = 1e-2
    rp = simulate_snapshots(spec, np.array([0.3 + eps, 0.1]), 0.0, [t], cfg, n,
                            master_seed=37)
    rm = simulate_snapshots(spec, np.array([0.3 - eps, 0.1]), 0.0, [t], cfg, n,
                            master_seed=37)
    diff = phi(rp.snapshots[0]) - phi(rm.snapshots[0])
    fd = float(diff.mean()) / (2 * eps)
    fd_se = float(diff.std(ddof=1)) / (2 * eps * math.sqrt(n))
    assert abs(est.value - fd) <= 3 * math.hypot(est.se, fd_se)


def test_bel_rejects_large_jumps():
    levy = LevyMeasureSpec(dim=1, large=PointMassLargePart(dim=1, rate=1.0, mark=[1.5]))
    spec = builtin("periodic_ou", levy=levy)
    phi, _ = make_observable("tanh", 1)
    with pytest.raises(ValueError):
        bel_gradient(spec, phi, np.zeros(1), np.ones(1), 0.0, 1.0, 10,
                     StepConfig(dt=0.01), 0)


def test_singular_diffusion_detected():
    spec = builtin("periodic_ou", a=1.0, c=0.0, sigma=0.0)
    with pytest.raises(SingularDiffusionError):
        evolve_derivative_flow(spec, np.zeros(1), np.ones(1), 0.0, 0.5,
                               StepConfig(dt=0.01), RngStream(0, 0))


# ---------------------------------------------------------------------------
# strong-Feller probe
# ---------------------------------------------------------------------------


def test_feller_probe_identical_points_rejected():
    spec = builtin("periodic_ou")
    phi, bound = make_observable("coordinate", 1, bound=10.0)
    with pytest.raises(ValueError):
        feller_probe(spec, phi, np.zeros(1), np.zeros(1), 0.0, [0.5], 100,
                     StepConfig(dt=0.01), 0, phi_bound=bound)


def test_feller_probe_ou_matches_closed_form():
    # coupled means differ by exp(-a t) (x - y); clip bound 10 never binds
    spec = builtin("periodic_ou", a=1.0, c=1.0, sigma=1.0)
    phi, bound = make_observable("coordinate", 1, bound=10.0)
    ladder = [0.05, 0.1, 0.2, 0.5, 1.0]
    rep = feller_probe(spec, phi, np.array([0.5]), np.array([-0.5]), 0.0, ladder,
                       40_000, StepConfig(dt=1e-3), 53, phi_bound=bound)
    for t, r, se in zip(rep.times, rep.ratios, rep.ses):
        assert abs(r - math.exp(-t) / 10.0) <= 3 * se + 1e-4
    # the dominating envelope really dominates
    assert np.all(rep.ratios <= rep.envelope(rep.times) + 1e-12)


def test_feller_probe_envelope_shape():
    spec = builtin("periodic_ou", a=1.0, c=1.0, sigma=1.0)
    phi, bound = make_observable("coordinate", 1, bound=10.0)
    rep = feller_probe(spec, phi, np.array([1.0]), np.array([0.0]), 0.0,
                       [0.05, 0.1, 0.2, 0.5, 1.0], 20_000, StepConfig(dt=1e-3),
                       59, phi_bound=bound)
    assert rep.m_hat >= rep.m_ls > 0
    # residual magnitudes stay small against the fitted scale
    assert np.max(np.abs(rep.residuals)) <= 0.5 * rep.m_ls / math.sqrt(0.05)
