"""Coefficient quadruples (b, sigma, H, G) with period theta.

Calling conventions
-------------------
State-dependent coefficients accept single points or batches:

* ``drift(t, x)``:      x of shape (m,) or (n, m); t scalar or (n,)
* ``diffusion(t, x)``:  returns (m, k) or (n, m, k)
* ``small_jump(t, x, u)`` / ``large_jump(t, x, u)``: u of shape (l,) or
  (n, l), returns the state displacement, shape like x.

Built-in models are fully vectorized; user-supplied callables that are
not can set ``vectorized=False`` and will be evaluated row by row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .noise import LevyMeasureSpec
from .rng import RngStream

__all__ = [
    "PeriodicFn",
    "ModelSpec",
    "TruncatedModel",
    "builtin",
    "truncate",
    "validate_periodicity",
]


class PeriodicFn:
    """Scalar theta-periodic function of time with an exact derivative.

    Built from a constant, a Fourier description ``(a0, [(ac_1, as_1),
    ...])``, or an arbitrary callable (derivative then falls back to a
    central difference).
    """

    def __init__(self, spec, theta: float, derivative=None):
        self.theta = float(theta)
        self._deriv_fn = derivative
        if callable(spec):
            self._kind = "callable"
            self._fn = spec
        elif np.isscalar(spec):
            self._kind = "const"
            self._value = float(spec)
        else:
            a0, harmonics = spec
            self._kind = "fourier"
            self._a0 = float(a0)
            self._harm = [(float(ac), float(asn)) for ac, asn in harmonics]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self._kind == "const":
            return np.broadcast_to(self._value, t.shape).copy() if t.ndim else self._value
        if self._kind == "callable":
            return self._fn(t)
        w = 2.0 * math.pi / self.theta
        out = np.full_like(t, self._a0, dtype=float) if t.ndim else self._a0
        for j, (ac, asn) in enumerate(self._harm, start=1):
            out = out + ac * np.cos(j * w * t) + asn * np.sin(j * w * t)
        return out

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        if self._kind == "const":
            return np.zeros_like(t) if t.ndim else 0.0
        if self._kind == "fourier":
            w = 2.0 * math.pi / self.theta
            out = np.zeros_like(t) if t.ndim else 0.0
            for j, (ac, asn) in enumerate(self._harm, start=1):
                out = out + j * w * (-ac * np.sin(j * w * t) + asn * np.cos(j * w * t))
            return out
        if self._deriv_fn is not None:
            return self._deriv_fn(t)
        h = 1e-6 * self.theta
        return (self._fn(t + h) - self._fn(t - h)) / (2.0 * h)


def make_periodic_fn(spec, theta) -> PeriodicFn:
    return spec if isinstance(spec, PeriodicFn) else PeriodicFn(spec, theta)


def _single_or_batch(x):
    x = np.asarray(x, dtype=float)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def _broadcast_t(t, n):
    t = np.asarray(t, dtype=float)
    return np.broadcast_to(t, (n,)) if t.ndim == 0 else t


def coefficient_xt(fn):
    """Normalize a batch-native f(t (n,), x (n,m)) to also accept single points."""

    def wrapped(t, x):
        xb, single = _single_or_batch(x)
        out = fn(_broadcast_t(t, xb.shape[0]), xb)
        return out[0] if single else out

    return wrapped


def coefficient_xtu(fn):
    def wrapped(t, x, u):
        xb, single = _single_or_batch(x)
        ub = np.asarray(u, dtype=float)
        if ub.ndim == 1:
            ub = np.broadcast_to(ub, (xb.shape[0], ub.shape[0]))
        out = fn(_broadcast_t(t, xb.shape[0]), xb, ub)
        return out[0] if single else out

    return wrapped


def rowwise_xt(fn):
    """Adapt a single-point f(t, x) to batches by looping rows."""

    def wrapped(t, x):
        xb, single = _single_or_batch(x)
        tb = _broadcast_t(t, xb.shape[0])
        out = np.stack([np.asarray(fn(ti, xi), dtype=float) for ti, xi in zip(tb, xb)])
        return out[0] if single else out

    return wrapped


def rowwise_xtu(fn):
    def wrapped(t, x, u):
        xb, single = _single_or_batch(x)
        tb = _broadcast_t(t, xb.shape[0])
        ub = np.asarray(u, dtype=float)
        if ub.ndim == 1:
            ub = np.broadcast_to(ub, (xb.shape[0], ub.shape[0]))
        out = np.stack(
            [np.asarray(fn(ti, xi, ui), dtype=float) for ti, xi, ui in zip(tb, xb, ub)]
        )
        return out[0] if single else out

    return wrapped


@dataclass
class ModelSpec:
    """The SDE's coefficient quadruple plus its jump measure.

    Immutable by convention after construction; safe to share across
    workers.  Optional analytic Jacobians unlock the derivative flow
    without finite differences.
    """

    theta: float
    m: int
    k: int
    drift: object
    diffusion: object
    levy: LevyMeasureSpec = None
    small_jump: object = None
    large_jump: object = None
    drift_jac: object = None            # (t, x) -> (m, m) or (n, m, m)
    diffusion_jac: object = None        # (t, x) -> (m, k, m): d sigma_ij / d x_r
    small_jump_jac: object = None       # (t, x, u) -> (m, m)
    compensator_fn: object = None       # closed-form (t, x) -> int H nu(du), small region
    vectorized: bool = True
    h_linear_in_u: bool = False
    diffusion_constant: bool = False    # independent of (t, x)
    diffusion_state_free: bool = False  # independent of x
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        if self.k < self.m:
            raise ValueError("need k >= m")
        if self.levy is None:
            self.levy = LevyMeasureSpec(dim=max(1, self.m))
        if not self.vectorized:
            self.drift = rowwise_xt(self.drift)
            self.diffusion = rowwise_xt(self.diffusion)
            if self.small_jump is not None:
                self.small_jump = rowwise_xtu(self.small_jump)
            if self.large_jump is not None:
                self.large_jump = rowwise_xtu(self.large_jump)
            self.vectorized = True
        if self.diffusion_constant:
            self.diffusion_state_free = True
        self._comp_quad = None

    # -- derived structure -------------------------------------------------

    @property
    def l(self) -> int:
        return self.levy.dim

    @property
    def has_small_jumps(self) -> bool:
        return self.levy.small is not None and self.small_jump is not None

    @property
    def has_large_jumps(self) -> bool:
        return (
            self.levy.large is not None
            and self.levy.large_rate > 0.0
            and self.large_jump is not None
        )

    # -- Jacobians (analytic or central finite differences) -----------------

    def _fd_step(self, x):
        nrm = np.linalg.norm(np.atleast_2d(x), axis=-1)
        return np.maximum(1e-6, 1e-8 * nrm)

    def drift_jacobian(self, t, x):
        if self.drift_jac is not None:
            return self.drift_jac(t, x)
        return _fd_jac_xt(self.drift, t, x, self.m, self._fd_step(x))

    def diffusion_jacobian(self, t, x):
        if self.diffusion_jac is not None:
            return self.diffusion_jac(t, x)
        if self.diffusion_state_free:
            xb, single = _single_or_batch(x)
            shape = (self.m, self.k, self.m) if single else (xb.shape[0], self.m, self.k, self.m)
            return np.zeros(shape)
        return _fd_jac_xt(self.diffusion, t, x, self.m, self._fd_step(x))

    def small_jump_jacobian(self, t, x, u):
        if self.small_jump_jac is not None:
            return self.small_jump_jac(t, x, u)
        fn = lambda tt, xx: self.small_jump(tt, xx, u)
        return _fd_jac_xt(fn, t, x, self.m, self._fd_step(x))

    # -- small-jump compensator ---------------------------------------------

    def small_compensator(self, t, x, mode: str = "quadrature"):
        """integral of H(t, x, u) nu(du) over the truncated small region."""
        xb, single = _single_or_batch(x)
        if not self.has_small_jumps:
            out = np.zeros_like(xb)
            return out[0] if single else out
        if mode == "per_event":
            if self.compensator_fn is None:
                raise ValueError(
                    "compensator_mode 'per_event' needs a closed-form compensator_fn"
                )
            return self.compensator_fn(t, x)
        if mode != "quadrature":
            raise ValueError(f"unknown compensator mode {mode!r}")
        if self.h_linear_in_u:
            m1 = self.levy.small_mean_vector()
            if not np.any(m1):
                out = np.zeros_like(xb)
                return out[0] if single else out
            return self.small_jump(t, x, m1)
        if self._comp_quad is None:
            part = self.levy.small
            if hasattr(part, "atoms"):
                self._comp_quad = part.atoms()
            else:
                q = part.quadrature()
                self._comp_quad = (q.weights, q.nodes)
        w, nodes = self._comp_quad
        tb = _broadcast_t(t, xb.shape[0])
        acc = np.zeros_like(xb)
        for wq, uq in zip(w, nodes):
            acc += wq * self.small_jump(tb, xb, np.broadcast_to(uq, (xb.shape[0], self.l)))
        return acc[0] if single else acc

    def describe(self) -> dict:
        return {"name": self.name, **{f"params.{k}": v for k, v in self.params.items()}}


def _fd_jac_xt(fn, t, x, m, h):
    """Central-difference Jacobian in x, batched over rows of x."""
    xb, single = _single_or_batch(x)
    n = xb.shape[0]
    tb = _broadcast_t(t, n)
    h = np.broadcast_to(h, (n,))
    cols = []
    for r in range(m):
        e = np.zeros(m)
        e[r] = 1.0
        step = h[:, None] * e
        fp = np.asarray(fn(tb, xb + step), dtype=float)
        fm = np.asarray(fn(tb, xb - step), dtype=float)
        cols.append((fp - fm) / (2.0 * h).reshape((n,) + (1,) * (fp.ndim - 1)))
    jac = np.stack(cols, axis=-1)  # (n, ..., m)
    return jac[0] if single else jac


# ---------------------------------------------------------------------------
# truncation at radius n: coefficients frozen along rays beyond the ball
# ---------------------------------------------------------------------------


def _project_rows(x, radius):
    nrm = np.linalg.norm(x, axis=-1, keepdims=True)
    scale = np.where(nrm > radius, radius / np.where(nrm == 0.0, 1.0, nrm), 1.0)
    return x * scale


@dataclass
class TruncatedModel(ModelSpec):
    base: ModelSpec = None
    radius: float = math.inf


def truncate(spec: ModelSpec, radius: float) -> TruncatedModel:
    """Replace coefficients beyond |x| = radius by their boundary-ray values."""
    if radius <= 0:
        raise ValueError("truncation radius must be positive")

    def wrap_xt(fn):
        def wrapped(t, x):
            xb, single = _single_or_batch(x)
            out = fn(t, _project_rows(xb, radius))
            return out[0] if single else out

        return wrapped

    def wrap_xtu(fn):
        def wrapped(t, x, u):
            xb, single = _single_or_batch(x)
            out = fn(t, _project_rows(xb, radius), u)
            return out[0] if single else out

        return wrapped

    return TruncatedModel(
        theta=spec.theta,
        m=spec.m,
        k=spec.k,
        drift=wrap_xt(spec.drift),
        diffusion=spec.diffusion if spec.diffusion_state_free else wrap_xt(spec.diffusion),
        levy=spec.levy,
        small_jump=None if spec.small_jump is None else wrap_xtu(spec.small_jump),
        large_jump=None if spec.large_jump is None else wrap_xtu(spec.large_jump),
        compensator_fn=None if spec.compensator_fn is None else wrap_xt(spec.compensator_fn),
        h_linear_in_u=spec.h_linear_in_u,
        diffusion_constant=spec.diffusion_constant,
        diffusion_state_free=spec.diffusion_state_free,
        name=f"{spec.name}|trunc{radius:g}",
        params=spec.params,
        base=spec,
        radius=float(radius),
    )


# ---------------------------------------------------------------------------
# built-in models
# ---------------------------------------------------------------------------


def _jump_coefficients(levy, m, h_scale, g_scale):
    """Additive jumps H = h_scale * u, G = g_scale * u (marks in R^m)."""
    if levy is None:
        return None, None, None
    if levy.dim != m:
        raise ValueError("built-in jump coefficients need levy.dim == state dim")
    small = None
    if levy.small is not None:
        small = coefficient_xtu(lambda t, x, u: h_scale * u)
    large = None
    if levy.large is not None:
        large = coefficient_xtu(lambda t, x, u: g_scale * u)
    zero_jac = coefficient_xtu(
        lambda t, x, u: np.zeros((x.shape[0], x.shape[1], x.shape[1]))
    )
    return small, large, zero_jac


def _periodic_ou(params):
    a = float(params.get("a", 1.0))
    c = float(params.get("c", 1.0))
    sig = float(params.get("sigma", 1.0))
    theta = float(params.get("theta", 1.0))
    levy = params.get("levy")
    h_scale = float(params.get("h_scale", 1.0))
    g_scale = float(params.get("g_scale", 1.0))
    w = 2.0 * math.pi / theta

    drift = coefficient_xt(lambda t, x: -a * x + c * np.cos(w * t)[:, None])
    diffusion = coefficient_xt(lambda t, x: np.full((x.shape[0], 1, 1), sig))
    small, large, zero_jac = _jump_coefficients(levy, 1, h_scale, g_scale)
    return ModelSpec(
        theta=theta,
        m=1,
        k=1,
        drift=drift,
        diffusion=diffusion,
        levy=levy,
        small_jump=small,
        large_jump=large,
        drift_jac=coefficient_xt(lambda t, x: np.full((x.shape[0], 1, 1), -a)),
        small_jump_jac=zero_jac,
        h_linear_in_u=True,
        diffusion_constant=True,
        name="periodic_ou",
        params={"a": a, "c": c, "sigma": sig, "theta": theta,
                "h_scale": h_scale, "g_scale": g_scale},
    )


def _dissipative(params):
    m = int(params.get("m", 2))
    sig = float(params.get("sigma_scale", 1.0))
    theta = float(params.get("theta", 1.0))
    levy = params.get("levy")
    h_scale = float(params.get("h_scale", 1.0))
    g_scale = float(params.get("g_scale", 1.0))

    eye = np.eye(m)
    drift = coefficient_xt(lambda t, x: -x)
    diffusion = coefficient_xt(
        lambda t, x: np.broadcast_to(sig * eye, (x.shape[0], m, m)).copy()
    )
    small, large, zero_jac = _jump_coefficients(levy, m, h_scale, g_scale)
    return ModelSpec(
        theta=theta,
        m=m,
        k=m,
        drift=drift,
        diffusion=diffusion,
        levy=levy,
        small_jump=small,
        large_jump=large,
        drift_jac=coefficient_xt(
            lambda t, x: np.broadcast_to(-eye, (x.shape[0], m, m)).copy()
        ),
        small_jump_jac=zero_jac,
        h_linear_in_u=True,
        diffusion_constant=True,
        name="dissipative",
        params={"m": m, "sigma_scale": sig, "theta": theta,
                "h_scale": h_scale, "g_scale": g_scale},
    )


def _lorenz(params):
    theta = float(params.get("theta", 1.0))
    alpha = make_periodic_fn(params.get("alpha", 10.0), theta)
    beta = make_periodic_fn(params.get("beta", 8.0 / 3.0), theta)
    mu = make_periodic_fn(params.get("mu", 28.0), theta)
    s = float(params.get("noise_scale", 1.0))
    perturb = params.get("noise_perturb")  # optional bounded (t, x) -> (n, 3, 3)
    levy = params.get("levy")
    h_scale = float(params.get("h_scale", 1.0))
    g_scale = float(params.get("g_scale", 1.0))

    def drift(t, x):
        a, b_, m_ = alpha(t), beta(t), mu(t)
        x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
        return np.column_stack(
            [-a * x1 + a * x2, m_ * x1 - x2 - x1 * x3, -b_ * x3 + x1 * x2]
        )

    def drift_jac(t, x):
        a, b_, m_ = (np.broadcast_to(f(t), (x.shape[0],)) for f in (alpha, beta, mu))
        x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
        n = x.shape[0]
        jac = np.zeros((n, 3, 3))
        jac[:, 0, 0] = -a
        jac[:, 0, 1] = a
        jac[:, 1, 0] = m_ - x3
        jac[:, 1, 1] = -1.0
        jac[:, 1, 2] = -x1
        jac[:, 2, 0] = x2
        jac[:, 2, 1] = x1
        jac[:, 2, 2] = -b_
        return jac

    eye = np.eye(3)

    def diffusion(t, x):
        base = np.broadcast_to(s * eye, (x.shape[0], 3, 3)).copy()
        if perturb is not None:
            base = base + perturb(t, x)
        return base

    small, large, zero_jac = _jump_coefficients(levy, 3, h_scale, g_scale)
    return ModelSpec(
        theta=theta,
        m=3,
        k=3,
        drift=coefficient_xt(drift),
        diffusion=coefficient_xt(diffusion),
        levy=levy,
        small_jump=small,
        large_jump=large,
        drift_jac=coefficient_xt(drift_jac),
        small_jump_jac=zero_jac,
        h_linear_in_u=True,
        diffusion_constant=(perturb is None),
        diffusion_state_free=(perturb is None),
        name="lorenz",
        params={"alpha": alpha, "beta": beta, "mu": mu, "theta": theta,
                "noise_scale": s, "h_scale": h_scale, "g_scale": g_scale},
    )


# lemniscate of Bernoulli machinery, shared with the reference certificate

def lemniscate_invariant(x1, x2):
    return (x1 ** 2 + x2 ** 2) ** 2 - 4.0 * (x1 ** 2 - x2 ** 2)


def lemniscate_potential(i):
    return i ** 2 / (2.0 * (1.0 + i ** 2) ** 0.75)


def lemniscate_f(i):
    return i * (i ** 2 + 4.0) / (4.0 * (1.0 + i ** 2) ** 1.75)


def lemniscate_g(i):
    return (i ** 2 + 4.0) / (4.0 * (1.0 + i ** 2) ** 2.75)


def lemniscate_invariant_gradient(x1, x2):
    s = x1 ** 2 + x2 ** 2
    return 4.0 * x1 * s - 8.0 * x1, 4.0 * x2 * s + 8.0 * x2


def _lemniscate(params):
    theta = float(params.get("theta", 1.0))
    s = float(params.get("sigma_scale", 1.0))
    levy = params.get("levy")
    h_scale = float(params.get("h_scale", 1.0))
    g_scale = float(params.get("g_scale", 1.0))

    def drift(t, x):
        x1, x2 = x[:, 0], x[:, 1]
        i = lemniscate_invariant(x1, x2)
        di1, di2 = lemniscate_invariant_gradient(x1, x2)
        f, g = lemniscate_f(i), lemniscate_g(i)
        return np.column_stack([-f * di1 - g * di2, -f * di2 + g * di1])

    eye = np.eye(2)
    diffusion = coefficient_xt(
        lambda t, x: np.broadcast_to(s * eye, (x.shape[0], 2, 2)).copy()
    )
    small, large, zero_jac = _jump_coefficients(levy, 2, h_scale, g_scale)
    return ModelSpec(
        theta=theta,
        m=2,
        k=2,
        drift=coefficient_xt(drift),
        diffusion=diffusion,
        levy=levy,
        small_jump=small,
        large_jump=large,
        small_jump_jac=zero_jac,
        h_linear_in_u=True,
        diffusion_constant=True,
        name="lemniscate",
        params={"sigma_scale": s, "theta": theta,
                "h_scale": h_scale, "g_scale": g_scale},
    )


_BUILTINS = {
    "periodic_ou": _periodic_ou,
    "dissipative": _dissipative,
    "lorenz": _lorenz,
    "lemniscate": _lemniscate,
}


def builtin(name: str, **params) -> ModelSpec:
    """Construct one of the built-in example systems by name."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise ValueError(
            f"unknown model {name!r}; choose from {sorted(_BUILTINS)}"
        ) from None
    return factory(params)


# ---------------------------------------------------------------------------
# periodicity validation
# ---------------------------------------------------------------------------


@dataclass
class PeriodicityReport:
    max_deviation: float
    passed: bool
    worst: tuple = None          # (coefficient name, t, point)
    non_finite: list = field(default_factory=list)

    def __bool__(self):
        return self.passed


def validate_periodicity(
    spec: ModelSpec, n_samples: int, rng: RngStream, x_scale: float = 3.0,
    tol: float = 1e-12,
) -> PeriodicityReport:
    """Probe b, sigma, H, G at random (t, x, u) against their theta-shift."""
    if n_samples == 0:
        return PeriodicityReport(0.0, True)
    gen = rng.generator
    ts = gen.uniform(0.0, 2.0 * spec.theta, size=n_samples)
    xs = x_scale * gen.standard_normal((n_samples, spec.m))
    pairs = [("drift", lambda t, x: spec.drift(t, x)),
             ("diffusion", lambda t, x: spec.diffusion(t, x))]
    if spec.has_small_jumps:
        us = spec.levy.small.sample_marks(gen, n_samples)
        pairs.append(("small_jump", lambda t, x: spec.small_jump(t, x, us)))
    if spec.has_large_jumps:
        ug = spec.levy.large.sample_marks(gen, n_samples)
        pairs.append(("large_jump", lambda t, x: spec.large_jump(t, x, ug)))

    worst = None
    max_dev = 0.0
    non_finite = []
    for name, fn in pairs:
        v0 = np.asarray(fn(ts, xs), dtype=float)
        v1 = np.asarray(fn(ts + spec.theta, xs), dtype=float)
        bad = ~(np.isfinite(v0).reshape(n_samples, -1).all(axis=1)
                & np.isfinite(v1).reshape(n_samples, -1).all(axis=1))
        for i in np.nonzero(bad)[0]:
            non_finite.append((name, float(ts[i]), xs[i].copy()))
        dev = np.abs(v1 - v0).reshape(n_samples, -1).max(axis=1)
        dev[bad] = 0.0
        i = int(np.argmax(dev))
        if dev[i] >= max_dev:
            max_dev = float(dev[i])
            worst = (name, float(ts[i]), xs[i].copy())
    return PeriodicityReport(max_dev, max_dev <= tol and not non_finite, worst, non_finite)
