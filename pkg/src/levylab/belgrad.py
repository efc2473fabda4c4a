"""Semigroup gradients by the Bismut-Elworthy-Li weight, small-jump scope.

Along each base path the directional derivative flow J(t)h solves the
linearized equation (sharing every noise draw with the base path) while
the stochastic-integral weight

    w(t) = sum over steps of < sigma^T (sigma sigma^T)^{-1} J h, dB >

accumulates.  The gradient of x -> E[phi(Z(t))] in direction h is then
estimated by E[phi(Z(t)) w(t)] / (t - s0).  Large jumps are outside this
estimator's scope: models must have G absent.

The same machinery drives the strong-Feller probe: Lipschitz ratios
|E_x phi - E_y phi| / (||phi||_inf |x - y|) over a time ladder, compared
against a 1/sqrt(t - s0) envelope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BlowUpError, LawEstimationError, SingularDiffusionError
from .model import ModelSpec
from .rng import RngStream
from .simulate import StepConfig, run_engine, simulate_snapshots

__all__ = [
    "DerivativeFlowState",
    "BelEstimate",
    "FellerProbeReport",
    "evolve_derivative_flow",
    "bel_gradient",
    "feller_probe",
]

COND_GUARD = 1e12


@dataclass
class DerivativeFlowState:
    x: np.ndarray     # base state at the final time
    jh: np.ndarray    # directional derivative J(t) h
    w: float          # accumulated stochastic-integral weight


class _FlowRider:
    """Engine rider advancing (J h, w) for every path in the ensemble."""

    def __init__(self, n: int, spec: ModelSpec, h_dir: np.ndarray):
        self.spec = spec
        self.J = np.broadcast_to(h_dir, (n, spec.m)).astype(float).copy()
        self.W = np.zeros(n)
        self._A_const = None  # sigma^T (sigma sigma^T)^{-1} for constant sigma

    def _const_weight_matrix(self, sigma_const):
        if self._A_const is None:
            q = sigma_const @ sigma_const.T
            cond = np.linalg.cond(q)
            if not np.isfinite(cond) or cond > COND_GUARD:
                raise SingularDiffusionError(None, cond)
            self._A_const = np.linalg.solve(q, sigma_const).T  # (k, m) -> rows k
        return self._A_const

    def step(self, t, h, X, dB, sv, sigma_const, alive, small_idx, small_marks):
        spec = self.spec
        J = self.J
        # weight increment with pre-step sigma and J
        if sigma_const is not None:
            A = self._const_weight_matrix(sigma_const)  # (k, m)
            u = J @ A.T  # (n, k)
        else:
            q = np.einsum("nmk,nrk->nmr", sv, sv)
            qinv = _guarded_inverse(q, t, alive, h)
            y = np.einsum("nmr,nr->nm", qinv, J)
            u = np.einsum("nmk,nm->nk", sv, y)
        self.W = self.W + np.einsum("nk,nk->n", u, dB)

        # linearized Euler update of J, all coefficients at pre-step values
        jac = np.asarray(spec.drift_jacobian(t, X), dtype=float)
        dJ = np.einsum("nij,nj->ni", jac, J) * h[:, None]
        if not spec.diffusion_state_free:
            sjac = np.asarray(spec.diffusion_jacobian(t, X), dtype=float)  # (n,m,k,m)
            dJ = dJ + np.einsum("nikr,nr,nk->ni", sjac, J, dB)
        if small_idx is not None and not _small_jump_state_free(spec):
            hjac = np.asarray(
                spec.small_jump_jacobian(t[small_idx], X[small_idx], small_marks),
                dtype=float,
            )
            np.add.at(dJ, small_idx,
                      np.einsum("nij,nj->ni", hjac, J[small_idx]))
        self.J = np.where(alive[:, None], J + dJ, J)

    def large_jump(self, p_idx):
        # unreachable: models with G are rejected before the run starts
        raise RuntimeError("derivative flow cannot cross a large jump")


def _small_jump_state_free(spec: ModelSpec) -> bool:
    # built-in additive jumps declare a zero Jacobian; treat that as free
    if not spec.has_small_jumps:
        return True
    if spec.small_jump_jac is None:
        return False
    probe = np.asarray(spec.small_jump_jac(0.0, np.zeros(spec.m), np.zeros(spec.l)))
    return not np.any(probe)


def _guarded_inverse(q, t, alive, h):
    try:
        qinv = np.linalg.inv(q)
    except np.linalg.LinAlgError:
        raise SingularDiffusionError(float(np.min(t))) from None
    active = alive & (h > 0)
    if active.any():
        cond = (np.linalg.norm(q[active], axis=(1, 2))
                * np.linalg.norm(qinv[active], axis=(1, 2)))
        worst = float(np.max(cond))
        if not math.isfinite(worst) or worst > COND_GUARD:
            bad = int(np.nonzero(active)[0][int(np.argmax(cond))])
            raise SingularDiffusionError(float(t[bad]), worst)
    return qinv


def _require_no_large_jumps(spec: ModelSpec):
    if spec.has_large_jumps:
        raise ValueError(
            "gradient estimation covers the small-jump equation only (G = 0)"
        )


def evolve_derivative_flow(
    spec: ModelSpec, x0, h_dir, s0: float, horizon: float, cfg: StepConfig,
    rng: RngStream,
) -> DerivativeFlowState:
    """Jointly integrate one base path with its derivative flow and weight."""
    _require_no_large_jumps(spec)
    h_dir = np.asarray(h_dir, dtype=float).reshape(spec.m)
    res = run_engine(
        spec, np.asarray(x0, dtype=float), s0, horizon, cfg, [rng],
        rider_factory=lambda n, sp: _FlowRider(n, sp, h_dir),
    )
    if not res.alive[0]:
        _, t, xs = res.blow_ups[0]
        raise BlowUpError(t, xs)
    rider = res.rider
    return DerivativeFlowState(res.final_states[0], rider.J[0], float(rider.W[0]))


@dataclass
class BelEstimate:
    value: float
    se: float
    n_used: int
    weight_mean: float
    weight_se: float


def bel_gradient(
    spec: ModelSpec,
    phi,
    x0,
    h_dir,
    s0: float,
    t: float,
    n_paths: int,
    cfg: StepConfig,
    master_seed: int,
    phi_bound: float = None,
    threads: int = 1,
) -> BelEstimate:
    """< grad_x E_{s0,x0}[phi(Z(t))], h > by the weight estimator.

    phi is clipped to phi_bound when given, honoring the boundedness the
    representation requires.
    """
    _require_no_large_jumps(spec)
    if t <= s0:
        raise ValueError("need t > s0")
    h_dir = np.asarray(h_dir, dtype=float).reshape(spec.m)
    res = simulate_snapshots(
        spec, x0, s0, [t], cfg, n_paths, master_seed, threads=threads,
        rider_factory=lambda n, sp: _FlowRider(n, sp, h_dir),
    )
    riders = res.rider if isinstance(res.rider, list) else [res.rider]
    W = np.concatenate([r.W for r in riders])
    alive = res.alive
    if (~alive).sum() > 0.01 * n_paths:
        raise LawEstimationError(
            f"{int((~alive).sum())} of {n_paths} paths blew up before t"
        )
    vals = np.asarray(phi(res.snapshots[0][alive]), dtype=float)
    if phi_bound is not None:
        vals = np.clip(vals, -phi_bound, phi_bound)
    w = W[alive]
    prods = vals * w / (t - s0)
    return BelEstimate(
        value=float(prods.mean()),
        se=float(prods.std(ddof=1) / math.sqrt(prods.size)),
        n_used=int(prods.size),
        weight_mean=float(w.mean()),
        weight_se=float(w.std(ddof=1) / math.sqrt(w.size)),
    )


@dataclass
class FellerProbeReport:
    times: np.ndarray
    ratios: np.ndarray
    ses: np.ndarray
    m_ls: float         # least-squares fit of ratio ~ M / sqrt(t - s0)
    m_hat: float        # smallest constant whose envelope dominates all ratios
    residuals: np.ndarray
    phi_bound: float
    separation: float

    def envelope(self, t, s0=0.0):
        return self.m_hat / np.sqrt(np.asarray(t) - s0)


def feller_probe(
    spec: ModelSpec,
    phi,
    x,
    y,
    s0: float,
    t_ladder,
    n_paths: int,
    cfg: StepConfig,
    master_seed: int,
    phi_bound: float,
    threads: int = 1,
) -> FellerProbeReport:
    """Lipschitz ratios of the semigroup from coupled ensembles.

    Paths from x and from y share every stream, so the difference of the
    two sample means has the variance of a coupled estimator.  The report
    carries both the least-squares constant for the 1/sqrt(t - s0) shape
    (with residuals, so the shape itself can be judged) and the dominating
    constant m_hat = max ratio * sqrt(t - s0).
    """
    _require_no_large_jumps(spec)
    x = np.asarray(x, dtype=float).reshape(spec.m)
    y = np.asarray(y, dtype=float).reshape(spec.m)
    sep = float(np.linalg.norm(x - y))
    if sep == 0.0:
        raise ValueError("need x != y")
    ts = np.asarray(sorted(t_ladder), dtype=float)
    if ts.size == 0 or ts[0] <= s0:
        raise ValueError("ladder times must exceed s0")
    rx = simulate_snapshots(spec, x, s0, list(ts), cfg, n_paths, master_seed,
                            threads=threads)
    ry = simulate_snapshots(spec, y, s0, list(ts), cfg, n_paths, master_seed,
                            threads=threads)
    keep = rx.alive & ry.alive
    scale = phi_bound * sep
    ratios, ses = [], []
    for i in range(ts.size):
        vx = np.clip(np.asarray(phi(rx.snapshots[i][keep]), dtype=float),
                     -phi_bound, phi_bound)
        vy = np.clip(np.asarray(phi(ry.snapshots[i][keep]), dtype=float),
                     -phi_bound, phi_bound)
        diff = vx - vy
        ratios.append(abs(float(diff.mean())) / scale)
        ses.append(float(diff.std(ddof=1) / math.sqrt(diff.size)) / scale)
    ratios = np.asarray(ratios)
    ses = np.asarray(ses)
    g = 1.0 / np.sqrt(ts - s0)
    m_ls = float((ratios @ g) / (g @ g))
    m_env = float(np.max(ratios / g))
    return FellerProbeReport(
        times=ts,
        ratios=ratios,
        ses=ses,
        m_ls=m_ls,
        m_hat=max(m_ls, m_env),
        residuals=ratios - m_ls * g,
        phi_bound=phi_bound,
        separation=sep,
    )
