"""Command-line front end.

Every command reads a line-oriented config (plus ``--set`` overrides),
runs one workflow, and writes plot-ready CSV files, PNG figures, and a
``run_manifest.cfg`` holding the fully resolved configuration.  Replaying
a manifest reproduces the CSV outputs byte for byte under any thread
count.

Exit status: 0 success; 1 analysis verdict failed (e.g. a Lyapunov flag
is false); 2 usage or config error; 3 numerical failure (blow-up,
singular diffusion, quadrature failure, event budget).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from . import reports
from .belgrad import bel_gradient, feller_probe
from .config import RunConfig, build_model, build_step_config
from .errors import ConfigError, NumericalError
from .generator import (
    AuditThresholds,
    GridSpec,
    audit_lyapunov,
    default_grid,
    dynkin_check,
    reference_certificate,
)
from .lawlab import (
    cesaro_average,
    estimate_law,
    irreducibility_probe,
    make_observable,
    periodicity_test,
)
from .model import validate_periodicity
from .rng import RngStream
from .simulate import picard_validate, simulate_ensemble

COMMANDS = {}


def command(name):
    def register(fn):
        COMMANDS[name] = fn
        return fn

    return register


def _common(cfg: RunConfig, command_name: str):
    recorded = cfg.str("run.command", command_name)
    if recorded != command_name:
        raise ConfigError(
            f"config was produced by {recorded!r}, not {command_name!r}"
        )
    produced_by = cfg.str("run.version", __version__)
    if produced_by != __version__:
        print(f"warning: manifest from version {produced_by}, "
              f"running {__version__}", file=sys.stderr)
    seed = cfg.int("run.seed", 0)
    out = cfg.str("run.out", "out")
    threads = cfg.int("run.threads", os.cpu_count() or 1)
    figures = cfg.bool("run.figures", True)
    reports.ensure_outdir(out)
    return seed, out, threads, figures


def _finish(cfg: RunConfig, out: str):
    cfg.reject_unknown()
    cfg.resolved["run.version"] = __version__
    reports.write_text(os.path.join(out, "run_manifest.cfg"), cfg.manifest_lines())


def _observable(cfg: RunConfig, m: int):
    name = cfg.str("phi.name", "coordinate")
    coord = cfg.int("phi.coord", 1) - 1
    bound = cfg.optional_float("phi.bound", None)
    center = cfg.floats("phi.center", None)
    radius = cfg.float("phi.radius", 1.0)
    phi, sup = make_observable(name, m, coord=coord, bound=bound,
                               center=center, radius=radius)
    return phi, sup


def _x0(cfg: RunConfig, m: int):
    x0 = cfg.floats("sim.x0", [0.0] * m)
    if len(x0) != m:
        raise ConfigError(f"sim.x0 needs {m} components")
    return np.asarray(x0)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


@command("simulate")
def cmd_simulate(cfg: RunConfig) -> int:
    """simulate sample paths and write them as CSV (one row per grid/jump time)."""
    seed, out, threads, figures = _common(cfg, "simulate")
    spec = build_model(cfg)
    step = build_step_config(cfg)
    x0 = _x0(cfg, spec.m)
    s0 = cfg.float("sim.s0", 0.0)
    horizon = cfg.float("sim.horizon", 1.0)
    n_paths = cfg.int("sim.n_paths", 1)
    split = cfg.bool("sim.split_files", False)
    _finish(cfg, out)

    paths = simulate_ensemble(spec, x0, s0, horizon, step, n_paths, seed)
    header = ["t"] + [f"x_{i + 1}" for i in range(spec.m)] + ["event_kind", "event_norm"]

    def rows_for(sp):
        events_at = {}
        for ev in sp.events:
            events_at.setdefault(ev.time, ev)
        for t, state in zip(sp.times, sp.states):
            ev = events_at.get(t)
            kind = ev.kind if ev is not None else "none"
            enorm = float(np.linalg.norm(ev.displacement)) if ev is not None else 0.0
            yield [t, *state, kind, enorm]

    if split:
        for i, sp in enumerate(paths):
            reports.write_csv(os.path.join(out, f"path_{i:05d}.csv"), header,
                              rows_for(sp))
    else:
        def all_rows():
            for i, sp in enumerate(paths):
                for row in rows_for(sp):
                    yield [i, *row]

        reports.write_csv(os.path.join(out, "paths.csv"), ["path_id"] + header,
                          all_rows())
    if figures:
        reports.plot_paths(paths, os.path.join(out, "paths.png"))
    n_blown = sum(1 for sp in paths if sp.blow_up is not None)
    if n_blown:
        print(f"warning: {n_blown} of {n_paths} paths blew up", file=sys.stderr)
        return 3
    return 0


@command("check-model")
def cmd_check_model(cfg: RunConfig) -> int:
    """probe coefficient theta-periodicity at random points."""
    seed, out, threads, figures = _common(cfg, "check-model")
    spec = build_model(cfg)
    n_samples = cfg.int("check.n_samples", 500)
    _finish(cfg, out)
    rep = validate_periodicity(spec, n_samples, RngStream(seed))
    reports.write_csv(
        os.path.join(out, "periodicity_check.csv"),
        ["max_deviation", "passed"],
        [[rep.max_deviation, rep.passed]],
    )
    print(f"coefficient periodicity: max deviation {rep.max_deviation:.3g} "
          f"-> {'pass' if rep.passed else 'FAIL'}")
    return 0 if rep.passed else 1


@command("check-lyapunov")
def cmd_check_lyapunov(cfg: RunConfig) -> int:
    """audit the model's reference Lyapunov certificate on a radial grid."""
    seed, out, threads, figures = _common(cfg, "check-lyapunov")
    spec = build_model(cfg)
    cert = reference_certificate(spec)
    thresholds = AuditThresholds(
        h1_bound=cfg.float("lyap.h1_bound", float("inf")),
        h2_threshold=cfg.float("lyap.h2_threshold", -10.0),
        coercive_threshold=cfg.float("lyap.coercive_threshold", 100.0),
    )
    radii = cfg.floats("lyap.radii", None)
    grid = default_grid(cert)
    grid = GridSpec(
        radii=tuple(radii) if radii else grid.radii,
        points_per_shell=cfg.int("lyap.points_per_shell", 64),
        time_samples=cfg.int("lyap.time_samples", 8),
    )
    _finish(cfg, out)

    rep = audit_lyapunov(spec, cert, grid, thresholds)
    reports.write_csv(
        os.path.join(out, "lyapunov_profile.csv"),
        ["R", "t", "max_LV", "min_V"],
        rep.slice_table,
    )
    lines = ["lyapunov audit verdicts"]
    for key, val in rep.flags().items():
        lines.append(f"  {key} = {val}")
    lines.append(f"  sup_LV = {rep.sup_lv:.6g}")
    lines.append(f"  domination_worst_gap = {rep.domination_worst:.3g}")
    lines.append(f"  quadrature_error_max = {rep.quad_error_max:.3g}")
    lines.append(f"  U_monotone = {rep.u_monotone_ok}")
    for gam, prof in rep.h_moment.items():
        lines.append(f"  jump_moment_gamma_{gam} = {prof} (reported, no verdict)")
    if rep.non_finite:
        lines.append(f"  non_finite_points = {len(rep.non_finite)}")
    text = "\n".join(lines) + "\n"
    reports.write_text(os.path.join(out, "lyapunov_summary.txt"), text)
    print(text, end="")
    if figures:
        reports.plot_lyapunov(rep, os.path.join(out, "lyapunov_profile.png"))
    return 0 if rep.all_ok else 1


@command("estimate-law")
def cmd_estimate_law(cfg: RunConfig) -> int:
    """Monte Carlo transition-law cloud at a fixed time."""
    seed, out, threads, figures = _common(cfg, "estimate-law")
    spec = build_model(cfg)
    step = build_step_config(cfg)
    x0 = _x0(cfg, spec.m)
    s0 = cfg.float("sim.s0", 0.0)
    t = cfg.float("law.t", s0 + 1.0)
    n_paths = cfg.int("sim.n_paths", 1000)
    _finish(cfg, out)

    mu = estimate_law(spec, x0, s0, t, n_paths, step, seed, threads=threads)
    reports.write_csv(
        os.path.join(out, "law.csv"),
        ["path_id"] + [f"x_{i + 1}" for i in range(spec.m)] + ["weight"],
        ([i, *row, w] for i, (row, w) in enumerate(zip(mu.samples, mu.weights))),
    )
    mean = mu.mean()
    summary = (
        f"law at t={t} from (s={s0}, x0={x0.tolist()})\n"
        f"  n = {mu.n} (blown: {mu.meta['n_blown']})\n"
        f"  mean = {mean.tolist()}\n"
        f"  componentwise std = {mu.samples.std(axis=0, ddof=1).tolist()}\n"
    )
    reports.write_text(os.path.join(out, "law_summary.txt"), summary)
    print(summary, end="")
    if figures:
        reports.plot_cloud(mu.samples, os.path.join(out, "law.png"),
                           title=f"terminal law at t={t}")
    return 0


@command("periodicity")
def cmd_periodicity(cfg: RunConfig) -> int:
    """distances between consecutive period-mark laws with a null baseline."""
    seed, out, threads, figures = _common(cfg, "periodicity")
    spec = build_model(cfg)
    step = build_step_config(cfg)
    x0 = _x0(cfg, spec.m)
    s0 = cfg.float("sim.s0", 0.0)
    k_max = cfg.int("periodicity.k_max", 10)
    n_paths = cfg.int("sim.n_paths", 2000)
    metric = cfg.str("law.metric", "sliced_wasserstein1")
    n_proj = cfg.int("law.n_projections", 64)
    n_boot = cfg.int("law.n_bootstrap", 200)
    _finish(cfg, out)

    rep = periodicity_test(spec, x0, s0, k_max, n_paths, step, seed,
                           metric=metric, n_projections=n_proj,
                           n_bootstrap=n_boot, threads=threads)
    reports.write_csv(
        os.path.join(out, "periodicity.csv"),
        ["k", "d_k", "d_se", "null", "null_se", "in_band"],
        (
            [k, rep.distances[k], rep.distance_ses[k], rep.null_value,
             rep.null_se, bool(rep.in_band[k])]
            for k in range(rep.distances.size)
        ),
    )
    print(f"null baseline {rep.null_value:.5g} (SE {rep.null_se:.2g}); "
          f"first k in band: {rep.first_in_band}; trailing in-band run: {rep.tail_run}")
    if figures:
        reports.plot_periodicity(rep, os.path.join(out, "periodicity.png"))
    return 0


@command("cesaro")
def cmd_cesaro(cfg: RunConfig) -> int:
    """running ergodic averages of an observable over period marks."""
    seed, out, threads, figures = _common(cfg, "cesaro")
    spec = build_model(cfg)
    step = build_step_config(cfg)
    x0 = _x0(cfg, spec.m)
    s0 = cfg.float("sim.s0", 0.0)
    n = cfg.int("cesaro.n", 20)
    n_paths = cfg.int("sim.n_paths", 2000)
    phi, _ = _observable(cfg, spec.m)
    _finish(cfg, out)

    rep = cesaro_average(spec, phi, s0, x0, n, n_paths, step, seed, threads=threads)
    reports.write_csv(
        os.path.join(out, "cesaro.csv"),
        ["j", "A_j", "se", "period_mean"],
        (
            [j + 1, rep.partial_averages[j], rep.ses[j], rep.period_means[j]]
            for j in range(n)
        ),
    )
    print(f"Cesaro average after {n} periods: {rep.final:.6g} "
          f"(SE {rep.ses[-1]:.2g})")
    if figures:
        reports.plot_cesaro(rep, os.path.join(out, "cesaro.png"))
    return 0


@command("irreducibility")
def cmd_irreducibility(cfg: RunConfig) -> int:
    """ball-hitting probability estimate with a Wilson interval."""
    seed, out, threads, figures = _common(cfg, "irreducibility")
    spec = build_model(cfg)
    step = build_step_config(cfg)
    x0 = _x0(cfg, spec.m)
    s0 = cfg.float("sim.s0", 0.0)
    y = np.asarray(cfg.floats("irreducibility.y", [0.0] * spec.m))
    radius = cfg.float("irreducibility.radius", 1.0)
    horizon = cfg.float("irreducibility.horizon", 1.0)
    n_paths = cfg.int("sim.n_paths", 2000)
    _finish(cfg, out)

    rep = irreducibility_probe(spec, x0, s0, y, radius, horizon, n_paths, step,
                               seed, threads=threads)
    reports.write_csv(
        os.path.join(out, "irreducibility.csv"),
        ["hit_count", "n_paths", "estimate", "ci_low", "ci_high", "verdict"],
        [[rep.hit_count, rep.n_paths, rep.estimate, rep.ci_low, rep.ci_high,
          rep.verdict]],
    )
    print(f"ball hits: {rep.hit_count}/{rep.n_paths} "
          f"(95% CI [{rep.ci_low:.4g}, {rep.ci_high:.4g}]) -> {rep.verdict}")
    return 0 if rep.reachable_evidence else 1


@command("bel-grad")
def cmd_bel_grad(cfg: RunConfig) -> int:
    """directional semigroup gradient by the stochastic-weight estimator."""
    seed, out, threads, figures = _common(cfg, "bel-grad")
    spec = build_model(cfg)
    step = build_step_config(cfg)
    x0 = _x0(cfg, spec.m)
    s0 = cfg.float("sim.s0", 0.0)
    t = cfg.float("bel.t", s0 + 1.0)
    h_dir = np.asarray(cfg.floats("bel.direction", [1.0] + [0.0] * (spec.m - 1)))
    n_paths = cfg.int("sim.n_paths", 10_000)
    phi, sup = _observable(cfg, spec.m)
    bound = sup if np.isfinite(sup) else cfg.float("phi.clip", 1e6)
    _finish(cfg, out)

    est = bel_gradient(spec, phi, x0, h_dir, s0, t, n_paths, step, seed,
                       phi_bound=bound, threads=threads)
    reports.write_csv(
        os.path.join(out, "belgrad.csv"),
        ["estimate", "se", "n_used", "weight_mean", "weight_se"],
        [[est.value, est.se, est.n_used, est.weight_mean, est.weight_se]],
    )
    print(f"directional gradient at t={t}: {est.value:.6g} (SE {est.se:.2g})")
    if figures:
        reports.plot_bel(est, os.path.join(out, "belgrad.png"))
    return 0


@command("feller-probe")
def cmd_feller_probe(cfg: RunConfig) -> int:
    """semigroup Lipschitz ratios against a 1/sqrt(t-s) envelope."""
    seed, out, threads, figures = _common(cfg, "feller-probe")
    spec = build_model(cfg)
    step = build_step_config(cfg)
    s0 = cfg.float("sim.s0", 0.0)
    x = np.asarray(cfg.floats("feller.x", [0.5] + [0.0] * (spec.m - 1)))
    y = np.asarray(cfg.floats("feller.y", [-0.5] + [0.0] * (spec.m - 1)))
    ladder = cfg.floats("feller.ladder", [0.05, 0.1, 0.2, 0.5, 1.0])
    n_paths = cfg.int("sim.n_paths", 10_000)
    phi, sup = _observable(cfg, spec.m)
    bound = sup if np.isfinite(sup) else cfg.float("phi.clip", 1e6)
    _finish(cfg, out)

    rep = feller_probe(spec, phi, x, y, s0, [s0 + u for u in ladder], n_paths,
                       step, seed, phi_bound=bound, threads=threads)
    reports.write_csv(
        os.path.join(out, "feller.csv"),
        ["t", "ratio", "stderr", "fitted_envelope"],
        (
            [rep.times[i], rep.ratios[i], rep.ses[i],
             rep.m_hat / np.sqrt(rep.times[i] - s0)]
            for i in range(rep.times.size)
        ),
    )
    print(f"envelope constant M_hat = {rep.m_hat:.5g} "
          f"(least squares {rep.m_ls:.5g}); max |residual| "
          f"{np.max(np.abs(rep.residuals)):.3g}")
    if figures:
        reports.plot_feller(rep, os.path.join(out, "feller.png"), s0=s0)
    return 0


@command("picard")
def cmd_picard(cfg: RunConfig) -> int:
    """Picard iterate sup-distances under frozen noise (contraction check)."""
    seed, out, threads, figures = _common(cfg, "picard")
    spec = build_model(cfg)
    step = build_step_config(cfg)
    x0 = _x0(cfg, spec.m)
    s0 = cfg.float("sim.s0", 0.0)
    horizon = cfg.float("picard.horizon", 0.5)
    n_iter = cfg.int("picard.n_iter", 8)
    _finish(cfg, out)

    rep = picard_validate(spec, x0, horizon, n_iter, step, RngStream(seed), s0=s0)
    ratios = np.concatenate([[np.nan], rep.ratios()])
    reports.write_csv(
        os.path.join(out, "picard.csv"),
        ["i", "d_i", "ratio_to_previous"],
        ([i + 1, rep.distances[i], ratios[i]] for i in range(rep.distances.size)),
    )
    print(f"iterate distances: {np.array2string(rep.distances, precision=3)}; "
          f"diverged={rep.diverged}")
    if figures:
        reports.plot_picard(rep, os.path.join(out, "picard.png"))
    return 1 if rep.diverged else 0


@command("dynkin")
def cmd_dynkin(cfg: RunConfig) -> int:
    """compare the Monte Carlo Dynkin quotient with the generator value."""
    seed, out, threads, figures = _common(cfg, "dynkin")
    spec = build_model(cfg)
    step = build_step_config(cfg)
    x = np.asarray(cfg.floats("dynkin.x", [0.0] * spec.m))
    t = cfg.float("dynkin.t", 0.0)
    h = cfg.float("dynkin.h", 1e-3)
    n_paths = cfg.int("sim.n_paths", 100_000)
    z_max = cfg.float("dynkin.z_max", 3.0)
    _finish(cfg, out)

    cert = reference_certificate(spec)
    rep = dynkin_check(spec, cert.V, t, x, h, n_paths, master_seed=seed, cfg=step)
    reports.write_csv(
        os.path.join(out, "dynkin.csv"),
        ["lhs", "rhs", "rhs_error", "mc_se", "z_score", "n_blown"],
        [[rep.lhs, rep.rhs, rep.rhs_error, rep.mc_se, rep.z_score, rep.n_blown]],
    )
    print(f"Dynkin quotient {rep.lhs:.6g} vs generator {rep.rhs:.6g} "
          f"(z = {rep.z_score:.3g})")
    return 0 if rep.z_score <= z_max else 1


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="levylab",
        description=(
            "Numerical laboratory for periodically forced SDEs driven by "
            "Levy noise: simulation, generator audits, law estimation, and "
            "semigroup gradient probes."
        ),
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or "").strip() or None)
        p.add_argument("--config", help="path to a line-oriented config file")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--out", help="override run.out (output directory)")
        p.add_argument("--threads", type=int, help="override run.threads")
        p.add_argument("--no-figures", action="store_true",
                       help="skip PNG figure rendering")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key (repeatable)")
    return parser


def load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set needs KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        cfg.override(key.strip(), raw)
    if args.seed is not None:
        cfg.entries["run.seed"] = int(args.seed)
    if args.out is not None:
        cfg.entries["run.out"] = args.out
    if args.threads is not None:
        cfg.entries["run.threads"] = int(args.threads)
    if args.no_figures:
        cfg.entries["run.figures"] = False
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"invalid argument: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
