"""Line-oriented run configuration: ``section.key = value``.

Values are numbers, booleans, bare strings, or flat lists in brackets.
Parsing is strict both ways: malformed lines fail immediately, and any
key a command did not consume is rejected after the run is resolved, so
typos cannot silently fall back to defaults.  Every default that a
command actually used is recorded, which makes the emitted manifest a
complete, replayable description of the run.
"""

from __future__ import annotations

import re

import numpy as np

from .errors import ConfigError
from .model import ModelSpec, builtin, coefficient_xt, make_periodic_fn
from .noise import (
    LevyMeasureSpec,
    PointMassLargePart,
    PowerLawSmallPart,
    UniformAnnulusLargePart,
    UniformAnnulusSmallPart,
)
from .simulate import StepConfig

__all__ = ["RunConfig", "parse_config_text", "format_value", "build_model",
           "build_step_config"]

_REQUIRED = object()

# Every key any command understands.  A config file may carry keys for
# several commands; keys a command does not consume are passed through to
# the manifest untouched, while keys outside this registry (typos) are
# rejected no matter which command runs.
KNOWN_KEYS = frozenset([
    "run.command", "run.seed", "run.out", "run.threads", "run.figures",
    "run.version",
    "model.name", "model.file", "model.theta", "model.m", "model.k",
    "model.a", "model.c", "model.sigma", "model.sigma_scale",
    "model.noise_scale", "model.alpha", "model.beta", "model.mu",
    "model.h_scale", "model.g_scale",
    "levy.kind", "levy.alpha", "levy.intensity", "levy.delta", "levy.mass",
    "levy.r_outer", "levy.large_dist", "levy.large_rate", "levy.large_mark",
    "levy.large_r_inner", "levy.large_r_outer",
    "sim.dt", "sim.s0", "sim.x0", "sim.horizon", "sim.n_paths",
    "sim.truncation_radius", "sim.compensator_mode", "sim.event_budget",
    "sim.split_files",
    "phi.name", "phi.coord", "phi.bound", "phi.center", "phi.radius",
    "phi.clip",
    "law.t", "law.metric", "law.n_projections", "law.n_bootstrap",
    "periodicity.k_max",
    "cesaro.n",
    "irreducibility.y", "irreducibility.radius", "irreducibility.horizon",
    "bel.t", "bel.direction",
    "feller.x", "feller.y", "feller.ladder",
    "picard.horizon", "picard.n_iter",
    "dynkin.t", "dynkin.x", "dynkin.h", "dynkin.z_max",
    "lyap.h1_bound", "lyap.h2_threshold", "lyap.coercive_threshold",
    "lyap.radii", "lyap.points_per_shell", "lyap.time_samples",
    "check.n_samples",
])

_TERM_KEY = re.compile(r"^term\.\d+\.(component|coef|powers|fourier)$")


def _parse_scalar(tok: str):
    tok = tok.strip()
    low = tok.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        pass
    if tok.startswith('"') and tok.endswith('"') and len(tok) >= 2:
        return tok[1:-1]
    return tok


def parse_value(raw: str):
    raw = raw.strip()
    if raw.startswith("["):
        if not raw.endswith("]"):
            raise ConfigError(f"unterminated list value: {raw!r}")
        inner = raw[1:-1].strip()
        if not inner:
            return []
        return [_parse_scalar(tok) for tok in inner.split(",")]
    if raw == "":
        raise ConfigError("empty value")
    return _parse_scalar(raw)


def format_value(val) -> str:
    if val is None:
        return "none"
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, (list, tuple, np.ndarray)):
        return "[" + ", ".join(format_value(v) for v in val) + "]"
    if isinstance(val, float):
        return repr(val)
    if isinstance(val, (int, np.integer)):
        return str(int(val))
    s = str(val)
    return f'"{s}"' if ("," in s or s != s.strip() or s == "") else s


def parse_config_text(text: str, source: str = "<config>") -> dict:
    entries = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if not key or " " in key:
            raise ConfigError(f"{source}:{lineno}: bad key {key!r}")
        if key in entries:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        entries[key] = parse_value(raw)
    return entries


class RunConfig:
    """Typed access to parsed entries with consumed-key accounting."""

    def __init__(self, entries: dict = None):
        self.entries = dict(entries or {})
        self.resolved = {}
        self._touched = set()

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(parse_config_text(fh.read(), source=str(path)))

    def override(self, key: str, raw_value: str):
        self.entries[key] = parse_value(raw_value)

    def _get(self, key, default):
        self._touched.add(key)
        if key in self.entries:
            val = self.entries[key]
        elif default is _REQUIRED:
            raise ConfigError(f"missing required config key {key!r}")
        else:
            val = default
        self.resolved[key] = val
        return val

    def int(self, key, default=_REQUIRED):
        val = self._get(key, default)
        if isinstance(val, bool) or not isinstance(val, (int, np.integer)):
            raise ConfigError(f"config key {key!r} must be an integer, got {val!r}")
        return int(val)

    def float(self, key, default=_REQUIRED):
        val = self._get(key, default)
        if isinstance(val, bool) or not isinstance(val, (int, float, np.floating)):
            raise ConfigError(f"config key {key!r} must be a number, got {val!r}")
        return float(val)

    def str(self, key, default=_REQUIRED):
        val = self._get(key, default)
        if not isinstance(val, str):
            raise ConfigError(f"config key {key!r} must be a string, got {val!r}")
        return val

    def bool(self, key, default=_REQUIRED):
        val = self._get(key, default)
        if not isinstance(val, bool):
            raise ConfigError(f"config key {key!r} must be true/false, got {val!r}")
        return val

    def floats(self, key, default=_REQUIRED):
        val = self._get(key, default)
        if val is None or (isinstance(val, str) and val.lower() == "none"):
            self.resolved[key] = None
            return None
        if not isinstance(val, (list, tuple)):
            raise ConfigError(f"config key {key!r} must be a list, got {val!r}")
        try:
            return [float(v) for v in val]
        except (TypeError, ValueError):
            raise ConfigError(f"config key {key!r} must hold numbers") from None

    def optional_float(self, key, default=None):
        val = self._get(key, default)
        if val is None or (isinstance(val, str) and val.lower() == "none"):
            self.resolved[key] = None
            return None
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"config key {key!r} must be a number or none")
        return float(val)

    def has(self, key) -> bool:
        return key in self.entries

    def reject_unknown(self):
        unknown = []
        for key in sorted(set(self.entries) - self._touched):
            if key in KNOWN_KEYS or _TERM_KEY.match(key):
                # valid for another command: keep it in the manifest
                self.resolved[key] = self.entries[key]
            else:
                unknown.append(key)
        if unknown:
            raise ConfigError(
                "unknown config key(s): " + ", ".join(repr(k) for k in unknown)
            )

    def manifest_lines(self) -> str:
        lines = [f"{k} = {format_value(v)}" for k, v in sorted(self.resolved.items())]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# building domain objects from config keys
# ---------------------------------------------------------------------------


def build_levy(cfg: RunConfig, dim: int):
    kind = cfg.str("levy.kind", "none")
    small = None
    if kind == "power_law":
        small = PowerLawSmallPart(
            dim=dim,
            alpha=cfg.float("levy.alpha", 1.2),
            intensity=cfg.float("levy.intensity", 1.0),
            delta=cfg.float("levy.delta", 1e-2),
        )
    elif kind == "uniform_annulus":
        small = UniformAnnulusSmallPart(
            dim=dim,
            mass=cfg.float("levy.mass", 1.0),
            delta=cfg.float("levy.delta", 1e-2),
            r_outer=cfg.float("levy.r_outer", 1.0),
        )
    elif kind != "none":
        raise ConfigError(f"levy.kind must be none, power_law or uniform_annulus, "
                          f"got {kind!r}")

    dist = cfg.str("levy.large_dist", "none")
    large = None
    if dist == "point_mass":
        mark = cfg.floats("levy.large_mark", [1.0] + [0.0] * (dim - 1))
        large = PointMassLargePart(dim=dim, rate=cfg.float("levy.large_rate", 1.0),
                                   mark=mark)
    elif dist == "uniform_annulus":
        large = UniformAnnulusLargePart(
            dim=dim,
            rate=cfg.float("levy.large_rate", 1.0),
            r_inner=cfg.float("levy.large_r_inner", 1.0),
            r_outer=cfg.float("levy.large_r_outer", 2.0),
        )
    elif dist != "none":
        raise ConfigError(f"levy.large_dist must be none, point_mass or "
                          f"uniform_annulus, got {dist!r}")

    if small is None and large is None:
        return None
    return LevyMeasureSpec(dim=dim, small=small, large=large)


def _periodic_param(cfg: RunConfig, key: str, default, theta: float):
    """A constant or a Fourier list [a0, c1, s1, c2, s2, ...]."""
    if cfg.has(key) and isinstance(cfg.entries[key], list):
        coeffs = cfg.floats(key)
        a0 = coeffs[0]
        rest = coeffs[1:]
        if len(rest) % 2:
            raise ConfigError(f"{key}: Fourier list needs [a0, c1, s1, ...]")
        harmonics = [(rest[i], rest[i + 1]) for i in range(0, len(rest), 2)]
        return make_periodic_fn((a0, harmonics), theta)
    return cfg.float(key, default)


def build_model(cfg: RunConfig) -> ModelSpec:
    name = cfg.str("model.name")
    if name == "custom":
        return _custom_model(cfg)
    theta = cfg.float("model.theta", 1.0)
    if name == "periodic_ou":
        dim = 1
    elif name == "dissipative":
        dim = cfg.int("model.m", 2)
    elif name == "lorenz":
        dim = 3
    elif name == "lemniscate":
        dim = 2
    else:
        raise ConfigError(f"unknown model.name {name!r}")
    levy = build_levy(cfg, dim)

    common = dict(theta=theta, levy=levy,
                  h_scale=cfg.float("model.h_scale", 1.0),
                  g_scale=cfg.float("model.g_scale", 1.0))
    if name == "periodic_ou":
        return builtin("periodic_ou", a=cfg.float("model.a", 1.0),
                       c=cfg.float("model.c", 1.0),
                       sigma=cfg.float("model.sigma", 1.0), **common)
    if name == "dissipative":
        return builtin("dissipative", m=dim,
                       sigma_scale=cfg.float("model.sigma_scale", 1.0), **common)
    if name == "lorenz":
        return builtin(
            "lorenz",
            alpha=_periodic_param(cfg, "model.alpha", 10.0, theta),
            beta=_periodic_param(cfg, "model.beta", 8.0 / 3.0, theta),
            mu=_periodic_param(cfg, "model.mu", 28.0, theta),
            noise_scale=cfg.float("model.noise_scale", 1.0), **common)
    return builtin("lemniscate", sigma_scale=cfg.float("model.sigma_scale", 1.0),
                   **common)


def _custom_model(cfg: RunConfig) -> ModelSpec:
    """Polynomial drift with Fourier time modulation, declared term by term.

    Each term lives under ``term.<i>.*``: ``component`` (1-based state
    index), ``coef``, ``powers`` (one exponent per state coordinate) and
    an optional ``fourier`` list [a0, c1, s1, ...] multiplying the term.
    Diffusion is sigma_scale times the identity.
    """
    if cfg.has("model.file"):
        sub = RunConfig.from_file(cfg.str("model.file"))
        for key, val in sub.entries.items():
            if key not in cfg.entries:
                cfg.entries[key] = val
    theta = cfg.float("model.theta", 1.0)
    m = cfg.int("model.m")
    k = cfg.int("model.k", m)
    sigma_scale = cfg.float("model.sigma_scale", 1.0)

    terms = [[] for _ in range(m)]
    i = 1
    while cfg.has(f"term.{i}.component"):
        comp = cfg.int(f"term.{i}.component")
        if not 1 <= comp <= m:
            raise ConfigError(f"term.{i}.component must be in 1..{m}")
        coef = cfg.float(f"term.{i}.coef")
        powers = cfg.floats(f"term.{i}.powers")
        if len(powers) != m:
            raise ConfigError(f"term.{i}.powers needs {m} exponents")
        four = None
        if cfg.has(f"term.{i}.fourier"):
            coeffs = cfg.floats(f"term.{i}.fourier")
            rest = coeffs[1:]
            if len(rest) % 2:
                raise ConfigError(f"term.{i}.fourier needs [a0, c1, s1, ...]")
            four = make_periodic_fn(
                (coeffs[0], [(rest[j], rest[j + 1]) for j in range(0, len(rest), 2)]),
                theta,
            )
        terms[comp - 1].append((coef, np.asarray(powers), four))
        i += 1
    if i == 1:
        raise ConfigError("custom model needs at least one term.<i>.* block")

    def drift(t, x):
        out = np.zeros_like(x)
        for ci, term_list in enumerate(terms):
            acc = np.zeros(x.shape[0])
            for coef, powers, four in term_list:
                mono = coef * np.prod(x ** powers[None, :], axis=1)
                if four is not None:
                    mono = mono * four(t)
                acc += mono
            out[:, ci] = acc
        return out

    eye = np.eye(m, k)
    levy = build_levy(cfg, m)
    small, large = None, None
    if levy is not None:
        h_scale = cfg.float("model.h_scale", 1.0)
        g_scale = cfg.float("model.g_scale", 1.0)
        if levy.dim != m:
            raise ConfigError("custom model jumps need levy dimension == model.m")
        from .model import coefficient_xtu

        if levy.small is not None:
            small = coefficient_xtu(lambda t, x, u: h_scale * u)
        if levy.large is not None:
            large = coefficient_xtu(lambda t, x, u: g_scale * u)
    return ModelSpec(
        theta=theta, m=m, k=k,
        drift=coefficient_xt(drift),
        diffusion=coefficient_xt(
            lambda t, x: np.broadcast_to(sigma_scale * eye, (x.shape[0], m, k)).copy()
        ),
        levy=levy,
        small_jump=small,
        large_jump=large,
        h_linear_in_u=True,
        diffusion_constant=True,
        name="custom",
    )


def build_step_config(cfg: RunConfig) -> StepConfig:
    return StepConfig(
        dt=cfg.float("sim.dt", 1e-3),
        compensator_mode=cfg.str("sim.compensator_mode", "quadrature"),
        truncation_radius=cfg.optional_float("sim.truncation_radius", None),
        event_budget=cfg.int("sim.event_budget", 100_000),
    )
