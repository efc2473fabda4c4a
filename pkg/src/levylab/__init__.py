"""levylab: a numerical laboratory for periodically forced Levy-noise SDEs.

The package simulates jump diffusions whose coefficients are periodic in
time (Euler stepping between exactly interlaced large jumps), evaluates
the infinitesimal generator on test functions, audits Lyapunov drift
certificates, estimates transition laws and their periodic limits, and
probes semigroup gradients through the Bismut-Elworthy-Li weight.
"""

__version__ = "0.1.0"

from . import belgrad, generator, lawlab, model, noise, simulate  # noqa: F401
from .model import ModelSpec, builtin, truncate  # noqa: F401
from .noise import LevyMeasureSpec  # noqa: F401
from .rng import RngStream  # noqa: F401
from .simulate import StepConfig, simulate_ensemble, simulate_path  # noqa: F401
