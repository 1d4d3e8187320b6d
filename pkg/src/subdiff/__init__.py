"""Monte Carlo toolkit for stochastic differential equations driven by
time-changed Q-Wiener processes.

Modules
-------
subordinator
    Stable subordinators, their inverses and exact marginals.
spectral
    Trace-class covariances and (time-changed) Q-Wiener paths.
integrator
    Stochastic integrals, isometry, change of variables and Ito formula.
sde
    Time-changed SDE solvers, duality and mild solutions.
fpk
    Fractional Fokker-Planck-Kolmogorov and subordination checks.
walsh
    Kernel spaces, martingale measures and the Walsh integral.
harness
    Reproducible Monte Carlo driver and reports.
"""
from . import errors, fpk, harness, integrator, mittag_leffler, refinement, sde, spectral, subordinator, walsh
from .errors import (
    AdaptednessError,
    ConfigError,
    ConvergenceError,
    DivergenceError,
    HorizonError,
    KernelError,
    NumericRangeError,
    ParameterError,
    SubdiffError,
    TraceClassError,
)
from .mittag_leffler import mittag_leffler as mittag_leffler_function

__version__ = "0.1.0"

__all__ = [
    "errors",
    "fpk",
    "harness",
    "integrator",
    "mittag_leffler",
    "mittag_leffler_function",
    "refinement",
    "sde",
    "spectral",
    "subordinator",
    "walsh",
    "SubdiffError",
    "ParameterError",
    "HorizonError",
    "TraceClassError",
    "KernelError",
    "AdaptednessError",
    "NumericRangeError",
    "ConvergenceError",
    "DivergenceError",
    "ConfigError",
]
