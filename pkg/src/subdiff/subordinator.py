"""Beta-stable subordinators, their inverses, and inverse-subordinator moments.

Array conventions: the last axis of every path array is time; any leading
axes index independent replications.  Grids are shared by all replications.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import ConvergenceError, HorizonError, NumericRangeError, ParameterError
from .rng import as_generator

__all__ = [
    "SubordinatorPath",
    "InversePath",
    "check_beta",
    "uniform_grid",
    "sample_stable",
    "sample_stable_increment",
    "simulate_subordinator_path",
    "invert_path",
    "simulate_inverse_path",
    "sample_inverse_marginal",
    "inverse_moment",
    "LaplaceCheck",
    "laplace_subordination_check",
]

# slack for matching a physical time against a subordinator value; only
# matters for exact ties (t = 0 and the beta = 1 identity clock)
_TIE_RTOL = 1e-12


def check_beta(beta: float) -> float:
    beta = float(beta)
    if not 0.0 < beta <= 1.0:
        raise ParameterError(f"beta must lie in (0, 1], got {beta}")
    return beta


def uniform_grid(t_max: float, steps: int) -> np.ndarray:
    """``steps + 1`` equally spaced points on ``[0, t_max]``."""
    if not t_max > 0:
        raise ParameterError(f"grid horizon must be positive, got {t_max}")
    if int(steps) != steps or steps < 1:
        raise ParameterError(f"grid needs a positive integer number of steps, got {steps}")
    return np.linspace(0.0, float(t_max), int(steps) + 1)


def _check_grid(grid, name: str) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ParameterError(f"{name} must be a 1-d array with at least two points")
    if grid[0] < 0 or np.any(np.diff(grid) <= 0):
        raise ParameterError(f"{name} must be strictly increasing and non-negative")
    return grid


@dataclass(frozen=True)
class SubordinatorPath:
    """Skeleton of U_beta on an operational-time grid.

    ``values[..., k]`` is U(tau_grid[k]).  Increments are jumps located at the
    right end of each grid step.
    """

    beta: float
    tau_grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        tau = _check_grid(self.tau_grid, "tau_grid")
        if tau[0] != 0.0:
            raise ParameterError("tau_grid must start at 0")
        vals = np.asarray(self.values, dtype=float)
        if vals.shape[-1] != tau.size:
            raise ParameterError("values and tau_grid lengths differ")
        if np.any(vals[..., 0] != 0.0):
            raise ParameterError("a subordinator starts at 0")
        if np.any(np.diff(vals, axis=-1) < 0):
            raise ParameterError("subordinator values must be nondecreasing")
        object.__setattr__(self, "tau_grid", tau)
        object.__setattr__(self, "values", vals)

    @property
    def n_paths(self) -> int:
        return int(np.prod(self.values.shape[:-1], dtype=int))

    def left_limits(self) -> np.ndarray:
        """U(s-) for s in each step (tau_k, tau_{k+1}]: the value at tau_k."""
        return self.values[..., :-1]


@dataclass(frozen=True)
class InversePath:
    """E(t) on a physical-time grid, read off a subordinator skeleton.

    ``values[..., m] = tau_grid[tau_index[..., m]]`` where ``tau_index`` is
    the first grid index with U(tau_k) >= t_m.  Away from exact ties (which
    have probability zero for beta < 1) this is the first grid time at which
    U exceeds t.  Ties are counted as reached so that E(0) = 0 and the beta=1
    clock is the identity on shared grids.  The step function is constant
    across every jump of U.
    """

    t_grid: np.ndarray
    values: np.ndarray
    tau_index: np.ndarray = field(repr=False)
    tau_grid: np.ndarray = field(repr=False)

    def __post_init__(self):
        t = _check_grid(self.t_grid, "t_grid")
        vals = np.asarray(self.values, dtype=float)
        if vals.shape[-1] != t.size:
            raise ParameterError("values and t_grid lengths differ")
        if np.any(vals[..., 0] < 0):
            raise ParameterError("inverse subordinator must be non-negative")
        if np.any(np.diff(vals, axis=-1) < 0):
            raise ParameterError("inverse subordinator values must be nondecreasing")
        object.__setattr__(self, "t_grid", t)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "tau_index", np.asarray(self.tau_index, dtype=np.intp))
        object.__setattr__(self, "tau_grid", np.asarray(self.tau_grid, dtype=float))

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=-1)

    @property
    def flat(self) -> np.ndarray:
        """Boolean mask of grid steps over which E does not move."""
        return np.diff(self.tau_index, axis=-1) == 0


# ---------------------------------------------------------------------------
# sampling


def sample_stable(beta: float, rng=None, size=None) -> np.ndarray:
    """Draw U_beta(1): positive stable with E exp(-u S) = exp(-u^beta).

    Kanter's representation is used:
    S = (A(V) / W)^((1 - beta) / beta) with V ~ U(0, 1), W ~ Exp(1) and
    A(v) = (sin(beta pi v)^beta sin((1-beta) pi v)^(1-beta) / sin(pi v))^(1/(1-beta)).
    """
    beta = check_beta(beta)
    rng = as_generator(rng)
    if beta == 1.0:
        return np.ones(size) if size is not None else 1.0
    v = rng.uniform(0.0, 1.0, size)
    w = rng.standard_exponential(size)
    # guard the open interval: uniform() may return exactly 0
    v = np.where(v == 0.0, np.nextafter(0.0, 1.0), v)
    w = np.where(w == 0.0, np.nextafter(0.0, 1.0), w)
    pv = np.pi * v
    # log space: A(v)^((1-beta)/beta) = exp(log_kernel / beta) cannot overflow near beta = 1
    log_kernel = (
        beta * np.log(np.sin(beta * pv)) + (1.0 - beta) * np.log(np.sin((1.0 - beta) * pv)) - np.log(np.sin(pv))
    )
    return np.exp(log_kernel / beta - (1.0 - beta) / beta * np.log(w))


def sample_stable_increment(beta: float, dt: float, rng=None, size=None):
    """Increment U(tau + dt) - U(tau); equals dt^(1/beta) * U(1) in law.

    For ``beta = 1`` the increment is the deterministic drift ``dt``.
    """
    beta = check_beta(beta)
    dt = float(dt)
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    if beta == 1.0:
        return np.full(size, dt) if size is not None else dt
    return dt ** (1.0 / beta) * sample_stable(beta, rng, size)


def _tau_grid(tau_max: float, d_tau: float) -> np.ndarray:
    if not tau_max > 0 or not 0 < d_tau < tau_max:
        raise ParameterError(f"need tau_max > 0 and 0 < d_tau < tau_max, got {tau_max}, {d_tau}")
    steps = int(math.ceil(tau_max / d_tau - 1e-9))
    end = steps * d_tau
    if abs(end - tau_max) <= 1e-9 * tau_max:
        end = tau_max
    return uniform_grid(end, steps)


def _increments(beta, tau_grid, rng, n_paths):
    dtau = np.diff(tau_grid)
    shape = (dtau.size,) if n_paths is None else (n_paths, dtau.size)
    return dtau ** (1.0 / beta) * sample_stable(beta, rng, shape)


def simulate_subordinator_path(beta, tau_max, d_tau, rng=None, n_paths=None) -> SubordinatorPath:
    """Simulate U_beta on ``[0, tau_max]`` with step ``d_tau``.

    With ``n_paths`` the result holds that many independent paths stacked on
    the first axis.
    """
    beta = check_beta(beta)
    rng = as_generator(rng)
    tau = _tau_grid(float(tau_max), float(d_tau))
    if beta == 1.0:
        vals = tau.copy() if n_paths is None else np.tile(tau, (n_paths, 1))
        return SubordinatorPath(beta, tau, vals)
    inc = _increments(beta, tau, rng, n_paths)
    vals = np.concatenate([np.zeros(inc.shape[:-1] + (1,)), np.cumsum(inc, axis=-1)], axis=-1)
    return SubordinatorPath(beta, tau, vals)


def _tie_tol(t_grid) -> float:
    return _TIE_RTOL * max(1.0, float(np.max(np.abs(t_grid))))


def invert_path(path: SubordinatorPath, t_grid) -> InversePath:
    """First-passage times of ``path`` over the levels in ``t_grid``."""
    t = _check_grid(t_grid, "t_grid")
    tol = _tie_tol(t)
    top = path.values[..., -1]
    if t[-1] > np.min(top) + tol:
        raise HorizonError(
            f"t_grid reaches {t[-1]:.6g} but the subordinator only reaches "
            f"{float(np.min(top)):.6g}; simulate a longer operational time (tau_max)"
        )
    flat_vals = path.values.reshape(-1, path.tau_grid.size)
    idx = np.empty((flat_vals.shape[0], t.size), dtype=np.intp)
    for i, row in enumerate(flat_vals):
        idx[i] = np.searchsorted(row, t - tol, side="left")
    idx = idx.reshape(path.values.shape[:-1] + (t.size,))
    return InversePath(t, path.tau_grid[idx], idx, path.tau_grid)


def simulate_inverse_path(beta, t_grid, d_tau, rng=None, n_paths=None, tau_max=None):
    """Simulate a subordinator long enough to cover ``t_grid`` and invert it.

    The operational horizon starts at ``tau_max`` (default: a few times the
    mean of E at the last time) and is extended in chunks of a quarter of
    that length, continuing the same random stream, until every path exceeds ``t_grid[-1]``.

    Returns
    -------
    (SubordinatorPath, InversePath)
    """
    beta = check_beta(beta)
    rng = as_generator(rng)
    t = _check_grid(t_grid, "t_grid")
    if tau_max is None:
        tau_max = 4.0 * inverse_moment(beta, t[-1], 1) + 2.0 * d_tau
    tau = _tau_grid(float(tau_max), float(d_tau))
    if beta == 1.0:
        if tau[-1] < t[-1]:
            tau = _tau_grid(float(t[-1]), float(d_tau))
        path = simulate_subordinator_path(beta, tau[-1], d_tau, rng, n_paths)
        return path, invert_path(path, t)
    inc = _increments(beta, tau, rng, n_paths)
    vals = np.concatenate([np.zeros(inc.shape[:-1] + (1,)), np.cumsum(inc, axis=-1)], axis=-1)
    chunk = max(1, (tau.size - 1) // 4)
    while np.min(vals[..., -1]) < t[-1]:
        steps = tau.size - 1 + chunk
        tau = uniform_grid(steps * float(d_tau), steps)
        more = _increments(beta, tau[-chunk - 1 :], rng, n_paths)
        vals = np.concatenate([vals, vals[..., -1:] + np.cumsum(more, axis=-1)], axis=-1)
    path = SubordinatorPath(beta, tau, vals)
    return path, invert_path(path, t)


def sample_inverse_marginal(beta, t, rng=None, size=None):
    """Draw E_t exactly as (t / S)^beta with S = U_beta(1)."""
    beta = check_beta(beta)
    t = float(t)
    if t < 0:
        raise ParameterError(f"t must be non-negative, got {t}")
    if t == 0.0:
        return np.zeros(size) if size is not None else 0.0
    s = sample_stable(beta, rng, size)
    return (t / s) ** beta


def inverse_moment(beta, t, n) -> float:
    """E[E_t^n] = t^(n beta) n! / Gamma(n beta + 1)."""
    beta = check_beta(beta)
    if int(n) != n or n < 1:
        raise ParameterError(f"moment order must be a positive integer, got {n}")
    t = float(t)
    if t < 0:
        raise ParameterError(f"t must be non-negative, got {t}")
    if t == 0.0:
        return 0.0
    log_val = n * beta * math.log(t) + math.lgamma(n + 1) - math.lgamma(n * beta + 1)
    if log_val > 709.0:
        raise NumericRangeError(
            f"E[E_t^{n}] for beta={beta}, t={t} overflows double precision (log = {log_val:.1f})"
        )
    return math.exp(log_val)


# ---------------------------------------------------------------------------
# Laplace-domain subordination identity


@dataclass
class LaplaceCheck:
    s: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    n_samples: int

    @property
    def rel_err(self) -> np.ndarray:
        return np.abs(self.lhs - self.rhs) / np.abs(self.rhs)

    @property
    def max_rel_err(self) -> float:
        return float(np.max(self.rel_err))


def _laplace(fn, s):
    val, err, *rest = integrate.quad(
        lambda t: math.exp(-s * t) * fn(t), 0.0, np.inf, limit=400, full_output=1
    )
    if len(rest) > 1 or not math.isfinite(val):
        raise ConvergenceError(f"Laplace quadrature failed at s={s}: {rest[-1] if rest else val}")
    return val


def laplace_subordination_check(
    h: Callable[[np.ndarray], np.ndarray],
    beta,
    s_grid,
    rng=None,
    n_samples: int = 100_000,
    h_laplace: Callable[[float], float] | None = None,
) -> LaplaceCheck:
    """Compare L{ E[h(E_t)] }(s) with s^(beta-1) * L{h}(s^beta).

    The left side averages ``h`` over exact draws of E_t (common random
    numbers across t, using E_t = t^beta E_1 in law) and integrates in t by
    quadrature.  The right side uses ``h_laplace`` when given, otherwise the
    Laplace transform of ``h`` by quadrature.

    ``h`` must accept arrays.
    """
    beta = check_beta(beta)
    s_grid = np.atleast_1d(np.asarray(s_grid, dtype=float))
    if np.any(s_grid <= 0):
        raise ParameterError("s_grid must be positive")
    e1 = sample_inverse_marginal(beta, 1.0, rng, n_samples)

    def q(t):
        return float(np.mean(h(t**beta * e1)))

    def h_scalar(tau):
        return float(np.asarray(h(np.array([tau])))[0])

    lhs = np.array([_laplace(q, s) for s in s_grid])
    if h_laplace is None:
        rhs = np.array([s ** (beta - 1) * _laplace(h_scalar, s**beta) for s in s_grid])
    else:
        rhs = np.array([s ** (beta - 1) * h_laplace(s**beta) for s in s_grid])
    return LaplaceCheck(s_grid, lhs, rhs, n_samples)
