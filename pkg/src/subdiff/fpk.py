"""Weak-form fractional Fokker-Planck-Kolmogorov checks.

Laws of solutions are represented by Monte Carlo sample clouds and probed
with cylindrical test functionals phi(x) = g(<x, h>), whose derivatives are
available in closed form.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from .errors import ParameterError
from .mittag_leffler import mittag_leffler
from .rng import as_generator
from .sde import SDECoefficients, solve_by_duality, solve_classical_em
from .spectral import SpectralBasis, simulate_qwiener
from .subordinator import check_beta, sample_inverse_marginal, simulate_inverse_path, uniform_grid

__all__ = [
    "TestFunctional",
    "linear_functional",
    "quadratic_functional",
    "cylindrical_functional",
    "norm_sq",
    "EmpiricalMeasure",
    "caputo_derivative",
    "apply_L0",
    "sample_solution",
    "FPKResidual",
    "fpk_path_terms",
    "fpk_residual_from_terms",
    "fractional_fpk_residual",
    "SubordinationReport",
    "subordination_samples",
    "subordination_report",
    "subordination_identity_check",
    "mode_characteristic_function",
    "CharFunctionReport",
    "empirical_characteristic_function",
]

_UNIFORM_RTOL = 1e-9


@dataclass(frozen=True)
class TestFunctional:
    """phi(x) = g(<x, h>) with first and second derivatives g1, g2 of g."""

    __test__ = False  # not a pytest class

    kind: str
    h: np.ndarray
    g: Callable = field(repr=False)
    g1: Callable = field(repr=False)
    g2: Callable = field(repr=False)

    def __post_init__(self):
        if self.kind not in ("linear", "quadratic", "cylindrical"):
            raise ParameterError(f"unsupported test functional kind {self.kind!r}")
        h = np.atleast_1d(np.asarray(self.h, dtype=float))
        if not np.all(np.isfinite(h)):
            raise ParameterError("h must be finite")
        object.__setattr__(self, "h", h)

    def pairing(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.h

    def __call__(self, x) -> np.ndarray:
        return self.g(self.pairing(x))

    def grad(self, x) -> np.ndarray:
        """D phi(x) = g'(<x,h>) h, shape (..., H)."""
        return self.g1(self.pairing(x))[..., None] * self.h


# module-level so that functionals can be sent to worker processes
def _identity(y):
    return y


def _ones(y):
    return np.ones_like(y)


def _zeros(y):
    return np.zeros_like(y)


def _square(y):
    return y**2


def _double(y):
    return 2.0 * y


def _twos(y):
    return np.full_like(y, 2.0)


def linear_functional(h) -> TestFunctional:
    return TestFunctional("linear", h, _identity, _ones, _zeros)


def quadratic_functional(h) -> TestFunctional:
    return TestFunctional("quadratic", h, _square, _double, _twos)


def norm_sq(x) -> np.ndarray:
    """||x||^2 over the last axis (a non-cylindrical functional for sampling checks)."""
    return np.sum(np.asarray(x, dtype=float) ** 2, axis=-1)


def cylindrical_functional(h, g, g1, g2) -> TestFunctional:
    return TestFunctional("cylindrical", h, g, g1, g2)


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Sample cloud ``samples[n, i, m]`` of an H-valued process on ``t_grid``."""

    t_grid: np.ndarray
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 3 or s.shape[0] < 1 or s.shape[-1] != np.asarray(self.t_grid).size:
            raise ParameterError("samples must have shape (n >= 1, H, len(t_grid))")
        object.__setattr__(self, "samples", s)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    def points(self) -> np.ndarray:
        """Samples with the coordinate axis last: (n, M, H)."""
        return np.swapaxes(self.samples, -1, -2)

    def expect(self, fn) -> tuple[np.ndarray, np.ndarray]:
        """Mean of ``fn`` over samples at each time, and its standard error."""
        vals = np.asarray(fn(self.points()), dtype=float)
        se = vals.std(axis=0, ddof=1) / math.sqrt(self.n) if self.n > 1 else np.full(vals.shape[1:], np.nan)
        return vals.mean(axis=0), se


# ---------------------------------------------------------------------------
def _uniform_step(t_grid) -> float:
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise ParameterError("need a 1-d time grid with at least two points")
    d = np.diff(t)
    if np.any(d <= 0) or np.max(np.abs(d - d[0])) > _UNIFORM_RTOL * max(1.0, abs(t[-1])):
        raise ParameterError("the L1 Caputo scheme needs a uniform grid")
    return float(d[0])


def caputo_derivative(f_grid, beta, t_grid) -> np.ndarray:
    """L1 approximation of the Caputo derivative of order ``beta``.

    D f(t_n) ~ dt^-beta / Gamma(2 - beta) * sum_{k<n} b_k (f_{n-k} - f_{n-k-1}),
    b_k = (k+1)^(1-beta) - k^(1-beta).  For beta = 1 this is the backward
    difference.  The value at t_0 is set to 0.  Leading axes of ``f_grid``
    are independent curves.
    """
    beta = check_beta(beta)
    dt = _uniform_step(t_grid)
    f = np.asarray(f_grid, dtype=float)
    n_steps = f.shape[-1] - 1
    if n_steps != np.asarray(t_grid).size - 1:
        raise ParameterError("f_grid and t_grid lengths differ")
    k = np.arange(n_steps, dtype=float)
    if beta == 1.0:
        b = np.zeros(n_steps)
        b[0] = 1.0
    else:
        b = (k + 1.0) ** (1.0 - beta) - k ** (1.0 - beta)
    d = np.diff(f, axis=-1)
    out = np.zeros(f.shape)
    for n in range(1, n_steps + 1):
        out[..., n] = d[..., n - 1 :: -1] @ b[:n]
    return out * (dt**-beta / math.gamma(2.0 - beta))


def apply_L0(phi: TestFunctional, x, coeffs: SDECoefficients, basis: SpectralBasis, t=0.0) -> np.ndarray:
    """Kolmogorov operator on a cylindrical functional at states ``x`` (..., H).

    <A x, h> g'(<x,h>) + <F(t,x), h> g'(<x,h>) + g''(<x,h>) ||(C Q^{1/2})^* h||^2 / 2,
    where C is the diffusion coefficient (constant or evaluated at x).
    """
    if not isinstance(phi, TestFunctional):
        raise ParameterError("apply_L0 needs a TestFunctional")
    x = np.asarray(x, dtype=float)
    y = phi.pairing(x)
    g1 = phi.g1(y)
    g2 = phi.g2(y)
    drift = coeffs.drift(t, x) @ phi.h
    C = coeffs.diffusion(t, x)
    ch = np.einsum("...hj,h->...j", C, phi.h)
    trace = np.sum(basis.lam * ch**2, axis=-1)
    return g1 * drift + 0.5 * g2 * trace


# ---------------------------------------------------------------------------
def sample_solution(coeffs, basis, beta, t_grid, n, d_tau, rng, block=2000) -> EmpiricalMeasure:
    """Time-changed solutions on ``t_grid`` via the duality solver, in blocks."""
    rng = as_generator(rng)
    out = []
    done = 0
    while done < n:
        m = min(block, n - done)
        sub, inv = simulate_inverse_path(beta, t_grid, d_tau, rng, n_paths=m)
        q = simulate_qwiener(basis, sub.tau_grid[: int(np.max(inv.tau_index)) + 2], rng, n_paths=m)
        out.append(solve_by_duality(coeffs, q, inv).values)
        done += m
    return EmpiricalMeasure(np.asarray(t_grid, dtype=float), np.concatenate(out))


@dataclass(frozen=True)
class FPKResidual:
    """Curves on ``t``: lhs = Caputo derivative of m, rhs = mean L0 phi."""

    t: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    se: np.ndarray
    n_paths: int

    @property
    def residual(self) -> np.ndarray:
        return self.lhs - self.rhs

    @property
    def z(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.se > 0, np.abs(self.residual) / self.se, np.where(self.residual == 0, 0.0, np.inf))

    def rows(self):
        return list(zip(self.t, self.lhs, self.rhs, self.residual, self.se))


def fpk_path_terms(coeffs, phi, beta, basis, t_grid, n, d_tau, rng, keep=None):
    """Per-replication Caputo derivative of phi(X) and L0 phi(X) on ``t_grid``.

    Returns two arrays of shape (n, len(keep)); ``keep`` defaults to every
    grid index after 0.
    """
    t = np.asarray(t_grid, dtype=float)
    _uniform_step(t)
    keep = np.arange(1, t.size) if keep is None else np.asarray(keep, dtype=np.intp)
    meas = sample_solution(coeffs, basis, beta, t, int(n), d_tau, rng, int(n))
    pts = meas.points()
    lhs = caputo_derivative(phi(pts), beta, t)
    rhs = apply_L0(phi, pts, coeffs, basis)
    return lhs[:, keep], rhs[:, keep]


def fpk_residual_from_terms(t, lhs, rhs, se_target=None) -> FPKResidual:
    """Pool per-replication terms; the residual's SE accounts for their coupling."""
    n = lhs.shape[0]
    se = (lhs - rhs).std(axis=0, ddof=1) / math.sqrt(n)
    if se_target is not None and np.any(se > se_target):
        warnings.warn(
            f"Monte Carlo standard error {float(np.max(se)):.3g} exceeds the target {se_target:.3g}; increase mc",
            RuntimeWarning,
            stacklevel=2,
        )
    return FPKResidual(np.asarray(t, dtype=float), lhs.mean(axis=0), rhs.mean(axis=0), se, int(n))


def fractional_fpk_residual(
    coeffs, phi, beta, basis, t_grid, mc, rng=None, d_tau=1e-2, report_every=1, block=2000, se_target=None
) -> FPKResidual:
    """Residual D^beta m(t) - mean L0 phi(X(t)) with pooled Monte Carlo errors.

    The residual is formed per replication (the Caputo scheme is linear).
    Output is thinned to every ``report_every``-th grid point, skipping
    t = 0 where the scheme is not evaluated.
    """
    if int(mc) != mc or mc < 2:
        raise ParameterError(f"mc must be an integer >= 2, got {mc}")
    rng = as_generator(rng)
    t = np.asarray(t_grid, dtype=float)
    keep = np.arange(report_every, t.size, report_every)
    lhs, rhs = [], []
    done = 0
    while done < mc:
        m = min(block, int(mc) - done)
        a, b = fpk_path_terms(coeffs, phi, beta, basis, t, m, d_tau, rng, keep)
        lhs.append(a)
        rhs.append(b)
        done += m
    return fpk_residual_from_terms(t[keep], np.concatenate(lhs), np.concatenate(rhs), se_target)


# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SubordinationReport:
    lhs: float
    rhs: float
    se: float
    n_paths: int

    @property
    def z(self) -> float:
        return abs(self.lhs - self.rhs) / self.se if self.se > 0 else (0.0 if self.lhs == self.rhs else np.inf)


def _classical_at(coeffs, basis, tau_index, d_tau, rng):
    steps = int(np.max(tau_index)) + 1
    q = simulate_qwiener(basis, uniform_grid(steps * d_tau, steps), rng, n_paths=tau_index.size)
    y = solve_classical_em(coeffs, q).values
    idx = np.broadcast_to(tau_index[:, None, None], (tau_index.size, y.shape[1], 1))
    return np.take_along_axis(y, idx, axis=-1)[..., 0]


def subordination_samples(coeffs, phi, beta, basis, t, n, d_tau, rng):
    """Paired samples (phi(X(t)), phi(Y(E'))) for the subordination identity.

    ``X(t)`` comes from the time-changed (duality) solver with E from path
    inversion; ``E'`` is drawn from the exact marginal independently of the
    classical solution ``Y`` and rounded up to the operational grid, which
    is how path inversion resolves E_t, so both sides target the same law.
    """
    rng = as_generator(rng)
    meas = sample_solution(coeffs, basis, beta, np.array([0.0, float(t)]), int(n), d_tau, rng, int(n))
    lhs = np.asarray(phi(meas.samples[..., -1]), dtype=float)
    e_prime = np.atleast_1d(sample_inverse_marginal(beta, t, rng, size=int(n)))
    k = np.ceil(e_prime / d_tau - 1e-9).astype(np.intp)
    rhs = np.asarray(phi(_classical_at(coeffs, basis, k, d_tau, rng)), dtype=float)
    return lhs, rhs


def subordination_report(lhs, rhs) -> SubordinationReport:
    se = math.sqrt(lhs.var(ddof=1) / lhs.size + rhs.var(ddof=1) / rhs.size)
    return SubordinationReport(float(lhs.mean()), float(rhs.mean()), se, int(lhs.size))


def subordination_identity_check(coeffs, phi, beta, basis, t, mc, rng=None, d_tau=1e-2, block=2000):
    """E phi(X(t)) via the time-changed solver vs E phi(Y(E')) with independent E'.

    ``phi`` is a TestFunctional or any function of states (..., H).  The
    standard error is that of the difference of two independent means.
    """
    rng = as_generator(rng)
    if int(mc) != mc or mc < 2:
        raise ParameterError(f"mc must be an integer >= 2, got {mc}")
    if not float(t) > 0:
        raise ParameterError("t must be positive")
    lhs, rhs = [], []
    done = 0
    while done < mc:
        m = min(block, int(mc) - done)
        a, b = subordination_samples(coeffs, phi, beta, basis, t, m, d_tau, rng)
        lhs.append(a)
        rhs.append(b)
        done += m
    return subordination_report(np.concatenate(lhs), np.concatenate(rhs))


# ---------------------------------------------------------------------------
def mode_characteristic_function(lambda_j, beta, u, t):
    """E cos(u sqrt(lambda_j) w_j(E_t)) = E_beta(-lambda_j u^2 t^beta / 2)."""
    beta = check_beta(beta)
    if np.any(np.asarray(t) < 0):
        raise ParameterError("t must be non-negative")
    z = -np.asarray(lambda_j, dtype=float) * np.asarray(u, dtype=float) ** 2 * np.asarray(t, dtype=float) ** beta / 2.0
    return mittag_leffler(beta, z)


@dataclass(frozen=True)
class CharFunctionReport:
    """Per (mode, u): empirical mean of cos(u <W_{E_t}, f_j>), its SE, and the oracle."""

    u: np.ndarray
    empirical: np.ndarray
    se: np.ndarray
    oracle: np.ndarray
    n_paths: int

    @property
    def z(self) -> np.ndarray:
        return np.abs(self.empirical - self.oracle) / self.se


def empirical_characteristic_function(basis, beta, u, t, mc, rng=None, d_tau=None) -> CharFunctionReport:
    """Monte Carlo characteristic function of each mode of W_{E_t}.

    With ``d_tau`` the time change comes from path inversion on that
    operational grid; otherwise from the exact marginal of E_t.
    """
    rng = as_generator(rng)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if d_tau is None:
        e = np.atleast_1d(sample_inverse_marginal(beta, t, rng, size=int(mc)))
    else:
        _, inv = simulate_inverse_path(beta, np.array([0.0, t]), d_tau, rng, n_paths=int(mc))
        e = inv.values[:, -1]
    coord = np.sqrt(basis.lam) * np.sqrt(e)[:, None] * rng.standard_normal((e.size, basis.dim_J))
    c = np.cos(coord[:, :, None] * u)
    oracle = np.stack([mode_characteristic_function(lj, beta, u, t) for lj in basis.lam])
    return CharFunctionReport(u, c.mean(axis=0), c.std(axis=0, ddof=1) / math.sqrt(e.size), oracle, e.size)
