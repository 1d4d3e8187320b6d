"""Classical and time-changed SDEs on the truncated space, duality, mild solutions.

States are H-coordinate vectors with the coordinate axis last inside the
solvers; solution paths are returned with time last, ``values[..., i, m]``,
like every other path in the package.  Noise increments enter through their
K-coordinates sqrt(lambda_j) dw_j.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DivergenceError, HorizonError, ParameterError
from .refinement import ConvergenceStudy, CoupledPaths, coarsen, sample_coupled_paths
from .spectral import QWienerPath, SpectralBasis, TimeChangedQWienerPath

__all__ = [
    "BLOWUP",
    "SDECoefficients",
    "ou_coefficients",
    "Semigroup",
    "SolutionPath",
    "solve_classical_em",
    "solve_timechanged_em",
    "solve_by_duality",
    "DualityReport",
    "duality_check",
    "duality_refinement",
    "solve_mild",
    "mild_strong_refinement",
]

BLOWUP = 1e8


@dataclass(frozen=True)
class SDECoefficients:
    """dX = (A X + F(s, X)) ds + B(s, X) dW.

    ``A`` is an (H, H) matrix.  ``F`` maps ``(s, x)`` with ``x`` of shape
    (..., H) to (..., H); ``B`` maps ``(s, x)`` to (..., H, J) or is a
    constant (H, J) matrix.  ``F=None`` means no nonlinear drift.
    """

    A: np.ndarray
    B: np.ndarray | Callable
    F: Callable | None = field(default=None, repr=False)
    x0: np.ndarray | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.ndim != 2 or A.shape[0] != A.shape[1] or not np.all(np.isfinite(A)):
            raise ParameterError("A must be a finite square matrix")
        object.__setattr__(self, "A", A)
        if not callable(self.B):
            B = np.atleast_2d(np.asarray(self.B, dtype=float))
            if B.shape[0] != A.shape[0]:
                raise ParameterError("B must have as many rows as A")
            object.__setattr__(self, "B", B)
        x0 = np.zeros(A.shape[0]) if self.x0 is None else np.asarray(self.x0, dtype=float)
        if x0.shape[-1] != A.shape[0]:
            raise ParameterError("x0 must have H coordinates in its last axis")
        object.__setattr__(self, "x0", x0)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return bool(np.all(self.A == np.diag(np.diag(self.A))))

    def drift(self, s, x) -> np.ndarray:
        out = x @ self.A.T
        if self.F is not None:
            out = out + self.F(s, x)
        return out

    def diffusion(self, s, x) -> np.ndarray:
        if callable(self.B):
            return np.asarray(self.B(s, x), dtype=float)
        return self.B


def ou_coefficients(basis: SpectralBasis, x0=None) -> SDECoefficients:
    """Diagonal OU problem A = -diag(mu), F = 0, B = I on K-coordinates.

    Mode j is then driven by sqrt(lambda_j) dw_j and has classical
    stationary variance lambda_j / (2 mu_j).
    """
    if basis.mu is None:
        raise ParameterError("the OU problem needs generator eigenvalues mu")
    return SDECoefficients(-np.diag(basis.mu), np.eye(basis.dim_J), None, x0)


@dataclass(frozen=True)
class Semigroup:
    """S(t) = diag(exp(-mu_j t))."""

    mu: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        if not np.all(np.isfinite(mu)):
            raise ParameterError("generator eigenvalues must be finite")
        object.__setattr__(self, "mu", mu)

    @property
    def is_contraction(self) -> bool:
        return bool(np.all(self.mu >= 0))

    def factor(self, t) -> np.ndarray:
        """Diagonal of S(t); ``t`` may be an array (result has a trailing mode axis)."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ParameterError("semigroup time must be non-negative")
        return np.exp(-np.multiply.outer(t, self.mu))

    def matrix(self, t) -> np.ndarray:
        return np.diag(self.factor(float(t)))

    def apply(self, t, x) -> np.ndarray:
        return self.factor(t) * np.asarray(x, dtype=float)


@dataclass(frozen=True)
class SolutionPath:
    t_grid: np.ndarray
    values: np.ndarray

    @property
    def norm(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values**2, axis=-2))


def _start(coeffs, lead):
    return np.broadcast_to(coeffs.x0, lead + (coeffs.dim,)).astype(float).copy()


def _check_blowup(x, where):
    big = np.sqrt(np.sum(x**2, axis=-1))
    if not np.all(np.isfinite(big)) or np.any(big > BLOWUP):
        worst = float(np.nanmax(np.where(np.isfinite(big), big, np.inf)))
        raise DivergenceError(
            f"solution norm {worst:.3e} exceeds {BLOWUP:.0e} at {where}; "
            "check the coefficients and step size"
        )


def _noise_step(B, dwk_m):
    """B (..., H, J) or (H, J) applied to K-increments (..., J)."""
    return np.einsum("...hj,...j->...h", B, dwk_m)


def solve_classical_em(coeffs: SDECoefficients, qpath: QWienerPath, stride=1, n_steps=None) -> SolutionPath:
    """Euler-Maruyama on the operational grid of ``qpath``.

    ``stride`` coarsens the grid by keeping every ``stride``-th node;
    ``n_steps`` stops after that many (coarse) steps.
    """
    if int(stride) != stride or stride < 1:
        raise ParameterError("stride must be a positive integer")
    tau = qpath.tau_grid[:: int(stride)]
    w = qpath.w[..., :: int(stride)]
    if n_steps is not None:
        tau = tau[: n_steps + 1]
        w = w[..., : n_steps + 1]
    dwk = qpath.basis.sqrt_lam[:, None] * np.diff(w, axis=-1)
    dt = np.diff(tau)
    lead = w.shape[:-2]
    y = np.empty(lead + (tau.size, coeffs.dim))
    y[..., 0, :] = _start(coeffs, lead)
    for k in range(dt.size):
        yk = y[..., k, :]
        step = coeffs.drift(tau[k], yk) * dt[k] + _noise_step(coeffs.diffusion(tau[k], yk), dwk[..., k])
        y[..., k + 1, :] = yk + step
        _check_blowup(y[..., k + 1, :], f"tau={tau[k + 1]:.6g}")
    return SolutionPath(tau, np.swapaxes(y, -1, -2))


def solve_timechanged_em(coeffs: SDECoefficients, tc_path: TimeChangedQWienerPath, drift_clock="E") -> SolutionPath:
    """Euler-Maruyama driven by the time-changed noise on the physical grid.

    With ``drift_clock="E"`` (the time-changed equation) the drift is
    integrated against dE and coefficients are evaluated at E(t_m); over
    steps where E does not move the state is carried over unchanged.  With
    ``drift_clock="t"`` the drift is integrated against dt with
    coefficients at t_m, which is the strong form of the semigroup-driven
    mild equation.
    """
    if drift_clock not in ("E", "t"):
        raise ParameterError("drift_clock must be 'E' or 't'")
    t = tc_path.t_grid
    e = tc_path.inverse.values
    de = np.diff(e, axis=-1)
    dt = np.diff(t)
    dwk = tc_path.basis.sqrt_lam[:, None] * tc_path.dw
    lead = e.shape[:-1]
    x = np.empty(lead + (t.size, coeffs.dim))
    x[..., 0, :] = _start(coeffs, lead)
    flat = de == 0.0
    for m in range(dt.size):
        xm = x[..., m, :]
        if drift_clock == "E":
            s = e[..., m, None]
            step = coeffs.drift(s, xm) * de[..., m, None] + _noise_step(coeffs.diffusion(s, xm), dwk[..., m])
            x[..., m + 1, :] = np.where(flat[..., m, None], xm, xm + step)
        else:
            step = coeffs.drift(t[m], xm) * dt[m] + _noise_step(coeffs.diffusion(t[m], xm), dwk[..., m])
            x[..., m + 1, :] = xm + step
        _check_blowup(x[..., m + 1, :], f"t={t[m + 1]:.6g}")
    return SolutionPath(t, np.swapaxes(x, -1, -2))


def _compose(y: SolutionPath, tau_index, t_grid) -> SolutionPath:
    if np.max(tau_index) >= y.t_grid.size:
        raise HorizonError(
            "the classical solution does not reach max E_T; simulate a longer operational time"
        )
    idx = np.broadcast_to(tau_index[..., None, :], y.values.shape[:-1] + (tau_index.shape[-1],))
    return SolutionPath(t_grid, np.take_along_axis(y.values, idx, axis=-1))


def solve_by_duality(coeffs: SDECoefficients, qpath: QWienerPath, inverse) -> SolutionPath:
    """Solve classically on the operational clock and read the solution at E_t.

    The classical run stops at the largest operational node any path needs.
    Coefficients are evaluated on the operational clock, so F(s, .) and
    B(s, .) receive s = tau.
    """
    n = int(np.max(inverse.tau_index))
    if n >= qpath.tau_grid.size:
        raise HorizonError("Q-Wiener path does not reach max E_T; simulate a longer operational time")
    y = solve_classical_em(coeffs, qpath, n_steps=max(n, 1))
    return _compose(y, inverse.tau_index, inverse.t_grid)


@dataclass(frozen=True)
class DualityReport:
    x: SolutionPath
    y_at_e: SolutionPath

    @property
    def gap(self) -> np.ndarray:
        """sup_t ||X(t) - Y(E_t)||_H per replication."""
        d = self.x.values - self.y_at_e.values
        return np.max(np.sqrt(np.sum(d**2, axis=-2)), axis=-1)

    @property
    def max_gap(self) -> float:
        return float(np.max(self.gap))


def duality_check(coeffs: SDECoefficients, paths: CoupledPaths) -> DualityReport:
    """Compare the time-changed EM solution with the classical one composed with E."""
    x = solve_timechanged_em(coeffs, paths.tc)
    y = solve_by_duality(coeffs, paths.qwiener, paths.inverse)
    return DualityReport(x, y)


def duality_refinement(
    coeffs, beta, basis, rng, t_max=1.0, steps=2**10, tau_ratio=4, levels=5, n_paths=400
) -> ConvergenceStudy:
    """Mean sup-gap of the duality check under coupled dyadic refinement."""
    paths = sample_coupled_paths(beta, basis, t_max, steps, t_max / (steps * tau_ratio), rng, n_paths)
    rows = []
    for level in reversed(range(levels)):
        g = duality_check(coeffs, coarsen(paths, 2**level)).gap
        rows.append((steps // 2**level, float(np.mean(g)), float(np.std(g, ddof=1) / np.sqrt(g.size))))
    s, r, e = (np.array(c) for c in zip(*rows))
    return ConvergenceStudy(s, r, e)


def solve_mild(semigroup: Semigroup, B, tc_path: TimeChangedQWienerPath, u0) -> SolutionPath:
    """Left-point stochastic convolution u(t) = S(t)u0 + sum S(t - t_m) B(t_m, u_m) dW_E.

    Computed by the recursion u_{m+1} = S(dt)(u_m + B(t_m, u_m) dW_{E,m}),
    which is algebraically the same sum.  ``B`` is a constant (H, J) matrix
    or a rule ``(t, u)``.
    """
    if not semigroup.is_contraction:
        warnings.warn("semigroup is not a contraction (some mu_j < 0)", RuntimeWarning, stacklevel=2)
    t = tc_path.t_grid
    dt = np.diff(t)
    dwk = tc_path.basis.sqrt_lam[:, None] * tc_path.dw
    lead = tc_path.inverse.values.shape[:-1]
    H = semigroup.mu.size
    u = np.empty(lead + (t.size, H))
    u[..., 0, :] = np.broadcast_to(np.asarray(u0, dtype=float), lead + (H,))
    for m in range(dt.size):
        um = u[..., m, :]
        b = B(t[m], um) if callable(B) else np.asarray(B, dtype=float)
        u[..., m + 1, :] = semigroup.factor(dt[m]) * (um + _noise_step(b, dwk[..., m]))
        _check_blowup(u[..., m + 1, :], f"t={t[m + 1]:.6g}")
    return SolutionPath(t, np.swapaxes(u, -1, -2))


def mild_strong_refinement(
    semigroup, B, beta, basis, rng, u0=None, t_max=1.0, steps=2**10, tau_ratio=4, levels=5, n_paths=200
) -> ConvergenceStudy:
    """RMS sup-gap between the mild recursion and EM with A = -diag(mu), drift on dt."""
    paths = sample_coupled_paths(beta, basis, t_max, steps, t_max / (steps * tau_ratio), rng, n_paths)
    H = semigroup.mu.size
    u0 = np.zeros(H) if u0 is None else np.asarray(u0, dtype=float)
    coeffs = SDECoefficients(-np.diag(semigroup.mu), B if callable(B) else np.asarray(B, dtype=float), None, u0)
    rows = []
    for level in reversed(range(levels)):
        p = coarsen(paths, 2**level)
        mild = solve_mild(semigroup, B, p.tc, u0)
        strong = solve_timechanged_em(coeffs, p.tc, drift_clock="t")
        d = mild.values - strong.values
        g = np.max(np.sqrt(np.sum(d**2, axis=-2)), axis=-1)
        rms = float(np.sqrt(np.mean(g**2)))
        se = float(np.std(g**2, ddof=1) / np.sqrt(g.size) / (2 * rms)) if rms > 0 else 0.0
        rows.append((steps // 2**level, rms, se))
    s, r, e = (np.array(c) for c in zip(*rows))
    return ConvergenceStudy(s, r, e)
