"""Stochastic integrals against time-changed Q-Wiener processes.

The pairing d<W_{E_s}, lambda_j^{1/2} f_j>_{K_Q} equals dw_j(E_s), so with an
integrand Phi (a matrix on K-coordinates) the integral over one grid step is

    Phi(t_m) @ (sqrt(lambda) * (w(E_{t_{m+1}}) - w(E_{t_m}))).

All sums are left-point (Ito).  Integrands only ever see values at the left
end of each step, which is how adaptedness is enforced.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ParameterError
from .refinement import ConvergenceStudy, coarsen, sample_coupled_paths
from .rng import as_generator
from .spectral import (
    QWienerPath,
    SpectralBasis,
    TimeChangedQWienerPath,
    compose_time_change,
    hs_norm_sq,
    simulate_tc_qwiener,
)
from .subordinator import InversePath, SubordinatorPath, simulate_inverse_path

__all__ = [
    "HSIntegrand",
    "IntegralPath",
    "constant_integrand",
    "elementary_integrand",
    "time_integrand",
    "functional_integrand",
    "random_elementary_integrand",
    "integrate_tc",
    "IsometryReport",
    "ito_isometry_report",
    "CovReport",
    "change_of_variable_1",
    "change_of_variable_2",
    "change_of_variable_refinement",
    "QuadraticFunctional",
    "norm_sq_functional",
    "coordinate_poly_functional",
    "ito_formula_residual",
    "ito_formula_refinement",
]

_ON_GRID_RTOL = 1e-9


@dataclass(frozen=True)
class HSIntegrand:
    """Operator-valued integrand K -> H in eigencoordinates.

    kind
        ``"elementary"``: ``values[i]`` on ``(breakpoints[i], breakpoints[i+1]]``,
        zero outside.  ``values`` may carry leading replication axes when the
        operators are random but fixed before ``breakpoints[i]``.
        ``"time"``: deterministic ``rule(s) -> matrix`` evaluated at
        arbitrary (physical or operational) times.
        ``"functional"``: ``rule(t, e, x) -> matrix`` where, for every step,
        ``t`` is the left grid time, ``e`` the value of E there and ``x`` the
        state there (time axis before the coordinate axis).
    """

    kind: str
    shape: tuple
    breakpoints: np.ndarray | None = None
    values: np.ndarray | None = field(default=None, repr=False)
    rule: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("elementary", "time", "functional"):
            raise ParameterError(f"unknown integrand kind {self.kind!r}")
        if self.kind == "elementary":
            bp = np.asarray(self.breakpoints, dtype=float)
            vals = np.asarray(self.values, dtype=float)
            if bp.ndim != 1 or bp.size < 2 or bp[0] < 0 or np.any(np.diff(bp) <= 0):
                raise ParameterError("breakpoints must be increasing, non-negative, at least two")
            if vals.shape[-3:] != (bp.size - 1,) + tuple(self.shape):
                raise ParameterError("values must have shape (..., n_steps, H, J)")
            if not np.all(np.isfinite(vals)):
                raise ParameterError("integrand operators must be finite")
            object.__setattr__(self, "breakpoints", bp)
            object.__setattr__(self, "values", vals)
        elif self.rule is None:
            raise ParameterError(f"a {self.kind} integrand needs a rule")

    @property
    def time_only(self) -> bool:
        return self.kind in ("elementary", "time")

    def at_times(self, s) -> np.ndarray:
        """Operators at times ``s`` (any shape); only for time-only integrands.

        Returns shape ``s.shape + (H, J)`` (with leading replication axes of
        random elementary values prepended when ``s`` has none).
        """
        s = np.asarray(s, dtype=float)
        if self.kind == "time":
            out = np.asarray(self.rule(s), dtype=float)
            return np.broadcast_to(out, s.shape + tuple(self.shape)) if out.ndim == 2 else out
        if self.kind == "elementary":
            bp = self.breakpoints
            # grid times may sit a rounding error below a breakpoint
            i = np.searchsorted(bp, s + _ON_GRID_RTOL * max(1.0, bp[-1]), side="right") - 1
            inside = (i >= 0) & (i < bp.size - 1)
            ic = np.clip(i, 0, bp.size - 2)
            vals = self.values
            if vals.ndim == 3:
                out = vals[ic]
            else:
                lead = vals.shape[:-3]
                if s.shape[: len(lead)] != lead:
                    raise ParameterError("time array must lead with the replication axes")
                flat_v = vals.reshape((-1,) + vals.shape[-3:])
                flat_i = ic.reshape((flat_v.shape[0], -1))
                out = np.stack([flat_v[r][flat_i[r]] for r in range(flat_v.shape[0])])
                out = out.reshape(s.shape + vals.shape[-2:])
            return np.where(inside[..., None, None], out, 0.0)
        raise ParameterError("state-dependent integrands cannot be evaluated at bare times")

    def on_grid(self, t_grid, e=None, x=None) -> np.ndarray:
        """Left-point operators for each step of ``t_grid``: shape (..., M-1, H, J)."""
        t = np.asarray(t_grid, dtype=float)
        if self.kind == "functional":
            if e is None or x is None:
                raise ParameterError("functional integrands need E and state at the left points")
            out = np.asarray(self.rule(t[:-1], e[..., :-1], x[..., :-1, :]), dtype=float)
            if out.ndim == 2:
                out = np.broadcast_to(out, e[..., :-1].shape + out.shape)
            return out
        if self.kind == "elementary":
            _check_on_grid(self.breakpoints, t)
            if self.values.ndim > 3:
                lead = self.values.shape[:-3]
                return self.at_times(np.broadcast_to(t[:-1], lead + (t.size - 1,)))
        return self.at_times(t[:-1])


def _check_on_grid(points, grid):
    tol = _ON_GRID_RTOL * max(1.0, float(grid[-1]))
    inside = points[points <= grid[-1] + tol]
    j = np.clip(np.searchsorted(grid, inside), 0, grid.size - 1)
    j0 = np.clip(j - 1, 0, grid.size - 1)
    dist = np.minimum(np.abs(grid[j] - inside), np.abs(grid[j0] - inside))
    if np.any(dist > tol):
        raise ParameterError("elementary breakpoints must be nodes of the time grid")


def constant_integrand(matrix) -> HSIntegrand:
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    return HSIntegrand("time", m.shape, rule=lambda s: m)


def elementary_integrand(breakpoints, values) -> HSIntegrand:
    vals = np.asarray(values, dtype=float)
    return HSIntegrand("elementary", vals.shape[-2:], breakpoints=breakpoints, values=vals)


def time_integrand(rule, shape) -> HSIntegrand:
    """Deterministic ``rule(s)`` returning ``s.shape + shape`` (or a fixed matrix)."""
    return HSIntegrand("time", tuple(shape), rule=rule)


def functional_integrand(rule, shape) -> HSIntegrand:
    return HSIntegrand("functional", tuple(shape), rule=rule)


def random_elementary_integrand(dim_J, n_breaks, t_max, rng, steps=None) -> HSIntegrand:
    """Deterministic operators with Gaussian entries on random breakpoints.

    With ``steps`` the breakpoints are nodes of the uniform grid with that
    many steps on ``[0, t_max]``.
    """
    rng = as_generator(rng)
    if steps is None:
        inner = np.sort(rng.uniform(0.0, t_max, n_breaks - 2))
    else:
        inner = np.sort(rng.choice(np.arange(1, steps), n_breaks - 2, replace=False)) * (t_max / steps)
    bp = np.concatenate([[0.0], inner, [float(t_max)]])
    vals = rng.standard_normal((n_breaks - 1, dim_J, dim_J))
    return elementary_integrand(bp, vals)


# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class IntegralPath:
    """H-coordinates ``values[..., i, m]`` of the integral at ``t_grid[m]``."""

    t_grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape[-1] != np.asarray(self.t_grid).size:
            raise ParameterError("values and t_grid lengths differ")
        if np.any(vals[..., 0] != 0.0):
            raise ParameterError("an integral path starts at zero")
        object.__setattr__(self, "values", vals)


def _cumulate(step_values) -> np.ndarray:
    """(..., H, M-1) increments -> (..., H, M) running sums from zero."""
    zero = np.zeros(step_values.shape[:-1] + (1,))
    return np.concatenate([zero, np.cumsum(step_values, axis=-1)], axis=-1)


def _apply(ops, sqrt_lam, dw) -> np.ndarray:
    """Per-step ops (..., M-1, H, J) applied to sqrt(lam)*dw (..., J, M-1) -> (..., H, M-1)."""
    return np.einsum("...mhj,...jm->...hm", ops, sqrt_lam[:, None] * dw)


def integrate_tc(phi: HSIntegrand, path: TimeChangedQWienerPath, state=None) -> IntegralPath:
    """Left-point integral of ``phi`` against the time-changed Q-Wiener path.

    Parameters
    ----------
    phi : HSIntegrand
    path : TimeChangedQWienerPath
    state : ndarray, optional
        State fed to functional integrands, shape (..., H, M).  Defaults to
        the K-coordinates of W_E itself.
    """
    if phi.shape[-1] != path.basis.dim_J:
        raise ParameterError("integrand column count must equal dim_J")
    if phi.kind == "elementary" and phi.breakpoints[0] > path.t_grid[-1]:
        raise ParameterError("integrand starts after the path horizon")
    x = path.values if state is None else np.asarray(state, dtype=float)
    ops = phi.on_grid(path.t_grid, path.inverse.values, np.swapaxes(x, -1, -2))
    if not np.all(np.isfinite(ops)):
        raise ParameterError("integrand produced non-finite operators")
    return IntegralPath(path.t_grid, _cumulate(_apply(ops, path.basis.sqrt_lam, path.dw)))


# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class IsometryReport:
    """``lhs`` = mean ||I_T||^2, ``rhs`` = mean sum ||Phi||^2 dE on the same paths.

    ``se`` is the standard error of the paired difference; ``lhs_se`` and
    ``rhs_se`` are the marginal standard errors.
    """

    lhs: float
    rhs: float
    se: float
    lhs_se: float
    rhs_se: float
    n_paths: int

    @property
    def z(self) -> float:
        return abs(self.lhs - self.rhs) / self.se if self.se > 0 else (0.0 if self.lhs == self.rhs else np.inf)


def ito_isometry_report(phi: HSIntegrand, beta, basis: SpectralBasis, mc, t_grid, d_tau=1e-2, rng=None, block=5000):
    """Monte Carlo check of the time-changed Ito isometry on ``t_grid``.

    Each replication draws an inverse path and W_E given E; the squared
    norm of the integral at ``t_grid[-1]`` and the dE-integral of the
    Hilbert-Schmidt norm are computed on that same replication.
    """
    rng = as_generator(rng)
    if int(mc) != mc or mc < 2:
        raise ParameterError(f"mc must be an integer >= 2, got {mc}")
    t = np.asarray(t_grid, dtype=float)
    lhs, rhs = [], []
    done = 0
    while done < mc:
        n = min(block, int(mc) - done)
        _, inv = simulate_inverse_path(beta, t, d_tau, rng, n_paths=n)
        tc = simulate_tc_qwiener(basis, inv, rng)
        lhs_i, rhs_i = _isometry_terms(phi, tc)
        lhs.append(lhs_i)
        rhs.append(rhs_i)
        done += n
    return _isometry_summary(np.concatenate(lhs), np.concatenate(rhs))


def _isometry_terms(phi, tc):
    integral = integrate_tc(phi, tc)
    lhs = np.sum(integral.values[..., -1] ** 2, axis=-1)
    ops = phi.on_grid(tc.t_grid, tc.inverse.values, np.swapaxes(tc.values, -1, -2))
    rhs = np.sum(hs_norm_sq(ops, tc.basis) * tc.inverse.increments, axis=-1)
    return lhs, rhs


def _isometry_summary(lhs, rhs) -> IsometryReport:
    n = lhs.size
    root_n = np.sqrt(n)
    return IsometryReport(
        lhs=float(np.mean(lhs)),
        rhs=float(np.mean(rhs)),
        se=float(np.std(lhs - rhs, ddof=1) / root_n),
        lhs_se=float(np.std(lhs, ddof=1) / root_n),
        rhs_se=float(np.std(rhs, ddof=1) / root_n),
        n_paths=n,
    )


# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CovReport:
    left: IntegralPath
    right: IntegralPath

    @property
    def gap(self) -> np.ndarray:
        """sup over the grid of ||left - right||_H, per replication."""
        diff = self.left.values - self.right.values
        return np.max(np.sqrt(np.sum(diff**2, axis=-2)), axis=-1)

    @property
    def max_gap(self) -> float:
        return float(np.max(self.gap))


def _classical_running(ops, qpath: QWienerPath) -> np.ndarray:
    """Running left-point integral on the operational grid: (..., H, K)."""
    return _cumulate(_apply(ops, qpath.basis.sqrt_lam, np.diff(qpath.w, axis=-1)))


def _read_at(running, tau_index) -> np.ndarray:
    idx = np.broadcast_to(tau_index[..., None, :], running.shape[:-1] + (tau_index.shape[-1],))
    return np.take_along_axis(running, idx, axis=-1)


def _require_time_only(phi):
    if not phi.time_only:
        raise ParameterError("change-of-variable formulas need an integrand depending on time only")


def _check_shared(qpath, inverse):
    tau = inverse.tau_grid
    if tau.size > qpath.tau_grid.size or not np.array_equal(tau, qpath.tau_grid[: tau.size]):
        raise ParameterError("inverse path and Q-Wiener path must share the operational grid")


def change_of_variable_1(phi: HSIntegrand, qpath: QWienerPath, inverse: InversePath) -> CovReport:
    """left = int_0^{E_t} Phi(s) dW_s, right = int_0^t Phi(E_s) dW_{E_s}."""
    _require_time_only(phi)
    _check_shared(qpath, inverse)
    tau = qpath.tau_grid
    lead = qpath.w.shape[:-2]
    ops_tau = phi.at_times(tau[:-1])
    if ops_tau.ndim == 3 and lead:
        ops_tau = np.broadcast_to(ops_tau, lead + ops_tau.shape)
    left = _read_at(_classical_running(ops_tau, qpath), inverse.tau_index)
    tc = compose_time_change(qpath, inverse)
    ops_e = phi.at_times(inverse.values[..., :-1])
    right = _cumulate(_apply(ops_e, qpath.basis.sqrt_lam, tc.dw))
    return CovReport(IntegralPath(inverse.t_grid, left), IntegralPath(inverse.t_grid, right))


def change_of_variable_2(
    phi: HSIntegrand, qpath: QWienerPath, subordinator: SubordinatorPath, inverse: InversePath
) -> CovReport:
    """left = int_0^t Phi(s) dW_{E_s}, right = int_0^{E_t} Phi(U_{s-}) dW_s.

    On a step (tau_k, tau_{k+1}] the left limit U_{s-} is U(tau_k).
    """
    _require_time_only(phi)
    _check_shared(qpath, inverse)
    tc = compose_time_change(qpath, inverse)
    left = integrate_tc(phi, tc).values
    n = qpath.tau_grid.size
    u_left = subordinator.left_limits()[..., : n - 1]
    if u_left.shape[-1] != n - 1:
        raise ParameterError("subordinator skeleton is shorter than the Q-Wiener grid")
    right = _read_at(_classical_running(phi.at_times(u_left), qpath), inverse.tau_index)
    return CovReport(IntegralPath(inverse.t_grid, left), IntegralPath(inverse.t_grid, right))


def change_of_variable_refinement(
    which, phi, beta, basis, rng, t_max=1.0, steps=2**12, tau_ratio=4, levels=6, n_paths=400
) -> ConvergenceStudy:
    """Root-mean-square sup-gap of a change-of-variable formula under refinement.

    The finest level has ``steps`` physical steps and an operational step
    ``t_max / (steps * tau_ratio)``; coarser levels subsample both grids.
    """
    if which not in (1, 2):
        raise ParameterError("which must be 1 or 2")
    paths = sample_coupled_paths(beta, basis, t_max, steps, t_max / (steps * tau_ratio), rng, n_paths)
    rows = []
    for level in reversed(range(levels)):
        p = coarsen(paths, 2**level)
        rep = (
            change_of_variable_1(phi, p.qwiener, p.inverse)
            if which == 1
            else change_of_variable_2(phi, p.qwiener, p.subordinator, p.inverse)
        )
        g = rep.gap
        rms = float(np.sqrt(np.mean(g**2)))
        se = float(np.std(g**2, ddof=1) / np.sqrt(g.size) / (2 * rms)) if rms > 0 else 0.0
        rows.append((steps // 2**level, rms, se))
    s, r, e = (np.array(c) for c in zip(*rows))
    return ConvergenceStudy(s, r, e)


# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class QuadraticFunctional:
    """F(x) = c + a.x + x^T B x / 2 with B symmetric (so F_xx = B)."""

    a: np.ndarray
    B: np.ndarray
    c: float = 0.0
    name: str = "coordinate_poly"

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if B.shape != (a.size, a.size) or not np.allclose(B, B.T):
            raise ParameterError("B must be a symmetric matrix matching a")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "B", B)

    def value(self, x) -> np.ndarray:
        return self.c + x @ self.a + 0.5 * np.einsum("...i,ij,...j->...", x, self.B, x)

    def grad(self, x) -> np.ndarray:
        return self.a + x @ self.B


def norm_sq_functional(dim) -> QuadraticFunctional:
    return QuadraticFunctional(np.zeros(dim), 2.0 * np.eye(dim), 0.0, "norm_sq")


def coordinate_poly_functional(a, B=None, c=0.0) -> QuadraticFunctional:
    a = np.asarray(a, dtype=float)
    B = np.zeros((a.size, a.size)) if B is None else B
    return QuadraticFunctional(a, B, c)


def _vector_rule(rule, t, e, x):
    if rule is None:
        return np.zeros_like(x)
    if callable(rule):
        return np.broadcast_to(np.asarray(rule(t, e, x), dtype=float), x.shape)
    return np.broadcast_to(np.asarray(rule, dtype=float), x.shape)


def ito_formula_residual(F, path: TimeChangedQWienerPath, psi=None, gamma=None, phi=None, x0=None) -> np.ndarray:
    """Pathwise residual of the time-changed Ito formula.

    The process is X = x0 + int psi dt + int gamma dE + int phi dW_E, built
    by left-point sums on the path grid; ``psi`` and ``gamma`` are H-vectors
    or rules ``(t, e, x)``, ``phi`` an HSIntegrand (functional rules see X).
    The residual at t_m is F(X_m) - F(X_0) minus the ds, dE, dW_E and trace
    integrals, each as a left-point sum.  The dE-integrals are
    Lebesgue-Stieltjes sums against the realized inverse path.

    Returns
    -------
    ndarray
        Residual path, shape (..., M).
    """
    if not isinstance(F, QuadraticFunctional):
        raise ParameterError("F must be a built-in functional (norm_sq or coordinate_poly)")
    H = F.a.size
    t = path.t_grid
    e = path.inverse.values
    lead = e.shape[:-1]
    M = t.size
    dt = np.diff(t)
    de = np.diff(e, axis=-1)
    sl = path.basis.sqrt_lam
    dwk = sl[:, None] * path.dw
    x = np.empty(lead + (M, H))
    x[..., 0, :] = 0.0 if x0 is None else x0
    drift_t = np.empty(lead + (M - 1,))
    drift_e = np.empty(lead + (M - 1,))
    mart = np.empty(lead + (M - 1,))
    trace = np.empty(lead + (M - 1,))
    ops_all = None if phi is None or phi.kind == "functional" else phi.on_grid(t)
    for m in range(M - 1):
        xm = x[..., m, :]
        em = e[..., m]
        gm = F.grad(xm)
        p = _vector_rule(psi, t[m], em, xm)
        g = _vector_rule(gamma, t[m], em, xm)
        if phi is None:
            dx_noise = np.zeros_like(xm)
            tr = np.zeros(lead)
        else:
            if ops_all is None:
                op = np.asarray(phi.rule(t[m], em, xm), dtype=float)
            else:
                op = ops_all[..., m, :, :]
            op = np.broadcast_to(op, lead + (H, sl.size))
            dx_noise = np.einsum("...hj,...j->...h", op, dwk[..., :, m])
            # tr(F_xx Phi Q Phi^*)
            tr = np.einsum("hk,...kj,...hj->...", F.B, op * path.basis.lam, op)
        x[..., m + 1, :] = xm + p * dt[m] + g[..., :] * de[..., m, None] + dx_noise
        drift_t[..., m] = np.sum(gm * p, axis=-1) * dt[m]
        drift_e[..., m] = np.sum(gm * g, axis=-1) * de[..., m]
        mart[..., m] = np.sum(gm * dx_noise, axis=-1)
        trace[..., m] = 0.5 * tr * de[..., m]
    fx = F.value(x)
    rhs = _cumulate_scalar(drift_t + drift_e + mart + trace)
    return fx - fx[..., :1] - rhs


def _cumulate_scalar(v) -> np.ndarray:
    return np.concatenate([np.zeros(v.shape[:-1] + (1,)), np.cumsum(v, axis=-1)], axis=-1)


def ito_formula_refinement(
    F, beta, basis, rng, psi=None, gamma=None, phi=None, t_max=1.0, steps=2**10, tau_ratio=4, levels=5, n_paths=200
) -> ConvergenceStudy:
    """RMS over paths of the terminal Ito-formula residual under refinement."""
    paths = sample_coupled_paths(beta, basis, t_max, steps, t_max / (steps * tau_ratio), rng, n_paths)
    rows = []
    for level in reversed(range(levels)):
        p = coarsen(paths, 2**level)
        res = ito_formula_residual(F, p.tc, psi, gamma, phi)[..., -1]
        rms = float(np.sqrt(np.mean(res**2)))
        se = float(np.std(res**2, ddof=1) / np.sqrt(res.size) / (2 * rms)) if rms > 0 else 0.0
        rows.append((steps // 2**level, rms, se))
    s, r, e = (np.array(c) for c in zip(*rows))
    return ConvergenceStudy(s, r, e)
