"""Spectral truncation of Q-Wiener processes and their time changes.

Everything lives in the eigenbasis {f_j} of Q.  A Q-Wiener process is held
as its standard Brownian coordinates w_j, so that its K-coordinates are
``sqrt(lambda_j) * w_j``.  An operator K -> H is a matrix acting on
K-coordinates, and

    ||Phi||^2_{L2(K_Q, H)} = sum_ij Phi_ij^2 lambda_j.

Array conventions match :mod:`subdiff.subordinator`: time is the last axis,
the coordinate index j sits just before it, and leading axes are
replications.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import HorizonError, ParameterError, TraceClassError
from .rng import as_generator
from .subordinator import InversePath, _check_grid, simulate_inverse_path

__all__ = [
    "SpectralBasis",
    "make_basis",
    "hs_norm_sq",
    "QWienerPath",
    "TimeChangedQWienerPath",
    "simulate_qwiener",
    "compose_time_change",
    "simulate_tc_qwiener",
    "realized_quadratic_variation",
    "FourthMomentReport",
    "increment_fourth_moment_check",
    "write_path_csv",
]


@dataclass(frozen=True)
class SpectralBasis:
    """Eigenvalues of Q (and optionally of -A) on a truncation of size J.

    ``tail`` is the eigenvalue mass beyond J under the intended infinite
    rule (0 for an explicit finite list).
    """

    lam: np.ndarray
    mu: np.ndarray | None = None
    tail: float = 0.0
    rule: str = "explicit"

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        if lam.ndim != 1 or lam.size < 1:
            raise ParameterError("need at least one eigenvalue")
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise TraceClassError("eigenvalues of Q must be positive and finite")
        object.__setattr__(self, "lam", lam)
        if self.mu is not None:
            mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
            if mu.shape != lam.shape or not np.all(np.isfinite(mu)):
                raise ParameterError("generator eigenvalues must match lam in length")
            object.__setattr__(self, "mu", mu)

    @property
    def dim_J(self) -> int:
        return self.lam.size

    @property
    def trace(self) -> float:
        return float(np.sum(self.lam))

    @property
    def trace_sq(self) -> float:
        """tr(Q^2)."""
        return float(np.sum(self.lam**2))

    @property
    def sqrt_lam(self) -> np.ndarray:
        return np.sqrt(self.lam)


def make_basis(dim_J=None, power=None, eigenvalues=None, mu=None) -> SpectralBasis:
    """Build a basis from the power rule lambda_j = j^(-p) or an explicit list.

    Parameters
    ----------
    dim_J : int, optional
        Truncation level; required for the power rule.
    power : float, optional
        Exponent p > 1.
    eigenvalues : sequence of float, optional
        Explicit positive eigenvalues; fixes ``dim_J``.
    mu : float or sequence of float, optional
        Eigenvalues of -A for diagonal test problems.
    """
    if (power is None) == (eigenvalues is None):
        raise ParameterError("give exactly one of power or eigenvalues")
    if power is not None:
        power = float(power)
        if not power > 1.0:
            raise TraceClassError(f"lambda_j = j^-p is not summable for p = {power} <= 1")
        if dim_J is None or int(dim_J) != dim_J or dim_J < 1:
            raise ParameterError(f"dim_J must be a positive integer, got {dim_J}")
        j = np.arange(1, int(dim_J) + 1, dtype=float)
        lam = j**-power
        tail = float(special.zeta(power, int(dim_J) + 1))
        rule = f"power:{power:g}"
    else:
        lam = np.atleast_1d(np.asarray(eigenvalues, dtype=float))
        if dim_J is not None and dim_J != lam.size:
            raise ParameterError("dim_J disagrees with the number of eigenvalues")
        tail = 0.0
        rule = "explicit"
    if mu is not None:
        mu = np.broadcast_to(np.asarray(mu, dtype=float), lam.shape).copy()
    return SpectralBasis(lam, mu, tail, rule)


def hs_norm_sq(phi, basis: SpectralBasis) -> np.ndarray:
    """||Phi||^2_{L2(K_Q,H)} for matrices ``phi[..., i, j]`` (H index i, K index j)."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape[-1] != basis.dim_J:
        raise ParameterError("operator column count must equal dim_J")
    return np.sum(phi**2 * basis.lam, axis=(-2, -1))


# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class QWienerPath:
    """Brownian coordinates ``w[..., j, k] = w_j(tau_grid[k])``."""

    tau_grid: np.ndarray
    w: np.ndarray
    basis: SpectralBasis

    def __post_init__(self):
        tau = _check_grid(self.tau_grid, "tau_grid")
        w = np.asarray(self.w, dtype=float)
        if w.ndim < 2 or w.shape[-2:] != (self.basis.dim_J, tau.size):
            raise ParameterError("w must have shape (..., dim_J, len(tau_grid))")
        object.__setattr__(self, "tau_grid", tau)
        object.__setattr__(self, "w", w)

    @property
    def values(self) -> np.ndarray:
        """K-coordinates sqrt(lambda_j) w_j."""
        return self.basis.sqrt_lam[:, None] * self.w


@dataclass(frozen=True)
class TimeChangedQWienerPath:
    """Coordinates ``w_at_E[..., j, m] = w_j(E(t_m))``."""

    t_grid: np.ndarray
    inverse: InversePath = field(repr=False)
    w_at_E: np.ndarray = field(repr=False)
    basis: SpectralBasis

    def __post_init__(self):
        w = np.asarray(self.w_at_E, dtype=float)
        lead = self.inverse.values.shape[:-1]
        if w.shape != lead + (self.basis.dim_J, self.t_grid.size):
            raise ParameterError("w_at_E must have shape inverse-leading + (dim_J, len(t_grid))")
        object.__setattr__(self, "w_at_E", w)

    @property
    def values(self) -> np.ndarray:
        """K-coordinates of W_{E_t}."""
        return self.basis.sqrt_lam[:, None] * self.w_at_E

    @property
    def dw(self) -> np.ndarray:
        """Coordinate increments w_j(E_{t_{m+1}}) - w_j(E_{t_m})."""
        return np.diff(self.w_at_E, axis=-1)


def simulate_qwiener(basis: SpectralBasis, tau_grid, rng=None, n_paths=None) -> QWienerPath:
    """Independent standard Brownian coordinates on ``tau_grid`` (w(tau_0) = 0)."""
    rng = as_generator(rng)
    tau = _check_grid(tau_grid, "tau_grid")
    if tau[0] != 0.0:
        raise ParameterError("tau_grid must start at 0")
    lead = () if n_paths is None else (int(n_paths),)
    z = rng.standard_normal(lead + (basis.dim_J, tau.size - 1))
    inc = np.sqrt(np.diff(tau)) * z
    w = np.concatenate([np.zeros(lead + (basis.dim_J, 1)), np.cumsum(inc, axis=-1)], axis=-1)
    return QWienerPath(tau, w, basis)


def _bridge_row(tau, w_row, e_row, rng):
    """Brownian-bridge fill of w at the times e_row (nondecreasing)."""
    out = np.empty((w_row.shape[0], e_row.size))
    k = np.searchsorted(tau, e_row, side="right") - 1
    k = np.clip(k, 0, tau.size - 1)
    last_s, last_w, last_k = None, None, -1
    for m, (e, km) in enumerate(zip(e_row, k)):
        if tau[km] == e:
            cur = w_row[:, km]
        elif last_s is not None and e == last_s:
            cur = last_w
        else:
            if km != last_k or last_s is None:
                s0, w0 = tau[km], w_row[:, km]
            else:
                s0, w0 = last_s, last_w
            s1, w1 = tau[km + 1], w_row[:, km + 1]
            frac = (e - s0) / (s1 - s0)
            sd = np.sqrt((e - s0) * (s1 - e) / (s1 - s0))
            cur = w0 + frac * (w1 - w0) + sd * rng.standard_normal(w_row.shape[0])
        out[:, m] = cur
        last_s, last_w, last_k = e, cur, km
    return out


def compose_time_change(qpath: QWienerPath, inverse: InversePath, bridge=False, rng=None):
    """Read the coordinates of ``qpath`` at the times ``inverse.values``.

    When ``inverse`` was inverted on the same operational grid as ``qpath``
    every E(t_m) is a grid node and the lookup is exact.  Otherwise values
    between nodes are linearly interpolated, or, with ``bridge=True``, drawn
    from the Brownian bridge conditional on the neighbouring nodes.

    Raises
    ------
    HorizonError
        If some E(t_m) lies beyond the last node of ``qpath.tau_grid``.
    """
    tau = qpath.tau_grid
    e = inverse.values
    lead_q = qpath.w.shape[:-2]
    lead_e = e.shape[:-1]
    if lead_q != lead_e:
        raise ParameterError(
            f"replication shapes differ: Q-Wiener {lead_q} vs inverse {lead_e}"
        )
    if np.max(e) > tau[-1] * (1 + 1e-12):
        raise HorizonError(
            f"E reaches {float(np.max(e)):.6g} beyond the Q-Wiener horizon {tau[-1]:.6g}"
        )
    J = qpath.basis.dim_J
    w = qpath.w.reshape((-1, J, tau.size))
    e2 = e.reshape((-1, e.shape[-1]))
    same_grid = inverse.tau_grid.size <= tau.size and np.array_equal(
        inverse.tau_grid, tau[: inverse.tau_grid.size]
    )
    if same_grid:
        idx = inverse.tau_index.reshape((-1, 1, e.shape[-1]))
        out = np.take_along_axis(w, np.broadcast_to(idx, (w.shape[0], J, e.shape[-1])), axis=-1)
    elif bridge:
        rng = as_generator(rng)
        out = np.stack([_bridge_row(tau, w[i], e2[i], rng) for i in range(w.shape[0])])
    else:
        out = np.stack(
            [np.stack([np.interp(e2[i], tau, w[i, j]) for j in range(J)]) for i in range(w.shape[0])]
        )
    out = out.reshape(lead_q + (J, e.shape[-1]))
    return TimeChangedQWienerPath(inverse.t_grid, inverse, out, qpath.basis)


def simulate_tc_qwiener(basis: SpectralBasis, inverse: InversePath, rng=None) -> TimeChangedQWienerPath:
    """Sample W_E given E directly: independent N(0, Delta E) coordinate increments.

    This is the exact conditional law of the composed process at the grid
    times and avoids materializing the operational-time path.  Increments
    over flat stretches of E are exactly zero.
    """
    rng = as_generator(rng)
    de = inverse.increments
    lead = de.shape[:-1]
    z = rng.standard_normal(lead + (basis.dim_J, de.shape[-1]))
    inc = np.sqrt(de)[..., None, :] * z
    w = np.concatenate([np.zeros(lead + (basis.dim_J, 1)), np.cumsum(inc, axis=-1)], axis=-1)
    return TimeChangedQWienerPath(inverse.t_grid, inverse, w, basis)


def realized_quadratic_variation(path: TimeChangedQWienerPath, per_coordinate=False) -> np.ndarray:
    """Running sum of ||Delta W_E||_K^2 over the grid, starting at 0.

    With ``per_coordinate`` the j-th row holds the running sum of
    lambda_j (Delta w_j)^2, the diagonal of the operator-valued variation.
    """
    sq = path.basis.lam[:, None] * path.dw**2
    if not per_coordinate:
        sq = np.sum(sq, axis=-2)
    zero = np.zeros(sq.shape[:-1] + (1,))
    return np.concatenate([zero, np.cumsum(sq, axis=-1)], axis=-1)


# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class FourthMomentReport:
    """E||W_{E_t2} - W_{E_t1}||^4 against multiples of E[(E_t2 - E_t1)^2].

    ``rhs`` is 3 (trQ)^2 E[dE^2].  Conditionally on dE the fourth moment is
    ((trQ)^2 + 2 tr(Q^2)) dE^2, so ``rhs_exact`` uses that factor; the two
    coincide for a single mode and ``rhs`` is an upper bound otherwise.
    """

    t_pairs: np.ndarray
    lhs: np.ndarray
    lhs_se: np.ndarray
    rhs: np.ndarray
    rhs_exact: np.ndarray
    rhs_se: np.ndarray
    n_paths: int

    @property
    def rel_gap(self) -> np.ndarray:
        return np.abs(self.lhs - self.rhs) / self.rhs

    @property
    def rel_gap_exact(self) -> np.ndarray:
        return np.abs(self.lhs - self.rhs_exact) / self.rhs_exact


def increment_fourth_moment_check(
    basis: SpectralBasis, beta, t_pairs, mc: int, rng=None, d_tau=1e-2, block=2000
) -> FourthMomentReport:
    """Monte Carlo fourth moment of time-changed Q-Wiener increments.

    Both sides are estimated on the same inverse paths, simulated in blocks
    of ``block`` replications on an operational grid of step ``d_tau``.
    """
    rng = as_generator(rng)
    pairs = np.atleast_2d(np.asarray(t_pairs, dtype=float))
    if pairs.shape[-1] != 2 or np.any(pairs[:, 1] <= pairs[:, 0]) or np.any(pairs < 0):
        raise ParameterError("t_pairs must be rows (t1, t2) with 0 <= t1 < t2")
    if int(mc) != mc or mc < 2:
        raise ParameterError(f"mc must be an integer >= 2, got {mc}")
    times = np.unique(np.concatenate([[0.0], pairs.ravel()]))
    pos = np.searchsorted(times, pairs)
    lhs_s = np.zeros((0, pairs.shape[0]))
    de2_s = np.zeros((0, pairs.shape[0]))
    done = 0
    while done < mc:
        n = min(block, mc - done)
        _, inv = simulate_inverse_path(beta, times, d_tau, rng, n_paths=n)
        de = inv.values[:, pos[:, 1]] - inv.values[:, pos[:, 0]]
        z = rng.standard_normal((n, pairs.shape[0], basis.dim_J))
        norm_sq = de * np.sum(basis.lam * z**2, axis=-1)
        lhs_s = np.concatenate([lhs_s, norm_sq**2])
        de2_s = np.concatenate([de2_s, de**2])
        done += n
    root_n = np.sqrt(mc)
    return FourthMomentReport(
        t_pairs=pairs,
        lhs=lhs_s.mean(axis=0),
        lhs_se=lhs_s.std(axis=0, ddof=1) / root_n,
        rhs=3.0 * basis.trace**2 * de2_s.mean(axis=0),
        rhs_exact=(basis.trace**2 + 2.0 * basis.trace_sq) * de2_s.mean(axis=0),
        rhs_se=3.0 * basis.trace**2 * de2_s.std(axis=0, ddof=1) / root_n,
        n_paths=int(mc),
    )


# ---------------------------------------------------------------------------
def write_path_csv(path: TimeChangedQWienerPath, file, replication=0) -> None:
    """Write one replication as columns t, E_t, w_1..w_J."""
    e = path.inverse.values
    w = path.w_at_E
    if e.ndim > 1:
        e = e.reshape((-1, e.shape[-1]))[replication]
        w = w.reshape((-1,) + w.shape[-2:])[replication]
    header = ["t", "E_t"] + [f"w_{j}" for j in range(1, path.basis.dim_J + 1)]
    with open(file, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for m, t in enumerate(path.t_grid):
            writer.writerow([repr(float(t)), repr(float(e[m]))] + [repr(float(x)) for x in w[:, m]])
