"""Finite-grid model of noise integrals against a time-changed random field.

On a spatial grid x_1..x_P the covariance-kernel space K is R^P with

    <g, psi>_K = g^T G psi,   G_ab = f(x_a - x_b) dx^2.

An orthonormal basis of K is f_k = v_k / sqrt(nu_k) from the eigenpairs
(nu_k, v_k) of G (numerically null directions are dropped).  The field
noise is a family of standard Brownian motions w_k composed with E, and

    cylindrical:      W~_{E_t}(psi) = sum_k <psi, f_k>_K w_k(E_t)
    martingale meas.: M_{E_t}(A)    = W~_{E_t}(1_A)
    Q-Wiener via J:   W_{E_t}       = sum_k w_k(E_t) J f_k,  J f_k = sqrt(lambda_k) f_k.

Elementary integrands g(t, x) = sum_i X_i 1_(a_i, b_i](t) 1_{A_i}(x) are
integrated in all three ways; in finite dimensions the results agree up to
rounding.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import AdaptednessError, KernelError, ParameterError
from .rng import as_generator
from .spectral import make_basis, simulate_tc_qwiener
from .subordinator import InversePath, simulate_inverse_path

__all__ = [
    "SpatialGrid",
    "make_grid",
    "KernelSpace",
    "build_kernel_space",
    "JOperator",
    "build_j_operator",
    "FieldNoise",
    "simulate_field_noise",
    "ElementaryTerm",
    "ElementaryField",
    "random_elementary_field",
    "cylindrical_integral",
    "martingale_measure",
    "martingale_measure_integral",
    "qwiener_integral_via_J",
    "TripleReport",
    "triple_equality_report",
]

_PSD_TOL = 1e-10
_RANK_RTOL = 1e-12


@dataclass(frozen=True)
class SpatialGrid:
    points: np.ndarray
    dx: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] > 2:
            raise ParameterError("points must be an array of shape (P,) or (P, N) with N <= 2")
        if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
            raise ParameterError("grid points must be distinct")
        if not self.dx > 0:
            raise ParameterError("cell weight dx must be positive")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "dx", float(self.dx))

    @property
    def size(self) -> int:
        return self.points.shape[0]


def make_grid(P, length=1.0, start=0.0) -> SpatialGrid:
    """P cell midpoints of a uniform partition of [start, start + length]."""
    if int(P) != P or P < 1:
        raise ParameterError(f"P must be a positive integer, got {P}")
    dx = float(length) / int(P)
    return SpatialGrid(start + dx * (np.arange(int(P)) + 0.5), dx)


def _kernel(name, param):
    if not param > 0:
        raise KernelError(f"kernel parameter must be positive, got {param}")
    if name == "gaussian":
        return lambda r2: np.exp(-r2 / (2.0 * param**2))
    if name == "exponential":
        return lambda r2: np.exp(-np.sqrt(r2) / param)
    raise KernelError(f"unknown kernel {name!r}; use 'gaussian' or 'exponential'")


@dataclass(frozen=True)
class KernelSpace:
    """Gram matrix, its eigenpairs and the K-orthonormal basis ``onb[:, k]``."""

    grid: SpatialGrid
    kernel: str
    param: float
    G: np.ndarray = field(repr=False)
    nu: np.ndarray = field(repr=False)
    vecs: np.ndarray = field(repr=False)
    onb: np.ndarray = field(repr=False)

    @property
    def rank(self) -> int:
        return self.onb.shape[1]

    def inner(self, g, psi) -> np.ndarray:
        """<g, psi>_K over the last axis."""
        return np.einsum("...a,ab,...b->...", g, self.G, psi)

    def coords(self, g) -> np.ndarray:
        """<g, f_k>_K for every basis vector, over the last axis of ``g``."""
        return np.asarray(g, dtype=float) @ (self.G @ self.onb)

    def indicator(self, mask) -> np.ndarray:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (self.grid.size,):
            raise ParameterError("set mask must have one entry per grid point")
        return mask.astype(float)


def build_kernel_space(grid: SpatialGrid, kernel="gaussian", param=0.1) -> KernelSpace:
    """Gram matrix of a positive-definite kernel and a K-orthonormal basis.

    Eigenvalues below -1e-10 ||G|| are a kernel error; smaller negative
    values are clipped to zero with a warning.
    """
    f = _kernel(kernel, float(param))
    diff = grid.points[:, None, :] - grid.points[None, :, :]
    G = f(np.sum(diff**2, axis=-1)) * grid.dx**2
    G = 0.5 * (G + G.T)
    nu, vecs = np.linalg.eigh(G)
    scale = float(np.max(np.abs(nu)))
    if nu[0] < -_PSD_TOL * scale:
        raise KernelError(f"Gram matrix is not positive semidefinite (eigenvalue {nu[0]:.3e})")
    if np.any(nu < 0):
        if nu[0] < -1e-13 * scale:
            warnings.warn(f"clipping negative Gram eigenvalue {nu[0]:.3e} to 0", RuntimeWarning, stacklevel=2)
        nu = np.clip(nu, 0.0, None)
    # descending order so that k = 1 is the leading direction
    nu = nu[::-1]
    vecs = vecs[:, ::-1]
    keep = nu > _RANK_RTOL * scale
    onb = vecs[:, keep] / np.sqrt(nu[keep])
    return KernelSpace(grid, kernel, float(param), G, nu, vecs, onb)


@dataclass(frozen=True)
class JOperator:
    """J f_k = sqrt(lambda_k) f_k as a matrix on grid vectors (range of G).

    ``matrix`` = F diag(sqrt lambda) F^T G and ``pinv`` its inverse on the
    range; ``q`` = J J^* = F diag(lambda) F^T G.  J is K-self-adjoint.
    """

    space: KernelSpace = field(repr=False)
    lam: np.ndarray
    matrix: np.ndarray = field(repr=False)
    pinv: np.ndarray = field(repr=False)

    @property
    def q(self) -> np.ndarray:
        return self.matrix @ self.matrix

    @property
    def trace(self) -> float:
        return float(np.sum(self.lam))

    def apply(self, g) -> np.ndarray:
        return np.asarray(g, dtype=float) @ self.matrix.T

    def apply_inverse(self, g) -> np.ndarray:
        return np.asarray(g, dtype=float) @ self.pinv.T


def build_j_operator(space: KernelSpace, lam=None) -> JOperator:
    """J with eigenvalues ``lam`` on the K-basis (default 2^-k, k = 1..rank)."""
    r = space.rank
    lam = 2.0 ** -np.arange(1, r + 1, dtype=float) if lam is None else np.asarray(lam, dtype=float)
    if lam.shape != (r,) or np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ParameterError(f"need {r} finite non-negative eigenvalues for J")
    F = space.onb
    FG = F.T @ space.G
    root = np.sqrt(lam)
    inv_root = np.zeros_like(root)
    pos = lam > 0
    if not np.all(pos):
        warnings.warn("J has zero eigenvalues; using the pseudo-inverse on its range", RuntimeWarning, stacklevel=2)
    inv_root[pos] = 1.0 / root[pos]
    return JOperator(space, lam, F @ (root[:, None] * FG), F @ (inv_root[:, None] * FG))


@dataclass(frozen=True)
class FieldNoise:
    """Standard Brownian coordinates w_k(E_t) for each K-basis vector."""

    inverse: InversePath = field(repr=False)
    w_at_E: np.ndarray = field(repr=False)
    space: KernelSpace = field(repr=False)

    @property
    def t_grid(self) -> np.ndarray:
        return self.inverse.t_grid

    def cylindrical(self, psi) -> np.ndarray:
        """W~_{E_t}(psi) on the grid, shape (..., M)."""
        return np.einsum("k,...km->...m", self.space.coords(psi), self.w_at_E)

    def index_of(self, t) -> int:
        grid = self.t_grid
        i = int(np.argmin(np.abs(grid - t)))
        if abs(grid[i] - t) > 1e-9 * max(1.0, grid[-1]):
            raise ParameterError(f"time {t} is not a node of the noise grid")
        return i


def simulate_field_noise(space: KernelSpace, beta, t_grid, d_tau=1e-2, rng=None, n_paths=None) -> FieldNoise:
    rng = as_generator(rng)
    _, inv = simulate_inverse_path(beta, t_grid, d_tau, rng, n_paths=n_paths)
    unit = make_basis(eigenvalues=np.ones(space.rank))
    tc = simulate_tc_qwiener(unit, inv, rng)
    return FieldNoise(inv, tc.w_at_E, space)


# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ElementaryTerm:
    """X 1_(a, b](t) 1_A(x); ``X`` must be known at time ``known_at`` <= a."""

    a: float
    b: float
    mask: np.ndarray
    X: np.ndarray | float = 1.0
    known_at: float | None = None

    def __post_init__(self):
        if not self.a < self.b:
            raise ParameterError(f"need a < b, got ({self.a}, {self.b})")
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))
        if self.known_at is None:
            object.__setattr__(self, "known_at", float(self.a))

    @property
    def adapted(self) -> bool:
        return self.known_at <= self.a


@dataclass(frozen=True)
class ElementaryField:
    terms: tuple

    @property
    def adapted(self) -> bool:
        return all(term.adapted for term in self.terms)

    def check(self):
        for term in self.terms:
            if not term.adapted:
                raise AdaptednessError(
                    f"integrand value on ({term.a}, {term.b}] is only known at {term.known_at}"
                )

    def values_on_grid(self, t_grid, space: KernelSpace, lead=()) -> np.ndarray:
        """K-valued left-point values g(t_m), shape lead + (M-1, P)."""
        t = np.asarray(t_grid, dtype=float)
        out = np.zeros(lead + (t.size - 1, space.grid.size))
        tol = 1e-9 * max(1.0, t[-1])
        for term in self.terms:
            on = (t[:-1] >= term.a - tol) & (t[:-1] < term.b - tol)
            x = np.asarray(term.X, dtype=float)[..., None, None]
            out = out + x * on[:, None] * space.indicator(term.mask)
        return out


def random_elementary_field(space: KernelSpace, noise: FieldNoise, rng, n_terms=None, anticipating=False):
    """Sum of 1-3 terms on grid-node intervals with adapted random weights.

    Each weight is c (1 + tanh W~_{E_a}(1_B)) for a random constant c and
    set B, so it is known at the left end a.  With ``anticipating`` the last
    term reads the noise at b instead and is marked out of class.
    """
    rng = as_generator(rng)
    t = noise.t_grid
    n_terms = int(rng.integers(1, 4)) if n_terms is None else int(n_terms)
    terms = []
    for i in range(n_terms):
        ia, ib = np.sort(rng.choice(t.size, 2, replace=False))
        mask = rng.random(space.grid.size) < 0.5
        b_set = rng.random(space.grid.size) < 0.5
        cheat = anticipating and i == n_terms - 1
        read = ib if cheat else ia
        x = rng.standard_normal() * (1.0 + np.tanh(noise.cylindrical(space.indicator(b_set))[..., read]))
        terms.append(ElementaryTerm(float(t[ia]), float(t[ib]), mask, x, float(t[read])))
    return ElementaryField(tuple(terms))


def cylindrical_integral(g: ElementaryField, noise: FieldNoise) -> np.ndarray:
    """sum_k int <g_s, f_k>_K dw_k(E_s) as a path on the noise grid."""
    g.check()
    lead = noise.w_at_E.shape[:-2]
    vals = g.values_on_grid(noise.t_grid, noise.space, lead)
    coeff = noise.space.coords(vals)
    dw = np.diff(noise.w_at_E, axis=-1)
    inc = np.einsum("...mk,...km->...m", coeff, dw)
    return np.concatenate([np.zeros(lead + (1,)), np.cumsum(inc, axis=-1)], axis=-1)


def martingale_measure(noise: FieldNoise, mask) -> np.ndarray:
    """M_{E_t}(A) on the noise grid."""
    return noise.cylindrical(noise.space.indicator(mask))


def martingale_measure_integral(g: ElementaryField, noise: FieldNoise) -> np.ndarray:
    """sum_i X_i (M_{E_b_i}(A_i) - M_{E_a_i}(A_i)), per replication."""
    g.check()
    total = np.zeros(noise.w_at_E.shape[:-2])
    for term in g.terms:
        m = martingale_measure(noise, term.mask)
        ia, ib = noise.index_of(term.a), noise.index_of(term.b)
        total = total + np.asarray(term.X, dtype=float) * (m[..., ib] - m[..., ia])
    return total


def qwiener_integral_via_J(g: ElementaryField, J: JOperator, noise: FieldNoise) -> np.ndarray:
    """sum_j int (Phi^g_s o J^-1)(sqrt(lambda_j) f_j) dw_j(E_s), Phi^g_s(eta) = <g_s, eta>_K."""
    g.check()
    space = noise.space
    lead = noise.w_at_E.shape[:-2]
    vals = g.values_on_grid(noise.t_grid, space, lead)
    # columns J f_j = sqrt(lambda_j) f_j, then J^-1 applied to each
    jf = J.matrix @ space.onb
    pre = J.pinv @ jf
    coeff = np.einsum("...ma,ab,bk->...mk", vals, space.G, pre)
    dw = np.diff(noise.w_at_E, axis=-1)
    inc = np.einsum("...mk,...km->...m", coeff, dw)
    return np.concatenate([np.zeros(lead + (1,)), np.cumsum(inc, axis=-1)], axis=-1)


# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class TripleReport:
    """Per-trial maximum absolute gaps; ``skipped`` counts out-of-class integrands."""

    gap12: np.ndarray
    gap13: np.ndarray
    gap23: np.ndarray
    skipped: int

    @property
    def max_gap(self) -> float:
        if self.gap12.size == 0:
            return 0.0
        return float(max(self.gap12.max(), self.gap13.max(), self.gap23.max()))

    def write_csv(self, file):
        with open(file, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trial", "gap12", "gap13", "gap23"])
            for i, row in enumerate(zip(self.gap12, self.gap13, self.gap23)):
                w.writerow([i] + [repr(float(v)) for v in row])


def triple_equality_report(fields, J: JOperator, noise: FieldNoise) -> TripleReport:
    """Compare the three integrals at the final time for each integrand.

    1 = martingale-measure, 2 = cylindrical, 3 = Q-Wiener via J.
    Integrands that are not adapted are skipped and counted.
    """
    g12, g13, g23 = [], [], []
    skipped = 0
    for g in fields:
        if not g.adapted:
            skipped += 1
            continue
        i1 = martingale_measure_integral(g, noise)
        i2 = cylindrical_integral(g, noise)[..., -1]
        i3 = qwiener_integral_via_J(g, J, noise)[..., -1]
        g12.append(float(np.max(np.abs(i1 - i2))))
        g13.append(float(np.max(np.abs(i1 - i3))))
        g23.append(float(np.max(np.abs(i2 - i3))))
    return TripleReport(np.array(g12), np.array(g13), np.array(g23), skipped)
