"""Coupled path families for dyadic refinement studies.

A study draws one fine realization (subordinator skeleton, operational-time
Brownian coordinates, physical-time grid) and derives every coarser level
by keeping every ``2**l``-th node of both grids, so that all levels share
the same underlying randomness.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .spectral import QWienerPath, SpectralBasis, TimeChangedQWienerPath, compose_time_change, simulate_qwiener
from .subordinator import InversePath, SubordinatorPath, inverse_moment, invert_path, simulate_inverse_path, uniform_grid

__all__ = ["ConvergenceStudy", "fit_order", "CoupledPaths", "sample_coupled_paths", "coarsen"]


def fit_order(steps, errors) -> float:
    """Least-squares slope of -log2(error) against log2(steps)."""
    steps = np.asarray(steps, dtype=float)
    errors = np.asarray(errors, dtype=float)
    ok = errors > 0
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log2(steps[ok]), -np.log2(errors[ok]), 1)[0])


@dataclass(frozen=True)
class ConvergenceStudy:
    """Error per refinement level, ordered from coarse to fine."""

    steps: np.ndarray
    rms_gap: np.ndarray
    se: np.ndarray

    @property
    def fitted_order(self) -> float:
        return fit_order(self.steps, self.rms_gap)

    @property
    def ratios(self) -> np.ndarray:
        """Error ratio coarse/fine for each halving of the step."""
        return self.rms_gap[:-1] / self.rms_gap[1:]

    def rows(self):
        order = self.fitted_order
        return [(int(s), float(g), order) for s, g in zip(self.steps, self.rms_gap)]


@dataclass(frozen=True)
class CoupledPaths:
    subordinator: SubordinatorPath
    inverse: InversePath
    qwiener: QWienerPath
    tc: TimeChangedQWienerPath


def sample_coupled_paths(beta, basis: SpectralBasis, t_max, steps, d_tau, rng, n_paths) -> CoupledPaths:
    """Subordinator, inverse, Q-Wiener and composed paths on shared grids."""
    t = uniform_grid(t_max, steps)
    # generous horizon so that coarsened skeletons still cover t_max
    tau_max = 6.0 * inverse_moment(beta, t_max, 1) + 2.0 * d_tau
    sub, inv = simulate_inverse_path(beta, t, d_tau, rng, n_paths=n_paths, tau_max=tau_max)
    q = simulate_qwiener(basis, sub.tau_grid, rng, n_paths=n_paths)
    return CoupledPaths(sub, inv, q, compose_time_change(q, inv))


def coarsen(paths: CoupledPaths, factor: int) -> CoupledPaths:
    """Keep every ``factor``-th node of the operational and physical grids."""
    if int(factor) != factor or factor < 1:
        raise ParameterError(f"coarsening factor must be a positive integer, got {factor}")
    if factor == 1:
        return paths
    f = int(factor)
    t = paths.inverse.t_grid
    if (t.size - 1) % f:
        raise ParameterError(f"{t.size - 1} physical steps are not divisible by {f}")
    tau = paths.subordinator.tau_grid
    keep = (tau.size - 1) // f * f + 1
    sub = SubordinatorPath(paths.subordinator.beta, tau[:keep:f], paths.subordinator.values[..., :keep:f])
    inv = invert_path(sub, t[::f])
    q = QWienerPath(sub.tau_grid, paths.qwiener.w[..., :keep:f], paths.qwiener.basis)
    return CoupledPaths(sub, inv, q, compose_time_change(q, inv))
