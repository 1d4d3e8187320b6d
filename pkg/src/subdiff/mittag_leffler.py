"""Real-argument Mittag-Leffler function E_beta(z) = sum_k z^k / Gamma(beta k + 1).

Two evaluation routes are used:

* ``|z| < switch_radius``: the power series, summed in extended precision
  with mpmath.  The working precision grows with the size of the largest
  term so that the alternating series for negative ``z`` does not lose
  digits to cancellation.
* ``|z| >= switch_radius`` with ``0 < beta < 1``, or whenever the series
  would need more than ``series_terms`` terms: the integral representation

      E_beta(-x) = sin(beta pi) / (beta pi)
                   * int_0^inf exp(-(x v)^(1/beta)) / (v^2 + 2 v cos(beta pi) + 1) dv,
      E_beta(x)  = exp(x^(1/beta)) / beta
                   - sin(beta pi) / (beta pi)
                   * int_0^inf exp(-(x v)^(1/beta)) / (v^2 - 2 v cos(beta pi) + 1) dv,

  for x > 0, integrated with adaptive quadrature.  The negative-axis form
  is the completely monotone Laplace-kernel representation after the
  substitution v = r^beta, which removes the endpoint singularity.

For ``beta = 1`` only the series is used (the kernel vanishes); if the term
budget is exceeded :class:`ConvergenceError` is raised with diagnostics.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import mpmath
import numpy as np
from scipy import integrate

from .errors import ConvergenceError, ParameterError

__all__ = ["MLParams", "mittag_leffler"]


@dataclass(frozen=True)
class MLParams:
    beta: float
    series_terms: int = 200
    switch_radius: float = 5.0
    rtol: float = 1e-12

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ParameterError(f"beta must lie in (0, 1], got {self.beta}")
        if self.series_terms < 1:
            raise ParameterError("series_terms must be >= 1")
        if not self.switch_radius > 0:
            raise ParameterError("switch_radius must be positive")


def _series_plan(beta: float, z: float, params: MLParams):
    """Return (n_terms, dps) for the series, or None if the budget is too small."""
    k = np.arange(params.series_terms + 1, dtype=float)
    log_terms = k * math.log(abs(z)) - np.array([math.lgamma(beta * kk + 1.0) for kk in k])
    # positive series: tolerance relative to the largest term (a lower bound of
    # the sum); alternating series: absolute, since the sum may be tiny
    # (E_beta(-x) is of order exp(-x) or larger, which keeps the latter relative)
    floor = math.log(1e-12) + (max(float(np.max(log_terms)), 0.0) if z > 0 else z)
    below = np.nonzero((log_terms < floor) & (np.diff(log_terms, append=-np.inf) < 0))[0]
    if below.size == 0:
        return None
    peak = float(np.max(log_terms[: below[0] + 1]))
    # alternating sums lose ~log10(largest term) digits to cancellation
    dps = 25
    if z < 0:
        dps += int(math.ceil((max(peak, 0.0) - z) / math.log(10.0)))
    return int(below[0]) + 1, dps


def _series(beta: float, z: float, params: MLParams) -> float:
    if z == 0.0:
        return 1.0
    plan = _series_plan(beta, z, params)
    if plan is None:
        k = params.series_terms
        last = k * math.log(abs(z)) - math.lgamma(beta * k + 1.0)
        raise ConvergenceError(
            f"Mittag-Leffler series for beta={beta}, z={z} does not converge within "
            f"{params.series_terms} terms (log10 |term {k}| = {last / math.log(10.0):.1f})"
        )
    n_terms, dps = plan
    with mpmath.workdps(dps):
        zz = mpmath.mpf(z)
        b = mpmath.mpf(beta)
        total = mpmath.fsum(zz**k / mpmath.gamma(b * k + 1) for k in range(n_terms))
        return float(total)


def _negative_integral(beta: float, x: float, params: MLParams):
    # kernel sin(t)/((v - cos t)^2 + sin^2 t), t = (1 - beta) pi, is a Cauchy density;
    # v = r(s) = sin(s) / sin(s + t) absorbs it, so beta -> 1 stays well conditioned.
    # s -> pi - t - s maps r to 1/r; folding at the midpoint avoids sin near pi
    theta = (1.0 - beta) * math.pi
    p = 1.0 / beta

    def g(xv):
        # log form: (x v)^p overflows for large v
        return math.exp(-math.exp(min(p * math.log(xv), 700.0))) if xv > 0.0 else 1.0

    def f(s):
        r = math.sin(s) / math.sin(s + theta)
        return g(x * r) + (g(x / r) if r > 0.0 else 0.0)

    mid = 0.5 * (math.pi - theta)
    st, ct = math.sin(theta), math.cos(theta)
    # knees x r = 1 and x / r = 1; beyond them the deviation from r = 1 decays
    # like (t / s)^2 over many decades, hence geometric breakpoints
    k1 = math.atan2(st, x - ct)
    k2 = math.atan2(x * st, 1.0 - x * ct)
    # the step at a knee has relative width ~ 1 / p and a tail exp(-(s / k)^p)
    inner = [k * m for k in (k1, k2) for m in (0.8, 1.25, 1.6, 2.5)]
    for e in (theta, k1, k2):
        while 0.0 < e < mid:
            inner.append(e)
            e *= 10.0
    edges = sorted({0.0, mid, *(e for e in inner if 0.0 < e < mid)})
    value = err = 0.0
    with warnings.catch_warnings():
        # the summed error estimate is checked by the caller
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for a, b in zip(edges[:-1], edges[1:]):
            v, e = integrate.quad(f, a, b, epsabs=0.0, epsrel=params.rtol, limit=400)
            value += v
            err += e
    return value / (beta * math.pi), err / (beta * math.pi)


def _integral(beta: float, z: float, params: MLParams) -> float:
    x = abs(z)
    if z < 0:
        value, err = _negative_integral(beta, x, params)
        return _checked(beta, z, value, err)
    c = math.cos(beta * math.pi)
    p = 1.0 / beta

    def f(v):
        return math.exp(-((x * v) ** p)) / (v * v - 2.0 * c * v + 1.0)

    # mass sits at v <~ 1/x
    pts = sorted({1.0 / x, 1.0})
    edges = [0.0, *pts, np.inf]
    value = 0.0
    err = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        v, e = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=params.rtol, limit=400)
        value += v
        err += e
    factor = math.sin(beta * math.pi) / (beta * math.pi)
    value *= factor
    err *= factor
    # residue of the pole on the positive axis
    value = math.exp(x**p) / beta - value
    return _checked(beta, z, value, err)


def _checked(beta, z, value, err):
    if not np.isfinite(value) or err > 1e-9 * abs(value) + 1e-300:
        raise ConvergenceError(
            f"Mittag-Leffler quadrature for beta={beta}, z={z} failed "
            f"(value {value:.6e}, error estimate {err:.3e})"
        )
    return value


def _ml_scalar(beta: float, z: float, params: MLParams) -> float:
    if not math.isfinite(z):
        raise ParameterError(f"argument must be finite, got {z}")
    if beta == 1.0 or abs(z) < params.switch_radius:
        try:
            return _series(beta, z, params)
        except ConvergenceError:
            if beta == 1.0:
                raise
    return _integral(beta, z, params)


def mittag_leffler(beta: float, z, params: MLParams | None = None):
    """Evaluate E_beta(z) for real ``z`` (scalar or array).

    Parameters
    ----------
    beta : float
        Index in (0, 1].
    z : float or array_like
        Real argument(s).  Negative arguments are the main use.
    params : MLParams, optional
        Term budget and switch radius; defaults to 200 terms and radius 5.

    Returns
    -------
    float or ndarray
        Same shape as ``z``.
    """
    if params is None:
        params = MLParams(beta)
    elif params.beta != beta:
        raise ParameterError("params.beta does not match beta")
    arr = np.asarray(z, dtype=float)
    out = np.empty_like(arr)
    flat = out.reshape(-1)
    for i, zi in enumerate(arr.reshape(-1)):
        flat[i] = _ml_scalar(float(beta), float(zi), params)
    if out.ndim == 0:
        return float(out)
    return out
