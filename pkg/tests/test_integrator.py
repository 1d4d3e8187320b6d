import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subdiff.errors import ParameterError
from subdiff.integrator import (
    HSIntegrand,
    change_of_variable_1,
    change_of_variable_2,
    change_of_variable_refinement,
    constant_integrand,
    coordinate_poly_functional,
    elementary_integrand,
    functional_integrand,
    integrate_tc,
    ito_formula_refinement,
    ito_formula_residual,
    ito_isometry_report,
    norm_sq_functional,
    random_elementary_integrand,
    time_integrand,
)
from subdiff.refinement import coarsen, sample_coupled_paths
from subdiff.spectral import hs_norm_sq, make_basis, simulate_tc_qwiener
from subdiff.subordinator import simulate_inverse_path, uniform_grid

BASIS = make_basis(eigenvalues=[0.5, 0.3, 0.2], mu=[1.0, 2.0, 3.0])


def _tc(rng, beta=0.5, steps=20, n=4, d_tau=0.01):
    _, inv = simulate_inverse_path(beta, uniform_grid(1.0, steps), d_tau, rng, n_paths=n)
    return simulate_tc_qwiener(BASIS, inv, rng)


def _rot(s):
    s = np.asarray(s, dtype=float)[..., None, None]
    return np.cos(3.0 * s) * np.eye(3) + s * np.ones((3, 3))


def test_elementary_integral_is_explicit_sum(rng):
    tc = _tc(rng)
    bp = np.array([0.0, 0.25, 0.6, 1.0])
    vals = rng.standard_normal((3, 3, 3))
    out = integrate_tc(elementary_integrand(bp, vals), tc).values[..., -1]
    t = tc.t_grid
    expect = 0.0
    for i in range(3):
        a, b = np.argmin(abs(t - bp[i])), np.argmin(abs(t - bp[i + 1]))
        dwk = BASIS.sqrt_lam[:, None] * (tc.w_at_E[..., b] - tc.w_at_E[..., a])[..., None]
        expect = expect + np.einsum("hj,...jk->...h", vals[i], dwk)
    np.testing.assert_allclose(out, expect, atol=1e-12)


def test_constant_integrand_telescopes(rng):
    tc = _tc(rng)
    m = rng.standard_normal((2, 3))
    out = integrate_tc(constant_integrand(m), tc).values
    np.testing.assert_allclose(out, np.einsum("hj,...jm->...hm", m, tc.values), atol=1e-12)


def test_random_elementary_breakpoints_on_grid(rng):
    phi = random_elementary_integrand(3, 4, 1.0, rng, steps=20)
    assert phi.breakpoints[0] == 0.0 and phi.breakpoints[-1] == 1.0
    assert np.allclose(phi.breakpoints * 20, np.round(phi.breakpoints * 20))
    integrate_tc(phi, _tc(rng))


def test_off_grid_breakpoint_rejected(rng):
    phi = elementary_integrand([0.0, 0.333, 1.0], np.ones((2, 3, 3)))
    with pytest.raises(ParameterError):
        integrate_tc(phi, _tc(rng))


@pytest.mark.parametrize(
    "kw",
    [
        dict(kind="elementary", shape=(3, 3), breakpoints=[0.0, 0.5, 0.4], values=np.ones((2, 3, 3))),
        dict(kind="elementary", shape=(3, 3), breakpoints=[0.0, 1.0], values=np.ones((2, 3, 3))),
        dict(kind="time", shape=(3, 3)),
        dict(kind="other", shape=(3, 3)),
    ],
)
def test_integrand_validation(kw):
    with pytest.raises(ParameterError):
        HSIntegrand(**kw)


def test_functional_integrand_needs_state():
    phi = functional_integrand(lambda t, e, x: np.eye(3), (3, 3))
    with pytest.raises(ParameterError):
        phi.at_times(np.array([0.1]))
    with pytest.raises(ParameterError):
        phi.on_grid(uniform_grid(1.0, 4))


def test_functional_integrand_sees_left_point_state(rng):
    tc = _tc(rng)
    phi = functional_integrand(lambda t, e, x: x[..., :, None] * np.eye(3), (3, 3))
    out = integrate_tc(phi, tc).values
    x = tc.values
    dwk = BASIS.sqrt_lam[:, None] * tc.dw
    np.testing.assert_allclose(np.diff(out, axis=-1), x[..., :-1] * dwk, atol=1e-12)


@pytest.mark.parametrize("beta", [0.5, 1.0])
def test_isometry_random_elementary(beta):
    rng = np.random.default_rng(11)
    phi = random_elementary_integrand(3, 4, 1.0, rng, steps=50)
    rep = ito_isometry_report(phi, beta, BASIS, 20_000, uniform_grid(1.0, 50), 0.02, rng)
    assert rep.z < 4


def test_isometry_rhs_for_constant_integrand(rng):
    m = np.arange(9.0).reshape(3, 3) / 5
    rep = ito_isometry_report(constant_integrand(m), 0.5, BASIS, 20_000, uniform_grid(1.0, 10), 2e-3, rng)
    # rhs = ||Phi||_HS^2 E[E_1] up to grid rounding of E
    assert rep.rhs == pytest.approx(hs_norm_sq(m, BASIS) / math.gamma(1.5), rel=0.03)
    assert rep.z < 4


def test_isometry_argument_check(rng):
    with pytest.raises(ParameterError):
        ito_isometry_report(constant_integrand(np.eye(3)), 0.5, BASIS, 1, uniform_grid(1.0, 4), 0.01, rng)


@pytest.mark.parametrize("beta", [0.4, 0.8])
def test_change_of_variable_constant_exact(beta, rng):
    p = sample_coupled_paths(beta, BASIS, 1.0, 64, 1 / 256, rng, 10)
    phi = constant_integrand(rng.standard_normal((3, 3)))
    assert change_of_variable_1(phi, p.qwiener, p.inverse).max_gap < 1e-12
    assert change_of_variable_2(phi, p.qwiener, p.subordinator, p.inverse).max_gap < 1e-12


def test_change_of_variable_beta_one_exact_for_time_integrand(rng):
    p = sample_coupled_paths(1.0, BASIS, 1.0, 64, 1 / 64, rng, 5)
    phi = time_integrand(_rot, (3, 3))
    assert change_of_variable_1(phi, p.qwiener, p.inverse).max_gap < 1e-12
    assert change_of_variable_2(phi, p.qwiener, p.subordinator, p.inverse).max_gap < 1e-12


def test_change_of_variable_rejects_state_dependence(rng):
    p = sample_coupled_paths(0.5, BASIS, 1.0, 16, 1 / 64, rng, 2)
    phi = functional_integrand(lambda t, e, x: np.eye(3), (3, 3))
    with pytest.raises(ParameterError):
        change_of_variable_1(phi, p.qwiener, p.inverse)


@pytest.mark.parametrize("which", [1, 2])
def test_change_of_variable_refinement_converges(which):
    study = change_of_variable_refinement(
        which, time_integrand(_rot, (3, 3)), 0.5, BASIS, np.random.default_rng(4), steps=2**9, levels=4, n_paths=100
    )
    assert np.all(np.diff(study.rms_gap) < 0)
    assert study.fitted_order > 0.3


def test_coarsen_keeps_nodes(rng):
    p = sample_coupled_paths(0.5, BASIS, 1.0, 32, 1 / 128, rng, 3)
    c = coarsen(p, 4)
    assert c.inverse.t_grid.size == 9
    np.testing.assert_array_equal(c.qwiener.w, p.qwiener.w[..., : c.qwiener.tau_grid.size * 4 : 4])
    with pytest.raises(ParameterError):
        coarsen(p, 3)


def test_ito_formula_linear_case_exact(rng):
    tc = _tc(rng, steps=50)
    F = coordinate_poly_functional([1.0, -2.0, 0.5], c=3.0)
    res = ito_formula_residual(
        F, tc, psi=np.array([1.0, 0.0, 2.0]), gamma=lambda t, e, x: -x, phi=constant_integrand(np.eye(3))
    )
    assert np.max(np.abs(res)) < 1e-12


def test_ito_formula_zero_coefficients(rng):
    res = ito_formula_residual(norm_sq_functional(3), _tc(rng))
    assert np.all(res == 0.0)


def test_ito_formula_norm_sq_decays():
    study = ito_formula_refinement(
        norm_sq_functional(3),
        0.5,
        BASIS,
        np.random.default_rng(9),
        phi=constant_integrand(np.eye(3)),
        steps=2**9,
        levels=4,
        n_paths=100,
    )
    assert study.rms_gap[-1] < study.rms_gap[0]
    assert study.fitted_order > 0.1


def test_ito_formula_rejects_arbitrary_functional(rng):
    with pytest.raises(ParameterError):
        ito_formula_residual(lambda x: x, _tc(rng))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_integral_is_linear_in_integrand(seed, a, b):
    rng = np.random.default_rng(seed)
    tc = _tc(rng, steps=10, n=2)
    p1 = random_elementary_integrand(3, 3, 1.0, rng, steps=10)
    m = rng.standard_normal((3, 3))
    combo = time_integrand(lambda s: a * p1.at_times(s) + b * m, (3, 3))
    lhs = integrate_tc(combo, tc).values
    rhs = a * integrate_tc(p1, tc).values + b * integrate_tc(constant_integrand(m), tc).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)
