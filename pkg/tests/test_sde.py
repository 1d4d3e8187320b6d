import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subdiff.errors import DivergenceError, ParameterError
from subdiff.integrator import constant_integrand, integrate_tc
from subdiff.refinement import sample_coupled_paths
from subdiff.sde import (
    SDECoefficients,
    Semigroup,
    duality_check,
    duality_refinement,
    mild_strong_refinement,
    ou_coefficients,
    solve_classical_em,
    solve_mild,
    solve_timechanged_em,
)
from subdiff.spectral import make_basis, simulate_qwiener, simulate_tc_qwiener
from subdiff.subordinator import simulate_inverse_path, uniform_grid

BASIS = make_basis(eigenvalues=[0.5, 0.3, 0.2], mu=[1.0, 2.0, 3.0])


def test_coefficient_validation():
    with pytest.raises(ParameterError):
        SDECoefficients(np.ones((2, 3)), np.eye(2))
    with pytest.raises(ParameterError):
        SDECoefficients(np.eye(2), np.eye(3))
    with pytest.raises(ParameterError):
        SDECoefficients(np.eye(2), np.eye(2), x0=np.ones(3))
    with pytest.raises(ParameterError):
        ou_coefficients(make_basis(eigenvalues=[1.0]))


def test_classical_em_ou_mean(rng):
    coeffs = ou_coefficients(BASIS, np.ones(3))
    q = simulate_qwiener(BASIS, uniform_grid(1.0, 200), rng, n_paths=20_000)
    y = solve_classical_em(coeffs, q).values[..., -1]
    # EM mean is (1 - mu dt)^n x0
    expect = (1.0 - BASIS.mu / 200) ** 200
    se = y.std(axis=0, ddof=1) / math.sqrt(y.shape[0])
    assert np.all(np.abs(y.mean(axis=0) - expect) < 4 * se)


def test_classical_em_stationary_variance(rng):
    coeffs = ou_coefficients(BASIS)
    q = simulate_qwiener(BASIS, uniform_grid(8.0, 1600), rng, n_paths=4000)
    y = solve_classical_em(coeffs, q).values[..., -1]
    np.testing.assert_allclose(y.var(axis=0), BASIS.lam / (2 * BASIS.mu), rtol=0.08)


def test_blowup_detected(rng):
    coeffs = SDECoefficients(np.eye(1) * 200.0, np.zeros((1, 1)), x0=np.ones(1))
    q = simulate_qwiener(make_basis(eigenvalues=[1.0]), uniform_grid(1.0, 100), rng)
    with pytest.raises(DivergenceError):
        solve_classical_em(coeffs, q)


def test_duality_without_drift_is_exact(rng):
    coeffs = SDECoefficients(np.zeros((3, 3)), rng.standard_normal((3, 3)), None, np.ones(3))
    p = sample_coupled_paths(0.6, BASIS, 1.0, 64, 1 / 256, rng, 20)
    assert duality_check(coeffs, p).max_gap < 1e-12


def test_duality_beta_one_reproduces_classical(rng):
    def F(s, x):
        return np.sin(x)

    coeffs = SDECoefficients(-np.diag(BASIS.mu), np.eye(3), F, np.ones(3))
    p = sample_coupled_paths(1.0, BASIS, 1.0, 64, 1 / 64, rng, 10)
    assert duality_check(coeffs, p).max_gap < 1e-12


def test_duality_gap_shrinks_with_refinement():
    study = duality_refinement(ou_coefficients(BASIS, np.ones(3)), 0.5, BASIS, np.random.default_rng(3), steps=2**8, levels=4, n_paths=100)
    assert np.all(study.ratios > 1.0)
    assert 0.3 < study.fitted_order < 0.9


def test_flat_steps_carry_state(rng):
    coeffs = ou_coefficients(BASIS, np.ones(3))
    _, inv = simulate_inverse_path(0.4, uniform_grid(1.0, 200), 0.01, rng, n_paths=5)
    x = solve_timechanged_em(coeffs, simulate_tc_qwiener(BASIS, inv, rng)).values
    flat = inv.flat
    assert flat.any()
    dx = np.diff(x, axis=-1)
    assert np.all(dx.transpose(0, 2, 1)[flat] == 0.0)
    with pytest.raises(ParameterError):
        solve_timechanged_em(coeffs, simulate_tc_qwiener(BASIS, inv, rng), drift_clock="s")


def test_semigroup_laws():
    sg = Semigroup(BASIS.mu)
    np.testing.assert_allclose(sg.factor(0.7), sg.factor(0.3) * sg.factor(0.4), rtol=1e-14)
    np.testing.assert_array_equal(sg.matrix(0.0), np.eye(3))
    assert sg.is_contraction
    assert not Semigroup([-1.0, 1.0]).is_contraction
    with pytest.raises(ParameterError):
        sg.factor(-1.0)


def test_mild_reduces_to_semigroup_and_integral(rng):
    _, inv = simulate_inverse_path(0.5, uniform_grid(1.0, 40), 0.01, rng, n_paths=6)
    tc = simulate_tc_qwiener(BASIS, inv, rng)
    sg = Semigroup(BASIS.mu)
    u0 = np.array([1.0, -1.0, 2.0])
    u = solve_mild(sg, np.zeros((3, 3)), tc, u0).values
    np.testing.assert_allclose(u, np.swapaxes(sg.factor(tc.t_grid) * u0, -1, -2)[None].repeat(6, 0), rtol=1e-13)
    b = rng.standard_normal((3, 3))
    u = solve_mild(Semigroup(np.zeros(3)), b, tc, np.zeros(3)).values
    np.testing.assert_allclose(u, integrate_tc(constant_integrand(b), tc).values, atol=1e-13)


def test_mild_warns_for_growing_semigroup(rng):
    _, inv = simulate_inverse_path(0.5, uniform_grid(1.0, 4), 0.01, rng)
    tc = simulate_tc_qwiener(make_basis(eigenvalues=[1.0]), inv, rng)
    with pytest.warns(RuntimeWarning):
        solve_mild(Semigroup([-0.5]), np.eye(1), tc, np.ones(1))


def test_mild_variance_matches_conditional_formula(rng):
    t = uniform_grid(1.0, 50)
    _, inv = simulate_inverse_path(0.5, t, 0.01, rng, n_paths=20_000)
    tc = simulate_tc_qwiener(BASIS, inv, rng)
    u = solve_mild(Semigroup(BASIS.mu), np.eye(3), tc, np.zeros(3)).values[..., -1]
    cond = BASIS.lam * (inv.increments @ np.exp(-2 * np.outer(1.0 - t[:-1], BASIS.mu)))
    d = u**2 - cond
    se = d.std(axis=0, ddof=1) / math.sqrt(d.shape[0])
    assert np.all(np.abs(d.mean(axis=0)) < 4 * se)


def test_mild_and_strong_converge():
    study = mild_strong_refinement(Semigroup(BASIS.mu), np.eye(3), 0.5, BASIS, np.random.default_rng(1), np.ones(3), steps=2**8, levels=4, n_paths=50)
    assert study.fitted_order > 0.7


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), beta=st.floats(0.3, 1.0))
def test_timechanged_solution_is_finite_and_starts_at_x0(seed, beta):
    rng = np.random.default_rng(seed)
    coeffs = ou_coefficients(BASIS, np.array([1.0, 0.0, -1.0]))
    _, inv = simulate_inverse_path(beta, uniform_grid(1.0, 16), 0.02, rng, n_paths=3)
    x = solve_timechanged_em(coeffs, simulate_tc_qwiener(BASIS, inv, rng)).values
    np.testing.assert_array_equal(x[..., 0], np.broadcast_to(coeffs.x0, (3, 3)))
    assert np.all(np.isfinite(x))
