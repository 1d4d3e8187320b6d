import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subdiff.errors import ParameterError
from subdiff.fpk import (
    EmpiricalMeasure,
    TestFunctional,
    apply_L0,
    caputo_derivative,
    cylindrical_functional,
    empirical_characteristic_function,
    fractional_fpk_residual,
    linear_functional,
    mode_characteristic_function,
    norm_sq,
    quadratic_functional,
    sample_solution,
    subordination_identity_check,
)
from subdiff.mittag_leffler import mittag_leffler
from subdiff.sde import SDECoefficients, ou_coefficients
from subdiff.spectral import make_basis
from subdiff.subordinator import uniform_grid

BASIS = make_basis(eigenvalues=[0.5, 0.3, 0.2], mu=[1.0, 2.0, 3.0])
# Caputo derivative of f(t) = t at t = 1 for beta = 1/2: 1 / Gamma(3/2)
CAPUTO_T_AT_1 = 1.1283791670955126


@pytest.mark.parametrize("beta", [0.3, 0.5, 0.9, 1.0])
def test_caputo_exact_on_linear(beta):
    t = uniform_grid(2.0, 40)
    d = caputo_derivative(3.0 * t + 1.0, beta, t)
    np.testing.assert_allclose(d[1:], 3.0 * t[1:] ** (1 - beta) / math.gamma(2 - beta), rtol=1e-12)
    assert d[0] == 0.0


def test_caputo_frozen_value():
    t = uniform_grid(1.0, 10)
    assert caputo_derivative(t, 0.5, t)[-1] == pytest.approx(CAPUTO_T_AT_1, rel=1e-13)


@pytest.mark.parametrize("beta", [0.3, 0.7])
def test_caputo_quadratic_converges(beta):
    errs = []
    for n in (50, 100, 200):
        t = uniform_grid(1.0, n)
        d = caputo_derivative(t**2, beta, t)[-1]
        errs.append(abs(d - 2.0 / math.gamma(3.0 - beta)))
    assert errs[2] < errs[1] < errs[0]
    # the L1 scheme is of order 2 - beta on smooth data
    assert math.log2(errs[1] / errs[2]) > 2 - beta - 0.2


@pytest.mark.parametrize("beta", [0.4, 0.6, 0.8])
def test_mittag_leffler_is_caputo_eigenfunction(beta):
    t = uniform_grid(1.0, 400)
    f = mittag_leffler(beta, -(t**beta))
    d = caputo_derivative(f, beta, t)
    late = t >= 0.1
    np.testing.assert_allclose(d[late], -f[late], atol=3e-3)


def test_caputo_grid_errors():
    with pytest.raises(ParameterError):
        caputo_derivative(np.ones(3), 0.5, np.array([0.0, 0.1, 0.3]))
    with pytest.raises(ParameterError):
        caputo_derivative(np.ones(4), 0.5, uniform_grid(1.0, 2))


def test_functional_derivatives():
    h = np.array([1.0, 2.0])
    x = np.array([[0.5, -1.0]])
    lin, quad = linear_functional(h), quadratic_functional(h)
    assert lin(x)[0] == -1.5 and quad(x)[0] == 2.25
    np.testing.assert_allclose(quad.grad(x), [[-3.0, -6.0]])
    cyl = cylindrical_functional(h, np.sin, np.cos, lambda y: -np.sin(y))
    np.testing.assert_allclose(cyl(x), np.sin(-1.5))
    with pytest.raises(ParameterError):
        TestFunctional("cubic", h, np.sin, np.cos, np.cos)
    with pytest.raises(ParameterError):
        linear_functional([np.nan])


def test_L0_closed_forms():
    h = np.array([1.0, 0.0, 1.0])
    x = np.array([[1.0, 2.0, 3.0]])
    ou = ou_coefficients(BASIS)
    # linear: <A x, h> = -(1 * 1 + 3 * 3)
    assert apply_L0(linear_functional(h), x, ou, BASIS)[0] == pytest.approx(-10.0)
    # quadratic: 2 <x,h> <Ax,h> + sum lambda_j h_j^2
    assert apply_L0(quadratic_functional(h), x, ou, BASIS)[0] == pytest.approx(2 * 4 * -10 + 0.7)
    with pytest.raises(ParameterError):
        apply_L0(norm_sq, x, ou, BASIS)


def test_empirical_measure(rng):
    s = rng.standard_normal((1000, 2, 3))
    m = EmpiricalMeasure(uniform_grid(1.0, 2), s)
    mean, se = m.expect(norm_sq)
    assert mean.shape == (3,) and np.all(se > 0)
    with pytest.raises(ParameterError):
        EmpiricalMeasure(uniform_grid(1.0, 3), s)


def test_sample_solution_shapes(rng):
    m = sample_solution(ou_coefficients(BASIS, np.ones(3)), BASIS, 0.5, uniform_grid(1.0, 10), 7, 0.01, rng, block=3)
    assert m.samples.shape == (7, 3, 11)
    np.testing.assert_array_equal(m.samples[:, :, 0], 1.0)


@pytest.mark.parametrize("beta", [0.5, 1.0])
@pytest.mark.parametrize("kind", ["linear", "quadratic"])
def test_fpk_residual_ou(beta, kind):
    h = np.ones(3)
    phi = linear_functional(h) if kind == "linear" else quadratic_functional(h)
    res = fractional_fpk_residual(
        ou_coefficients(BASIS, np.ones(3)), phi, beta, BASIS, uniform_grid(1.0, 50), 4000,
        np.random.default_rng(8), d_tau=0.004, report_every=10,
    )
    assert res.t.size == 5 and res.t[0] > 0
    assert np.all(res.z < 4)


def test_fpk_residual_warns_on_se_target():
    with pytest.warns(RuntimeWarning):
        fractional_fpk_residual(
            ou_coefficients(BASIS, np.ones(3)), linear_functional(np.ones(3)), 0.5, BASIS,
            uniform_grid(1.0, 10), 50, 0, se_target=1e-9,
        )


def test_subordination_identity():
    rep = subordination_identity_check(
        ou_coefficients(BASIS, np.ones(3)), linear_functional(np.ones(3)), 0.5, BASIS, 1.0, 20_000, np.random.default_rng(5)
    )
    assert rep.z < 4


def test_subordination_plain_function():
    coeffs = SDECoefficients(np.zeros((3, 3)), np.eye(3))
    rep = subordination_identity_check(coeffs, norm_sq, 0.7, BASIS, 1.0, 20_000, np.random.default_rng(6))
    assert rep.z < 4
    with pytest.raises(ParameterError):
        subordination_identity_check(coeffs, norm_sq, 0.7, BASIS, 0.0, 10)


def test_mode_characteristic_function_values():
    # E_{1/2}(-1/2) = exp(1/4) erfc(1/2)
    assert mode_characteristic_function(1.0, 0.5, 1.0, 1.0) == pytest.approx(0.6156903441929259, abs=1e-12)
    assert mode_characteristic_function(0.5, 1.0, 2.0, 1.0) == pytest.approx(math.exp(-1.0))
    with pytest.raises(ParameterError):
        mode_characteristic_function(1.0, 0.5, 1.0, -1.0)


@pytest.mark.parametrize("d_tau", [None, 0.002])
def test_empirical_characteristic_function(d_tau):
    rep = empirical_characteristic_function(BASIS, 0.5, [0.5, 1.0, 2.0], 1.0, 40_000, np.random.default_rng(2), d_tau)
    assert rep.empirical.shape == (3, 3)
    assert np.all(rep.z < 4)


@settings(max_examples=25, deadline=None)
@given(beta=st.floats(0.1, 1.0), a=st.floats(-5, 5), b=st.floats(-5, 5))
def test_caputo_is_linear(beta, a, b):
    t = uniform_grid(1.0, 20)
    f, g = np.sin(t), t**1.5
    np.testing.assert_allclose(
        caputo_derivative(a * f + b * g, beta, t),
        a * caputo_derivative(f, beta, t) + b * caputo_derivative(g, beta, t),
        atol=1e-10,
    )
