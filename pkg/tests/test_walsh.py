import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subdiff.errors import AdaptednessError, KernelError, ParameterError
from subdiff.subordinator import inverse_moment, uniform_grid
from subdiff.walsh import (
    ElementaryField,
    ElementaryTerm,
    SpatialGrid,
    build_j_operator,
    build_kernel_space,
    cylindrical_integral,
    make_grid,
    martingale_measure,
    martingale_measure_integral,
    qwiener_integral_via_J,
    random_elementary_field,
    simulate_field_noise,
    triple_equality_report,
)


@pytest.fixture
def space():
    return build_kernel_space(make_grid(8))


def test_grid_midpoints():
    g = make_grid(4, length=2.0, start=1.0)
    np.testing.assert_allclose(g.points[:, 0], [1.25, 1.75, 2.25, 2.75])
    assert g.dx == 0.5
    assert make_grid(1).size == 1
    with pytest.raises(ParameterError):
        make_grid(0)
    with pytest.raises(ParameterError):
        SpatialGrid(np.array([0.1, 0.1]), 0.5)


@pytest.mark.parametrize("kernel,param", [("gaussian", 0.1), ("gaussian", 0.3), ("exponential", 0.5)])
def test_basis_is_k_orthonormal(kernel, param):
    sp = build_kernel_space(make_grid(8), kernel, param)
    F = sp.onb
    np.testing.assert_allclose(F.T @ sp.G @ F, np.eye(sp.rank), atol=1e-9)
    assert np.all(np.diff(sp.nu) <= 0)


def test_kernel_errors():
    with pytest.raises(KernelError):
        build_kernel_space(make_grid(4), "cosine", 0.1)
    with pytest.raises(KernelError):
        build_kernel_space(make_grid(4), "gaussian", -1.0)


def test_gram_matrix_entries():
    sp = build_kernel_space(make_grid(2), "gaussian", 1.0)
    # dx = 1/2, points 1/4 and 3/4
    off = math.exp(-0.25 / 2) * 0.25
    np.testing.assert_allclose(sp.G, [[0.25, off], [off, 0.25]])


def test_j_eigenrelation_and_trace(space):
    J = build_j_operator(space)
    F = space.onb
    np.testing.assert_allclose(J.q @ F, F * J.lam, atol=1e-12)
    np.testing.assert_allclose(J.apply_inverse(J.apply(F.T)).T, F, atol=1e-10)
    assert J.trace == pytest.approx(1.0 - 2.0**-space.rank)
    # J is self-adjoint for the K inner product
    g, p = np.random.default_rng(0).standard_normal((2, 8))
    g, p = F @ (F.T @ space.G @ g), F @ (F.T @ space.G @ p)
    assert space.inner(J.apply(g), p) == pytest.approx(space.inner(g, J.apply(p)), abs=1e-12)


def test_j_validation(space):
    with pytest.raises(ParameterError):
        build_j_operator(space, lam=np.ones(space.rank + 1))
    lam = 2.0 ** -np.arange(1, space.rank + 1)
    lam[-1] = 0.0
    with pytest.warns(RuntimeWarning):
        build_j_operator(space, lam)


def test_indicator_shape(space):
    with pytest.raises(ParameterError):
        space.indicator(np.ones(3, dtype=bool))


def _noise(space, n=5, seed=0):
    return simulate_field_noise(space, 0.5, uniform_grid(1.0, 10), 0.01, np.random.default_rng(seed), n_paths=n)


def test_triple_equality(space):
    noise = _noise(space)
    rng = np.random.default_rng(1)
    fields = [random_elementary_field(space, noise, rng) for _ in range(30)]
    rep = triple_equality_report(fields, build_j_operator(space), noise)
    assert rep.skipped == 0 and rep.max_gap < 1e-10


def test_single_term_is_measure_increment(space):
    noise = _noise(space)
    mask = np.arange(8) < 3
    g = ElementaryField((ElementaryTerm(0.2, 0.7, mask, 2.0),))
    m = martingale_measure(noise, mask)
    expect = 2.0 * (m[..., 7] - m[..., 2])
    np.testing.assert_allclose(martingale_measure_integral(g, noise), expect, atol=1e-14)
    np.testing.assert_allclose(cylindrical_integral(g, noise)[..., -1], expect, atol=1e-12)


def test_anticipating_integrand_rejected(space):
    noise = _noise(space)
    bad = random_elementary_field(space, noise, np.random.default_rng(2), n_terms=2, anticipating=True)
    assert not bad.adapted
    with pytest.raises(AdaptednessError):
        cylindrical_integral(bad, noise)
    with pytest.raises(AdaptednessError):
        qwiener_integral_via_J(bad, build_j_operator(space), noise)
    assert triple_equality_report([bad], build_j_operator(space), noise).skipped == 1


def test_term_validation():
    with pytest.raises(ParameterError):
        ElementaryTerm(0.5, 0.5, np.ones(2, dtype=bool))


def test_off_grid_time_rejected(space):
    noise = _noise(space)
    g = ElementaryField((ElementaryTerm(0.25, 0.5, np.ones(8, dtype=bool)),))
    with pytest.raises(ParameterError):
        martingale_measure_integral(g, noise)


def test_martingale_measure_covariance(space):
    noise = simulate_field_noise(space, 0.5, np.array([0.0, 1.0]), 0.002, np.random.default_rng(3), n_paths=40_000)
    a = np.arange(8) < 4
    b = np.arange(8) >= 2
    prod = martingale_measure(noise, a)[:, -1] * martingale_measure(noise, b)[:, -1]
    ca, cb = space.coords(space.indicator(a)), space.coords(space.indicator(b))
    oracle = inverse_moment(0.5, 1.0, 1) * float(ca @ cb)
    se = prod.std(ddof=1) / math.sqrt(prod.size)
    assert abs(prod.mean() - oracle) < 4 * se + 0.002 * abs(oracle)


def test_write_csv(space, tmp_path):
    noise = _noise(space)
    rep = triple_equality_report([random_elementary_field(space, noise, 0)], build_j_operator(space), noise)
    rep.write_csv(tmp_path / "t.csv")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["trial", "gap12", "gap13", "gap23"] and len(rows) == 2


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), P=st.integers(1, 10))
def test_triple_equality_property(seed, P):
    sp = build_kernel_space(make_grid(P))
    noise = _noise(sp, n=2, seed=seed)
    rng = np.random.default_rng(seed)
    fields = [random_elementary_field(sp, noise, rng) for _ in range(3)]
    assert triple_equality_report(fields, build_j_operator(sp), noise).max_gap < 1e-9
