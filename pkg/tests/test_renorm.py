import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from ahflow import presets as P
from ahflow import renorm as R
from ahflow.boundary import BoundaryField, BoundaryMetric, Grid
from ahflow.gauge import solve_hj_normal
from ahflow.geometry import CollarMetric

from oracles import hadamard_volume_constant

TORUS3 = (2 * np.pi) ** 3


@pytest.mark.parametrize("p, l, c, fp, order, pole", [
    (-1, 0, 1.0, 0.0, 1, 1.0),
    (-2, 0, 1.0, -1.0, 0, 0.0),
    (-1, 1, 1.0, 0.0, 2, -1.0),
    (-1, 2, 1.0, 0.0, 3, 2.0),
    (0, 0, 2.0, 2.0, 0, 0.0),
    (1, 1, 1.0, -0.25, 0, 0.0),
    (-4, 0, 0.5, -8.0 / 3.0, 0, 0.0),
])
def test_riesz_unit_values(p, l, c, fp, order, pole):
    got = R.power_log_fp(p, l, c)
    assert got[0] == pytest.approx(fp, abs=1e-15)
    assert got[1:] == (order, pole)


def test_log_pole_finite_part_at_other_cut():
    # int_0^c x^(z-1) dx = c^z / z = 1/z + log c + ...
    assert R.power_log_fp(-1, 0, math.e)[0] == pytest.approx(1.0)


@given(p=st.integers(0, 6), l=st.integers(0, 2), c=st.floats(0.1, 2.0))
def test_convergent_powers_match_quadrature(p, l, c):
    exact = mpmath.quad(lambda x: x ** p * mpmath.log(x) ** l, [0, c])
    assert R.power_log_fp(p, l, c)[0] == pytest.approx(float(exact), rel=1e-12, abs=1e-14)


@given(p=st.integers(-6, -2), l=st.integers(0, 2), c=st.floats(0.2, 2.0))
def test_divergent_powers_match_continuation(p, l, c):
    # d^l/da^l of c^a / a at a = p + 1, the continued value of the integral
    a0 = p + 1
    exact = mpmath.diff(lambda a: mpmath.power(c, a) / a, a0, l)
    assert R.power_log_fp(p, l, c)[0] == pytest.approx(float(exact), rel=1e-10)


def test_riesz_requires_positive_cut():
    with pytest.raises(R.RenormError):
        R.power_log_fp(0, 0, 0.0)
    u = R.volume_expansion(P.cusp(4, 4))
    with pytest.raises(R.RenormError):
        R.riesz_fp(u, 0.5, 0.2)


def test_phg_validation():
    h0 = BoundaryMetric.flat(3)
    with pytest.raises(R.RenormError):
        R.PhgExpansion([R.PhgTerm(0, 0, np.array(1.0)), R.PhgTerm(0, 0, np.array(2.0))], h0)
    with pytest.raises(R.RenormError):
        R.PhgExpansion([R.PhgTerm(0, 3, np.array(1.0))], h0)
    u = R.PhgExpansion.from_series(-2, [1.0, 0.0, 3.0], h0)
    with pytest.raises(R.RenormError):
        R.riesz_fp(u, 0.5, 1.0)


def test_riesz_of_explicit_expansion():
    # x^-2 + x^-1 log x + 3 on the unit torus volume, cut at 1
    h0 = BoundaryMetric.flat(3)
    terms = [R.PhgTerm(-2, 0, np.array(1.0)), R.PhgTerm(-1, 1, np.array(1.0)),
             R.PhgTerm(0, 0, np.array(3.0))]
    res = R.riesz_fp(R.PhgExpansion(terms, h0), 1.0)
    assert res.finite_part == pytest.approx(TORUS3 * (-1.0 + 0.0 + 3.0))
    assert res.poles == {2: pytest.approx(-TORUS3)}
    assert "interior" in res.audit_csv()


def test_expansion_sum_and_scaling():
    h0 = BoundaryMetric.flat(3)
    a = R.PhgExpansion.from_series(-1, [1.0, 2.0], h0)
    b = R.PhgExpansion.from_series(0, [5.0], h0)
    s = (a + b).scaled(2.0)
    assert [(t.power, float(t.coeff)) for t in s.terms] == [(-1, 2.0), (0, 14.0)]


@pytest.mark.parametrize("x_max", [0.5, 1.0, 2.0])
def test_cusp_renormalized_volume(x_max):
    g = P.cusp(4, 6)
    got = R.renormalized_volume(g, 0.5 * x_max, x_max).finite_part
    assert got == pytest.approx(-TORUS3 / (3 * x_max ** 3), rel=1e-12)


def test_cusp_n6():
    got = R.renormalized_volume(P.cusp(6, 6), 0.3, 1.0).finite_part
    assert got == pytest.approx(-(2 * np.pi) ** 5 / 5, rel=1e-12)


@pytest.mark.parametrize("x_cut", [0.1, 0.3, 0.7])
def test_cut_independence(x_cut):
    g = P.vr_generic(4, 8)
    ref = R.renormalized_volume(g, 0.5, 1.0).finite_part
    assert R.renormalized_volume(g, x_cut, 1.0).finite_part == pytest.approx(ref, rel=1e-11)


def test_no_log_pole_for_vr():
    res = R.renormalized_volume(P.vr_generic(4, 8), 0.5, 1.0)
    assert abs(res.poles.get(1, 0.0)) <= 1e-12


def test_renormalized_volume_matches_hadamard_oracle():
    g = P.vr_generic(4, 8)
    got = R.renormalized_volume(g, 0.5, 1.0).finite_part
    ref = hadamard_volume_constant(g.data[:, 1:, 1:], x_max=1.0)
    assert got == pytest.approx(ref, abs=1e-6)


def test_jacobian_series_matches_values():
    rng = np.random.default_rng(3)
    g = P.random_even_metric(rng, 4, 6, 2, scale=0.1)
    x = 0.05
    J = R.jacobian_series(g, 40)
    assert R.polynomial_values(J, [x])[0] == pytest.approx(R.jacobian_values(g, [x])[0], rel=1e-13)


def test_jacobian_degeneracy_detected():
    h = np.zeros((3, 3, 3))
    h[0] = np.eye(3)
    h[2] = -4.0 * np.eye(3)
    with pytest.raises(R.RenormError):
        R.jacobian_values(CollarMetric.normal(h), [0.6])


def test_non_vr_warns_or_raises():
    g = P.odd_seeded()
    with pytest.warns(R.BdfDependentWarning):
        R.renormalized_volume(g, 0.2, 0.5)
    with pytest.raises(R.RenormError):
        R.renormalized_volume(g, 0.2, 0.5, strict=True)


def test_renormalized_integral_of_one_is_volume():
    g = P.vr_generic()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        v = R.renormalized_volume(g, 0.3, 0.8).finite_part
    assert R.renormalized_integral(g, [1.0], 0.3, 0.8).finite_part == pytest.approx(v, rel=1e-13)


@pytest.mark.parametrize("seed", range(3))
def test_discrepancy_routes_agree(seed):
    rng = np.random.default_rng(seed)
    g = P.random_even_metric(rng, 4, 6, 2, normal_form=True, scale=0.1)
    w = solve_hj_normal(g, BoundaryField(np.asarray(0.3 * rng.normal()), "scalar"))
    u = [1.0, 0.0, 0.5]
    d = R.bdf_discrepancy(g, u, w, 0.2, 0.6)
    assert d.gap <= 1e-8


def test_discrepancy_leading_term_for_constant_factor():
    rng = np.random.default_rng(4)
    g = P.random_even_metric(rng, 4, 6, 2, normal_form=True, scale=0.1)
    w = solve_hj_normal(g, BoundaryField(np.asarray(0.2), "scalar"))
    d = R.bdf_discrepancy(g, [1.0], w, 0.2, 0.6)
    assert d.route_b == pytest.approx(d.leading, rel=1e-10)
    assert abs(d.leading) > 1e-3


def test_discrepancy_vanishes_for_vr():
    rng = np.random.default_rng(5)
    g = P.random_even_metric(rng, 4, 6, 2, normal_form=True, scale=0.1, vr=True)
    w = solve_hj_normal(g, BoundaryField(np.asarray(0.4), "scalar"))
    d = R.bdf_discrepancy(g, [1.0], w, 0.2, 0.6)
    assert abs(d.route_a) <= 1e-9 and abs(d.route_b) <= 1e-12


def test_discrepancy_on_grid():
    grid = Grid((8, 8, 8), "spectral")
    rng = np.random.default_rng(6)
    g = P.random_even_metric(rng, 4, 5, 2, grid=grid, normal_form=True, scale=0.1)
    w0 = 0.2 * np.sin(grid.coords()[1])
    w = solve_hj_normal(g, BoundaryField(w0, "scalar", grid))
    d = R.bdf_discrepancy(g, [1.0], w, 0.2, 0.5, order=24)
    assert d.gap <= 1e-8


def test_discrepancy_needs_normal_form():
    data = P.cusp(4, 4).data.copy()
    g = CollarMetric(4, data)
    w = solve_hj_normal(P.cusp(4, 4), BoundaryField(np.asarray(0.1), "scalar"))
    with pytest.raises(R.RenormError):
        R.bdf_discrepancy(g, [1.0], w, 0.2, 0.5)


def test_jacobian_binomial_series():
    h = np.zeros((3, 3, 3))
    h[0] = h[2] = np.diag([1.0, 2.0, 3.0])
    J = R.jacobian_series(CollarMetric.normal(h), 8)
    expect = [1.0, 0, 1.5, 0, 0.375, 0, -0.0625, 0, 3 / 128]
    assert np.allclose(J, expect, atol=1e-15)


def test_jacobian_first_odd_coefficient_is_half_trace():
    rng = np.random.default_rng(7)
    g = P.random_even_metric(rng, 6, 7, 4, normal_form=True, scale=0.1)
    J = R.jacobian_series(g, 7)
    assert np.max(np.abs(J[[1, 3]])) <= 1e-15
    assert J[5] == pytest.approx(0.5 * np.trace(np.linalg.solve(g.h(0), g.h(5))), rel=1e-12)
