import numpy as np
import pytest

from ahflow import presets as P
from ahflow.boundary import Grid
from ahflow.geometry import (BlockSeries, CollarMetric, GeometryError, appendix_report,
                             christoffel, ebar, einstein_defect_order, linearize, linearize_ebar,
                             ricci)
from ahflow.verify import LINEARIZATION_CONSTANT

from oracles import ebar_fd, ricci_fd


def polynomial(data):
    return lambda x: np.tensordot(x ** np.arange(len(data)), data, axes=(0, 0))


def blocked_wrong(arr, k):
    """Wrong-parity part of coefficient k: xx/ab when k is odd, xa when k is even."""
    out = np.zeros_like(arr)
    if k % 2:
        out[..., 0, 0] = arr[..., 0, 0]
        out[..., 1:, 1:] = arr[..., 1:, 1:]
    else:
        out[..., 0, 1:] = arr[..., 0, 1:]
        out[..., 1:, 0] = arr[..., 1:, 0]
    return out


def test_cusp_is_flat_and_einstein():
    g = P.cusp(4, 6)
    b = ricci(g)
    assert not np.any(b.xgamma)
    assert not np.any(b.ricci)
    assert not np.any(ebar(g).data)
    assert einstein_defect_order(g) == 7


def test_christoffel_of_warped_collar():
    h = np.zeros((6, 3, 3))
    h[0] = h[2] = np.eye(3)
    b = christoffel(CollarMetric.normal(h))
    expect = np.zeros((6, 3, 3))
    expect[2] = -np.eye(3)
    assert np.allclose(b.christoffel_block("x_ab"), expect, atol=1e-15)
    assert not np.any(b.xgamma[0])


@pytest.mark.parametrize("cross", [False, True])
def test_ebar_matches_finite_difference_curvature(cross):
    n, N = 4, 30
    data = np.zeros((N + 1, n, n))
    data[0] = np.eye(n)
    data[2, 1:, 1:] = np.eye(3)
    if cross:
        data[1, 0, 1] = data[1, 1, 0] = 0.1
        data[2, 0, 0] = 0.2
        data[3, 2, 3] = data[3, 3, 2] = 0.05
    g = CollarMetric(n, data)
    E = polynomial(ebar(g).data)
    for x in (0.15, 0.25, 0.35):
        assert np.max(np.abs(E(x) - ebar_fd(polynomial(data), x, n))) <= 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_ricci_symmetric_on_random_metrics(seed):
    rng = np.random.default_rng(seed)
    R = ricci(P.random_even_metric(rng, 4 + 2 * (seed % 2), 6, 0)).ricci
    assert np.max(np.abs(R - np.swapaxes(R, -1, -2))) <= 1e-12


def test_ricci_symmetric_on_resolved_grid():
    # the antisymmetric part on a grid is aliasing from nonlinear products;
    # it decays spectrally and is below 1e-10 once the products are resolved
    errs = []
    for m in (8, 16, 24):
        rng = np.random.default_rng(2)
        g = P.random_even_metric(rng, 4, 4, 0, grid=Grid((m, m, m), "spectral"), scale=0.1)
        R = ricci(g).ricci
        errs.append(np.max(np.abs(R - np.swapaxes(R, -1, -2))))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] <= 1e-10


@pytest.mark.parametrize("j", [0, 2])
def test_ebar_preserves_evenness(j):
    # 100 random metrics even to order j (blocked sense): Ebar is even to order j
    for seed in range(50):
        rng = np.random.default_rng(100 * j + seed)
        g = P.random_even_metric(rng, 4, 5, j)
        assert ebar(g).evenness_order(1e-10) >= j


def test_ebar_preserves_evenness_n6():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        g = P.random_even_metric(rng, 6, 7, 4)
        assert ebar(g).evenness_order(1e-10) >= 4


def test_ebar_preserves_evenness_on_grid():
    rng = np.random.default_rng(9)
    g = P.random_even_metric(rng, 4, 5, 2, grid=Grid((8, 8, 8), "spectral"))
    assert ebar(g).evenness_order(1e-10) >= 2


@pytest.mark.parametrize("n", [4, 6])
def test_coefficient_table_rows_hold(n):
    rng = np.random.default_rng(n)
    g = P.random_even_metric(rng, n, n + 3, n - 2)
    rows = appendix_report(g)
    assert all(r.ok for r in rows), [r for r in rows if not r.ok]
    assert any(r.rel_error is not None for r in rows)


def test_coefficient_table_on_grid():
    rng = np.random.default_rng(11)
    g = P.random_even_metric(rng, 4, 7, 2, grid=Grid((8, 8, 8), "spectral"))
    assert all(r.ok for r in appendix_report(g))


def test_coefficient_table_trivial_on_cusp():
    rows = appendix_report(P.cusp(4, 6))
    assert all(r.ok for r in rows)
    assert all(r.measured in (None, 0.0) for r in rows)


def test_coefficient_table_spot_values():
    rng = np.random.default_rng(21)
    n, m = 4, 2
    g = P.random_even_metric(rng, n, 7, 2)
    b = ricci(g)
    G = g.data
    k = 2 * m - 1
    assert b.xgamma[k, 0, 0, 0] == pytest.approx(0.5 * k * G[k, 0, 0], rel=1e-12)
    expect = 0.5 * k * np.linalg.inv(G[0, 1:, 1:]) @ G[k, 1:, 1:]
    assert np.allclose(b.xgamma[k, 1:, 1:, 0], expect, rtol=1e-12, atol=1e-14)
    # gbar^xx = 1 + A x^(2m-1) + ... forces {gbar_xx}_(2m-1) = -A
    A = b.ginv[k, 0, 0]
    assert G[k, 0, 0] == pytest.approx(-A, rel=1e-12)


def test_coefficient_table_needs_enough_orders():
    with pytest.raises(GeometryError):
        appendix_report(P.cusp(4, 3))


def test_generic_h2_has_defect_two():
    h = np.zeros((5, 3, 3))
    h[0] = np.eye(3)
    h[2] = np.diag([0.3, -0.1, 0.2])
    assert einstein_defect_order(CollarMetric.normal(h), 1e-10) == 2


def pe_second_coefficient(h0, grid):
    """Solve the power-2 equation Ebar = 0 for h2, pointwise on the grid."""
    d = 3
    basis = []
    for a in range(d):
        for b in range(a, d):
            e = np.zeros((d, d))
            e[a, b] = e[b, a] = 1.0
            basis.append(e)

    def residual(h2):
        h = np.zeros((4,) + grid.shape + (d, d))
        h[0], h[2] = h0, h2
        E = ebar(CollarMetric.normal(h, grid)).data[2]
        return np.concatenate([E[..., :1, 0], E[..., 1:, 1:].reshape(grid.shape + (-1,))], -1)

    r0 = residual(np.zeros(grid.shape + (d, d)))
    cols = [residual(np.broadcast_to(e, grid.shape + (d, d))) - r0 for e in basis]
    M = np.stack(cols, -1).reshape(-1, 10, 6)
    rhs = -r0.reshape(-1, 10)
    c = np.stack([np.linalg.lstsq(m, r, rcond=None)[0] for m, r in zip(M, rhs)])
    h2 = np.einsum("pk,kab->pab", c, np.array(basis)).reshape(grid.shape + (d, d))
    return h2


def test_pe_determined_h2_raises_defect_order():
    grid = Grid((8, 8, 8), "spectral")
    y = grid.coords()
    phi = 0.1 * np.sin(y[0]) + 0.05 * np.cos(y[1] + y[2])
    h0 = np.exp(2 * phi)[..., None, None] * np.eye(3)
    h2 = pe_second_coefficient(h0, grid)
    h = np.zeros((5,) + grid.shape + (3, 3))
    h[0], h[2] = h0, h2
    g = CollarMetric.normal(h, grid)
    assert einstein_defect_order(g, 1e-10) >= 3
    h[2] = h2 + 0.1 * np.eye(3)
    assert einstein_defect_order(CollarMetric.normal(h, grid), 1e-10) == 2


def test_linearization_constant_from_oracle():
    # x^2 Rc_ab of dx^2 + delta + e x^j v, differentiated in e with the dense oracle
    rng = np.random.default_rng(0)
    v = P.random_sym(rng, 3, 1.0)
    x, e = 0.3, 2e-3
    for j in (2, 3, 4):
        def gbar(eps):
            def f(s):
                m = np.eye(4)
                m[1:, 1:] += eps * s ** j * v
                return m
            return f
        dR = (ricci_fd(gbar(e), x) - ricci_fd(gbar(-e), x)) / (2 * e)
        c = -(x ** 2 * dR[1:, 1:]) / (j * (j - 1) * x ** j * v)
        assert np.allclose(c, LINEARIZATION_CONSTANT, rtol=1e-4)


@pytest.mark.parametrize("j", [1, 2, 3, 4, 5])
def test_full_linearization_on_traceless_v(j):
    # Ebar'(x^j v) = -1/2 j (j - (n-1)) x^j v for traceless tangential v at the cusp
    g = P.cusp(4, 7)
    v = np.zeros_like(g.data)
    v[0, 1:, 1:] = np.diag([0.4, -0.1, -0.3])
    v[0, 1, 2] = v[0, 2, 1] = 0.2
    L = linearize_ebar(g, BlockSeries(4, v), j).data
    assert np.allclose(L[j], -0.5 * j * (j - 3) * v[0], atol=1e-9)
    assert np.max(np.abs(L[:j]), initial=0.0) <= 1e-9


@pytest.mark.parametrize("j", [1, 2, 3])
def test_gauge_point_christoffels(j):
    g = P.cusp(4, 6)
    rng = np.random.default_rng(j)
    v = np.zeros((7, 4, 4))
    v[0] = P.random_sym(rng, 4, 1.0)

    def xgamma_x(h):
        return christoffel(h).xgamma[..., 0, :, :]

    d, _ = linearize(xgamma_x, g, BlockSeries(4, v), j)
    assert d[j, 0, 0] == pytest.approx(0.5 * j * v[0, 0, 0], abs=1e-8)
    assert np.max(np.abs(d[j, 0, 1:])) <= 1e-8
    assert np.allclose(d[j, 1:, 1:], -0.5 * j * v[0, 1:, 1:], atol=1e-8)


@pytest.mark.parametrize("j", [1, 2, 3, 4])
def test_wrong_parity_commutes_with_linearization(j):
    # blocked reading of the odd-part identity: the wrong-parity part of L(x^j v)
    # at power j is L applied to the wrong-parity part of x^j v, and vanishes
    # when x^j v is of the right parity
    rng = np.random.default_rng(10 + j)
    g = P.random_even_metric(rng, 4, 6, 4 if j <= 4 else j, normal_form=True, scale=0.1)
    v = np.zeros_like(g.data)
    v[0] = P.random_sym(rng, 4, 1.0)
    vs = BlockSeries(4, v)
    L = linearize_ebar(g, vs, j).data
    wrong = BlockSeries(4, blocked_wrong(v, j))
    Lw = linearize_ebar(g, wrong, j).data
    scale = np.max(np.abs(v))
    assert np.max(np.abs(blocked_wrong(L[j], j) - Lw[j])) <= 1e-6 * scale
    right = BlockSeries(4, v - blocked_wrong(v, j))
    Lr = linearize_ebar(g, right, j).data
    assert np.max(np.abs(blocked_wrong(Lr[j], j))) <= 1e-6 * scale


def test_linearization_step_underflow():
    g = P.cusp(4, 4)
    with pytest.raises(GeometryError):
        linearize(lambda h: ebar(h).data, g, BlockSeries(4, np.zeros_like(g.data)), 1, eps=1e-13)


def test_metric_validation():
    with pytest.raises(GeometryError):
        CollarMetric.cusp(3, 4)
    with pytest.raises(GeometryError):
        CollarMetric.cusp(4, 4, h0=np.diag([1.0, 1.0, -1.0]))
    data = P.cusp(4, 4).data.copy()
    data[1, 0, 1] = data[1, 1, 0] = 0.1
    with pytest.raises(GeometryError):
        CollarMetric(4, data, normal_form=True)


def test_series_linearization_constant_matches_golden():
    from ahflow.verify import linearization_constants
    assert np.allclose(linearization_constants(), LINEARIZATION_CONSTANT, atol=1e-8)
