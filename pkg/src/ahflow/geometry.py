"""Curvature of compactified collar metrics in series form.

Everything is computed for ``gbar = x**2 g`` written in coordinates
``(x, y^1..y^d)``, index 0 being x.  Only 0-derivatives (x d/dx, x d/dy)
and products are used, so coefficient k of every quantity depends on metric
coefficients of power <= k and the truncation order is preserved exactly.

Christoffel symbols are stored as ``P = x * Gamma`` with layout
``P[..., k, i, j] = x Gamma^k_{ij}``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import series as S
from .boundary import BoundaryField, BoundaryMetric, Grid
from .series import TruncatedSeries

PARITY_TOL = S.DEFAULT_PARITY_TOL


class GeometryError(ValueError):
    pass


def _grid_ndim(grid):
    return 0 if grid is None else grid.d


class BlockSeries:
    """A symmetric (n x n)-valued series split into xx, xa and ab blocks."""

    def __init__(self, n, data, grid: Grid | None = None):
        data = np.asarray(data, dtype=float)
        if data.shape[-2:] != (n, n):
            raise GeometryError(f"expected trailing ({n},{n}) axes, got {data.shape}")
        if data.ndim != 3 + _grid_ndim(grid):
            raise GeometryError("block data does not match the boundary backend")
        self.n = int(n)
        self.data = data
        self.grid = grid

    @property
    def d(self):
        return self.n - 1

    @property
    def trunc_order(self):
        return len(self.data) - 1

    @property
    def xx(self):
        return TruncatedSeries(self.data[..., 0, 0], "scalar", self.grid)

    @property
    def xa(self):
        return TruncatedSeries(self.data[..., 0, 1:], "covector", self.grid)

    @property
    def ab(self):
        return TruncatedSeries(self.data[..., 1:, 1:], "sym2", self.grid)

    def coefficient_norms(self):
        axes = tuple(range(1, self.data.ndim))
        return np.max(np.abs(self.data), axis=axes)

    def wrong_parity_norms(self):
        """Per power: norm of the part that violates the even block pattern.

        xx/ab should be even and xa odd; returns (odd-power xx/ab norms,
        even-power xa norms) as two arrays over powers.
        """
        a = np.abs(self.data).reshape(len(self.data), -1, self.n, self.n)
        diag = np.maximum(a[..., 0, 0].max(axis=1),
                          a[..., 1:, 1:].max(axis=(1, 2, 3), initial=0.0))
        cross = a[..., 0, 1:].max(axis=(1, 2), initial=0.0)
        return diag, cross

    def evenness_order(self, tol=None):
        """Evenness in the blocked sense: xx, ab even to 2l and xa odd to 2l+1."""
        diag, cross = self.wrong_parity_norms()
        if tol is None:
            tol = PARITY_TOL * max(float(np.max(self.coefficient_norms(), initial=0.0)), 1e-300)
        n = self.trunc_order
        best = n + 1 if (n + 1) % 2 == 0 else n
        for p in range(n + 1):
            if p % 2 == 1 and diag[p] > tol:
                best = min(best, p - 1)
            if p % 2 == 0 and cross[p] > tol:
                best = min(best, p - 2)
        return max(best, 0)

    def odd_part(self, j):
        """Blocked odd projection at powers <= j (odd xx/ab powers, even xa powers)."""
        out = np.zeros_like(self.data)
        for p in range(min(j, self.trunc_order) + 1):
            if p % 2 == 1:
                out[p, ..., 0, 0] = self.data[p, ..., 0, 0]
                out[p, ..., 1:, 1:] = self.data[p, ..., 1:, 1:]
            else:
                out[p, ..., 0, 1:] = self.data[p, ..., 0, 1:]
                out[p, ..., 1:, 0] = self.data[p, ..., 1:, 0]
        return BlockSeries(self.n, out, self.grid)

    def even_part(self, j):
        odd = self.odd_part(j).data
        out = np.zeros_like(self.data)
        m = min(j, self.trunc_order) + 1
        out[:m] = self.data[:m] - odd[:m]
        return BlockSeries(self.n, out, self.grid)

    def with_data(self, data):
        return BlockSeries(self.n, data, self.grid)


class CollarMetric(BlockSeries):
    """gbar = x^2 g as series blocks gxx, gxa, gab in collar coordinates."""

    def __init__(self, n, data, grid=None, normal_form=False):
        super().__init__(n, data, grid)
        if self.n % 2:
            raise GeometryError("bulk dimension n must be even")
        self.data = 0.5 * (self.data + np.swapaxes(self.data, -1, -2))
        h0 = self.data[0][..., 1:, 1:]
        if np.min(np.linalg.eigvalsh(h0)) <= 0:
            raise GeometryError("gab coefficient 0 is not positive definite")
        self.normal_form = bool(normal_form)
        if self.normal_form:
            if np.any(self.data[..., 0, 1:]) or np.any(self.data[0, ..., 0, 0] != 1.0) \
                    or np.any(self.data[1:, ..., 0, 0]):
                raise GeometryError("normal-form metric needs gxx = 1 and gxa = 0 exactly")

    @classmethod
    def from_blocks(cls, n, gxx, gxa, gab, grid=None, normal_form=False):
        gxx = np.asarray(gxx, dtype=float)
        gab = np.asarray(gab, dtype=float)
        N = len(gab) - 1
        if len(gxx) != N + 1:
            raise GeometryError("truncation orders of blocks disagree")
        data = np.zeros(gab.shape[:-2] + (n, n))
        data[..., 0, 0] = gxx
        if gxa is not None:
            gxa = np.asarray(gxa, dtype=float)
            if len(gxa) != N + 1:
                raise GeometryError("truncation orders of blocks disagree")
            data[..., 0, 1:] = gxa
            data[..., 1:, 0] = gxa
        data[..., 1:, 1:] = gab
        return cls(n, data, grid, normal_form)

    @classmethod
    def normal(cls, h, grid=None):
        """Graham-Lee normal form dx^2 + h(x) from coefficients h[k]."""
        h = np.asarray(h, dtype=float)
        d = h.shape[-1]
        gxx = np.zeros(h.shape[:-2])
        gxx[0] = 1.0
        return cls.from_blocks(d + 1, gxx, None, h, grid, normal_form=True)

    @classmethod
    def cusp(cls, n, N, h0=None):
        d = n - 1
        h = np.zeros((N + 1, d, d))
        h[0] = np.eye(d) if h0 is None else np.asarray(h0, dtype=float)
        return cls.normal(h)

    def h0(self) -> BoundaryMetric:
        return BoundaryMetric(BoundaryField(self.data[0][..., 1:, 1:], "sym2", self.grid))

    def h(self, k):
        return self.data[k][..., 1:, 1:]

    def pad(self, N):
        """Same metric (taken as an exact polynomial) with truncation order N."""
        if N < self.trunc_order:
            return self.truncate(N)
        out = np.zeros((N + 1,) + self.data.shape[1:])
        out[:len(self.data)] = self.data
        return CollarMetric(self.n, out, self.grid, self.normal_form)

    def truncate(self, N):
        return CollarMetric(self.n, self.data[:N + 1], self.grid, self.normal_form)

    def with_data(self, data, normal_form=False):
        return CollarMetric(self.n, data, self.grid, normal_form)

    def dxx_inverse(self):
        """The series of |dx|^2_gbar = gbar^{xx}."""
        return S.inv_matrix(self.data)[..., 0, 0]

    def is_ah(self, tol=1e-12):
        return bool(np.max(np.abs(self.dxx_inverse()[0] - 1.0)) <= tol)


# ---------------------------------------------------------------------------
# 0-derivatives and curvature

def zero_derivatives(a, grid, n):
    """Stack of (x d_x a, x d_{y^1} a, ...) along a new leading axis of size n."""
    out = np.empty((n,) + a.shape)
    out[0] = S.xdx(a)
    for al in range(n - 1):
        out[al + 1] = S.xdy(a, grid, al)
    return out


@dataclass
class CurvatureBundle:
    """x*Christoffel symbols, x^2*Ricci and x^2*scalar curvature of gbar."""

    n: int
    grid: Grid | None
    ginv: np.ndarray
    xgamma: np.ndarray
    ricci: np.ndarray | None = None
    scalar: np.ndarray | None = None

    _BLOCKS = {
        "x_xx": (0, 0, 0), "x_xa": (0, 0, "a"), "x_ab": (0, "a", "b"),
        "c_xa": ("c", 0, "a"), "c_xx": ("c", 0, 0), "c_ab": ("c", "a", "b"),
    }

    def christoffel_block(self, name):
        """Block of x*Gamma, e.g. ``"x_ab"`` is x Gamma^x_{ab}, ``"c_xa"`` is x Gamma^c_{xa}."""
        idx = tuple(0 if s == 0 else slice(1, None) for s in self._BLOCKS[name])
        return self.xgamma[(Ellipsis,) + idx]

    def ricci_block(self, name):
        sl = {"xx": (0, 0), "xa": (0, slice(1, None)), "ab": (slice(1, None), slice(1, None))}[name]
        return self.ricci[(Ellipsis,) + sl]


def christoffel(g: BlockSeries) -> CurvatureBundle:
    G = g.data
    n = g.n
    try:
        ginv = S.inv_matrix(G)
    except S.SeriesError as exc:
        raise GeometryError(str(exc)) from exc
    ginv = 0.5 * (ginv + np.swapaxes(ginv, -1, -2))
    D = zero_derivatives(G, g.grid, n)          # D[i, k, ..., j, l] = x d_i g_jl
    Dg = np.moveaxis(D, 0, -3)                   # (..., i, j, l)
    # T[..., l, i, j] = D_i g_jl + D_j g_il - D_l g_ij
    T = np.einsum("...ijl->...lij", Dg) + np.einsum("...jil->...lij", Dg) - Dg
    P = 0.5 * S.conv(ginv, T, "...kl,...lij->...kij")
    return CurvatureBundle(n, g.grid, ginv, P)


def ricci(g: BlockSeries, bundle: CurvatureBundle | None = None) -> CurvatureBundle:
    if g.trunc_order < 2:
        raise GeometryError("ricci needs truncation order >= 2")
    b = bundle or christoffel(g)
    n, P = g.n, b.xgamma
    DP = zero_derivatives(P, g.grid, n)          # DP[c, ..., k, i, j]
    t1 = sum(DP[c][..., c, :, :] for c in range(n)) - P[..., 0, :, :]
    Q = np.einsum("...kki->...i", P)              # x Gamma^k_{ki}
    DQ = zero_derivatives(Q, g.grid, n)           # DQ[j, ..., i]
    t2 = np.moveaxis(DQ, 0, -1).copy()            # [..., i, j] = D_j Q_i
    t2[..., :, 0] -= Q
    t3 = S.conv(Q, P, "...l,...lij->...ij")
    t4 = S.conv(P, P, "...kjl,...lik->...ij")
    R = t1 - t2 + t3 - t4
    b.ricci = R
    b.scalar = S.conv(b.ginv, R, "...ij,...ij->...")
    return b


def ebar_from_bundle(g: BlockSeries, b: CurvatureBundle):
    n, G = g.n, g.data
    gxx_inv = b.ginv[..., 0, 0]
    hess = -b.xgamma[..., 0, :, :]               # x Hess(x)_{ij}
    lap = S.conv(b.ginv, hess, "...ij,...ij->...")   # x Laplacian(x)
    dxx = gxx_inv.copy()
    dxx[0] = dxx[0] - 1.0
    E = (-(n - 1) * S.conv(dxx, G, "...,...ij->...ij")
         + (n - 2) * hess
         + S.conv(lap, G, "...,...ij->...ij")
         + b.ricci)
    return 0.5 * (E + np.swapaxes(E, -1, -2))


def ebar(g: BlockSeries) -> BlockSeries:
    """The conformally rescaled Einstein operator, E(g) = x^-2 Ebar(gbar)."""
    b = ricci(g)
    return BlockSeries(g.n, ebar_from_bundle(g, b), g.grid)


def scalar_excess(g: BlockSeries):
    """Series of S(g) + n(n-1) = tr^gbar Ebar."""
    b = ricci(g)
    E = ebar_from_bundle(g, b)
    return S.conv(b.ginv, E, "...ij,...ij->...")


def einstein_defect_order(g: CollarMetric, tol=None) -> int:
    """Largest k with every Ebar coefficient below ``tol`` at powers < k.

    The metric is APE exactly when the result is >= n.
    """
    if not getattr(g, "normal_form", False):
        raise GeometryError("einstein_defect_order needs a normal-form metric")
    norms = ebar(g).coefficient_norms()
    if tol is None:
        tol = PARITY_TOL * max(1.0, float(np.max(g.coefficient_norms())))
    for p, v in enumerate(norms):
        if v > tol:
            return p
    return g.trunc_order + 1


# ---------------------------------------------------------------------------
# linearization by central differences

def _perturbed(g, v, j, eps):
    w = S.shift(v.data, j, g.trunc_order)
    return BlockSeries(g.n, g.data + eps * w, g.grid)


def linearize(fn, g: BlockSeries, v: BlockSeries, j: int, eps=None, richardson=True):
    """Directional derivative of ``fn`` (BlockSeries -> array) along x^j v.

    Returns ``(derivative, error_estimate)``; with ``richardson`` the step-h
    and step-h/2 central differences are combined to fourth order.
    """
    if eps is None:
        gnorm = float(np.max(np.abs(g.data)))
        vnorm = float(np.max(np.abs(v.data)))
        eps = 1e-5 * (1.0 + gnorm) / (1.0 + vnorm)
    if eps < 1e-12:
        raise GeometryError("linearization step underflow")

    def central(h):
        return (np.asarray(fn(_perturbed(g, v, j, h)))
                - np.asarray(fn(_perturbed(g, v, j, -h)))) / (2.0 * h)

    d1 = central(eps)
    if not richardson:
        return d1, float("nan")
    d2 = central(0.5 * eps)
    d = (4.0 * d2 - d1) / 3.0
    return d, float(np.max(np.abs(d - d2), initial=0.0))


def linearize_ebar(g: BlockSeries, v: BlockSeries, j: int, eps=None) -> BlockSeries:
    d, _ = linearize(lambda h: ebar(h).data, g, v, j, eps)
    return BlockSeries(g.n, 0.5 * (d + np.swapaxes(d, -1, -2)), g.grid)


# ---------------------------------------------------------------------------
# parity tables of the curvature coefficients

@dataclass
class AppendixRow:
    component: str
    parity: str                 # "even" or "odd"
    predicted_order: int
    measured_order: int
    predicted: float | None = None
    measured: float | None = None
    rel_error: float | None = None
    ok: bool = True


def _measure_order(arr, parity, tol):
    axes = tuple(range(1, arr.ndim))
    norms = np.max(np.abs(arr), axis=axes) if axes else np.abs(arr)
    if parity == "even":
        return S.evenness_from_norms(norms, tol)[0]
    return S.oddness_from_norms(norms, tol)


def _rel(meas, pred):
    diff = float(np.max(np.abs(meas - pred), initial=0.0))
    scale = max(float(np.max(np.abs(pred), initial=0.0)), float(np.max(np.abs(meas), initial=0.0)))
    return 0.0 if scale == 0.0 else diff / scale


def appendix_report(g: CollarMetric, rel_tol=1e-9) -> list:
    """Measured vs predicted parity and first-odd coefficients of both tables.

    Needs a metric even to order 2m-2 with gxx(0) = 1, gxa(0) = 0.
    """
    n = g.n
    m = n // 2
    k = 2 * m - 1
    if g.trunc_order < k + 2:
        raise GeometryError(f"coefficient tables need truncation order >= {k + 2}")
    G = g.data
    tol = PARITY_TOL * max(1.0, float(np.max(np.abs(G))))
    h0inv = np.linalg.inv(G[0][..., 1:, 1:])
    gab_k = G[k][..., 1:, 1:]
    gxx_k = G[k][..., 0, 0]

    b = ricci(g)
    D = zero_derivatives(G, g.grid, n)
    rows = []

    def row(name, arr, parity, order, pred=None, meas=None):
        mo = _measure_order(arr, parity, tol)
        r = AppendixRow(name, parity, order, mo)
        ok = mo >= order
        if pred is not None:
            r.predicted = float(np.max(np.abs(pred), initial=0.0))
            r.measured = float(np.max(np.abs(meas), initial=0.0))
            r.rel_error = _rel(meas, pred)
            ok = ok and r.rel_error <= rel_tol
        r.ok = bool(ok)
        rows.append(r)

    tang = D[1:]
    row("x d_x gbar_xx", D[0][..., 0, 0], "even", 2 * m - 2,
        k * gxx_k, D[0][k][..., 0, 0])
    row("x d_a gbar_xx", np.moveaxis(tang[..., 0, 0], 0, -1), "odd", 2 * m - 1)
    row("x d_x gbar_xm", D[0][..., 0, 1:], "odd", 2 * m - 1)
    row("x d_n gbar_xm", np.moveaxis(tang[..., 0, 1:], 0, -1), "even", 2 * m)
    row("x d_x gbar_ab", D[0][..., 1:, 1:], "even", 2 * m - 2,
        k * gab_k, D[0][k][..., 1:, 1:])
    row("x d_n gbar_ab", np.moveaxis(tang[..., 1:, 1:], 0, -1), "odd", 2 * m - 1)

    P = b.xgamma
    row("x Gamma^x_xx", P[..., 0, 0, 0], "even", 2 * m - 2,
        0.5 * k * gxx_k, P[k][..., 0, 0, 0])
    row("x Gamma^x_ab", P[..., 0, 1:, 1:], "even", 2 * m - 2,
        -0.5 * k * gab_k, P[k][..., 0, 1:, 1:])
    row("x Gamma^x_ax", P[..., 0, 1:, 0], "odd", 2 * m - 1)
    row("x Gamma^c_ax", P[..., 1:, 1:, 0], "even", 2 * m - 2,
        0.5 * k * np.einsum("...cb,...ab->...ca", h0inv, gab_k), P[k][..., 1:, 1:, 0])
    row("x Gamma^c_xx", P[..., 1:, 0, 0], "odd", 2 * m - 1)
    row("x Gamma^c_ab", P[..., 1:, 1:, 1:], "odd", 2 * m - 1)

    R = b.ricci
    tr_k = np.einsum("...ab,...ab->...", h0inv, gab_k)
    row("x^2 Rc_xx", R[..., 0, 0], "even", 2 * m - 2,
        -k * (m - 1) * tr_k, R[k][..., 0, 0])
    row("x^2 Rc_ab", R[..., 1:, 1:], "even", 2 * m - 2,
        -k * (m - 1) * gab_k, R[k][..., 1:, 1:])
    A = b.ginv[..., 0, 0]
    row("gbar_xx first odd = -(gbar^xx first odd)", G[..., 0, 0], "even", 2 * m - 2,
        -A[k], gxx_k)
    return rows
