"""Special boundary defining functions, gauge changes and classification.

Both Hamilton-Jacobi problems are solved from one series identity.  With
``D_i`` the 0-derivatives and ``x' = e^w x``, the condition ``|dx'/x'|_g = 1``
multiplied by x reads

    2 gbar^{xi} D_i w + gbar^{ij} D_i w D_j w = 1 - gbar^{xx},

and coefficient k of the left side is ``2k w_k`` plus terms in w_0..w_{k-1}
(for an AH metric gbar^{xx}(0) = 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import series as S
from .boundary import BoundaryField, BoundaryMetric
from .geometry import CollarMetric, einstein_defect_order, zero_derivatives
from .series import TruncatedSeries

CLASSIFY_TOL = 1e-10


class GaugeError(ValueError):
    pass


@dataclass(frozen=True)
class ConformalFactor:
    """w with x' = e^w x; ``omega[0]`` is the boundary value w_0."""

    omega: np.ndarray
    grid: object = None

    @property
    def boundary_value(self) -> BoundaryField:
        return BoundaryField(self.omega[0], "scalar", self.grid)

    @property
    def series(self) -> TruncatedSeries:
        return TruncatedSeries(self.omega, "scalar", self.grid)

    @property
    def trunc_order(self):
        return len(self.omega) - 1


def _hj_lhs(ginv, w, grid, n):
    Dw = np.moveaxis(zero_derivatives(w, grid, n), 0, -1)
    lin = 2.0 * S.conv(ginv[..., 0, :], Dw, "...i,...i->...")
    quad = S.conv(ginv, S.conv(Dw, Dw, "...i,...j->...ij"), "...ij,...ij->...")
    return lin + quad


def solve_hj(g: CollarMetric, omega0=None) -> ConformalFactor:
    """Solve for w with w(0) = omega0 so that e^w x is a special bdf."""
    ginv = S.inv_matrix(g.data)
    if np.max(np.abs(ginv[0][..., 0, 0] - 1.0)) > 1e-12:
        raise GaugeError("metric is not AH relative to x (gbar^xx(0) != 1)")
    N = g.trunc_order
    gshape = g.data.shape[1:-2]
    w = np.zeros((N + 1,) + gshape)
    if omega0 is not None:
        w[0] = omega0.data if isinstance(omega0, BoundaryField) else omega0
    rhs = -ginv[..., 0, 0]
    rhs[0] += 1.0
    for k in range(1, N + 1):
        lhs = _hj_lhs(ginv[:k + 1], w[:k + 1], g.grid, g.n)
        w[k] = (rhs[k] - lhs[k]) / (2.0 * k * ginv[0][..., 0, 0])
    return ConformalFactor(w, g.grid)


def solve_hj_normal(g: CollarMetric, omega0: BoundaryField) -> ConformalFactor:
    """Special bdf of the representative e^{2 w0} h0 for a normal-form metric."""
    if not g.normal_form:
        raise GaugeError("solve_hj_normal needs a normal-form metric")
    if g.trunc_order < 2:
        raise GaugeError("truncation order must be >= 2")
    return solve_hj(g, omega0)


def solve_hj_general(g: CollarMetric, target_h0: BoundaryMetric | None = None) -> ConformalFactor:
    """Special bdf x' = e^w x with w(0) = 0 (so h0 is kept)."""
    if target_h0 is not None:
        h0 = g.data[0][..., 1:, 1:]
        if np.max(np.abs(target_h0.h0.data - h0)) > 1e-12 * max(1.0, np.max(np.abs(h0))):
            raise GaugeError("target h0 must equal the restriction of gbar")
    return solve_hj(g)


def hj_residual(g: CollarMetric, w: ConformalFactor, xs):
    """Sup over the boundary of the exact HJ residual at sample points ``xs``.

    gbar is evaluated as the polynomial given by its coefficients and inverted
    pointwise, so the residual decays like x^(N+1).
    """
    G, om = g.data, w.omega
    out = []
    for x in np.atleast_1d(xs):
        p = x ** np.arange(len(G))
        gx = np.tensordot(p, G, axes=(0, 0))
        ginv = np.linalg.inv(gx)
        k = np.arange(len(om))
        pw = x ** k
        Dw = [np.tensordot(k * pw, om, axes=(0, 0))]
        for al in range(g.n - 1):
            dom = g.grid.diff(om, al, lead=1) if g.grid is not None else np.zeros_like(om)
            Dw.append(x * np.tensordot(pw, dom, axes=(0, 0)))
        Dw = np.stack(Dw, axis=-1)
        res = (2.0 * np.einsum("...i,...i->...", ginv[..., 0, :], Dw)
               + np.einsum("...ij,...i,...j->...", ginv, Dw, Dw)
               - (1.0 - ginv[..., 0, 0]))
        out.append(float(np.max(np.abs(res))))
    return np.array(out)


# ---------------------------------------------------------------------------
# re-expressing the metric

def change_bdf(g: CollarMetric, w: ConformalFactor) -> CollarMetric:
    """gbar' = (x')^2 g in coordinates (x', y) where x' = e^w x."""
    N = g.trunc_order
    if w.trunc_order < N:
        raise GaugeError("conformal factor series is shorter than the metric")
    om = w.omega[:N + 1]
    if not np.any(om):
        return CollarMetric(g.n, g.data.copy(), g.grid, g.normal_form)
    # x = x' u with u = exp(-w(x' u, y)), solved by fixed point
    u = np.zeros_like(om)
    u[0] = np.exp(-om[0])
    for _ in range(N + 1):
        X = S.shift(u, 1, N)
        u = S.exp(-S.compose_x(om, X))
    X = S.shift(u, 1, N)
    Gc = S.compose_x(g.data, X)                   # gbar(X(x', y), y)
    a = u + S.xdx(u)                              # dx/dx'
    b = np.stack([S.xdy(u, g.grid, al) for al in range(g.n - 1)], axis=-1)   # dx/dy
    n = g.n
    J = np.zeros(u.shape + (n, n))                # J[k, i] = d(old k)/d(new i)
    J[..., 0, 0] = a
    J[..., 0, 1:] = b
    J[0, ..., 1:, 1:] = np.eye(n - 1)
    GJ = S.conv(Gc, J, "...kl,...lj->...kj")
    new = S.conv(J, GJ, "...ki,...kj->...ij")
    new = S.conv(S.power(u, -2.0), new, "...,...ij->...ij")
    return CollarMetric(n, new, g.grid, normal_form=False)


def _compose_y(f, delta, grid, order):
    """f(x, y + delta(x, y)) by Taylor expansion in y; delta(0) = 0."""
    d = delta.shape[-1]
    out = f[:order + 1].copy()
    extra = f.ndim - delta.ndim + 1

    def dfs(deriv, prod, start, depth, mult):
        for al in range(start, d):
            dv = grid.diff(deriv, al, lead=1)
            de = delta[..., al].reshape(delta.shape[:-1] + (1,) * extra)
            p = S.conv(prod, de, order=order)
            lead = depth + 1
            if lead > order or not np.any(p):
                continue
            m = dict(mult)
            m[al] = m.get(al, 0) + 1
            coef = 1.0 / math.prod(math.factorial(c) for c in m.values())
            out[:] += coef * S.conv(dv, p, order=order)
            dfs(dv, p, al, lead, m)

    one = np.zeros((order + 1,) + (1,) * (f.ndim - 1))
    one[0] = 1.0
    dfs(f[:order + 1], one, 0, 0, {})
    return out


def remove_cross(g: CollarMetric) -> CollarMetric:
    """Straighten gbar along the gradient lines of x; x must be special.

    Returns the normal form ds^2 + h(s) in coordinates constant along the
    gradient flow of x.
    """
    N, n = g.trunc_order, g.n
    ginv = S.inv_matrix(g.data)
    # higher orders get a looser bound: on a grid change_bdf leaves aliasing there
    dev = np.abs(ginv[..., 0, 0] - 1.0 * (np.arange(N + 1) == 0).reshape((-1,) + (1,) * (ginv.ndim - 3)))
    scale = max(1.0, float(np.max(np.abs(g.data))))
    if np.max(dev[0]) > 1e-10 or np.max(dev[1:], initial=0.0) > 1e-4 * scale:
        raise GaugeError("x is not a special defining function for this metric")
    h = g.data[..., 1:, 1:]
    out_h = h.copy()
    if g.grid is not None:
        W = ginv[..., 0, 1:]                      # gradient of x = d_x + W^a d_a
        delta = np.zeros(W.shape)
        for _ in range(N + 1):
            delta = S.antiderivative(_compose_y(W, delta, g.grid, N - 1))
        hY = _compose_y(h, delta, g.grid, N)
        dY = np.stack([g.grid.diff(delta, al, lead=1) for al in range(n - 1)], axis=-2)
        dY[0] += np.eye(n - 1)                    # dY[..., a, c] = d_a Y^c
        t = S.conv(hY, dY, "...cd,...bd->...cb")
        out_h = S.conv(dY, t, "...ac,...cb->...ab")
    data = np.zeros_like(g.data)
    data[0, ..., 0, 0] = 1.0
    data[..., 1:, 1:] = out_h
    return CollarMetric(n, data, g.grid, normal_form=True)


def normal_form(g: CollarMetric) -> CollarMetric:
    """Normal form keeping the boundary metric h0 = gbar|_{x=0}."""
    if g.normal_form:
        return g
    return remove_cross(change_bdf(g, solve_hj_general(g)))


def change_representative(g: CollarMetric, omega0: BoundaryField) -> CollarMetric:
    """Normal form of the same metric relative to e^{2 w0} h0."""
    gn = normal_form(g)
    return remove_cross(change_bdf(gn, solve_hj_normal(gn, omega0)))


# ---------------------------------------------------------------------------
# classification

@dataclass(frozen=True)
class ClassificationResult:
    is_AH: bool
    evenness_order: int
    is_partially_even: bool
    vr_trace_norm: float
    is_VR: bool
    ape_defect_order: int

    def as_dict(self):
        return {
            "is_AH": self.is_AH, "evenness_order": self.evenness_order,
            "is_partially_even": self.is_partially_even,
            "vr_trace_norm": self.vr_trace_norm, "is_VR": self.is_VR,
            "ape_defect_order": self.ape_defect_order,
        }


def vr_trace(g: CollarMetric):
    """tr^{h0} h_{n-1} of a normal-form metric (boundary array)."""
    k = g.n - 1
    if g.trunc_order < k:
        raise GaugeError(f"truncation order must be >= {k}")
    return np.einsum("...ab,...ab->...", np.linalg.inv(g.h(0)), g.h(k))


def classify(g: CollarMetric, tol=CLASSIFY_TOL) -> ClassificationResult:
    scale = max(1.0, float(np.max(np.abs(g.data))))
    if not g.is_ah(tol * scale):
        return ClassificationResult(False, g.evenness_order(tol * scale), False,
                                    float("nan"), False, 0)
    gn = normal_form(g)
    ev = gn.evenness_order(tol * scale)
    pe = ev >= g.n - 2
    vr = float(np.max(np.abs(vr_trace(gn))))
    is_vr = pe and vr <= tol * scale
    ape = einstein_defect_order(gn, tol * scale)
    return ClassificationResult(True, ev, pe, vr, is_vr, ape)
