"""Normalized Ricci flow d/dt gbar = -2 Ebar(gbar) in a fixed defining function.

Two engines:

* the jet engine evolves the series coefficients of gbar; coefficient k of
  Ebar only involves coefficients <= k, so the truncated system is exact;
* the grid engine evolves x-only metrics sampled on uniform nodes of
  [0, x_max] with fourth-order differences, values pinned at both ends.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import series as S
from .boundary import TWO_PI, integrate_array
from .geometry import CollarMetric, ebar
from .gauge import normal_form, solve_hj_general, vr_trace
from .renorm import (RenormError, jacobian_series, jacobian_values, polynomial_values,
                     power_log_fp, simpson)

BLOWUP = 1e8
DEFAULT_CFL = 0.2


class FlowError(RuntimeError):
    pass


class BlowUpError(FlowError):
    """Non-finite values or coefficient norms above BLOWUP."""


def rk4_step(f, y, dt):
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _guard(y, t):
    if not np.all(np.isfinite(y)):
        raise BlowUpError(f"non-finite values at t={t:.6g}")
    if np.max(np.abs(y)) > BLOWUP:
        raise BlowUpError(f"blow-up detected at t={t:.6g}")


def _nsteps(T, dt):
    if dt <= 0:
        raise FlowError("dt must be positive")
    n = int(round(T / dt))
    if not math.isclose(n * dt, T, rel_tol=1e-9, abs_tol=1e-15):
        raise FlowError("T must be an integer multiple of dt")
    return n


# ---------------------------------------------------------------------------
# jet engine

def jet_rhs(g: CollarMetric) -> np.ndarray:
    """Series of d/dt gbar = -2 Ebar(gbar)."""
    return -2.0 * ebar(g).data


@dataclass
class JetFlowState:
    t: float
    g: CollarMetric
    dt: float
    method: str = "RK4"


def jet_stepper(g0: CollarMetric):
    n, grid = g0.n, g0.grid

    def f(data):
        return jet_rhs(CollarMetric(n, data, grid))
    return f


def jet_flow_run(g0: CollarMetric, T, dt, every=1, callback=None):
    """RK4 trajectory of the coefficient system, sampled every ``every`` steps."""
    if not g0.is_ah():
        raise FlowError("initial metric is not AH")
    f = jet_stepper(g0)
    steps = _nsteps(T, dt)
    y = g0.data.copy()
    out = [JetFlowState(0.0, CollarMetric(g0.n, y, g0.grid), dt)]
    for s in range(1, steps + 1):
        y = rk4_step(f, y, dt)
        t = s * dt
        _guard(y, t)
        if s % every == 0 or s == steps:
            st = JetFlowState(t, CollarMetric(g0.n, y, g0.grid), dt)
            out.append(st)
            if callback is not None:
                callback(st)
    return out


# ---------------------------------------------------------------------------
# grid engine

_D1_LEFT = (np.array([-25.0, 48.0, -36.0, 16.0, -3.0, 0.0]),
            np.array([-3.0, -10.0, 18.0, -6.0, 1.0, 0.0]))
_D2_LEFT = (np.array([45.0, -154.0, 214.0, -156.0, 61.0, -10.0]),
            np.array([10.0, -15.0, -4.0, 14.0, -6.0, 1.0]))


def fd_matrices(M, dx):
    """Dense fourth-order first and second difference matrices on M+1 nodes."""
    if M < 6:
        raise FlowError("need at least 7 nodes")
    D1 = np.zeros((M + 1, M + 1))
    D2 = np.zeros((M + 1, M + 1))
    c1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0])
    c2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0])
    for i in range(2, M - 1):
        D1[i, i - 2:i + 3] = c1
        D2[i, i - 2:i + 3] = c2
    for i in range(2):
        D1[i, :6] = _D1_LEFT[i]
        D2[i, :6] = _D2_LEFT[i]
        D1[M - i, M - 5:] = -_D1_LEFT[i][::-1]
        D2[M - i, M - 5:] = _D2_LEFT[i][::-1]
    return D1 / (12.0 * dx), D2 / (12.0 * dx * dx)


def grid_ebar(x, G, D1, D2):
    """Pointwise Ebar of an x-only metric sampled as G[i] = gbar(x_i)."""
    n = G.shape[-1]
    Gp = np.einsum("ij,j...->i...", D1, G)
    Gpp = np.einsum("ij,j...->i...", D2, G)
    Gi = np.linalg.inv(G)
    Gi = 0.5 * (Gi + np.swapaxes(Gi, -1, -2))
    Gip = -Gi @ Gp @ Gi

    def lowered(A):
        # T[l, i, j] = d_i g_jl + d_j g_il - d_l g_ij with only d_x nonzero
        T = np.zeros(A.shape[:-2] + (n, n, n))
        T[..., :, 0, :] += A
        T[..., :, :, 0] += A
        T[..., 0, :, :] -= A
        return T

    T, Tp = lowered(Gp), lowered(Gpp)
    Gam = 0.5 * np.einsum("...kl,...lij->...kij", Gi, T)
    Gam_p = 0.5 * (np.einsum("...kl,...lij->...kij", Gip, T)
                   + np.einsum("...kl,...lij->...kij", Gi, Tp))
    Q = np.einsum("...kki->...i", Gam)
    Qp = np.einsum("...kki->...i", Gam_p)
    Rc = Gam_p[..., 0, :, :].copy()
    Rc[..., :, 0] -= Qp
    Rc += np.einsum("...l,...lij->...ij", Q, Gam)
    Rc -= np.einsum("...kjl,...lik->...ij", Gam, Gam)
    xs = x.reshape((-1, 1, 1))
    hess = -Gam[..., 0, :, :]
    lap = np.einsum("...ij,...ij->...", Gi, hess)[:, None, None]
    E = (-(n - 1) * (Gi[..., 0, 0][:, None, None] - 1.0) * G
         + xs * ((n - 2) * hess + lap * G) + xs * xs * Rc)
    return 0.5 * (E + np.swapaxes(E, -1, -2))


@dataclass
class GridFlowState:
    t: float
    x: np.ndarray
    G: np.ndarray          # (M+1, n, n)
    dx: float
    dt: float = 0.0

    @property
    def n(self):
        return self.G.shape[-1]

    @classmethod
    def from_metric(cls, g: CollarMetric, x_max, dx):
        """Sample an x-only series metric (taken as a polynomial) on nodes."""
        if g.grid is not None:
            raise FlowError("the grid engine only handles x-only (constant backend) metrics")
        if np.any(g.data[..., 0, 1:]):
            raise FlowError("x-only metrics must have a vanishing cross block")
        M = int(round(x_max / dx))
        if not math.isclose(M * dx, x_max, rel_tol=1e-9):
            raise FlowError("x_max must be an integer multiple of dx")
        x = np.arange(M + 1) * dx
        G = np.tensordot(x[:, None] ** np.arange(len(g.data)), g.data, axes=(1, 0))
        return cls(0.0, x, G, dx)


def grid_stepper(state: GridFlowState):
    D1, D2 = fd_matrices(len(state.x) - 1, state.dx)
    x = state.x

    def f(G):
        r = -2.0 * grid_ebar(x, G, D1, D2)
        r[0] = 0.0
        r[-1] = 0.0
        return r
    return f


def cfl_number(state: GridFlowState, dt):
    """dt times the largest diffusion coefficient x^2 gbar^xx over dx^2."""
    gxx_inv = np.linalg.inv(state.G)[:, 0, 0]
    return dt * float(np.max(state.x ** 2 * gxx_inv)) / state.dx ** 2


def grid_flow_run(state: GridFlowState, T, dt, cfl=DEFAULT_CFL, every=1, callback=None):
    c = cfl_number(state, dt)
    if c > cfl:
        raise FlowError(f"CFL violation: {c:.3g} > {cfl}")
    f = grid_stepper(state)
    steps = _nsteps(T, dt)
    G = state.G.copy()
    out = [GridFlowState(state.t, state.x, G, state.dx, dt)]
    for s in range(1, steps + 1):
        G = rk4_step(f, G, dt)
        t = state.t + s * dt
        _guard(G, t)
        if s % every == 0 or s == steps:
            st = GridFlowState(t, state.x, G, state.dx, dt)
            out.append(st)
            if callback is not None:
                callback(st)
    return out


def fit_boundary_coefficients(state: GridFlowState, degree=10, window=0.1):
    """Least-squares polynomial fit of each gbar component near x = 0.

    The constant term is the pinned node at x = 0.  Returns coefficients
    with shape (degree+1, n, n).
    """
    sel = state.x <= window + 1e-12
    x = state.x[sel]
    if len(x) <= degree:
        raise FlowError("not enough nodes in the fitting window")
    V = np.vander(x / window, degree + 1, increasing=True)[:, 1:]
    Y = (state.G[sel] - state.G[0]).reshape(len(x), -1)
    c, *_ = np.linalg.lstsq(V, Y, rcond=None)
    c /= (window ** np.arange(1, degree + 1))[:, None]
    out = np.empty((degree + 1,) + state.G.shape[1:])
    out[0] = state.G[0]
    out[1:] = c.reshape((degree,) + state.G.shape[1:])
    return out


# ---------------------------------------------------------------------------
# first odd coefficients

def mu_nu_extract(g: CollarMetric, G0: CollarMetric | None = None):
    """(mu, nu): first odd coefficients of tr^{G0} gbar and of gbar_xx.

    ``G0`` is the frozen leading part dx^2 + h0; only its h0 enters.
    """
    k = g.n - 1
    if g.trunc_order < k:
        raise FlowError(f"truncation order must be >= {k}")
    h0 = (G0 if G0 is not None else g).data[0][..., 1:, 1:]
    nu = g.data[k][..., 0, 0]
    mu = nu + np.einsum("...ab,...ab->...", np.linalg.inv(h0), g.data[k][..., 1:, 1:])
    return mu, nu


def mu_nu_closed_form(mu0, nu0, m, t):
    if m < 2:
        raise FlowError("m must be >= 2")
    e = np.exp(-2.0 * (2 * m - 1) * np.asarray(t, dtype=float))
    return mu0 * e, nu0 + 0.5 * (2 * m - 3) * mu0 * (1.0 - e)


# ---------------------------------------------------------------------------
# renormalized volume along a trajectory

def _near_parts(g: CollarMetric, rhs, x_cut, order):
    """Finite parts over (0, x_cut] of x^-n J and of x^-n (1/2 tr gbar^-1 d_t gbar) J."""
    N = max(order, g.trunc_order)
    J = jacobian_series(g, N)
    Gp = g.pad(N).data
    R = np.zeros_like(Gp)
    R[:len(rhs)] = rhs[:N + 1]
    half_tr = 0.5 * S.conv(S.inv_matrix(Gp), R, "...ij,...ji->...")
    dJ = S.conv(half_tr, J)
    h0 = g.h0()
    vol = flux = 0.0
    for k in range(N + 1):
        fp = power_log_fp(k - g.n, 0, x_cut)[0]
        vol += float(integrate_array(J[k], h0, g.grid)) * fp
        flux += float(integrate_array(dJ[k], h0, g.grid)) * fp
    return vol, flux


def _moment(q, a, b):
    if q == -1:
        return math.log(b / a)
    return (b ** (q + 1) - a ** (q + 1)) / (q + 1)


def _simpson_weights(x, x_cut, power=0):
    """Weights w on the nodes >= x_cut with sum w f = int f x^power dx.

    Product Simpson: f is interpolated by quadratics on pairs of intervals
    (a cubic closes an odd count) and integrated exactly against x^power,
    so a steep x^-n weight costs no accuracy.  power = 0 is plain Simpson
    with the 3/8 rule.
    """
    sel = x >= x_cut - 1e-12
    xs = x[sel]
    if len(xs) and abs(xs[0] - x_cut) > 1e-9 * max(1.0, x_cut):
        raise FlowError("x_cut must be a grid node")
    m = len(xs) - 1
    if m < 2:
        raise FlowError("need at least two intervals between x_cut and x_max")
    w = np.zeros(m + 1)
    simp = m if m % 2 == 0 else m - 3
    panels = [(i, 3) for i in range(0, simp, 2)]
    if simp != m:
        panels.append((simp, 4))
    for i, k in panels:
        nodes = xs[i:i + k]
        c = nodes[0]
        u = nodes - c                              # local coordinate keeps V well conditioned
        V = np.vander(u, k, increasing=True)
        mom = np.array([sum(math.comb(j, r) * (-c) ** (j - r) * _moment(r + power, nodes[0], nodes[-1])
                            for r in range(j + 1)) for j in range(k)])
        w[i:i + k] += np.linalg.solve(V.T, mom)
    return sel, w


def _far_nodes(x, G, R, x_cut, n):
    """Sums over [x_cut, x_max] of the volume density and its rate on the nodes."""
    sel, w = _simpson_weights(x, x_cut, -n)
    Gs, Rs = G[sel], R[sel]
    J = np.sqrt(np.linalg.det(Gs) / np.linalg.det(G[0][1:, 1:]))
    rate = 0.5 * np.einsum("kij,kji->k", np.linalg.inv(Gs), Rs) * J
    vb = TWO_PI ** (n - 1)
    return vb * float(w @ J), vb * float(w @ rate)


def _far_poly(g: CollarMetric, rhs, x_cut, x_max):
    """Same as _far_nodes for the polynomial jet model, adaptive Simpson."""
    h0 = g.h0()
    xshape = (-1,) + (1,) * (g.data.ndim - 3)

    def dens(xs):
        return integrate_array(jacobian_values(g, xs) * np.reshape(xs, xshape) ** (-g.n), h0, g.grid)

    def rate(xs):
        gx = polynomial_values(g.data, xs)
        rx = polynomial_values(rhs, xs)
        tr = 0.5 * np.einsum("...ij,...ji->...", np.linalg.inv(gx), rx)
        vals = tr * jacobian_values(g, xs) * np.reshape(xs, xshape) ** (-g.n)
        return integrate_array(vals, h0, g.grid)

    return simpson(dens, x_cut, x_max), simpson(rate, x_cut, x_max, atol=1e-13)


def special_bdf_correction(g: CollarMetric):
    """V_b{w J}_{n-1}: RenV relative to the special bdf minus RenV relative to x."""
    k = g.n - 1
    w = solve_hj_general(g).omega
    J = jacobian_series(g, k)
    return float(integrate_array(S.conv(w[:k + 1], J)[k], g.h0(), g.grid))


@dataclass
class DiagnosticsRow:
    t: float
    mu: float
    nu: float
    renv: float
    residual: float
    evenness_order: int
    vr_trace_norm: float
    xval_gap: float | None = None

    FIELDS = ("t", "mu", "nu", "renv", "residual", "evenness_order", "vr_trace_norm")

    def values(self, with_gap=False):
        vals = [self.t, self.mu, self.nu, self.renv, self.residual,
                self.evenness_order, self.vr_trace_norm]
        return vals + [self.xval_gap] if with_gap else vals


@dataclass
class FlowConfig:
    T: float = 0.1
    dt: float = 1e-3
    engine: str = "jet"
    dx: float = 1.0 / 100
    x_max: float = 0.5
    x_cut: float = 0.1
    outputs: int = 11
    lag: int = 10
    order: int = 48
    cfl: float = DEFAULT_CFL
    fit_degree: int = 10
    fit_window: float = 0.1
    xval_degree: int = 3
    xval_window: float = 0.2

    def __post_init__(self):
        if self.engine not in ("jet", "grid", "both"):
            raise FlowError(f"unknown engine {self.engine!r}")
        if not 0 < self.x_cut < self.x_max:
            raise FlowError("need 0 < x_cut < x_max")


@dataclass
class FlowResult:
    config: FlowConfig
    rows: dict = field(default_factory=dict)     # engine -> list of DiagnosticsRow
    jet: dict = field(default_factory=dict)      # step -> CollarMetric
    grid: dict = field(default_factory=dict)     # step -> GridFlowState
    renv: dict = field(default_factory=dict)     # engine -> step -> (renv_x, rate, corr)
    drift: float = 0.0                           # largest change of gbar at x = 0


def _sample_plan(steps, outputs, lag):
    """Output steps and, for each, the three steps of its time difference."""
    outs = sorted({int(round(i * steps / max(outputs - 1, 1))) for i in range(outputs)})
    # lag <= steps/3 leaves room for a central, forward or backward stencil at every output
    lag = max(1, min(lag, steps // 3)) if steps >= 3 else 0
    plan = {}
    for c in outs:
        if lag == 0:
            plan[c] = None
        elif c - lag >= 0 and c + lag <= steps:
            plan[c] = ("c", (c - lag, c, c + lag), lag)
        elif c + 2 * lag <= steps:
            plan[c] = ("f", (c, c + lag, c + 2 * lag), lag)
        else:
            plan[c] = ("b", (c - 2 * lag, c - lag, c), lag)
    return outs, plan


def _derivative(kind, f, h):
    f0, f1, f2 = f
    if kind == "c":
        return (f2 - f0) / (2.0 * h)
    if kind == "f":
        return (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h)
    return (f0 - 4.0 * f1 + 3.0 * f2) / (2.0 * h)


def _fit_window(state, cfg):
    # enough nodes for the degree, but clear of the layer the wall pin creates
    return min(max(cfg.fit_window, (cfg.fit_degree + 4) * state.dx), 0.5 * cfg.x_max)


def _metric_from_fit(state: GridFlowState, cfg: FlowConfig):
    c = fit_boundary_coefficients(state, cfg.fit_degree, _fit_window(state, cfg))
    c[..., 0, 1:] = 0.0
    c[..., 1:, 0] = 0.0
    return CollarMetric(state.n, c)


def run_flow(g0: CollarMetric, cfg: FlowConfig) -> FlowResult:
    """Evolve with the configured engine(s) and collect diagnostics rows.

    RenV uses x^z regularization in the fixed initial bdf plus the special
    bdf correction.  The jet engine integrates its polynomial model; the
    grid engine takes the near collar from a polynomial fit of the nodes.
    """
    if not g0.is_ah():
        raise FlowError("initial metric is not AH")
    steps = _nsteps(cfg.T, cfg.dt)
    outs, plan = _sample_plan(steps, cfg.outputs, cfg.lag)
    need = set(outs)
    for p in plan.values():
        if p is not None:
            need.update(p[1])
    engines = ["jet", "grid"] if cfg.engine == "both" else [cfg.engine]
    res = FlowResult(cfg)
    res.renv = {e: {} for e in engines}

    if "jet" in engines:
        fj = jet_stepper(g0)
        yj = g0.data.copy()
    if "grid" in engines:
        st0 = GridFlowState.from_metric(g0, cfg.x_max, cfg.dx)
        c = cfl_number(st0, cfg.dt)
        if c > cfg.cfl:
            raise FlowError(f"CFL violation: {c:.3g} > {cfg.cfl}")
        fg = grid_stepper(st0)
        yg = st0.G.copy()

    def record(s):
        t = s * cfg.dt
        if "jet" in engines:
            jm = CollarMetric(g0.n, yj.copy(), g0.grid)
            rate = fj(jm.data)
            vn, fn = _near_parts(jm, rate, cfg.x_cut, cfg.order)
            vf, ff = _far_poly(jm, rate, cfg.x_cut, cfg.x_max)
            res.renv["jet"][s] = (vn + vf, fn + ff, special_bdf_correction(jm))
            res.jet[s] = jm
        if "grid" in engines:
            gs = GridFlowState(t, st0.x, yg.copy(), cfg.dx, cfg.dt)
            model = _metric_from_fit(gs, cfg)
            vn, fn = _near_parts(model, _fit_rate(gs, fg, cfg), cfg.x_cut, cfg.order)
            vf, ff = _far_nodes(gs.x, gs.G, fg(gs.G), cfg.x_cut, g0.n)
            res.renv["grid"][s] = (vn + vf, fn + ff, special_bdf_correction(model))
            res.grid[s] = gs

    if 0 in need:
        record(0)
    for s in range(1, steps + 1):
        t = s * cfg.dt
        if "jet" in engines:
            yj = rk4_step(fj, yj, cfg.dt)
            _guard(yj, t)
        if "grid" in engines:
            yg = rk4_step(fg, yg, cfg.dt)
            _guard(yg, t)
        if s in need:
            try:
                record(s)
            except RenormError as e:
                raise BlowUpError(f"{e} at t={t:.6g}") from None
    if "jet" in engines:
        res.drift = float(np.max(np.abs(yj[0] - g0.data[0])))
    if "grid" in engines:
        res.drift = max(res.drift, float(np.max(np.abs(yg[0] - st0.G[0]))))

    for e in engines:
        rows = []
        for c in outs:
            renv_x, rate, corr = res.renv[e][c]
            p = plan[c]
            if p is None:
                resid = 0.0
            else:
                kind, trio, lag = p
                resid = _derivative(kind, [res.renv[e][s][0] for s in trio], lag * cfg.dt) - rate
            if e == "jet":
                model, tol = res.jet[c], 1e-10
            else:
                model, tol = _metric_from_fit(res.grid[c], cfg), 1e-6
            mu, nu = mu_nu_extract(model)
            ev = model.evenness_order(tol * max(1.0, float(np.max(np.abs(model.data)))))
            vr = float(np.max(np.abs(vr_trace(normal_form(model)))))
            gap = None
            if cfg.engine == "both":
                gap = xval_gap(res.grid[c], res.jet[c], cfg.xval_degree, cfg.xval_window)
            rows.append(DiagnosticsRow(round(c * cfg.dt, 12), float(np.max(mu)), float(np.max(nu)),
                                       float(renv_x + corr), float(resid), int(ev), vr, gap))
        res.rows[e] = rows
    return res


def _fit_rate(gs, fg, cfg):
    rate = GridFlowState(gs.t, gs.x, fg(gs.G), gs.dx)
    return fit_boundary_coefficients(rate, cfg.fit_degree, _fit_window(gs, cfg))


def xval_gap(gs: GridFlowState, jm: CollarMetric, degree=3, window=0.2):
    """Jet-vs-grid gap on the boundary coefficients of a fit near x = 0.

    The jet polynomial is subtracted from the grid values on [0, window] and
    the remainder is fitted by a polynomial of ``degree``; the gap is the
    largest fitted coefficient scaled by window^k.  With a long jet the
    Taylor tail is negligible and the gap measures the grid error.
    """
    sel = gs.x <= window + 1e-12
    x = gs.x[sel]
    if len(x) <= degree + 1:
        raise FlowError("not enough nodes in the comparison window")
    P = np.tensordot(x[:, None] ** np.arange(len(jm.data)), jm.data, axes=(1, 0))
    r = (gs.G[sel] - P).reshape(len(x), -1)
    V = np.vander(x / window, degree + 1, increasing=True)
    c, *_ = np.linalg.lstsq(V, r, rcond=None)
    return float(np.max(np.abs(c)))


# ---------------------------------------------------------------------------
# volume variation harness

@dataclass
class VolumeVariationResult:
    times: np.ndarray
    residuals: np.ndarray
    drenv: np.ndarray
    rate: np.ndarray
    residue: np.ndarray

    @property
    def max_residual(self):
        return float(np.max(np.abs(self.residuals)))

    @property
    def scale(self):
        return max(float(np.max(np.abs(self.drenv))), 1.0)


def volume_variation_residual(g0: CollarMetric, T, dt, dx, x_cut=0.05, x_max=0.35,
                       centers=None, lag=10, order=48) -> VolumeVariationResult:
    """Residual dRenV/dt - FP int 1/2 tr(gbar^-1 d_t gbar) dV_g at ``centers``.

    Runs the jet and grid engines in lock-step; RenV is the finite part of
    the near collar from the jet series plus Simpson over the grid nodes.
    The residue column is d/dt of the special-bdf correction V_b{w J}_{n-1}.
    """
    if centers is None:
        centers = [T / 2.0]
    cfg = FlowConfig(T=T, dt=dt, engine="both", dx=dx, x_max=x_max, x_cut=x_cut,
                     outputs=2, lag=lag, order=order)
    steps = _nsteps(T, dt)
    cs = [int(round(c / dt)) for c in centers]
    for c in cs:
        if c - lag < 0 or c + lag > steps:
            raise FlowError("centers must leave room for the centered difference")
    need = sorted({s for c in cs for s in (c - lag, c, c + lag)})
    fj = jet_stepper(g0)
    st0 = GridFlowState.from_metric(g0, x_max, dx)
    if cfl_number(st0, dt) > cfg.cfl:
        raise FlowError("CFL violation")
    fg = grid_stepper(st0)
    yj, yg = g0.data.copy(), st0.G.copy()
    rec = {}

    def record(s):
        jm = CollarMetric(g0.n, yj, g0.grid)
        vn, fn = _near_parts(jm, fj(yj), x_cut, order)
        vf, ff = _far_nodes(st0.x, yg, fg(yg), x_cut, g0.n)
        rec[s] = (vn + vf, fn + ff, special_bdf_correction(jm))

    if 0 in need:
        record(0)
    for s in range(1, steps + 1):
        yj = rk4_step(fj, yj, dt)
        yg = rk4_step(fg, yg, dt)
        _guard(yj, s * dt)
        _guard(yg, s * dt)
        if s in need:
            record(s)
    h = 2.0 * lag * dt
    drenv = np.array([(rec[c + lag][0] - rec[c - lag][0]) / h for c in cs])
    rate = np.array([rec[c][1] for c in cs])
    residue = np.array([(rec[c + lag][2] - rec[c - lag][2]) / h for c in cs])
    return VolumeVariationResult(np.array(cs) * dt, drenv - rate, drenv, rate, residue)
