"""The acceptance suite: ten numerical checks with fixed configurations.

Each ``check_*`` function runs one configuration and returns a
``CriterionResult`` holding the measured quantities, the threshold and
whether it passed.  ``run_all`` is what ``ahflow verify`` calls.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import flow as F
from . import presets as P
from . import renorm as R
from .boundary import TWO_PI, BoundaryField, Grid
from .gauge import hj_residual, normal_form, solve_hj_general, solve_hj_normal, vr_trace
from .geometry import BlockSeries, CollarMetric, appendix_report, linearize, ricci

# c in  d/de x^2 Rc_ab(dx^2 + delta + e x^j v) = -c j (j - 1) x^j v_ab  at e = 0;
# determined once with the finite-difference curvature oracle and frozen.
LINEARIZATION_CONSTANT = 0.5


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    threshold: str = ""
    seconds: float = 0.0

    def line(self):
        vals = ", ".join(f"{k}={_short(v)}" for k, v in self.measured.items())
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.number:2d}. {self.name}: {vals} ({self.threshold})"

    def as_dict(self):
        return {"number": self.number, "name": self.name, "passed": self.passed,
                "measured": self.measured, "threshold": self.threshold}


def _short(v):
    if isinstance(v, float):
        return f"{v:.3g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_short(x) for x in v) + "]"
    return str(v)


def _odd_low(g: CollarMetric, k):
    """Largest entry of the wrong-parity part of coefficient k (blocked sense)."""
    c = g.data[k]
    if k % 2:
        return max(float(np.max(np.abs(c[..., 0, 0]))), float(np.max(np.abs(c[..., 1:, 1:]))))
    return float(np.max(np.abs(c[..., 0, 1:])))


# ---------------------------------------------------------------------------

def check_cusp_stationary(T=0.5, dt=1e-3, N=8):
    g = P.cusp(4, N)
    drift = 0.0

    def cb(st):
        nonlocal drift
        drift = max(drift, float(np.max(np.abs(st.g.data - g.data))))

    F.jet_flow_run(g, T, dt, callback=cb)
    return CriterionResult(1, "cusp stationarity", drift <= 1e-10,
                           {"drift": drift}, "drift <= 1e-10")


def check_parity_preserved(seeds=20, T=0.5, dt=5e-3, N=6, seed=0):
    worst = 0.0
    for s in range(seeds):
        rng = np.random.default_rng(seed + 1000 + s)
        g = P.random_even_metric(rng, 4, N, 2, scale=0.1)
        peak = _odd_low(g, 1)

        def cb(st):
            nonlocal peak
            peak = max(peak, _odd_low(st.g, 1))

        F.jet_flow_run(g, T, dt, every=10, callback=cb)
        worst = max(worst, peak)
    return CriterionResult(2, "partial evenness preserved", worst <= 1e-10,
                           {"seeds": seeds, "max_odd_power1": worst}, "<= 1e-10")


def check_vr_and_mu_nu(seeds=5, T=0.3, dt=1e-4, every=500, seed=0):
    vr_worst = 0.0
    for s in range(seeds):
        rng = np.random.default_rng(seed + 2000 + s)
        g = P.random_even_metric(rng, 4, 5, 2, normal_form=True, vr=True, scale=0.1)
        for st in F.jet_flow_run(g, 0.5, 5e-3, every=20):
            vr_worst = max(vr_worst, float(np.max(np.abs(vr_trace(normal_form(st.g))))))
    mu_err = 0.0
    for s in range(seeds):
        rng = np.random.default_rng(seed + 3000 + s)
        g = P.random_even_metric(rng, 4, 3, 2, scale=0.1)
        mu0, nu0 = (float(v) for v in F.mu_nu_extract(g))
        scale = max(abs(mu0), abs(nu0))
        for st in F.jet_flow_run(g, T, dt, every=every):
            mu, nu = F.mu_nu_extract(st.g, g)
            cmu, cnu = F.mu_nu_closed_form(mu0, nu0, 2, st.t)
            mu_err = max(mu_err, abs(float(mu) - cmu) / scale, abs(float(nu) - cnu) / scale)
    ok = vr_worst <= 1e-9 and mu_err <= 1e-4
    return CriterionResult(3, "VR preserved; mu/nu closed form", ok,
                           {"max_vr_trace": vr_worst, "mu_nu_rel_err": mu_err},
                           "vr <= 1e-9, rel <= 1e-4")


def check_volume_variation(levels=((4e-5, 1 / 100), (2e-5, 1 / 200), (1e-5, 1 / 400)), T=0.004):
    g = P.vr_generic(4, 8)
    res, scale, residue = [], 1.0, 0.0
    for dt, dx in levels:
        centers = [0.002, T - 10 * dt]
        r = F.volume_variation_residual(g, T, dt, dx, centers=centers)
        res.append(r.max_residual)
        scale = r.scale
        residue = max(residue, float(np.max(np.abs(r.residue))))
    rates = [math.log2(a / b) for a, b in zip(res, res[1:])]
    rel = res[-1] / scale
    ok = min(rates) >= 1.5 and rel <= 1e-4 and residue <= 1e-9
    return CriterionResult(4, "volume variation identity", ok,
                           {"residuals": res, "orders": rates, "rel_finest": rel,
                            "residue": residue},
                           "order >= 1.5, rel <= 1e-4, residue <= 1e-9")


def check_riesz_units():
    fp4, o4, _ = R.power_log_fp(-4, 0, 1.0)
    fp1, o1, p1 = R.power_log_fp(-1, 0, 1.0)
    fpl, ol, pl = R.power_log_fp(-1, 1, 1.0)
    err = max(abs(fp4 + 1.0 / 3.0), abs(fp1), abs(fpl))
    ok = err <= 1e-14 and o4 == 0 and (o1, p1) == (1, 1) and (ol, pl) == (2, -1)
    return CriterionResult(5, "Riesz unit values", ok,
                           {"max_err": err, "pole_orders": [o4, o1, ol]},
                           "exact to 1e-14, poles of order l+1")


def hadamard_constant(g: CollarMetric, x_max=1.0, eps=None):
    """Constant term of a least-squares fit of Vol{eps < x < x_max} in eps.

    Columns eps^-3, eps^-2, eps^-1, log eps, 1, eps, eps^2; double precision
    is adequate when the volume density is a short polynomial.
    """
    if eps is None:
        eps = np.geomspace(0.05, 0.4, 24)
    J = R.jacobian_series(g, 32)
    h0 = g.h0()
    vol0 = float(np.real(h0.volume()))

    def dens(xs):
        return vol0 * R.polynomial_values(J, xs) * np.asarray(xs) ** (-g.n)

    def vol(e):
        cuts = list(np.geomspace(e, x_max, 6))
        return sum(R.simpson(dens, a, b, rtol=1e-13) for a, b in zip(cuts, cuts[1:]))

    vols = np.array([vol(e) for e in eps])
    A = np.column_stack([eps ** -3, eps ** -2, eps ** -1, np.log(eps),
                         np.ones_like(eps), eps, eps ** 2])
    col = np.max(np.abs(A), axis=0)
    c, *_ = np.linalg.lstsq(A / col, vols, rcond=None)
    return float(c[4] / col[4])


def check_renv_cusp():
    g = P.cusp(4, 8)
    exact = -TWO_PI ** 3 / 3.0
    v = R.renormalized_volume(g, 0.5, 1.0).finite_part
    had = hadamard_constant(g)
    err, herr = abs(v - exact), abs(had - v)
    return CriterionResult(6, "cusp renormalized volume", err <= 1e-8 and herr <= 1e-6,
                           {"renv": v, "err": err, "hadamard_gap": herr},
                           "err <= 1e-8, fit gap <= 1e-6")


def check_discrepancy(seeds=20, x_cut=0.2, x_max=0.6, seed=0):
    route_gap = 0.0
    for s in range(5):
        rng = np.random.default_rng(seed + 4000 + s)
        g = P.random_even_metric(rng, 4, 6, 2, normal_form=True, scale=0.1)
        w = solve_hj_normal(g, BoundaryField(np.asarray(0.3 * rng.normal()), "scalar"))
        d = R.bdf_discrepancy(g, [1.0], w, x_cut, x_max)
        route_gap = max(route_gap, abs(d.route_a - d.route_b))
    vr_max = 0.0
    rng = np.random.default_rng(seed + 5000)
    g = P.random_even_metric(rng, 4, 6, 2, normal_form=True, vr=True, scale=0.1)
    for _ in range(seeds):
        w = solve_hj_normal(g, BoundaryField(np.asarray(0.5 * rng.normal()), "scalar"))
        d = R.bdf_discrepancy(g, [1.0], w, x_cut, x_max)
        vr_max = max(vr_max, abs(d.route_a), abs(d.route_b))
    ok = route_gap <= 1e-8 and vr_max <= 1e-9
    return CriterionResult(7, "bdf discrepancy", ok,
                           {"route_gap": route_gap, "vr_discrepancy": vr_max},
                           "gap <= 1e-8, VR <= 1e-9")


def linearization_constants(n=4, N=8, js=(2, 3, 4, 5), seed=0):
    """Measured c with x^2 Rc_ab linearized along x^j v equal to -c j (j - 1) x^j v."""
    rng = np.random.default_rng(seed)
    g = P.cusp(n, N)
    d = n - 1
    v0 = P.random_sym(rng, d, 1.0)
    out = []
    for j in js:
        v = np.zeros_like(g.data)
        v[0][1:, 1:] = v0
        lin, _ = linearize(lambda h: ricci(h).ricci, g, BlockSeries(n, v), j)
        ratio = lin[j][1:, 1:] / v0
        k = np.abs(v0) > 0.1
        out.append(float(np.mean(-ratio[k] / (j * (j - 1)))))
    return out


def check_appendix(seeds=2, seed=0):
    worst, failed = 0.0, []
    for n in (4, 6):
        for s in range(seeds):
            rng = np.random.default_rng(seed + 6000 + 10 * n + s)
            grid = Grid((8,) * (n - 1), "spectral") if n == 4 and s == 1 else None
            g = P.random_even_metric(rng, n, n + 3, n - 2, grid=grid, scale=0.1)
            for row in appendix_report(g, rel_tol=1e-9):
                if row.rel_error is not None:
                    worst = max(worst, row.rel_error)
                if not row.ok:
                    failed.append(f"n={n}:{row.component}")
    consts = linearization_constants()
    cerr = max(abs(c - LINEARIZATION_CONSTANT) / LINEARIZATION_CONSTANT for c in consts)
    ok = not failed and worst <= 1e-9 and cerr <= 1e-9
    return CriterionResult(8, "appendix tables", ok,
                           {"max_rel": worst, "failed": failed or "none",
                            "linearization_rel": cerr},
                           "rel <= 1e-9")


def _slope(xs, r):
    return float(np.polyfit(np.log(xs), np.log(r), 1)[0])


def check_hj(orders=(4, 6, 8), seed=0):
    grid = Grid((8, 8, 8), "spectral")
    rng = np.random.default_rng(seed + 7000)
    om0 = BoundaryField(P.random_fourier(rng, grid, (), 0.3), "scalar", grid)
    xs = np.geomspace(0.02, 0.08, 6)
    margins, w1, odd = [], 0.0, 0.0
    for N in orders:
        base = np.random.default_rng(seed + 7100 + N)
        gn = P.random_even_metric(base, 4, N, 2, grid=grid, normal_form=True, scale=0.1)
        w = solve_hj_normal(gn, om0)
        margins.append(_slope(xs, hj_residual(gn, w, xs)) - (N - 1.5))
        w1 = max(w1, float(np.max(np.abs(w.omega[1]))))
        odd = max(odd, float(np.max(np.abs(w.omega[3]))))
        gg = P.random_even_metric(base, 4, N, 2, scale=0.1)
        wg = solve_hj_general(gg)
        margins.append(_slope(xs, hj_residual(gg, wg, xs)) - (N - 1.5))
        w1 = max(w1, float(np.max(np.abs(wg.omega[1]))))
    ok = min(margins) >= 0 and w1 == 0.0 and odd <= 1e-11
    return CriterionResult(9, "Hamilton-Jacobi series", ok,
                           {"min_slope_margin": min(margins), "omega1": w1, "omega3": odd},
                           "slope >= N - 1.5, omega1 = 0, odd <= 1e-11")


def xval_gaps(g0=None, T=0.02, dt=1e-5, nodes=(25, 50, 100), x_max=1.0, pad=16):
    g0 = P.vr_generic(4, 8) if g0 is None else g0
    jet = F.jet_flow_run(g0.pad(pad), T, dt, every=int(round(T / dt)))[-1].g
    gaps = []
    for M in nodes:
        st = F.GridFlowState.from_metric(g0, x_max, x_max / M)
        gs = F.grid_flow_run(st, T, dt, every=int(round(T / dt)))[-1]
        gaps.append(F.xval_gap(gs, jet))
    return gaps


def check_xval():
    gaps = xval_gaps()
    ratios = [a / b for a, b in zip(gaps, gaps[1:])]
    return CriterionResult(10, "jet/grid cross-validation", min(ratios) >= 12,
                           {"gaps": gaps, "ratios": ratios}, "ratio >= 12 per halving")


CHECKS = {1: check_cusp_stationary, 2: check_parity_preserved, 3: check_vr_and_mu_nu,
          4: check_volume_variation, 5: check_riesz_units, 6: check_renv_cusp,
          7: check_discrepancy, 8: check_appendix, 9: check_hj, 10: check_xval}


RANDOMIZED = {2, 3, 7, 8, 9}


def run_all(only=None, seed=0):
    """Run the selected criteria (all by default); ``seed`` shifts the random inputs."""
    out = []
    for k in sorted(CHECKS):
        if only and k not in only:
            continue
        t0 = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", R.BdfDependentWarning)
            try:
                r = CHECKS[k](seed=seed) if k in RANDOMIZED else CHECKS[k]()
            except Exception as e:       # a crash is a failed criterion, not a traceback
                r = CriterionResult(k, CHECKS[k].__name__, False, {"error": repr(e)})
        r.seconds = time.perf_counter() - t0
        out.append(r)
    return out
