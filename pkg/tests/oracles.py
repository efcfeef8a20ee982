"""Independent reference computations used to freeze and cross-check values.

Nothing here shares code with the series machinery: curvature is computed
pointwise from finite differences of the metric, and the Hadamard fit of
the volume runs in extended precision.
"""
import numpy as np
import mpmath as mp

# sixth-order central first-derivative stencil
_C1 = np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]) / 60.0


def _d(f, x, h):
    return sum(c * f(x + (i - 3) * h) for i, c in enumerate(_C1) if c) / h


def christoffel_fd(g_fn, x, h):
    """Gamma^k_ij of an x-only metric g (n x n) at x; index 0 is x."""
    g = g_fn(x)
    n = g.shape[0]
    gi = np.linalg.inv(g)
    dg = _d(g_fn, x, h)
    low = np.zeros((n, n, n))          # Gamma_{l ij}
    for l in range(n):
        for i in range(n):
            for j in range(n):
                low[l, i, j] = 0.5 * ((i == 0) * dg[j, l] + (j == 0) * dg[i, l]
                                      - (l == 0) * dg[i, j])
    return np.einsum("kl,lij->kij", gi, low)


def ricci_fd(g_fn, x, h=1e-3):
    gam = christoffel_fd(g_fn, x, h)
    dgam = _d(lambda s: christoffel_fd(g_fn, s, h), x, h)
    n = gam.shape[0]
    R = dgam[0].copy()                                         # d_k Gamma^k_ij, k = 0
    trace_d = np.einsum("kik->i", dgam)                        # d_0 Gamma^k_ik
    R[:, 0] -= trace_d
    R += np.einsum("kkl,lij->ij", gam, gam) - np.einsum("kjl,lik->ij", gam, gam)
    return 0.5 * (R + R.T) if n else R


def ebar_fd(gbar_fn, x, n, h=1e-3):
    """x^2 (Rc(g) + (n-1) g) for g = gbar / x^2, gbar depending on x only."""
    g_fn = lambda s: gbar_fn(s) / s ** 2
    return x ** 2 * (ricci_fd(g_fn, x, h) + (n - 1) * g_fn(x))


def hadamard_volume_constant(h_coeffs, x_max=1.0, dps=30, npts=24, top=10,
                             eps_range=(0.01, 0.2)):
    """Constant term of Vol{eps < x < x_max} for dx^2 + h(x) over x^2 on T^3.

    h(x) is the polynomial with constant matrix coefficients ``h_coeffs``;
    the volume is fitted by eps^-3, eps^-2, eps^-1, log eps, 1, eps..eps^top.
    """
    with mp.workdps(dps):
        H = [mp.matrix(np.asarray(c).tolist()) for c in h_coeffs]
        d = H[0].rows

        def dens(x):
            m = mp.zeros(d, d)
            for k, c in enumerate(H):
                m += c * x ** k
            return mp.sqrt(mp.det(m)) / x ** (d + 1)

        vol = (2 * mp.pi) ** d
        eps = [mp.mpf(e) for e in np.geomspace(*eps_range, npts)]
        rows, rhs = [], []
        for e in eps:
            cuts = [e, 2 * e, 4 * e, 8 * e, mp.mpf(x_max)]
            cuts = [c for c in cuts if c <= x_max]
            if cuts[-1] != x_max:
                cuts.append(mp.mpf(x_max))
            rhs.append(vol * mp.quad(dens, cuts))
            rows.append([e ** -3, e ** -2, e ** -1, mp.log(e)] + [e ** k for k in range(top + 1)])
        sol, _ = mp.qr_solve(mp.matrix(rows), mp.matrix(rhs))
        return float(sol[4])
