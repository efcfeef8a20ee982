"""Named example metrics and random generators used by the CLI and tests."""
from __future__ import annotations

import numpy as np

from . import series as S
from .boundary import Grid
from .geometry import CollarMetric

PRESETS = ("cusp", "pe-model", "vr-generic", "odd-seeded")


def cusp(n=4, N=8):
    return CollarMetric.cusp(n, N)


def pe_model(n=4, N=8, x0=2.0):
    """Truncation of a Poincare-Einstein metric on a torus boundary.

    h = (1-s)^2 (1+s)^(4/d-2) dth^2 + (1+s)^(4/d) |dy|^2 with s = (x/x0)^(n-1).
    """
    d = n - 1
    a = np.zeros(N + 1)
    a[0] = 1.0
    if d <= N:
        a[d] = x0 ** (-d)
    b = a.copy()
    b[d:d + 1] *= -1.0
    h = np.zeros((N + 1, d, d))
    h[:, 0, 0] = S.conv(S.conv(b, b), S.power(a, 4.0 / d - 2.0))
    side = S.power(a, 4.0 / d)
    for i in range(1, d):
        h[:, i, i] = side
    return CollarMetric.normal(h)


def vr_generic(n=4, N=8):
    """Partially even with traceless first odd coefficient; not APE."""
    d = n - 1
    h = np.zeros((N + 1, d, d))
    h[0] = np.eye(d)
    h[2] = np.diag(np.linspace(0.3, -0.1, d))
    tl = np.zeros((d, d))
    tl[0, 0], tl[1, 1] = 0.4, -0.4
    tl[0, 1] = tl[1, 0] = 0.1
    h[n - 1] = tl
    return CollarMetric.normal(h)


def odd_seeded(n=4, N=8):
    d = n - 1
    h = np.zeros((N + 1, d, d))
    h[0] = np.eye(d)
    h[1] = np.diag(np.linspace(0.2, -0.1, d))
    h[2] = 0.1 * np.eye(d)
    return CollarMetric.normal(h)


def preset(name, n=4, N=8):
    table = {"cusp": cusp, "pe-model": pe_model, "vr-generic": vr_generic,
             "odd-seeded": odd_seeded}
    if name not in table:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return table[name](n, N)


# ---------------------------------------------------------------------------
# random metrics

def random_sym(rng, d, scale, shape=()):
    a = rng.normal(size=shape + (d, d)) * scale
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def random_h0(rng, d, grid=None, amp=0.15):
    """A positive definite boundary metric, constant or smooth on the grid."""
    if grid is None:
        return np.eye(d) + random_sym(rng, d, amp / np.sqrt(d))
    return np.eye(d) + random_fourier(rng, grid, (d, d), amp / np.sqrt(d), symmetric=True)


def random_fourier(rng, grid: Grid, tensor_shape=(), amp=0.1, modes=2, symmetric=False):
    """Sum of a few low Fourier modes per entry, sampled on ``grid``."""
    y = grid.coords()
    out = np.zeros(grid.shape + tuple(tensor_shape))
    for idx in np.ndindex(*tensor_shape) if tensor_shape else [()]:
        f = np.zeros(grid.shape)
        for _ in range(modes):
            k = rng.integers(-1, 2, size=grid.d)
            ph = rng.uniform(0, 2 * np.pi)
            f += rng.normal() * np.cos(sum(ki * yi for ki, yi in zip(k, y)) + ph)
        out[(Ellipsis,) + idx] = amp * f / modes
    if symmetric:
        out = 0.5 * (out + np.swapaxes(out, -1, -2))
    return out


def random_even_metric(rng, n, N, order, grid=None, normal_form=False, scale=0.2,
                       vr=False):
    """Random collar metric even to ``order`` (blocked sense).

    xx/ab blocks get no odd powers below ``order``, the xa block no even
    powers up to ``order``; above that every block is generic.  With
    ``normal_form`` the xx, xa blocks are exact.  With ``vr`` (normal form
    only) the coefficient h_{n-1} is made h0-traceless.
    """
    d = n - 1
    gshape = () if grid is None else grid.shape
    data = np.zeros((N + 1,) + gshape + (n, n))

    def sym(s):
        return random_sym(rng, d, s, gshape) if grid is None else random_fourier(
            rng, grid, (d, d), s, symmetric=True)

    def scal(s):
        return rng.normal() * s if grid is None else random_fourier(rng, grid, (), s)

    def cov(s):
        return rng.normal(size=d) * s if grid is None else random_fourier(rng, grid, (d,), s)

    data[0][..., 1:, 1:] = random_h0(rng, d, grid)
    data[0][..., 0, 0] = 1.0
    for k in range(1, N + 1):
        even_ok = k % 2 == 0 or k > order
        if even_ok:
            data[k][..., 1:, 1:] = sym(scale)
            if not normal_form:
                data[k][..., 0, 0] = scal(scale)
        if not normal_form and (k % 2 == 1 or k > order):
            c = cov(scale)
            data[k][..., 0, 1:] = c
            data[k][..., 1:, 0] = c
    if vr:
        if not normal_form:
            raise ValueError("vr generation needs normal_form")
        h0 = data[0][..., 1:, 1:]
        hk = data[n - 1][..., 1:, 1:]
        tr = np.einsum("...ab,...ab->...", np.linalg.inv(h0), hk)
        data[n - 1][..., 1:, 1:] = hk - (tr / d)[..., None, None] * h0
    return CollarMetric(n, data, grid, normal_form)
