"""Truncated power series in the normal coordinate x.

A series is stored as one array ``c`` with ``c[k]`` the coefficient of x**k,
k = 0..N.  Coefficients are boundary fields: the remaining axes are the
boundary grid axes (if any) followed by tensor axes.  All arithmetic is
exact below the truncation order; nothing is extrapolated past N.

The module-level array kernels (``conv``, ``inv_matrix``, ``exp`` ...) work on
raw coefficient arrays and are shared by the geometry code.  The
:class:`TruncatedSeries` wrapper adds valence bookkeeping.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boundary import VALENCE_RANK, BoundaryField, Grid

DEFAULT_PARITY_TOL = 1e-10


class SeriesError(ValueError):
    pass


# ---------------------------------------------------------------------------
# raw coefficient-array kernels

def conv(a, b, spec=None, order=None):
    """Cauchy product truncated at ``order`` (default: the shorter input).

    ``spec`` is an einsum string applied to each coefficient pair; ``None``
    means broadcasting elementwise multiplication.
    """
    n = min(len(a), len(b)) - 1 if order is None else order
    first = a[0] * b[0] if spec is None else np.einsum(spec, a[0], b[0])
    out = np.zeros((n + 1,) + first.shape)
    # skip identically zero coefficients, they are common (parity, shifts)
    nz_a = [i for i in range(min(len(a), n + 1)) if np.any(a[i])]
    nz_b = [j for j in range(min(len(b), n + 1)) if np.any(b[j])]
    for i in nz_a:
        for j in nz_b:
            if i + j > n:
                break
            if spec is None:
                out[i + j] += a[i] * b[j]
            else:
                out[i + j] += np.einsum(spec, a[i], b[j])
    return out


def shift(a, j, order=None):
    """Multiply by x**j keeping truncation ``order`` (default len(a)-1)."""
    n = len(a) - 1 if order is None else order
    out = np.zeros((n + 1,) + a.shape[1:])
    if j <= n:
        m = min(len(a), n + 1 - j)
        out[j:j + m] = a[:m]
    return out


def xdx(a):
    """The 0-derivative x d/dx: coefficient k is scaled by k."""
    k = np.arange(len(a)).reshape((-1,) + (1,) * (a.ndim - 1))
    return a * k


def ddx(a):
    """d/dx; the result has one order less."""
    k = np.arange(1, len(a)).reshape((-1,) + (1,) * (a.ndim - 1))
    return a[1:] * k


def antiderivative(a, c0=0.0):
    """Integral from 0; the result has one order more."""
    out = np.zeros((len(a) + 1,) + a.shape[1:])
    out[0] = c0
    k = np.arange(1, len(a) + 1).reshape((-1,) + (1,) * (a.ndim - 1))
    out[1:] = a / k
    return out


def xdy(a, grid, axis):
    """The 0-derivative x d/dy^axis (grid axes directly after the series axis)."""
    out = np.zeros_like(a)
    if grid is None:
        return out
    out[1:] = grid.diff(a[:-1], axis, lead=1)
    return out


def inv_scalar(a):
    n = len(a) - 1
    if np.any(a[0] == 0):
        raise SeriesError("singular leading coefficient")
    b = np.zeros_like(a, dtype=float)
    b[0] = 1.0 / a[0]
    for k in range(1, n + 1):
        s = np.zeros_like(a[0], dtype=float)
        for i in range(1, k + 1):
            s = s + a[i] * b[k - i]
        b[k] = -b[0] * s
    return b


def inv_matrix(a):
    """Inverse of a matrix-valued series (matrix axes last)."""
    n = len(a) - 1
    try:
        b0 = np.linalg.inv(a[0])
    except np.linalg.LinAlgError as exc:
        raise SeriesError("singular leading coefficient") from exc
    if not np.all(np.isfinite(b0)):
        raise SeriesError("singular leading coefficient")
    b = np.zeros_like(a, dtype=float)
    b[0] = b0
    for k in range(1, n + 1):
        s = np.zeros_like(a[0], dtype=float)
        for i in range(1, k + 1):
            if np.any(a[i]):
                s = s + a[i] @ b[k - i]
        b[k] = -(b0 @ s)
    return b


def exp(a):
    n = len(a) - 1
    e = np.zeros_like(a, dtype=float)
    e[0] = np.exp(a[0])
    for k in range(1, n + 1):
        s = np.zeros_like(a[0], dtype=float)
        for i in range(1, k + 1):
            s = s + i * a[i] * e[k - i]
        e[k] = s / k
    return e


def log(a):
    n = len(a) - 1
    out = np.zeros_like(a, dtype=float)
    out[0] = np.log(a[0])
    for k in range(1, n + 1):
        s = k * a[k]
        for i in range(1, k):
            s = s - i * out[i] * a[k - i]
        out[k] = s / (k * a[0])
    return out


def power(a, alpha):
    """a**alpha for a scalar series with positive leading coefficient."""
    n = len(a) - 1
    p = np.zeros_like(a, dtype=float)
    p[0] = a[0] ** alpha
    for k in range(1, n + 1):
        s = np.zeros_like(a[0], dtype=float)
        for i in range(1, k + 1):
            s = s + (alpha * i - (k - i)) * a[i] * p[k - i]
        p[k] = s / (k * a[0])
    return p


def logdet(a):
    """log det(a(x)) - log det(a(0)) for a matrix series, via tr(a^-1 a')."""
    ainv = inv_matrix(a)
    return antiderivative(conv(ainv[:-1], ddx(a), "...ij,...ji->..."))


def compose_x(f, X):
    """f(X) where X is a scalar series with X[0] == 0 (Horner in X).

    ``f`` may carry tensor axes after the grid axes; ``X`` carries grid axes only.
    """
    if np.any(X[0]):
        raise SeriesError("composition needs X(0) = 0")
    n = len(X) - 1
    extra = f.ndim - X.ndim
    Xb = X.reshape(X.shape + (1,) * extra)
    out = np.zeros((n + 1,) + f.shape[1:])
    for j in range(min(len(f), n + 1) - 1, -1, -1):
        out = conv(Xb, out, order=n) if np.any(out) else out
        out[0] = out[0] + f[j]
    return out


def evaluate(c, x):
    """Polynomial evaluation sum_k c[k] x**k for an array of x values.

    Returns shape ``(len(x), *c.shape[1:])``.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape + c.shape[1:])
    xb = x.reshape(x.shape + (1,) * (c.ndim - 1))
    for k in range(len(c) - 1, -1, -1):
        out = out * xb + c[k]
    return out


def odd_mask(n_plus_1):
    return (np.arange(n_plus_1) % 2) == 1


# ---------------------------------------------------------------------------
# valence-aware wrapper

_PRODUCT_RULES = {
    ("scalar", "scalar"): (None, "scalar"),
    ("covector", "covector"): ("outer", "sym2"),
    ("sym2", "sym2"): ("...ij,...jk->...ik", "matrix"),
    ("sym2", "matrix"): ("...ij,...jk->...ik", "matrix"),
    ("matrix", "sym2"): ("...ij,...jk->...ik", "matrix"),
    ("matrix", "matrix"): ("...ij,...jk->...ik", "matrix"),
    ("sym2", "covector"): ("...ij,...j->...i", "covector"),
    ("matrix", "covector"): ("...ij,...j->...i", "covector"),
    ("covector", "sym2"): ("...i,...ij->...j", "covector"),
}


@dataclass(frozen=True)
class TruncatedSeries:
    """Coefficients ``coeffs[k]`` of x**k, all of one valence and backend."""

    coeffs: np.ndarray
    valence: str = "scalar"
    grid: Grid | None = None

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        object.__setattr__(self, "coeffs", c)
        rank = VALENCE_RANK.get(self.valence)
        if rank is None:
            raise SeriesError(f"unknown valence {self.valence!r}")
        gdim = 0 if self.grid is None else self.grid.d
        if c.ndim != 1 + gdim + rank:
            raise SeriesError("coefficient array does not match valence/backend")

    @property
    def trunc_order(self):
        return len(self.coeffs) - 1

    def __getitem__(self, k) -> BoundaryField:
        if not 0 <= k <= self.trunc_order:
            raise SeriesError(f"power {k} beyond truncation order {self.trunc_order}")
        val = self.valence if self.valence != "matrix" else "matrix"
        return BoundaryField(self.coeffs[k], val, self.grid)

    def _check(self, other):
        if self.grid != other.grid:
            raise SeriesError("boundary backend mismatch")

    def _trim(self, other):
        n = min(self.trunc_order, other.trunc_order)
        return self.coeffs[:n + 1], other.coeffs[:n + 1]

    def __add__(self, other):
        self._check(other)
        if self.valence != other.valence:
            raise SeriesError("valence mismatch")
        a, b = self._trim(other)
        return TruncatedSeries(a + b, self.valence, self.grid)

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return TruncatedSeries(-self.coeffs, self.valence, self.grid)

    def scale(self, c):
        return TruncatedSeries(self.coeffs * float(c), self.valence, self.grid)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(other)
        return series_mul(self, other)

    def sup_norms(self):
        axes = tuple(range(1, self.coeffs.ndim))
        return np.max(np.abs(self.coeffs), axis=axes) if axes else np.abs(self.coeffs)

    def truncate(self, n):
        if n > self.trunc_order:
            raise SeriesError("cannot extend a truncated series")
        return TruncatedSeries(self.coeffs[:n + 1], self.valence, self.grid)

    @classmethod
    def from_coefficients(cls, coeffs, valence="scalar", grid=None):
        return cls(np.stack([np.asarray(c, dtype=float) for c in coeffs]), valence, grid)


def series_mul(a: TruncatedSeries, b: TruncatedSeries) -> TruncatedSeries:
    """Cauchy product with truncation order min(Na, Nb)."""
    if a.grid != b.grid:
        raise SeriesError("boundary backend mismatch")
    if a.valence == "scalar" or b.valence == "scalar":
        val = b.valence if a.valence == "scalar" else a.valence
        x, y = a.coeffs, b.coeffs
        extra = abs(VALENCE_RANK[a.valence] - VALENCE_RANK[b.valence])
        if a.valence == "scalar":
            x = x.reshape(x.shape + (1,) * extra)
        else:
            y = y.reshape(y.shape + (1,) * extra)
        return TruncatedSeries(conv(x, y), val, a.grid)
    rule = _PRODUCT_RULES.get((a.valence, b.valence))
    if rule is None:
        raise SeriesError(f"undefined valence pairing {a.valence} * {b.valence}")
    spec, val = rule
    if spec == "outer":
        c = conv(a.coeffs, b.coeffs, "...i,...j->...ij")
        c = 0.5 * (c + np.swapaxes(c, -1, -2))
    else:
        c = conv(a.coeffs, b.coeffs, spec)
    return TruncatedSeries(c, val, a.grid)


def series_inverse(a: TruncatedSeries) -> TruncatedSeries:
    """Multiplicative inverse; sym2 input needs a positive definite a[0]."""
    if a.valence == "scalar":
        return TruncatedSeries(inv_scalar(a.coeffs), "scalar", a.grid)
    if a.valence == "sym2":
        if np.min(np.linalg.eigvalsh(a.coeffs[0])) <= 0:
            raise SeriesError("singular leading coefficient (not positive definite)")
        b = inv_matrix(a.coeffs)
        return TruncatedSeries(0.5 * (b + np.swapaxes(b, -1, -2)), "sym2", a.grid)
    if a.valence == "matrix":
        return TruncatedSeries(inv_matrix(a.coeffs), "matrix", a.grid)
    raise SeriesError(f"cannot invert a {a.valence} series")


def parity_project(a: TruncatedSeries, j: int, parity: str) -> TruncatedSeries:
    """Keep the coefficients of the given parity at powers <= j; zero the rest."""
    if not 0 <= j <= a.trunc_order:
        raise SeriesError(f"projection order {j} out of range 0..{a.trunc_order}")
    if parity not in ("even", "odd"):
        raise SeriesError("parity must be 'even' or 'odd'")
    keep = np.zeros(a.trunc_order + 1, dtype=bool)
    powers = np.arange(j + 1)
    keep[:j + 1] = (powers % 2 == 1) if parity == "odd" else (powers % 2 == 0)
    mask = keep.reshape((-1,) + (1,) * (a.coeffs.ndim - 1))
    return TruncatedSeries(np.where(mask, a.coeffs, 0.0), a.valence, a.grid)


@dataclass(frozen=True)
class ParityReport:
    evenness_order: int
    first_odd_power: int | None  # None means no offending odd power <= N
    odd_norms: dict


def _norms(c):
    axes = tuple(range(1, c.ndim))
    return np.max(np.abs(c), axis=axes) if axes else np.abs(c)


def evenness_from_norms(norms, tol):
    """Largest even 2l with every odd power <= 2l-1 of norm <= tol."""
    n = len(norms) - 1
    for k in range(1, n + 1, 2):
        if norms[k] > tol:
            return k - 1, k
    top = n + 1 if (n + 1) % 2 == 0 else n
    return top, None


def oddness_from_norms(norms, tol):
    """Largest odd 2l+1 with every even power <= 2l of norm <= tol (-1 if power 0 fails)."""
    n = len(norms) - 1
    for k in range(0, n + 1, 2):
        if norms[k] > tol:
            return k - 1
    return n + 1 if (n + 1) % 2 == 1 else n


def evenness_order(a: TruncatedSeries, tol: float | None = None) -> ParityReport:
    """Classify evenness; ``tol`` defaults to 1e-10 times the even-part sup-norm."""
    norms = _norms(a.coeffs)
    if tol is None:
        tol = DEFAULT_PARITY_TOL * max(np.max(norms[0::2], initial=0.0), 1e-300)
    order, first = evenness_from_norms(norms, tol)
    odd = {k: float(norms[k]) for k in range(1, len(norms), 2)}
    return ParityReport(order, first, odd)


def oddness_order(a: TruncatedSeries, tol: float = DEFAULT_PARITY_TOL) -> int:
    return oddness_from_norms(_norms(a.coeffs), tol)
