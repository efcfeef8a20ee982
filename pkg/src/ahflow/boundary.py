"""Model boundary backends.

The boundary is the flat d-torus ``[0, 2*pi)^d``.  A field either carries a
single constant tensor (the *constant* backend) or samples on a uniform
periodic grid.  Tensor indices always sit on the trailing axes of ``data``;
grid axes come first.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi

VALENCE_RANK = {"scalar": 0, "covector": 1, "sym2": 2, "matrix": 2}


class BoundaryError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on the d-torus.

    ``derivative`` selects the tangential differencing scheme: ``"fd4"``
    (fourth-order centered differences) or ``"spectral"``.
    """

    resolution: tuple
    derivative: str = "fd4"

    def __post_init__(self):
        res = tuple(int(r) for r in self.resolution)
        object.__setattr__(self, "resolution", res)
        for r in res:
            if r < 8 or r % 2:
                raise BoundaryError(f"grid resolution must be even and >= 8, got {r}")
        if self.derivative not in ("fd4", "spectral"):
            raise BoundaryError(f"unknown derivative scheme {self.derivative!r}")

    @property
    def d(self):
        return len(self.resolution)

    @property
    def shape(self):
        return self.resolution

    @property
    def spacing(self):
        return tuple(TWO_PI / r for r in self.resolution)

    def coords(self):
        axes = [np.arange(r) * (TWO_PI / r) for r in self.resolution]
        return np.meshgrid(*axes, indexing="ij")

    def with_derivative(self, scheme):
        return Grid(self.resolution, scheme)

    def diff(self, arr, axis, lead=0, scheme=None):
        """d/dy^axis of ``arr`` whose grid axes start at position ``lead``."""
        if not 0 <= axis < self.d:
            raise BoundaryError(f"axis {axis} out of range for d={self.d}")
        scheme = scheme or self.derivative
        ax = lead + axis
        h = self.spacing[axis]
        if scheme == "fd4":
            return (8.0 * (np.roll(arr, -1, ax) - np.roll(arr, 1, ax))
                    - (np.roll(arr, -2, ax) - np.roll(arr, 2, ax))) / (12.0 * h)
        n = self.resolution[axis]
        k = np.fft.fftfreq(n, d=1.0 / n)
        k[n // 2] = 0.0  # Nyquist mode has no real derivative
        shape = [1] * arr.ndim
        shape[ax] = n
        spec = np.fft.fft(arr, axis=ax) * (1j * k).reshape(shape)
        return np.fft.ifft(spec, axis=ax).real

    def integrate(self, arr, lead=0):
        """Integral over the torus against dy (flat measure); sums grid axes."""
        axes = tuple(range(lead, lead + self.d))
        cell = float(np.prod(self.spacing))
        return np.sum(arr, axis=axes) * cell


@dataclass(frozen=True)
class BoundaryField:
    """A scalar, covector or symmetric 2-tensor field on the boundary."""

    data: np.ndarray
    valence: str = "scalar"
    grid: Grid | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        object.__setattr__(self, "data", data)
        if self.valence not in VALENCE_RANK:
            raise BoundaryError(f"unknown valence {self.valence!r}")
        rank = VALENCE_RANK[self.valence]
        gdim = 0 if self.grid is None else self.grid.d
        if data.ndim != gdim + rank:
            raise BoundaryError(
                f"{self.valence} field on {'grid' if self.grid else 'constant'} backend "
                f"needs {gdim + rank} axes, got {data.ndim}")
        if self.grid is not None and data.shape[:gdim] != self.grid.shape:
            raise BoundaryError("data does not match grid shape")
        if self.valence == "sym2":
            if np.max(np.abs(data - np.swapaxes(data, -1, -2)), initial=0.0) > 1e-14 * max(
                    1.0, np.max(np.abs(data), initial=0.0)):
                raise BoundaryError("sym2 data is not symmetric")

    @property
    def is_constant(self):
        return self.grid is None

    @property
    def tensor_shape(self):
        rank = VALENCE_RANK[self.valence]
        return self.data.shape[self.data.ndim - rank:] if rank else ()

    def sup_norm(self):
        return float(np.max(np.abs(self.data), initial=0.0))

    def __add__(self, other):
        _check_same_backend(self, other)
        return BoundaryField(self.data + other.data, self.valence, self.grid)

    def __sub__(self, other):
        _check_same_backend(self, other)
        return BoundaryField(self.data - other.data, self.valence, self.grid)

    def __mul__(self, c):
        return BoundaryField(self.data * float(c), self.valence, self.grid)

    __rmul__ = __mul__

    @classmethod
    def constant(cls, value, valence="scalar"):
        return cls(np.asarray(value, dtype=float), valence, None)

    @classmethod
    def from_function(cls, grid, fn, valence="scalar"):
        """Sample ``fn(*coords)`` on ``grid``; tensor axes must trail."""
        return cls(np.asarray(fn(*grid.coords()), dtype=float), valence, grid)


def _check_same_backend(a, b):
    if a.grid != b.grid:
        raise BoundaryError("boundary backend mismatch")


def tangential_derivative(f: BoundaryField, axis: int, scheme=None) -> BoundaryField:
    """Derivative along y^axis; zero on the constant backend."""
    if f.grid is None:
        d = f.tensor_shape[0] if f.tensor_shape else None
        if d is not None and not 0 <= axis < d:
            raise BoundaryError(f"axis {axis} out of range")
        return BoundaryField(np.zeros_like(f.data), f.valence, None)
    return BoundaryField(f.grid.diff(f.data, axis, scheme=scheme), f.valence, f.grid)


class BoundaryMetric:
    """Positive definite h0 with cached inverse and volume density."""

    def __init__(self, h0: BoundaryField):
        if h0.valence != "sym2":
            raise BoundaryError("boundary metric must be sym2")
        eig = np.linalg.eigvalsh(h0.data)
        if np.min(eig) <= 0:
            raise BoundaryError("h0 is not positive definite")
        self.h0 = h0
        self.grid = h0.grid
        self.inverse = np.linalg.inv(h0.data)
        self.inverse = 0.5 * (self.inverse + np.swapaxes(self.inverse, -1, -2))
        self.density = np.sqrt(np.linalg.det(h0.data))

    @property
    def d(self):
        return self.h0.data.shape[-1]

    def trace(self, t):
        """tr^{h0} of a sym2 array with matching grid axes (extra leading axes allowed)."""
        return np.einsum("...ab,...ab->...", self.inverse, t)

    def volume(self):
        if self.grid is None:
            return float(self.density) * TWO_PI ** self.d
        return float(self.grid.integrate(self.density))

    @classmethod
    def flat(cls, d):
        return cls(BoundaryField.constant(np.eye(d), "sym2"))


def boundary_integral(f: BoundaryField, h0: BoundaryMetric) -> float:
    """Integral of a scalar field against dV_{h0}."""
    if f.valence != "scalar":
        raise BoundaryError("boundary_integral needs a scalar field")
    if f.grid is None and h0.grid is None:
        return float(f.data) * float(h0.density) * TWO_PI ** h0.d
    grid = f.grid or h0.grid
    dens = np.broadcast_to(h0.density, grid.shape)
    vals = np.broadcast_to(f.data, grid.shape)
    return float(grid.integrate(vals * dens))


def integrate_array(values, h0: BoundaryMetric, grid: Grid | None):
    """Integrate raw scalar samples (shape ``(*extra, *grid)``) against dV_{h0}."""
    values = np.asarray(values, dtype=float)
    if grid is None and h0.grid is None:
        return values * float(h0.density) * TWO_PI ** h0.d
    grid = grid or h0.grid
    lead = values.ndim - grid.d
    return grid.integrate(values * h0.density, lead=lead)
