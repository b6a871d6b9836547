"""Periodic grids, the Fourier transform contract, multipliers, convolution and norms.

Fields are plain complex numpy arrays of shape ``grid.shape``.  Spectral
coefficients are the coefficients in the orthonormal plane-wave basis
``e_k(x) = exp(i k.x) / sqrt(V)``, so Parseval reads ``||f||_L2 = ||c||_l2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform periodic grid on the box [-L/2, L/2)^d, d in {1, 2}."""

    dimension: int
    points_per_axis: int
    box_length: float

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ConfigError(f"dimension must be 1 or 2, got {self.dimension}")
        n = int(self.points_per_axis)
        if n < 2 or n & (n - 1):
            raise ConfigError(f"points_per_axis must be a power of two >= 2, got {n}")
        if not self.box_length > 0:
            raise ConfigError(f"box_length must be positive, got {self.box_length}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dimension

    @property
    def size(self) -> int:
        return self.points_per_axis**self.dimension

    @property
    def spacing(self) -> float:
        return self.box_length / self.points_per_axis

    @property
    def volume(self) -> float:
        return self.box_length**self.dimension

    @property
    def cell(self) -> float:
        """Quadrature weight spacing**d."""
        return self.spacing**self.dimension

    @cached_property
    def axis(self) -> np.ndarray:
        n = self.points_per_axis
        return (np.arange(n) - n // 2) * self.spacing

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Per-axis wavenumbers 2*pi*m/L in FFT order (zero first, Nyquist negative)."""
        return 2 * np.pi * np.fft.fftfreq(self.points_per_axis, d=self.spacing)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.axis] * self.dimension), indexing="ij"))

    @cached_property
    def kvecs(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.wavenumbers] * self.dimension), indexing="ij"))

    @cached_property
    def ksq(self) -> np.ndarray:
        return sum(k**2 for k in self.kvecs)

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt(sum(x**2 for x in self.coords))

    def check(self, f: np.ndarray) -> None:
        if np.shape(f) != self.shape:
            raise DimensionError(f"field shape {np.shape(f)} does not match grid {self.shape}")

    def origin_index(self) -> tuple[int, ...]:
        return (self.points_per_axis // 2,) * self.dimension

    def refined(self, factor: int = 2) -> "PeriodicGrid":
        return PeriodicGrid(self.dimension, self.points_per_axis * factor, self.box_length)


def _axes(grid: PeriodicGrid) -> tuple[int, ...]:
    return tuple(range(grid.dimension))


# The physical grid is centred (x = 0 sits at index n//2), so transforms are
# taken relative to the origin: ifftshift first, fftshift back.
def fourier_pair(f: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    """Plane-wave coefficients c_k = <e_k, f> in FFT ordering."""
    grid.check(f)
    ax = _axes(grid)
    return np.fft.fftn(np.fft.ifftshift(f, axes=ax), axes=ax) * (grid.cell / np.sqrt(grid.volume))


def inverse_fourier(c: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    grid.check(c)
    ax = _axes(grid)
    return np.fft.fftshift(np.fft.ifftn(c, axes=ax), axes=ax) * (grid.size * np.sqrt(grid.volume) / grid.volume)


def plane_wave(grid: PeriodicGrid, k0) -> np.ndarray:
    """Normalized plane wave exp(i k0.x)/sqrt(V)."""
    k0 = np.atleast_1d(np.asarray(k0, dtype=float))
    phase = sum(kk * x for kk, x in zip(k0, grid.coords))
    return np.exp(1j * phase) / np.sqrt(grid.volume)


@dataclass(frozen=True)
class FourierMultiplier:
    """Operator with symbol m(k) sampled on a grid's wavenumbers."""

    grid: PeriodicGrid
    symbol: np.ndarray

    def __post_init__(self):
        self.grid.check(self.symbol)

    @classmethod
    def from_function(cls, grid: PeriodicGrid, fn: Callable[[np.ndarray], np.ndarray]) -> "FourierMultiplier":
        """Symbol given as a function of |k|^2."""
        return cls(grid, np.asarray(fn(grid.ksq)) * np.ones(grid.shape))

    @classmethod
    def identity(cls, grid: PeriodicGrid) -> "FourierMultiplier":
        return cls(grid, np.ones(grid.shape))

    @classmethod
    def laplacian(cls, grid: PeriodicGrid) -> "FourierMultiplier":
        """-Delta, symbol |k|^2."""
        return cls(grid, grid.ksq.copy())

    @classmethod
    def bessel(cls, grid: PeriodicGrid, s: float) -> "FourierMultiplier":
        """(1 - Delta)^s, symbol (1 + |k|^2)^s."""
        return cls(grid, (1.0 + grid.ksq) ** s)

    def __mul__(self, other: "FourierMultiplier") -> "FourierMultiplier":
        if other.grid != self.grid:
            raise DimensionError("multipliers live on different grids")
        return FourierMultiplier(self.grid, self.symbol * other.symbol)


def apply_multiplier(m: FourierMultiplier, f: np.ndarray, grid: PeriodicGrid | None = None) -> np.ndarray:
    if grid is not None and grid != m.grid:
        raise DimensionError("multiplier and field live on different grids")
    m.grid.check(f)
    ax = _axes(m.grid)
    return np.fft.ifftn(m.symbol * np.fft.fftn(f, axes=ax), axes=ax)


def convolve(f: np.ndarray, g: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    """Periodic convolution (f*g)(x) = h^d sum_y f(y) g(x-y) on the centred grid."""
    grid.check(f)
    grid.check(g)
    ax = _axes(grid)
    fh = np.fft.fftn(np.fft.ifftshift(f, axes=ax), axes=ax)
    gh = np.fft.fftn(np.fft.ifftshift(g, axes=ax), axes=ax)
    return np.fft.fftshift(np.fft.ifftn(fh * gh, axes=ax), axes=ax) * grid.cell


def potential_transform(w: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    """Grid Fourier transform h^d sum_x w(x) exp(-ik.x) (FFT ordering)."""
    ax = _axes(grid)
    return np.fft.fftn(np.fft.ifftshift(w, axes=ax), axes=ax) * grid.cell


def convolve_with_transform(what: np.ndarray, f: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    """Convolution with a potential given by its precomputed grid transform."""
    ax = _axes(grid)
    fh = np.fft.fftn(np.fft.ifftshift(f, axes=ax), axes=ax)
    return np.fft.fftshift(np.fft.ifftn(what * fh, axes=ax), axes=ax)


class Norms(NamedTuple):
    L2: float
    H1: float
    H2: float
    Linf: float
    L4: float


def l2_norm(f: np.ndarray, grid: PeriodicGrid) -> float:
    return float(np.sqrt(grid.cell * np.sum(np.abs(f) ** 2)))


def inner(f: np.ndarray, g: np.ndarray, grid: PeriodicGrid) -> complex:
    """<f, g>, antilinear in the first slot."""
    return complex(grid.cell * np.vdot(f, g))


def sobolev_norm(f: np.ndarray, grid: PeriodicGrid, s: float) -> float:
    """||(1-Delta)^{s/2} f||_L2, evaluated on the spectral side."""
    c = fourier_pair(f, grid)
    return float(np.sqrt(np.sum((1.0 + grid.ksq) ** s * np.abs(c) ** 2)))


def gradient_sq(f: np.ndarray, grid: PeriodicGrid) -> float:
    """||grad f||^2_L2."""
    c = fourier_pair(f, grid)
    return float(np.sum(grid.ksq * np.abs(c) ** 2))


def norms(f: np.ndarray, grid: PeriodicGrid) -> Norms:
    grid.check(f)
    c2 = np.abs(fourier_pair(f, grid)) ** 2
    w = 1.0 + grid.ksq
    return Norms(
        L2=l2_norm(f, grid),
        H1=float(np.sqrt(np.sum(w * c2))),
        H2=float(np.sqrt(np.sum(w**2 * c2))),
        Linf=float(np.max(np.abs(f))) if f.size else 0.0,
        L4=float((grid.cell * np.sum(np.abs(f) ** 4)) ** 0.25),
    )
