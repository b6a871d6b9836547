"""Interaction potentials, their N-dependent scaling, the focusing stability test,
and the Townes profile that fixes the sharp Gagliardo-Nirenberg constant."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import integrate, special
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import ConfigError, ConvergenceError, DimensionError
from .spectral import (
    FourierMultiplier,
    PeriodicGrid,
    apply_multiplier,
    gradient_sq,
    l2_norm,
    potential_transform,
)

log = logging.getLogger(__name__)

ANALYTIC_FORMS = ("gaussian", "sech2", "compact_bump", "delta")


def _radial_quadrature(fn, rmax: float, n: int = 4000):
    x, wq = np.polynomial.legendre.leggauss(n)
    r = 0.5 * rmax * (x + 1)
    return r, 0.5 * rmax * wq, fn(r)


@dataclass(frozen=True)
class AnalyticForm:
    """Radial profile with prescribed integral ``mass`` and length scale ``width``.

    A negative ``mass`` gives the attractive variant.
    """

    name: str
    mass: float
    width: float = 1.0
    dimension: int = 1

    def __post_init__(self):
        if self.name not in ANALYTIC_FORMS:
            raise ConfigError(f"unknown potential {self.name!r}; known: {', '.join(ANALYTIC_FORMS)}")
        if self.dimension not in (1, 2):
            raise ConfigError("potentials are defined for d = 1, 2")
        if not self.width > 0:
            raise ConfigError("potential width must be positive")

    def _shape(self, r: np.ndarray) -> np.ndarray:
        s = np.asarray(r, dtype=float) / self.width
        if self.name == "gaussian":
            return np.exp(-0.5 * s**2)
        if self.name == "sech2":
            return 1.0 / np.cosh(np.minimum(s, 350.0)) ** 2
        if self.name == "compact_bump":
            out = np.zeros_like(s)
            inside = s < 1
            out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
            return out
        raise ConfigError("the delta potential has no pointwise profile")

    @cached_property
    def _shape_integral(self) -> float:
        d, a = self.dimension, self.width
        if self.name == "gaussian":
            return (2 * np.pi * a**2) ** (d / 2)
        if self.name == "sech2":
            return 2 * a if d == 1 else 2 * np.pi * a**2 * np.log(2)
        # compact bump: no closed form
        r, wq, f = _radial_quadrature(self._shape, self.width)
        return float(2 * np.sum(wq * f)) if d == 1 else float(2 * np.pi * np.sum(wq * f * r))

    def value(self, r) -> np.ndarray:
        return self.mass * self._shape(r) / self._shape_integral

    def fourier(self, k) -> np.ndarray:
        """Continuum transform int w(x) exp(-ik.x) dx as a function of |k|."""
        k = np.abs(np.asarray(k, dtype=float))
        a = self.width
        if self.name == "delta":
            return self.mass * np.ones_like(k)
        if self.name == "gaussian":
            return self.mass * np.exp(-0.5 * (a * k) ** 2)
        if self.name == "sech2" and self.dimension == 1:
            z = 0.5 * np.pi * a * k
            with np.errstate(over="ignore", invalid="ignore"):
                out = np.where(z > 1e-8, z / np.sinh(np.minimum(z, 700.0)), 1.0 - z**2 / 6)
            return self.mass * np.where(z > 700.0, 0.0, out)
        rmax = self.width * (1.0 if self.name == "compact_bump" else 40.0)
        r, wq, f = _radial_quadrature(self._shape, rmax)
        kr = np.multiply.outer(k.ravel(), r)
        if self.dimension == 1:
            out = 2 * np.cos(kr) @ (wq * f)
        else:
            out = 2 * np.pi * special.j0(kr) @ (wq * f * r)
        return (self.mass / self._shape_integral) * out.reshape(k.shape)


def make_form(name: str, mass: float, width: float = 1.0, dimension: int = 1) -> AnalyticForm:
    """Accepts ``neg_<name>`` as shorthand for the attractive variant."""
    if name.startswith("neg_"):
        return AnalyticForm(name[4:], -abs(mass), width, dimension)
    return AnalyticForm(name, mass, width, dimension)


def _reflect(f: np.ndarray) -> np.ndarray:
    """f(-x) on the centred grid (index j -> n - j mod n)."""
    out = f
    for ax in range(f.ndim):
        out = np.roll(np.flip(out, axis=ax), 1, axis=ax)
    return out


def _sample(form: AnalyticForm, grid: PeriodicGrid, scale: float = 1.0) -> np.ndarray:
    """Samples scale^d * w(scale * x) on the grid."""
    if form.name == "delta":
        out = np.zeros(grid.shape)
        out[grid.origin_index()] = form.mass / grid.cell
        return out
    return scale**grid.dimension * form.value(scale * grid.radius)


@dataclass(frozen=True, eq=False)
class Potential:
    grid: PeriodicGrid
    profile: np.ndarray
    analytic: AnalyticForm | None = None

    def __post_init__(self):
        self.grid.check(self.profile)
        if np.iscomplexobj(self.profile) and np.any(self.profile.imag != 0):
            raise ConfigError("potential profile must be real")
        if np.max(np.abs(self.profile - _reflect(self.profile)), initial=0.0) > 1e-12 * max(1.0, self.sup_norm):
            raise ConfigError("potential profile must be even, w(x) = w(-x)")

    @classmethod
    def from_form(cls, form: AnalyticForm, grid: PeriodicGrid) -> "Potential":
        if form.dimension != grid.dimension:
            raise DimensionError("potential and grid dimensions differ")
        return cls(grid, _sample(form, grid), form)

    @classmethod
    def zero(cls, grid: PeriodicGrid) -> "Potential":
        return cls(grid, np.zeros(grid.shape), AnalyticForm("gaussian", 0.0, 1.0, grid.dimension))

    @property
    def total_integral(self) -> float:
        return float(self.grid.cell * np.sum(self.profile))

    @property
    def negative_part_integral(self) -> float:
        return float(self.grid.cell * np.sum(np.maximum(-self.profile, 0.0)))

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.profile)))

    def is_zero(self) -> bool:
        return not np.any(self.profile)

    def to_csv(self, path: str | Path) -> None:
        write_profile_csv(path, self.grid, self.profile)


@dataclass(frozen=True, eq=False)
class ScaledPotential:
    """w_N(x) = N^{d beta} w(N^beta x) on a grid."""

    base: Potential
    N: int
    beta: float
    grid: PeriodicGrid
    profile_N: np.ndarray
    resolution_warning: bool = False

    @property
    def scale(self) -> float:
        return float(self.N) ** self.beta

    @cached_property
    def transform(self) -> np.ndarray:
        """Grid transform of w_N, FFT ordering; multiplies plane-wave coefficients in convolutions."""
        if self.base.analytic is not None and self.base.analytic.name == "delta":
            return np.full(self.grid.shape, self.base.analytic.mass, dtype=complex)
        return potential_transform(self.profile_N, self.grid)

    def continuum_fourier(self, k) -> np.ndarray:
        """int w_N(x) exp(-ik.x) dx = w^(k / N^beta); needs an analytic form."""
        if self.base.analytic is None:
            raise ConfigError("continuum transform requires an analytic potential")
        return self.base.analytic.fourier(np.asarray(k) / self.scale)

    @property
    def total_integral(self) -> float:
        return float(self.grid.cell * np.sum(self.profile_N))

    def is_zero(self) -> bool:
        return not np.any(self.profile_N)


def band_limited_resample(profile: np.ndarray, grid: PeriodicGrid, points: np.ndarray) -> np.ndarray:
    """Evaluates the trigonometric interpolant of ``profile`` on the tensor grid ``points``^d.

    Points outside the box are set to zero (the profile is assumed localized).
    """
    n = grid.points_per_axis
    k = grid.wavenumbers
    c = np.fft.fftn(np.fft.ifftshift(profile)) / grid.size
    # split the Nyquist mode symmetrically so the interpolant of a real even profile stays real
    kk = k.copy()
    E = np.exp(1j * np.multiply.outer(points, kk))
    E[:, n // 2] = np.cos(points * abs(k[n // 2]))
    out = c
    for ax in range(grid.dimension):
        out = np.moveaxis(np.tensordot(E, out, axes=([1], [ax])), 0, ax)
    out = out.real
    outside = np.abs(points) >= grid.box_length / 2
    for ax in range(grid.dimension):
        idx = [slice(None)] * grid.dimension
        idx[ax] = outside
        out[tuple(idx)] = 0.0
    return out


def scale_potential(base: Potential, N: int, beta: float, grid: PeriodicGrid | None = None) -> ScaledPotential:
    if N < 1:
        raise ConfigError(f"N must be >= 1, got {N}")
    if not beta >= 0:
        raise ConfigError(f"beta must be nonnegative, got {beta}")
    grid = grid or base.grid
    if grid.dimension != base.grid.dimension:
        raise DimensionError("target grid dimension differs from the potential's")
    s = float(N) ** beta
    form = base.analytic
    if s == 1.0 and grid == base.grid:
        return ScaledPotential(base, N, beta, grid, base.profile.copy())
    if form is not None:
        prof = _sample(form, grid, s)
        width = form.width
    else:
        prof = s**grid.dimension * band_limited_resample(base.profile, base.grid, s * grid.axis)
        width = _support_width(base)
    warn = form is None or form.name != "delta"
    warn = warn and grid.spacing > width / (4 * s)
    if warn:
        log.warning("grid spacing %.3g does not resolve the interaction scale %.3g", grid.spacing, width / s)
    return ScaledPotential(base, N, beta, grid, prof, warn)


def _support_width(p: Potential) -> float:
    """RMS width of |w| as a support scale for resolution checks."""
    m = np.abs(p.profile)
    tot = m.sum()
    if tot == 0:
        return np.inf
    return float(np.sqrt(np.sum(m * p.grid.radius**2) / tot))


class StabilityResult(NamedTuple):
    stable: bool
    margin: float


def stability_check(base: Potential, a_star: float) -> StabilityResult:
    if not a_star > 0:
        raise ConfigError(f"a_star must be positive, got {a_star}")
    margin = a_star - base.negative_part_integral
    if base.grid.dimension == 1:
        return StabilityResult(True, margin)
    return StabilityResult(margin > 0, margin)


# ---------------------------------------------------------------- Townes profile


@dataclass(frozen=True, eq=False)
class TownesSolution:
    grid: PeriodicGrid
    Q: np.ndarray
    a_star: float
    residual: float
    history: list = field(default_factory=list, compare=False)


def townes_residual(Q: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    lap = apply_multiplier(FourierMultiplier.laplacian(grid), Q).real
    return lap + Q - Q**3


def _nehari(f: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    quad = l2_norm(f, grid) ** 2 + gradient_sq(f, grid)
    quart = grid.cell * np.sum(f**4)
    return f * np.sqrt(quad / quart)


def townes_ground_state(
    grid: PeriodicGrid,
    *,
    tau: float = 0.05,
    flow_tol: float = 1e-6,
    max_flow: int = 20000,
    tol: float = 1e-10,
    max_newton: int = 30,
) -> TownesSolution:
    """Positive radial solution of -Delta Q + Q - Q^3 = 0 on a 2D periodic grid."""
    if grid.dimension != 2:
        raise DimensionError("the Townes profile is computed in d = 2")
    lin = np.exp(-0.5 * tau * (1.0 + grid.ksq))
    f = np.exp(-0.5 * grid.radius**2)
    history = []
    for it in range(max_flow):
        f = np.fft.ifftn(lin * np.fft.fftn(f)).real
        f = f / np.sqrt(1.0 - 2 * tau * f**2)
        f = np.fft.ifftn(lin * np.fft.fftn(f)).real
        f = _nehari(f, grid)
        if it % 20 == 0:
            res = l2_norm(townes_residual(f, grid), grid)
            # the split flow settles on an O(tau^2)-biased profile; Newton removes the bias
            stalled = history and abs(history[-1] - res) < 1e-4 * res
            history.append(res)
            if res < flow_tol or stalled:
                break
    prec = 1.0 / (1.0 + grid.ksq)
    shape = grid.shape

    def precond(v):
        return np.fft.ifftn(prec * np.fft.fftn(v.reshape(shape))).real.ravel()

    for _ in range(max_newton):
        F = townes_residual(f, grid)
        res = l2_norm(F, grid)
        history.append(res)
        if res < tol:
            break
        pot = 1.0 - 3.0 * f**2

        def jac(v, pot=pot):
            v = v.reshape(shape)
            return (np.fft.ifftn(grid.ksq * np.fft.fftn(v)).real + pot * v).ravel()

        J = LinearOperator((grid.size, grid.size), matvec=jac, dtype=float)
        M = LinearOperator((grid.size, grid.size), matvec=precond, dtype=float)
        delta, _ = gmres(J, -F.ravel(), M=M, rtol=min(1e-3, res), atol=0.0, restart=60, maxiter=20)
        f = f + delta.reshape(shape)
        f = 0.5 * (f + _reflect(f))
    res = l2_norm(townes_residual(f, grid), grid)
    if not res < 1e-8:
        raise ConvergenceError(f"Townes iteration stalled at residual {res:.3e}", history)
    if f[grid.origin_index()] < 0:
        f = -f
    return TownesSolution(grid, f, l2_norm(f, grid) ** 2, res, history)


def townes_mass_shooting(r_match: float = 9.0, rtol: float = 1e-12) -> tuple[float, float]:
    """Radial shooting for Q'' + Q'/r - Q + Q^3 = 0 with a K0 tail; returns (Q(0), ||Q||^2)."""

    def rhs(r, y):
        return [y[1], -y[1] / r + y[0] - y[0] ** 3]

    def start(q0, r0=1e-4):
        c = 0.25 * (q0 - q0**3)
        return [q0 + c * r0**2, 2 * c * r0]

    def hit_zero(r, y):
        return y[0]

    def turn_up(r, y):
        return y[1]

    hit_zero.terminal = True
    turn_up.terminal = True
    turn_up.direction = 1

    def shoot(q0):
        sol = integrate.solve_ivp(rhs, (1e-4, 30.0), start(q0), method="DOP853", rtol=rtol, atol=1e-14,
                                  events=(hit_zero, turn_up))
        return len(sol.t_events[0]) > 0  # overshoot

    lo, hi = 2.0, 2.5
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if shoot(mid):
            hi = mid
        else:
            lo = mid
    q0 = 0.5 * (lo + hi)

    def mass_rhs(r, y):
        return [y[1], -y[1] / r + y[0] - y[0] ** 3, r * y[0] ** 2]

    sol = integrate.solve_ivp(mass_rhs, (1e-4, r_match), start(q0) + [0.0], method="DOP853", rtol=rtol, atol=1e-15)
    q_m = sol.y[0, -1]
    core = sol.y[2, -1] + 0.5e-8 * q0**2
    c = q_m / special.k0(r_match)
    tail = c**2 * 0.5 * r_match**2 * (special.k1(r_match) ** 2 - special.k0(r_match) ** 2)
    return q0, float(2 * np.pi * (core + tail))


class GNCheck(NamedTuple):
    lhs: float
    rhs: float
    holds: bool


def gn_inequality_check(f: np.ndarray, grid: PeriodicGrid, a_star: float) -> GNCheck:
    """||grad f||^2 ||f||^2 >= (a*/2) ||f||_4^4."""
    if grid.dimension != 2:
        raise DimensionError("the sharp Gagliardo-Nirenberg check is posed in d = 2")
    lhs = gradient_sq(f, grid) * l2_norm(f, grid) ** 2
    rhs = 0.5 * a_star * grid.cell * float(np.sum(np.abs(f) ** 4))
    return GNCheck(lhs, rhs, lhs >= rhs * (1 - 1e-6))


# ---------------------------------------------------------------- CSV


def write_profile_csv(path: str | Path, grid: PeriodicGrid, values: np.ndarray) -> None:
    cols = ["x"] if grid.dimension == 1 else ["x", "y"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols + ["value"])
        flat = [c.ravel() for c in grid.coords]
        for row in zip(*flat, np.asarray(values).real.ravel()):
            wr.writerow([repr(float(v)) for v in row])


def read_profile_csv(path: str | Path, grid: PeriodicGrid) -> Potential:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape != (grid.size, grid.dimension + 1):
        raise DimensionError(f"profile file has shape {data.shape}, grid expects {(grid.size, grid.dimension + 1)}")
    for ax, c in enumerate(grid.coords):
        if not np.allclose(data[:, ax], c.ravel(), atol=1e-9 * grid.box_length):
            raise DimensionError("profile coordinates do not match the grid")
    return Potential(grid, data[:, -1].reshape(grid.shape))
