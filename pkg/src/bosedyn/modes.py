"""Finite plane-wave mode spaces and the Galerkin mode model of the Hartree flow.

A :class:`ModeBasis` selects plane waves of a grid.  :class:`ModeModel` holds the
kinetic energies and the two-body tensor

    W[p, q, r, s] = <e_p (x) e_q, w_N(x - y) e_r (x) e_s>
                  = w^_N(k_p - k_r) / V * [k_p + k_q = k_r + k_s  (mod grid)]

from which the mean-field, exchange and pairing kernels are contracted.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConfigError, CoverageError, DimensionError, NormalizationError, SizeError
from .potentials import ScaledPotential
from .spectral import PeriodicGrid, fourier_pair, inverse_fourier

TENSOR_MODE_CAP = 64


def _integer_modes(grid: PeriodicGrid) -> np.ndarray:
    """Integer wavevectors of every grid mode, rows in flat FFT order."""
    m1 = np.fft.fftfreq(grid.points_per_axis, d=1.0 / grid.points_per_axis).astype(int)
    mesh = np.meshgrid(*([m1] * grid.dimension), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True, eq=False)
class ModeBasis:
    """The L lowest plane waves of a grid, ordered by |k| (ties: positive first)."""

    grid: PeriodicGrid
    indices: np.ndarray  # flat FFT indices
    m: np.ndarray  # integer wavevectors, shape (L, d)

    @classmethod
    def lowest(cls, grid: PeriodicGrid, L_modes: int | None = None) -> "ModeBasis":
        allm = _integer_modes(grid)
        L = grid.size if L_modes is None else int(L_modes)
        if not 1 <= L <= grid.size:
            raise ConfigError(f"L_modes must lie in [1, {grid.size}], got {L}")
        key = [(int(np.sum(v**2)), tuple(-np.sign(v)), tuple(-v)) for v in allm]
        order = sorted(range(len(allm)), key=lambda i: key[i])[:L]
        return cls(grid, np.array(order), allm[order])

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def is_full(self) -> bool:
        return self.size == self.grid.size

    @cached_property
    def k(self) -> np.ndarray:
        return self.m * (2 * np.pi / self.grid.box_length)

    @cached_property
    def ksq(self) -> np.ndarray:
        return np.sum(self.k**2, axis=1)

    def vectors(self) -> np.ndarray:
        """Basis functions sampled on the grid, shape (L, *grid.shape)."""
        out = np.empty((self.size,) + self.grid.shape, dtype=complex)
        for p in range(self.size):
            phase = sum(kk * x for kk, x in zip(self.k[p], self.grid.coords))
            out[p] = np.exp(1j * phase) / np.sqrt(self.grid.volume)
        return out

    def gram(self) -> np.ndarray:
        v = self.vectors().reshape(self.size, -1)
        return self.grid.cell * v.conj() @ v.T

    def coefficients(self, u: np.ndarray) -> np.ndarray:
        return fourier_pair(u, self.grid).ravel()[self.indices]

    def field(self, c: np.ndarray) -> np.ndarray:
        full = np.zeros(self.grid.size, dtype=complex)
        full[self.indices] = c
        return inverse_fourier(full.reshape(self.grid.shape), self.grid)

    def condensate(self, u: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        """Coefficients of a normalized field that must lie in the span of the basis."""
        c = self.coefficients(u) if np.shape(u) == self.grid.shape else np.asarray(u, dtype=complex)
        if c.shape != (self.size,):
            raise DimensionError(f"expected {self.size} coefficients, got shape {c.shape}")
        nrm = np.linalg.norm(c)
        if abs(nrm - 1.0) > tol:
            raise NormalizationError(f"condensate has norm {nrm:.12g} in the mode space; it must be unit "
                                     "and lie in the span of the basis")
        return c

    def diff_index(self) -> np.ndarray:
        """Flat FFT index of k_p - k_q for every pair."""
        n = self.grid.points_per_axis
        d = (self.m[:, None, :] - self.m[None, :, :]) % n
        flat = np.zeros(d.shape[:2], dtype=int)
        for ax in range(self.grid.dimension):
            flat = flat * n + d[..., ax]
        return flat


class ModeModel:
    """Kinetic energies and two-body tensor of w_N in a finite plane-wave basis."""

    def __init__(self, basis: ModeBasis, wN: ScaledPotential):
        if wN.grid != basis.grid:
            raise DimensionError("basis and potential live on different grids")
        L = basis.size
        if L > TENSOR_MODE_CAP:
            raise SizeError(f"dense two-body tensor limited to {TENSOR_MODE_CAP} modes, got {L}")
        self.basis = basis
        self.wN = wN
        self.L = L
        self.T = basis.ksq.copy()
        n = basis.grid.points_per_axis
        m = basis.m
        what = wN.transform.ravel()[basis.diff_index()] / basis.grid.volume  # (p, r)
        tot_in = m[:, None, :] + m[None, :, :]
        cons = np.all((tot_in[:, :, None, None, :] - tot_in[None, None, :, :, :]) % n == 0, axis=-1)
        if np.allclose(what.imag, 0.0, atol=1e-14):
            what = what.real  # even potential
        self.W = what[:, None, :, None] * cons

    @classmethod
    def from_arrays(cls, T: np.ndarray, W: np.ndarray) -> "ModeModel":
        """Model with explicitly given kinetic energies and tensor (no grid)."""
        obj = cls.__new__(cls)
        obj.basis, obj.wN = None, None
        obj.T = np.asarray(T, dtype=float)
        obj.W = np.asarray(W)
        obj.L = len(obj.T)
        return obj

    def is_free(self) -> bool:
        return not np.any(self.W)

    # kernels, all for the coefficient vector u of the condensate
    def mean_field(self, u: np.ndarray) -> np.ndarray:
        """Matrix of the multiplication operator w_N * |u|^2."""
        return np.einsum("pqrs,q,s->pr", self.W, u.conj(), u, optimize=True)

    def exchange(self, u: np.ndarray) -> np.ndarray:
        """Operator with kernel u(x) w_N(x - y) conj(u(y))."""
        return np.einsum("pqrs,q,r->ps", self.W, u.conj(), u, optimize=True)

    def pair(self, u: np.ndarray) -> np.ndarray:
        """Two-body function u(x) w_N(x - y) u(y)."""
        return np.einsum("pqrs,r,s->pq", self.W, u, u, optimize=True)

    def mu(self, u: np.ndarray) -> float:
        return 0.5 * float(np.real(np.vdot(u, self.mean_field(u) @ u)))

    def energy(self, u: np.ndarray) -> float:
        return float(np.sum(self.T * np.abs(u) ** 2)) + self.mu(u)

    def hartree_operator(self, u: np.ndarray) -> np.ndarray:
        return np.diag(self.T) + self.mean_field(u) - self.mu(u) * np.eye(self.L)

    def bogoliubov_kernels(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(h, K2) with h = T + M - mu + Q K1 Q and K2 = Q K2~ Q^T."""
        Q = np.eye(self.L) - np.outer(u, u.conj())
        h = self.hartree_operator(u) + Q @ self.exchange(u) @ Q
        K2 = Q @ self.pair(u) @ Q.T
        return 0.5 * (h + h.conj().T), 0.5 * (K2 + K2.T)

    def solve_hartree(self, u0: np.ndarray, t_final: float, rtol: float = 1e-12, atol: float = 1e-14) -> "ModeTrajectory":
        """i du/dt = (T + M(u) - mu(u)) u in the mode space, with dense output."""
        u0 = np.asarray(u0, dtype=complex)
        L = self.L

        def rhs(t, y):
            u = y[:L] + 1j * y[L:]
            du = -1j * (self.hartree_operator(u) @ u)
            return np.concatenate([du.real, du.imag])

        if t_final == 0:
            return ModeTrajectory(None, u0, 0.0)
        sol = solve_ivp(rhs, (0.0, t_final), np.concatenate([u0.real, u0.imag]), method="DOP853",
                        rtol=rtol, atol=atol, dense_output=True)
        if not sol.success:
            raise CoverageError(f"mode Hartree integration failed: {sol.message}")
        return ModeTrajectory(sol.sol, u0, t_final)


class ModeTrajectory:
    """Condensate coefficients u(t) on [0, t_final], renormalized on evaluation."""

    def __init__(self, dense, u0: np.ndarray, t_final: float):
        self._dense = dense
        self.u0 = u0
        self.t_final = t_final
        self.L = len(u0)

    def __call__(self, t: float) -> np.ndarray:
        if t < -1e-12 or t > self.t_final + 1e-12:
            raise CoverageError(f"t={t} outside the trajectory window [0, {self.t_final}]")
        if self._dense is None:
            return self.u0.copy()
        y = self._dense(min(max(t, 0.0), self.t_final))
        u = y[: self.L] + 1j * y[self.L:]
        return u / np.linalg.norm(u)
