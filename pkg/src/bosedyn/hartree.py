"""Split-step integration of the Hartree equation with energy-compatible phase,
the limiting cubic NLS, conserved quantities and the Hartree-to-NLS distance."""
from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConfigError, DivergenceError, NormalizationError
from .potentials import Potential, ScaledPotential, scale_potential
from .spectral import PeriodicGrid, convolve_with_transform, gradient_sq, inner, l2_norm, norms

log = logging.getLogger(__name__)

# blow-up guard defaults for focusing runs
GRADIENT_GROWTH_LIMIT = 1e6
SPECTRAL_TAIL_LIMIT = 1e-6


@dataclass(frozen=True, eq=False)
class HartreeState:
    u: np.ndarray
    t: float
    wN: ScaledPotential
    phase_integral: float = 0.0

    @property
    def grid(self) -> PeriodicGrid:
        return self.wN.grid


class ConservedQuantities(NamedTuple):
    mass: float
    energy: float
    h1: float
    h2: float
    linf: float


@dataclass
class Trajectory:
    """Sampled diagnostics, and optionally the fields, of one run."""

    times: list = field(default_factory=list)
    quantities: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(q, name) for q in self.quantities])

    def to_csv(self, path: str | Path) -> None:
        write_trajectory_csv(path, self.times, self.quantities)


def density_potential(u: np.ndarray, wN: ScaledPotential) -> np.ndarray:
    """w_N * |u|^2, real."""
    return convolve_with_transform(wN.transform, np.abs(u) ** 2, wN.grid).real


def mu_phase(u: np.ndarray, wN: ScaledPotential) -> float:
    """(1/2) <|u|^2, w_N * |u|^2>."""
    rho = np.abs(u) ** 2
    return 0.5 * wN.grid.cell * float(np.sum(rho * density_potential(u, wN)))


def hartree_energy(u: np.ndarray, wN: ScaledPotential) -> float:
    return gradient_sq(u, wN.grid) + mu_phase(u, wN)


def nls_energy(phi: np.ndarray, grid: PeriodicGrid, a: float) -> float:
    return gradient_sq(phi, grid) + 0.5 * a * grid.cell * float(np.sum(np.abs(phi) ** 4))


def _quantities(u, grid, energy) -> ConservedQuantities:
    nm = norms(u, grid)
    return ConservedQuantities(nm.L2**2, energy, nm.H1, nm.H2, nm.Linf)


def conserved_quantities(state: HartreeState) -> ConservedQuantities:
    return _quantities(state.u, state.grid, hartree_energy(state.u, state.wN))


def _tail_fraction(c2: np.ndarray, grid: PeriodicGrid) -> float:
    """Fraction of L^2 mass in the upper third of the resolved wavenumbers."""
    kmax = np.max(np.abs(grid.wavenumbers))
    high = np.zeros(grid.shape, dtype=bool)
    for k in grid.kvecs:
        high |= np.abs(k) > (2.0 / 3.0) * kmax
    tot = c2.sum()
    return float(c2[high].sum() / tot) if tot > 0 else 0.0


def _split_step(
    u: np.ndarray,
    grid: PeriodicGrid,
    potential: Callable[[np.ndarray], np.ndarray],
    mu: Callable[[np.ndarray], float],
    t0: float,
    t_final: float,
    dt: float,
    energy: Callable[[np.ndarray], float],
    sample_every: float | None,
    keep_snapshots: bool,
    guard: bool,
):
    """Strang splitting V/2 - T - V/2.  Returns (u, t, phase_integral, trajectory)."""
    if not dt > 0:
        raise ConfigError("dt must be positive")
    span = t_final - t0
    if span < 0:
        raise ConfigError("t_final precedes the current time")
    nsteps = int(np.ceil(span / dt - 1e-9))
    if nsteps == 0:
        traj = Trajectory([t0], [_quantities(u, grid, energy(u))], [u.copy()] if keep_snapshots else [])
        return u, t0, 0.0, traj
    h = span / nsteps
    ax = tuple(range(grid.dimension))
    kinetic = np.exp(-1j * h * grid.ksq)
    every = max(1, int(round(sample_every / h))) if sample_every else nsteps
    traj = Trajectory()

    def record(v, t):
        traj.times.append(t)
        traj.quantities.append(_quantities(v, grid, energy(v)))
        if keep_snapshots:
            traj.snapshots.append(v.copy())

    record(u, t0)
    grad0 = max(gradient_sq(u, grid), 1e-300)
    phase = 0.0
    # |u| is invariant under the potential sub-steps, so each half step uses the
    # exact potential; the scalar phase uses the value at its own half step
    m = mu(u)
    for step in range(1, nsteps + 1):
        u = u * np.exp(-0.5j * h * (potential(u) - m))
        phase += 0.5 * h * m
        u = np.fft.ifftn(kinetic * np.fft.fftn(u, axes=ax), axes=ax)
        m = mu(u)
        u = u * np.exp(-0.5j * h * (potential(u) - m))
        phase += 0.5 * h * m
        t = t0 + step * h
        if step % every == 0 or step == nsteps:
            if not np.all(np.isfinite(u)):
                raise DivergenceError(f"non-finite field at t={t:.6g}", last_time=traj.times[-1])
            record(u, t)
            if guard:
                c2 = np.abs(np.fft.fftn(u, axes=ax)) ** 2
                grad = float(np.sum(grid.ksq * c2)) * grid.cell / grid.size
                if grad > GRADIENT_GROWTH_LIMIT * grad0:
                    raise DivergenceError(f"gradient norm grew by {grad / grad0:.3g} at t={t:.6g}",
                                          last_time=t, tag="possible blow-up")
                tail = _tail_fraction(c2, grid)
                if tail > SPECTRAL_TAIL_LIMIT:
                    raise DivergenceError(f"resolution lost (spectral tail {tail:.3g}) at t={t:.6g}",
                                          last_time=t, tag="possible blow-up")
    return u, t_final, phase, traj


def _check_unit(u: np.ndarray, grid: PeriodicGrid, tol: float = 1e-6) -> None:
    n = l2_norm(u, grid)
    if abs(n - 1.0) > tol:
        raise NormalizationError(f"initial datum has L2 norm {n:.12g}, expected 1")


def hartree_evolve(
    state: HartreeState,
    t_final: float,
    dt: float,
    *,
    sample_every: float | None = 0.01,
    keep_snapshots: bool = False,
    include_phase: bool = True,
    guard: bool | None = None,
) -> tuple[HartreeState, Trajectory]:
    """i du/dt = (-Delta + w_N*|u|^2 - mu_N) u.

    ``guard`` defaults to on for potentials with a negative part.  Any band-limited
    datum is accepted; the convergence statements behind the N-scaling experiments
    assume u(0) in H^4, which is not checked here.
    """
    grid = state.grid
    grid.check(state.u)
    if dt * float(np.max(grid.ksq)) > np.pi:
        log.warning("dt*max|k|^2 = %.3g exceeds pi; splitting accuracy degrades",
                    dt * float(np.max(grid.ksq)))
    wN = state.wN
    if guard is None:
        guard = bool(np.any(wN.profile_N < 0))

    def mu(v):
        return mu_phase(v, wN) if include_phase else 0.0

    u, t, phase, traj = _split_step(
        state.u, grid, lambda v: density_potential(v, wN), mu, state.t, t_final, dt,
        lambda v: hartree_energy(v, wN), sample_every, keep_snapshots, guard,
    )
    return HartreeState(u, t, wN, state.phase_integral + phase), traj


def nls_evolve(
    phi0: np.ndarray,
    grid: PeriodicGrid,
    a: float,
    t_final: float,
    dt: float,
    *,
    sample_every: float | None = 0.01,
    keep_snapshots: bool = False,
    guard: bool | None = None,
) -> tuple[np.ndarray, Trajectory]:
    """i dphi/dt = (-Delta + a|phi|^2) phi, no phase."""
    grid.check(phi0)
    if guard is None:
        guard = a < 0
    phi, _, _, traj = _split_step(
        np.asarray(phi0, dtype=complex), grid, lambda v: a * np.abs(v) ** 2, lambda v: 0.0, 0.0, t_final, dt,
        lambda v: nls_energy(v, grid, a), sample_every, keep_snapshots, guard,
    )
    return phi, traj


def phase_aligned_distance(u: np.ndarray, v: np.ndarray, grid: PeriodicGrid) -> float:
    """min over theta of ||u - e^{i theta} v||_L2."""
    d2 = l2_norm(u, grid) ** 2 + l2_norm(v, grid) ** 2 - 2 * abs(inner(v, u, grid))
    return float(np.sqrt(max(d2, 0.0)))


class DistanceRow(NamedTuple):
    N: int
    distance: float


def hartree_nls_distance(
    u0: np.ndarray,
    w: Potential,
    N_list,
    beta: float,
    t_final: float,
    dt: float = 1e-3,
) -> list[DistanceRow]:
    """Gauge-invariant L2 distance between the Hartree solution for each N and the NLS solution."""
    grid = w.grid
    _check_unit(u0, grid)
    a = w.total_integral if w.analytic is None or w.analytic.name != "delta" else w.analytic.mass
    phi, _ = nls_evolve(u0, grid, a, t_final, dt, sample_every=None, guard=False)
    rows = []
    for N in N_list:
        wN = scale_potential(w, int(N), beta, grid)
        st, _ = hartree_evolve(HartreeState(np.asarray(u0, dtype=complex), 0.0, wN), t_final, dt,
                               sample_every=None, guard=False)
        rows.append(DistanceRow(int(N), phase_aligned_distance(st.u, phi, grid)))
    return rows


def growth_envelope_rate(times, values) -> float:
    """Smallest C with values(t) <= values(0) * exp(exp(C t) - 1) on the samples."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    mask = t > 0
    ratio = np.maximum(v[mask] / v[0], 1.0)
    rates = np.log1p(np.log(ratio)) / t[mask]
    return float(np.max(rates, initial=0.0))


# ---------------------------------------------------------------- output

TRAJECTORY_COLUMNS = ("t", "mass", "energy", "h1", "h2", "linf")


def write_trajectory_csv(path, times, quantities) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(TRAJECTORY_COLUMNS)
        for t, q in zip(times, quantities):
            wr.writerow([repr(float(t))] + [repr(float(x)) for x in q])


SNAPSHOT_MAGIC = b"BDSNAP01"


def write_snapshots(path, grid: PeriodicGrid, times, fields) -> None:
    """Flat binary records: magic, uint32 ndim, uint32 shape[ndim], float64 box, float64 t, complex128 values."""
    with open(path, "wb") as fh:
        for t, f in zip(times, fields):
            fh.write(SNAPSHOT_MAGIC)
            fh.write(struct.pack("<I", grid.dimension))
            fh.write(struct.pack(f"<{grid.dimension}I", *grid.shape))
            fh.write(struct.pack("<dd", grid.box_length, float(t)))
            fh.write(np.ascontiguousarray(f, dtype="<c16").tobytes())


def read_snapshots(path) -> tuple[PeriodicGrid, list[float], list[np.ndarray]]:
    data = Path(path).read_bytes()
    pos, times, fields, grid = 0, [], [], None
    while pos < len(data):
        if data[pos:pos + 8] != SNAPSHOT_MAGIC:
            raise ValueError(f"bad snapshot record at byte {pos}")
        pos += 8
        (nd,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{nd}I", data, pos)
        pos += 4 * nd
        box, t = struct.unpack_from("<dd", data, pos)
        pos += 16
        count = int(np.prod(shape))
        f = np.frombuffer(data, dtype="<c16", count=count, offset=pos).reshape(shape).copy()
        pos += 16 * count
        grid = grid or PeriodicGrid(nd, shape[0], box)
        times.append(t)
        fields.append(f)
    return grid, times, fields


def gaussian_datum(grid: PeriodicGrid, width: float = 1.0, k0=None, center=None) -> np.ndarray:
    """Normalized Gaussian exp(-|x-c|^2/(2 width^2)) e^{i k0.x}."""
    c = np.zeros(grid.dimension) if center is None else np.atleast_1d(center)
    r2 = sum((x - cc) ** 2 for x, cc in zip(grid.coords, c))
    u = np.exp(-0.5 * r2 / width**2).astype(complex)
    if k0 is not None:
        u = u * np.exp(1j * sum(kk * x for kk, x in zip(np.atleast_1d(k0), grid.coords)))
    return u / l2_norm(u, grid)
