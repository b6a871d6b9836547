"""One-body operator h(t) and pairing kernel K2(t) around a condensate, the linear
evolution of the pair (gamma, alpha), and numerical checks of the quadratic
Hamiltonian's kinetic, Sobolev and ground-state bounds.

Conventions: gamma_pq = <a*_q a_p>, alpha_pq = <a_p a_q> in an orthonormal
plane-wave basis; K2 is the coefficient matrix of the two-body function
(Q (x) Q) u(x) w_N(x - y) u(y).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from .errors import ConfigError, CoverageError, DimensionError, PreconditionError
from .hartree import density_potential, mu_phase
from .modes import ModeBasis, ModeModel, ModeTrajectory
from .potentials import ScaledPotential
from .spectral import PeriodicGrid, fourier_pair


@dataclass(frozen=True, eq=False)
class GeneratorKernels:
    h: np.ndarray
    K2: np.ndarray


@dataclass(frozen=True, eq=False)
class DensityPair:
    gamma: np.ndarray
    alpha: np.ndarray

    @classmethod
    def vacuum(cls, L: int) -> "DensityPair":
        z = np.zeros((L, L), dtype=complex)
        return cls(z, z.copy())

    @property
    def size(self) -> int:
        return self.gamma.shape[0]


# ---------------------------------------------------------------- kernels on the grid


def _all_modes(grid: PeriodicGrid) -> np.ndarray:
    n = grid.points_per_axis
    m1 = np.fft.fftfreq(n, d=1.0 / n).astype(int)
    mesh = np.meshgrid(*([m1] * grid.dimension), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _flat(grid: PeriodicGrid, m: np.ndarray) -> np.ndarray:
    n = grid.points_per_axis
    flat = np.zeros(m.shape[:-1], dtype=int)
    for ax in range(grid.dimension):
        flat = flat * n + m[..., ax] % n
    return flat


def _multiplication_rows(f: np.ndarray, basis: ModeBasis) -> np.ndarray:
    """<e_p, f e_m> for p in the basis and m over every grid mode (flat FFT order)."""
    grid = basis.grid
    c = fourier_pair(f, grid).ravel() / np.sqrt(grid.volume)
    allm = _all_modes(grid)
    return c[_flat(grid, basis.m[:, None, :] - allm[None, :, :])]


def build_generator_kernels(u: np.ndarray, wN: ScaledPotential, basis: ModeBasis) -> GeneratorKernels:
    """h = -Delta + (w_N * |u|^2 - mu_N) + Q K1 Q and K2 = Q K2~ Q^T in the basis.

    K1 and K2~ are contracted through the full grid spectrum, so a strict subset
    of plane waves gets the Galerkin projection of the grid operators."""
    grid = basis.grid
    if wN.grid != grid:
        raise DimensionError("potential and basis live on different grids")
    grid.check(u)
    c = basis.condensate(u)
    allm = _all_modes(grid)
    Vb = _multiplication_rows(density_potential(u, wN) - mu_phase(u, wN), basis)[:, basis.indices]
    what = wN.transform.ravel()
    Du = _multiplication_rows(u, basis)  # <e_p, u e_m>
    # K1_ps = sum_m w(k_m) <e_p, u e_m> conj(<e_s, u e_m>)
    K1 = (Du * what[None, :]) @ Du.conj().T
    # K2~_pq = sum_m w(k_m) <e_p, u e_m> <e_q, u e_-m>
    K2t = (Du * what[None, :]) @ Du[:, _flat(grid, -allm)].T
    Q = np.eye(basis.size) - np.outer(c, c.conj())
    h = np.diag(basis.ksq) + Vb + Q @ K1 @ Q
    K2 = Q @ K2t @ Q.T
    return GeneratorKernels(0.5 * (h + h.conj().T), 0.5 * (K2 + K2.T))


def condensate_projector(c: np.ndarray) -> np.ndarray:
    return np.outer(c, c.conj())


# ---------------------------------------------------------------- kernel sources


class ModeKernelSource:
    """(h, K2) along a mode-space Hartree trajectory."""

    def __init__(self, model: ModeModel, trajectory: ModeTrajectory):
        self.model, self.trajectory = model, trajectory
        self.t_min, self.t_max = 0.0, trajectory.t_final

    def __call__(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        return self.model.bogoliubov_kernels(self.trajectory(t))

    def condensate(self, t: float) -> np.ndarray:
        return self.trajectory(t)


class SnapshotKernelSource:
    """(h, K2) from stored grid snapshots of u, linearly interpolated in time."""

    def __init__(self, times, fields, wN: ScaledPotential, basis: ModeBasis):
        self.times = np.asarray(times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ConfigError("snapshot times must increase")
        self.coeffs = [basis.coefficients(f) for f in fields]
        self.fields = list(fields)
        self.wN, self.basis = wN, basis
        self.t_min, self.t_max = float(self.times[0]), float(self.times[-1])
        self.cadence = float(np.max(np.diff(self.times))) if len(self.times) > 1 else np.inf

    def field_at(self, t: float) -> np.ndarray:
        if t < self.t_min - 1e-12 or t > self.t_max + 1e-12:
            raise CoverageError(f"t={t} outside snapshot window [{self.t_min}, {self.t_max}]")
        j = int(np.clip(np.searchsorted(self.times, t) - 1, 0, len(self.times) - 2)) if len(self.times) > 1 else 0
        if len(self.times) == 1:
            return self.fields[0]
        lam = (t - self.times[j]) / (self.times[j + 1] - self.times[j])
        f = (1 - lam) * self.fields[j] + lam * self.fields[j + 1]
        g = self.basis.grid
        return f / np.sqrt(g.cell * np.sum(np.abs(f) ** 2))

    def condensate(self, t: float) -> np.ndarray:
        return self.basis.coefficients(self.field_at(t))

    def __call__(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        k = build_generator_kernels(self.field_at(t), self.wN, self.basis)
        return k.h, k.K2


# ---------------------------------------------------------------- (gamma, alpha) evolution


def dm_rhs(h: np.ndarray, K2: np.ndarray, gamma: np.ndarray, alpha: np.ndarray):
    """Time derivatives of (gamma, alpha) under the quadratic Hamiltonian with (h, K2)."""
    dg = h @ gamma - gamma @ h + K2 @ alpha.conj() - alpha @ K2.conj()
    da = h @ alpha + alpha @ h.T + K2 + K2 @ gamma.T + gamma @ K2
    return -1j * dg, -1j * da


@dataclass
class DMDiagnostics:
    times: list = field(default_factory=list)
    trace_gamma: list = field(default_factory=list)
    kinetic: list = field(default_factory=list)
    purity_defect: list = field(default_factory=list)
    symmetry_defect: list = field(default_factory=list)  # before enforcement
    pairs: list = field(default_factory=list)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "trace_gamma", "kinetic", "purity_defect", "symmetry_defect"])
            for row in zip(self.times, self.trace_gamma, self.kinetic, self.purity_defect, self.symmetry_defect):
                wr.writerow([repr(float(x)) for x in row])


def purity_defect(pair: DensityPair) -> float:
    """||alpha conj(alpha) - gamma - gamma^2||, zero for pure quasi-free states."""
    g, a = pair.gamma, pair.alpha
    return float(np.linalg.norm(a @ a.conj() - g - g @ g, 2))


def evolve_dm(
    pair: DensityPair,
    kernels: Callable[[float], tuple[np.ndarray, np.ndarray]],
    t_final: float,
    dt: float,
    *,
    t0: float = 0.0,
    ksq: np.ndarray | None = None,
    sample_every: int = 1,
    keep_pairs: bool = False,
) -> tuple[DensityPair, DMDiagnostics]:
    """Classic RK4 for the linear (gamma, alpha) system with post-step symmetrization."""
    lo, hi = getattr(kernels, "t_min", -np.inf), getattr(kernels, "t_max", np.inf)
    if t0 < lo - 1e-12 or t_final > hi + 1e-12:
        raise CoverageError(f"kernel source covers [{lo}, {hi}], run needs [{t0}, {t_final}]")
    cadence = getattr(kernels, "cadence", None)
    if cadence is not None and cadence > 10 * dt + 1e-12:
        raise ConfigError(f"snapshot cadence {cadence} exceeds 10 x dt = {10 * dt}")
    span = t_final - t0
    nsteps = max(1, int(np.ceil(span / dt - 1e-9))) if span > 0 else 0
    h_ = span / nsteps if nsteps else 0.0
    g, a = pair.gamma.astype(complex), pair.alpha.astype(complex)
    diag = DMDiagnostics()
    weights = None if ksq is None else 1.0 + np.asarray(ksq)

    def record(t, g, a, defect):
        p = DensityPair(g.copy(), a.copy())
        diag.times.append(t)
        diag.trace_gamma.append(float(np.real(np.trace(g))))
        diag.kinetic.append(float(np.real(np.sum(weights * np.diag(g)))) if weights is not None else np.nan)
        diag.purity_defect.append(purity_defect(p))
        diag.symmetry_defect.append(defect)
        if keep_pairs:
            diag.pairs.append(p)

    record(t0, g, a, 0.0)
    cache = {}

    def K(t):
        if t not in cache:
            if len(cache) > 8:
                cache.clear()
            cache[t] = kernels(t)
        return cache[t]

    for k in range(nsteps):
        t = t0 + k * h_
        k1 = dm_rhs(*K(t), g, a)
        k2 = dm_rhs(*K(t + h_ / 2), g + h_ / 2 * k1[0], a + h_ / 2 * k1[1])
        k3 = dm_rhs(*K(t + h_ / 2), g + h_ / 2 * k2[0], a + h_ / 2 * k2[1])
        k4 = dm_rhs(*K(t + h_), g + h_ * k3[0], a + h_ * k3[1])
        g = g + h_ / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        a = a + h_ / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        defect = max(float(np.linalg.norm(g - g.conj().T)), float(np.linalg.norm(a - a.T)))
        g = 0.5 * (g + g.conj().T)
        a = 0.5 * (a + a.T)
        if (k + 1) % sample_every == 0 or k + 1 == nsteps:
            record(t + h_, g, a, defect)
    return DensityPair(g, a), diag


def kinetic_expectation(pair: DensityPair, basis: ModeBasis | np.ndarray) -> float:
    """Tr[(1 - Delta) gamma] in the plane-wave basis."""
    ksq = basis.ksq if isinstance(basis, ModeBasis) else np.asarray(basis)
    return float(np.real(np.sum((1.0 + ksq) * np.diag(pair.gamma))))


def write_pair_csv(prefix: str | Path, pair: DensityPair) -> tuple[Path, Path]:
    """Writes <prefix>_gamma.csv and <prefix>_alpha.csv in long form (p, q, re, im)."""
    paths = (Path(f"{prefix}_gamma.csv"), Path(f"{prefix}_alpha.csv"))
    for path, mat in zip(paths, (pair.gamma, pair.alpha)):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["p", "q", "re", "im"])
            for (p, q), z in np.ndenumerate(mat):
                wr.writerow([p, q, repr(float(z.real)), repr(float(z.imag))])
    return paths


def read_pair_csv(prefix: str | Path) -> DensityPair:
    mats = []
    for suffix in ("gamma", "alpha"):
        data = np.loadtxt(f"{prefix}_{suffix}.csv", delimiter=",", skiprows=1, ndmin=2)
        L = int(data[:, 0].max()) + 1
        m = np.zeros((L, L), dtype=complex)
        m[data[:, 0].astype(int), data[:, 1].astype(int)] = data[:, 2] + 1j * data[:, 3]
        mats.append(m)
    return DensityPair(*mats)


# ---------------------------------------------------------------- kernel norms


def hs_norm(K: np.ndarray) -> float:
    return float(np.linalg.norm(K))


def kernel_sobolev_norm(K2: np.ndarray, basis: ModeBasis | np.ndarray) -> float:
    """||(1 - Delta_x)^{-1/2} K2||_HS with the multiplier acting on the first variable."""
    ksq = basis.ksq if isinstance(basis, ModeBasis) else np.asarray(basis)
    return float(np.sqrt(np.sum(np.abs(K2) ** 2 / (1.0 + ksq)[:, None])))


def sobolev_constant(wN: ScaledPotential, L_points: int | None = None) -> float:
    """Smallest c with |w_N(x - y)| <= c (1 - Delta_x) on a two-particle periodic grid.

    Translation invariance reduces the two-particle problem to the top eigenvalue
    of (1 - Delta)^{-1/2} |w_N| (1 - Delta)^{-1/2} in one variable."""
    grid = wN.grid
    if L_points is not None and grid.points_per_axis != L_points:
        raise DimensionError("grid does not have the requested number of points")
    n = grid.size
    ax = tuple(range(1, grid.dimension + 1))
    unit = np.eye(n).reshape((n,) + grid.shape)
    # columns of (1 - Delta)^{-1/2} in position space
    inv_half = np.fft.ifftn((1.0 + grid.ksq) ** -0.5 * np.fft.fftn(unit, axes=ax), axes=ax).reshape(n, n).T
    A = inv_half.conj().T @ np.diag(np.abs(wN.profile_N).ravel()) @ inv_half
    return float(np.max(np.linalg.eigvalsh(0.5 * (A + A.conj().T))))


def two_particle_sobolev_gap(wN: ScaledPotential, c: float) -> float:
    """Smallest eigenvalue of c (1 - Delta_x) - |w_N(x - y)| on the full two-particle grid."""
    grid = wN.grid
    if grid.dimension != 1 or grid.points_per_axis > 16:
        raise ConfigError("the two-particle spot check runs on 1D grids with at most 16 points")
    n = grid.points_per_axis
    lap = np.fft.ifft((1.0 + grid.ksq)[:, None] * np.fft.fft(np.eye(n), axis=0), axis=0).real
    x = np.arange(n)
    wvals = np.abs(np.fft.ifftshift(wN.profile_N))  # index 0 = origin
    diff = (x[:, None] - x[None, :]) % n
    Wmat = np.diag(wvals[diff].ravel())  # |w(x - y)| on pairs (x, y)
    op = c * np.kron(lap, np.eye(n)) - Wmat
    return float(np.min(np.linalg.eigvalsh(0.5 * (op + op.T))))


# ---------------------------------------------------------------- quadratic lower bound


class LowerBoundResult(NamedTuple):
    ground_energy: float
    bound: float
    holds: bool


def admissibility_margin(H: np.ndarray, K: np.ndarray) -> float:
    """Smallest eigenvalue of H - K conj(H)^{-1} K^*: nonnegative iff the quadratic form is bounded below."""
    S = H - K @ np.linalg.solve(H.conj(), K.conj().T)
    return float(np.min(np.linalg.eigvalsh(0.5 * (S + S.conj().T))))


def quadratic_hamiltonian(H: np.ndarray, K: np.ndarray, M_trunc: int, cap: int | None = None):
    """dGamma(H) + (1/2) sum (K_pq a*_p a*_q + h.c.) on the sectors 0..M_trunc."""
    from .fock import DIMENSION_CAP, FockSpace, one_body_operator

    L = H.shape[0]
    space = FockSpace(L, M_trunc, cap=cap or DIMENSION_CAP)
    ad = [a.conj().T.tocsr() for a in space.annihilators]
    pair = sum((K[p, q] * (ad[p] @ ad[q]) for p in range(L) for q in range(L) if K[p, q] != 0),
               sp.csr_matrix((space.dim, space.dim), dtype=complex))
    op = one_body_operator(space, H) + 0.5 * (pair + pair.conj().T)
    return op.tocsr(), space


def quadratic_lower_bound_check(H: np.ndarray, K: np.ndarray, M_trunc: int, tol: float = 1e-10) -> LowerBoundResult:
    """Ground energy of the truncated quadratic Hamiltonian against -(1/2)||H^{-1/2} K||_HS^2."""
    H = np.asarray(H, dtype=complex)
    K = np.asarray(K, dtype=complex)
    if H.shape != K.shape or H.shape[0] != H.shape[1]:
        raise DimensionError("H and K must be square matrices of equal size")
    if np.linalg.norm(H - H.conj().T) > 1e-10 * max(1.0, np.linalg.norm(H)):
        raise PreconditionError("H must be Hermitian")
    evals, evecs = np.linalg.eigh(0.5 * (H + H.conj().T))
    if evals[0] <= 0:
        raise PreconditionError(f"H is not positive definite (smallest eigenvalue {evals[0]:.3e})")
    margin = admissibility_margin(H, K)
    if margin < -tol:
        raise PreconditionError(f"pairing too strong: H - K conj(H)^-1 K* has eigenvalue {margin:.3e}")
    Hmh = evecs @ np.diag(evals**-0.5) @ evecs.conj().T
    bound = -0.5 * float(np.linalg.norm(Hmh @ K) ** 2)
    op, space = quadratic_hamiltonian(H, K, M_trunc)
    if space.dim <= 400:
        e0 = float(sla.eigh(op.toarray(), eigvals_only=True, subset_by_index=[0, 0])[0])
    else:
        e0 = float(eigsh(op, k=1, which="SA", tol=1e-13)[0][0])
    return LowerBoundResult(e0, bound, e0 >= bound - 1e-8)


def single_mode_ground_energy(omega: float, k: float) -> float:
    """Exact ground energy of omega a*a + (1/2)(k a*a* + conj(k) a a)."""
    return 0.5 * (np.sqrt(omega**2 - abs(k) ** 2) - omega)


def bdg_ground_energy(H: np.ndarray, K: np.ndarray) -> float:
    """Untruncated ground energy (1/2)(sum of positive BdG eigenvalues - tr H); needs a strict margin."""
    H = np.asarray(H, dtype=complex)
    K = np.asarray(K, dtype=complex)
    L = H.shape[0]
    bdg = np.block([[H, K], [-K.conj(), -H.conj()]])
    ev = np.sort(np.linalg.eigvals(bdg).real)[L:]
    return float(0.5 * (np.sum(ev) - np.trace(H).real))


def random_admissible_instance(rng: np.random.Generator, L: int, strength: float = 0.8):
    """Random Hermitian positive H and symmetric K with H - K conj(H)^{-1} K^* >= 0."""
    A = rng.normal(size=(L, L)) + 1j * rng.normal(size=(L, L))
    H = A @ A.conj().T / L + np.eye(L)
    B = rng.normal(size=(L, L)) + 1j * rng.normal(size=(L, L))
    K = B + B.T
    # scale K so the admissibility margin stays positive
    evals, evecs = np.linalg.eigh(H)
    Hmh = evecs @ np.diag(evals**-0.5) @ evecs.conj().T
    Hmh_bar = Hmh.conj()
    op = np.linalg.norm(Hmh @ K @ Hmh_bar, 2)
    K = K * (strength * rng.uniform(0.2, 1.0) / op)
    return H, K


# ---------------------------------------------------------------- structured pairing-kernel norms


def _centered(c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """FFT-ordered 1D coefficients -> (integer modes ascending, coefficients)."""
    n = len(c)
    m = np.fft.fftfreq(n, d=1.0 / n).astype(int)
    order = np.argsort(m)
    return m[order], c[order]


class _PairStructure1D:
    """Row Gram functions of the 1D pieces of K2 = K2~ - u(x)g - g(x)u + 2 mu u(x)u on the
    infinite lattice of a circle of length ``ell``.

    ``what(k)`` is the continuum transform of the (scaled) potential."""

    def __init__(self, c_fft: np.ndarray, ell: float, what: Callable[[np.ndarray], np.ndarray], tol: float = 1e-16):
        m, c = _centered(np.asarray(c_fft, dtype=complex))
        keep = np.abs(c) > tol * np.max(np.abs(c))
        lo, hi = m[keep].min(), m[keep].max()
        sel = (m >= lo) & (m <= hi)
        self.m, self.c = m[sel], c[sel]
        self.ell = ell
        self.dk = 2 * np.pi / ell
        self.what = what
        band = hi - lo + 1
        # g = u (w * |u|^2) via a padded FFT with the continuum multiplier (no aliasing)
        npad = 1 << int(np.ceil(np.log2(4 * band + 8)))
        mp = np.fft.fftfreq(npad, d=1.0 / npad).astype(int)
        cu = np.zeros(npad, dtype=complex)
        cu[self.m % npad] = self.c
        ux = np.fft.ifft(cu) * npad / np.sqrt(ell)
        rho = np.abs(ux) ** 2
        conv = np.fft.ifft(what(mp * self.dk) * np.fft.fft(rho))
        dx = ell / npad
        self.mu = 0.5 * dx * float(np.real(np.sum(rho * conv)))
        gc = np.fft.fft(ux * conv) * np.sqrt(ell) / npad
        idx = np.nonzero(np.abs(gc) > tol * np.max(np.abs(gc), initial=1.0))[0]
        idx = idx[np.argsort(mp[idx])]
        self.g_m, self.g = mp[idx], gc[idx]
        self.P = np.arange(2 * lo, 2 * hi + 1)  # total momenta carried by K2~
        # G[P, s] = c_s c_{P - s}
        self.G = np.zeros((len(self.P), len(self.m)), dtype=complex)
        for j, s in enumerate(self.m):
            other = self.P - s
            ok = (other >= lo) & (other <= hi)
            self.G[ok, j] = self.c[j] * self.c[other[ok] - lo]
        self.lo, self.hi = lo, hi

    def coeff(self, which: str, m: np.ndarray) -> np.ndarray:
        src_m, src = (self.m, self.c) if which == "u" else (self.g_m, self.g)
        out = np.zeros(np.shape(m), dtype=complex)
        if len(src_m) == 0:
            return out
        pos = np.searchsorted(src_m, m)
        pos = np.clip(pos, 0, len(src_m) - 1)
        hit = src_m[pos] == m
        out[hit] = src[pos[hit]]
        return out

    def rank_one_support(self) -> int:
        gmax = np.max(np.abs(self.g_m)) if len(self.g_m) else 0
        return int(max(abs(self.lo), abs(self.hi), gmax))

    def F(self, k: np.ndarray) -> np.ndarray:
        """K2~ rows at momenta k against total momentum P: F[k, P]."""
        Wk = self.what(np.subtract.outer(k, self.m * self.dk))
        return (Wk @ self.G.T) / self.ell

    def row_grams(self, p: np.ndarray) -> dict:
        """R_ij(p) = sum_l conj(A_i[p, l]) A_j[p, l] for the four pieces, p integer modes."""
        k = p * self.dk
        F = self.F(k)  # [p, P], l = P - p
        P = self.P
        ext = np.arange(min(P.min(), -2 * self.rank_one_support()) , max(P.max(), 2 * self.rank_one_support()) + 1)
        Fx = np.zeros((len(p), len(ext)), dtype=complex)
        Fx[:, P - ext[0]] = F
        l = ext[None, :] - p[:, None]
        up, gp = self.coeff("u", p), self.coeff("g", p)
        ul, gl = self.coeff("u", l), self.coeff("g", l)
        pieces = {
            "K": Fx,
            "ug": up[:, None] * gl,
            "gu": gp[:, None] * ul,
            "uu": up[:, None] * ul,
        }
        names = list(pieces)
        out = {}
        for i, a in enumerate(names):
            for b in names[i:]:
                out[(a, b)] = np.sum(pieces[a].conj() * pieces[b], axis=1)
        return out

    def coefficients(self) -> dict:
        return {"K": 1.0, "ug": -1.0, "gu": -1.0, "uu": 2.0 * self.mu}

    def tail_density(self, k: np.ndarray) -> np.ndarray:
        """sum_P |F(k, P)|^2 where only K2~ survives."""
        return np.sum(np.abs(self.F(k)) ** 2, axis=1)


def _decay_scale(what: Callable, rel: float = 1e-17) -> float:
    """Momentum beyond which |what| < rel |what(0)|, found on a geometric scan."""
    w0 = abs(complex(np.atleast_1d(what(np.array([0.0])))[0])) or 1.0
    k = 1.0
    for _ in range(200):
        if np.all(np.abs(what(np.array([k, 1.5 * k, 2 * k]))) < rel * w0):
            return k
        k *= 1.5
    return k


def _combine(grams: dict, coefs: dict, weight: np.ndarray) -> float:
    total = 0.0
    names = list(coefs)
    for i, a in enumerate(names):
        for b in names[i:]:
            val = np.sum(weight * grams[(a, b)])
            term = np.conj(coefs[a]) * coefs[b] * val
            total += float(np.real(term)) * (1 if a == b else 2)
    return total


def pairing_kernel_norms_1d(u: np.ndarray, grid: PeriodicGrid, what: Callable[[np.ndarray], np.ndarray],
                            panels_per_octave: int = 2, nodes: int = 24) -> tuple[float, float]:
    """(||(1-Delta_x)^{-1/2} K2||_HS^2, ||K2||_HS^2) on the circle of the grid, with the
    continuum transform ``what`` of w_N and the full infinite lattice of momenta.

    Momenta up to a cutoff beyond all rank-one pieces are summed exactly; the remaining
    lattice sum of the smooth tail density is replaced by its integral."""
    if grid.dimension != 1:
        raise DimensionError("use pairing_kernel_norms_2d_separable for d = 2")
    st = _PairStructure1D(fourier_pair(u, grid), grid.box_length, what)
    Kc = 2 * st.rank_one_support() + 8
    p = np.arange(-Kc, Kc + 1)
    grams = st.row_grams(p)
    k = p * st.dk
    coefs = st.coefficients()
    weighted = _combine(grams, coefs, 1.0 / (1.0 + k**2))
    raw = _combine(grams, coefs, np.ones_like(k))
    # tail: sum_{|p| > Kc} f(k_p) ~ (1/dk) int_{|k| > (Kc + 1/2) dk} f(k) dk
    a = (Kc + 0.5) * st.dk
    kend = max(4 * a, 4 * _decay_scale(what))
    edges = [a]
    while edges[-1] < kend:
        edges.append(edges[-1] * 2 ** (1.0 / panels_per_octave))
    x, wq = np.polynomial.legendre.leggauss(nodes)
    tw = tr = 0.0
    for sgn in (1.0, -1.0):
        for lo, hi in zip(edges[:-1], edges[1:]):
            kk = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
            dens = st.tail_density(sgn * kk)
            tw += 0.5 * (hi - lo) * np.sum(wq * dens / (1.0 + kk**2))
            tr += 0.5 * (hi - lo) * np.sum(wq * dens)
    return weighted + tw / st.dk, raw + tr / st.dk


def _separable_factor(u: np.ndarray, grid: PeriodicGrid, tol: float = 1e-10) -> np.ndarray:
    """u(x1, x2) = f(x1) f(x2) -> FFT coefficients of f on the 1D circle (up to a phase)."""
    c = fourier_pair(u, grid)  # c[k1, k2] = a[k1] b[k2]
    U, s, Vh = np.linalg.svd(c)
    if s[1] > tol * s[0]:
        raise ConfigError("2D kernel norms need a product datum u(x1) u(x2)")
    a = U[:, 0] * np.sqrt(s[0])
    b = Vh[0] * np.sqrt(s[0])
    # same factor on both axes, up to a phase
    ph = np.vdot(a, b) / abs(np.vdot(a, b))
    if np.linalg.norm(b - ph * a) > 1e-8 * np.linalg.norm(a):
        raise ConfigError("2D kernel norms need identical factors on both axes")
    return a * np.sqrt(ph)


def pairing_kernel_norms_2d_separable(u: np.ndarray, grid: PeriodicGrid, what1: Callable[[np.ndarray], np.ndarray],
                                      cap: int = 6000) -> tuple[float, float]:
    """Weighted and raw squared HS norms of K2 in d = 2 for product data u = f(x)f(y) and a
    product potential whose transform factors as +-what1(k1) what1(k2) (norms ignore the sign).

    Each piece of K2 is a tensor square of a 1D kernel, so row Gram functions factor
    across axes; the momentum lattice is summed exactly up to the decay of what1."""
    if grid.dimension != 2:
        raise DimensionError("expects a 2D grid")
    f = _separable_factor(u, grid)
    g1 = PeriodicGrid(1, grid.points_per_axis, grid.box_length)
    st = _PairStructure1D(f, g1.box_length, what1)
    Kc = max(2 * st.rank_one_support() + 8, int(np.ceil(_decay_scale(what1, 1e-8) / st.dk)) + 1)
    if 2 * Kc + 1 > cap:
        raise ConfigError(f"momentum lattice of {2 * Kc + 1} points per axis exceeds cap {cap}")
    p = np.arange(-Kc, Kc + 1)
    k = p * st.dk
    grams = st.row_grams(p)
    # K2 = +-[K~ (x) K~ - (ug)^2 - (gu)^2 + (2 mu_1D)^2 (uu)^2]
    coefs = {"K": 1.0, "ug": -1.0, "gu": -1.0, "uu": (2.0 * st.mu) ** 2}
    names = list(coefs)
    pairs = [(a, b) for i, a in enumerate(names) for b in names[i:]]
    R = np.array([grams[pr] for pr in pairs])  # (npairs, nk)
    mult = np.array([np.conj(coefs[a]) * coefs[b] * (1 if a == b else 2) for a, b in pairs])
    # <A_a (x) A_a, W A_b (x) A_b> = sum_{k1,k2} w(k1,k2) R_ab(k1) R_ab(k2), summed in row blocks
    acc = np.zeros(len(pairs), dtype=complex)
    for lo in range(0, len(k), 512):
        wblk = 1.0 / (1.0 + k[lo:lo + 512, None] ** 2 + k[None, :] ** 2)
        acc += np.einsum("pi,ij,pj->p", R[:, lo:lo + 512], wblk, R, optimize=True)
    weighted = float(np.real(np.sum(mult * acc)))
    raw = float(np.real(np.sum(mult * np.sum(R, axis=1) ** 2)))
    return weighted, raw
