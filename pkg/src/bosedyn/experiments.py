"""Scaling sweeps over the particle number: N-body versus Bogoliubov norm errors,
reduced-density convergence, truncated-generator comparisons, pairing-kernel
norms, and log-log slope fits.

Every sweep point is an independent job; tables are ordered by N and contain
no timing information, so identical configurations give identical tables.
"""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import stats

from .bogoliubov import pairing_kernel_norms_1d, pairing_kernel_norms_2d_separable
from .errors import ConfigError, FitError, SizeError, TruncationError
from .fock import (
    FluctuationGenerator,
    FockSpace,
    build_HN,
    evolve_fluctuation,
    excitation_unmap,
    exact_evolve,
    one_body_rdm,
)
from .hartree import gaussian_datum, nls_evolve
from .modes import ModeBasis, ModeModel
from .potentials import Potential, make_form, scale_potential
from .spectral import PeriodicGrid

M_RULES = ("fixed", "pow", "pow_1_minus_delta")
TAIL_TOL = 1e-8


@dataclass(frozen=True)
class PotentialSpec:
    form: str = "gaussian"
    mass: float = -1.0
    width: float = 0.5


@dataclass(frozen=True)
class InitialSpec:
    """Condensate u(0) and fluctuation vector Phi(0).

    ``coefficients`` gives u(0) in the lowest plane waves (padded with zeros); otherwise a
    Gaussian of ``width`` and momentum ``k0`` is projected onto the mode space.
    ``phi0`` is 'vacuum' or 'squeezed' (quasi-free with pairing of size ``squeeze``)."""

    coefficients: tuple | None = (1.0, 0.5, 0.3j, 0.2)
    width: float = 1.0
    k0: float = 0.0
    phi0: str = "vacuum"
    squeeze: float = 0.1


@dataclass(frozen=True)
class SweepConfig:
    d: int = 1
    beta: float = 1.0
    N_list: tuple = (4, 6, 8, 10, 12)
    M_rule: str = "pow"
    M_fixed: int = 4
    delta: float = 0.5
    t_final: float = 0.3
    dt: float = 0.01
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    initial: InitialSpec = field(default_factory=InitialSpec)
    points: int = 64
    box_length: float = 2 * math.pi
    L_modes: int = 5
    alpha_probe: float | None = None
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ConfigError(f"d must be 1 or 2, got {self.d}")
        if not self.beta > 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if self.d == 2 and not self.beta < 1:
            raise ConfigError(f"d = 2 requires 0 < beta < 1, the range in which the norm approximation holds; got beta = {self.beta}")
        if self.d == 2 and self.alpha_probe is not None and not 0 < self.alpha_probe < (1 - self.beta) / 3:
            raise ConfigError(f"d = 2 requires 0 < alpha < (1 - beta)/3 = {(1 - self.beta) / 3:.4g}")
        if self.M_rule not in M_RULES:
            raise ConfigError(f"M_rule must be one of {M_RULES}, got {self.M_rule!r}")
        if not self.N_list or min(self.N_list) < 2:
            raise ConfigError("N_list needs particle numbers >= 2")
        if self.dt <= 0 or self.t_final < 0:
            raise ConfigError("need dt > 0 and t_final >= 0")

    def M_for(self, N: int) -> int:
        if self.M_rule == "fixed":
            M = self.M_fixed
        elif self.M_rule == "pow":
            M = round(N ** ((2 * self.beta + 1) / 3))
        else:
            M = round(N ** (1 - self.delta))
        return int(min(max(M, 1), N))

    def to_dict(self) -> dict:
        return asdict(self)


class SlopeFit(NamedTuple):
    slope: float
    stderr: float
    r2: float
    n: int


def slope_fit(N: Sequence[float], values: Sequence[float]) -> SlopeFit:
    """Least squares of log(value) on log(N) over the positive values."""
    N = np.asarray(N, dtype=float)
    v = np.asarray(values, dtype=float)
    ok = (v > 0) & np.isfinite(v)
    if ok.sum() < 3:
        raise FitError(f"slope fit needs at least 3 positive values, got {int(ok.sum())}")
    x, y = np.log(N[ok]), np.log(v[ok])
    if np.ptp(y) == 0:
        return SlopeFit(0.0, 0.0, 1.0, int(ok.sum()))
    res = stats.linregress(x, y)
    return SlopeFit(float(res.slope), float(res.stderr), float(res.rvalue**2), int(ok.sum()))


@dataclass
class ScalingResult:
    """Per-N rows and the fitted slope of ``value_key`` against N."""

    name: str
    rows: list
    value_key: str
    fit: SlopeFit | None
    degenerate: bool = False
    passes: dict = field(default_factory=dict)
    timings: list = field(default_factory=list)

    @property
    def table(self) -> list[tuple[int, float]]:
        return [(r["N"], r[self.value_key]) for r in self.rows]

    @property
    def fitted_slope(self) -> float:
        return self.fit.slope if self.fit else float("nan")

    @property
    def slope_stderr(self) -> float:
        return self.fit.stderr if self.fit else float("nan")

    def column(self, key: str) -> list:
        return [r[key] for r in self.rows]

    def write(self, directory: str | Path) -> tuple[Path, Path]:
        """<name>.csv with the rows and <name>.json with the fit and pass flags."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        keys = list(self.rows[0]) if self.rows else ["N"]
        csv_path, json_path = directory / f"{self.name}.csv", directory / f"{self.name}.json"
        with open(csv_path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(keys)
            for r in self.rows:
                wr.writerow([_fmt(r[k]) for k in keys])
        summary = {
            "name": self.name,
            "value": self.value_key,
            "slope": None if self.fit is None else self.fit.slope,
            "stderr": None if self.fit is None else self.fit.stderr,
            "r2": None if self.fit is None else self.fit.r2,
            "degenerate": self.degenerate,
            "pass": self.passes,
        }
        json_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        return csv_path, json_path


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _fit_or_degenerate(N, values) -> tuple[SlopeFit | None, bool]:
    try:
        return slope_fit(N, values), False
    except FitError:
        return None, True


def _run_points(job: Callable, cfg: SweepConfig, Ns) -> list:
    if cfg.workers > 1 and len(Ns) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            return list(ex.map(job, [cfg] * len(Ns), Ns))
    return [job(cfg, N) for N in Ns]


# ---------------------------------------------------------------- model construction


def _require_1d(cfg: SweepConfig, what: str) -> None:
    if cfg.d != 1:
        raise ConfigError(f"{what} runs exact N-body dynamics and is limited to d = 1")


def build_mode_model(cfg: SweepConfig, N: int) -> tuple[ModeModel, np.ndarray]:
    """Mode model of w_N and the normalized condensate u(0) in its basis."""
    grid = PeriodicGrid(cfg.d, cfg.points, cfg.box_length)
    basis = ModeBasis.lowest(grid, cfg.L_modes)
    ps = cfg.potential
    if ps.mass == 0:
        base = Potential.zero(grid)
    else:
        base = Potential.from_form(make_form(ps.form, ps.mass, ps.width, cfg.d), grid)
    model = ModeModel(basis, scale_potential(base, N, cfg.beta))
    ini = cfg.initial
    if ini.coefficients is not None:
        c = np.zeros(basis.size, dtype=complex)
        vals = np.asarray([complex(v) for v in ini.coefficients])[: basis.size]
        c[: len(vals)] = vals
    else:
        c = basis.coefficients(gaussian_datum(grid, ini.width, k0=[ini.k0] * cfg.d))
    nrm = np.linalg.norm(c)
    if nrm == 0:
        raise ConfigError("initial condensate has no weight in the mode space")
    return model, c / nrm


def initial_fluctuation(cfg: SweepConfig, space: FockSpace, u0: np.ndarray) -> np.ndarray:
    """Phi(0) on ``space``: vacuum, or exp(1/2 sum xi_pq a*_p a*_q) vacuum normalized, with a
    seeded symmetric xi supported orthogonally to u(0)."""
    if cfg.initial.phi0 == "vacuum":
        return space.vacuum()
    if cfg.initial.phi0 != "squeezed":
        raise ConfigError(f"phi0 must be 'vacuum' or 'squeezed', got {cfg.initial.phi0!r}")
    rng = np.random.default_rng(cfg.seed)
    L = space.L
    R = rng.normal(size=(L, L)) + 1j * rng.normal(size=(L, L))
    Q = np.eye(L) - np.outer(u0, u0.conj())
    xi = Q @ (R + R.T) @ Q.T
    xi *= cfg.initial.squeeze / np.linalg.norm(xi, 2)
    pair = lambda v: 0.5 * sum(xi[p, q] * space.adag_of(np.eye(L)[p], space.adag_of(np.eye(L)[q], v))
                               for p in range(L) for q in range(L) if xi[p, q] != 0)
    out = term = space.vacuum()
    for k in range(1, space.n_max // 2 + 1):
        term = pair(term) / k
        out = out + term
    return out / np.linalg.norm(out)


def _bogoliubov_vector(cfg, model, traj, N, u0) -> tuple[np.ndarray, np.ndarray, FockSpace]:
    """(Phi(0), Phi(t)) under the quadratic generator, on the smallest truncation M >= N
    whose top-sector mass stays below TAIL_TOL."""
    M = max(N, 2)
    while True:
        try:
            space = FockSpace(model.L, M)
        except SizeError as exc:
            raise TruncationError(f"sector tail mass above {TAIL_TOL} at every admissible truncation "
                                  f"(stopped at M={M})", suggested=M) from exc
        gen = FluctuationGenerator(space, model, M, traj, full=False)
        phi0 = initial_fluctuation(cfg, space, u0)
        phi = evolve_fluctuation(phi0, gen, cfg.t_final, cfg.dt)
        tail = float(max(space.sector_norms(phi)[-1], space.sector_norms(phi0)[-1]))
        if tail < TAIL_TOL:
            return phi0, phi, space
        if M >= 4 * N + 8:
            raise TruncationError(f"sector tail mass {tail:.2e} at M={M} exceeds {TAIL_TOL}", suggested=M + 4)
        M += 2


def _exact_run(cfg: SweepConfig, model: ModeModel, N: int, phi0: np.ndarray, space: FockSpace,
               u0: np.ndarray) -> tuple[np.ndarray, FockSpace, FockSpace]:
    """Psi_N(t) from Psi_N(0) = unmap(1^{<=N} Phi(0)) (not renormalized)."""
    H, sector = build_HN(model, N)
    full = FockSpace(model.L, N)
    psi0 = full.transfer(excitation_unmap(space.transfer(phi0, full), u0, N, full), sector)
    psi_t = exact_evolve(psi0, H, cfg.t_final, cfg.dt, allow_unnormalized=True)
    return psi_t, full, sector


def _norm_error_point(cfg: SweepConfig, N: int) -> tuple[dict, float]:
    start = time.perf_counter()
    model, u0 = build_mode_model(cfg, N)
    traj = model.solve_hartree(u0, cfg.t_final)
    u_t = traj(cfg.t_final)
    phi0, phi, space = _bogoliubov_vector(cfg, model, traj, N, u0)
    psi_t, full, sector = _exact_run(cfg, model, N, phi0, space, u0)
    ansatz = full.transfer(excitation_unmap(space.transfer(phi, full), u_t, N, full), sector)
    above = float(np.sum(space.sector_norms(phi)[N + 1:]))
    err = float(np.linalg.norm(psi_t - ansatz) ** 2) + above
    gamma = one_body_rdm(sector, psi_t)
    row = {"N": N, "M": space.n_max, "beta": cfg.beta, "t": cfg.t_final, "err_norm2": err,
           "err_trace": trace_distance(gamma, np.outer(u_t, u_t.conj())),
           "tail_mass": float(space.sector_norms(phi)[-1])}
    return row, time.perf_counter() - start


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Trace norm of a - b for Hermitian matrices."""
    d = a - b
    return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (d + d.conj().T)))))


def norm_error_vs_N(cfg: SweepConfig) -> ScalingResult:
    """||Psi_N(t) - unmap(Phi(t))||^2 per N with Phi(t) from the quadratic generator."""
    _require_1d(cfg, "norm_error_vs_N")
    out = _run_points(_norm_error_point, cfg, list(cfg.N_list))
    rows = [r for r, _ in out]
    fit, degenerate = _fit_or_degenerate([r["N"] for r in rows], [r["err_norm2"] for r in rows])
    errs = [r["err_norm2"] for r in rows]
    passes = {
        "decreasing": bool(all(b < a for a, b in zip(errs, errs[1:]))),
        "slope_negative": bool(fit is not None and fit.slope < 0),
        "bounded": bool(all(0 <= e <= 4 + 1e-9 for e in errs)),
    }
    return ScalingResult("norm_error_vs_N", rows, "err_norm2", fit, degenerate, passes, [t for _, t in out])


def _rdm_point(cfg: SweepConfig, N: int) -> tuple[dict, float]:
    start = time.perf_counter()
    model, u0 = build_mode_model(cfg, N)
    traj = model.solve_hartree(u0, cfg.t_final)
    space = FockSpace(model.L, N)
    psi_t, _, sector = _exact_run(cfg, model, N, initial_fluctuation(cfg, space, u0), space, u0)
    gamma = one_body_rdm(sector, psi_t)
    u_t = traj(cfg.t_final)
    evals = np.linalg.eigvalsh(0.5 * (gamma + gamma.conj().T))
    row = {"N": N, "beta": cfg.beta, "t": cfg.t_final,
           "err_trace": trace_distance(gamma, np.outer(u_t, u_t.conj())),
           "trace": float(np.real(np.trace(gamma))), "min_eig": float(evals[0])}
    return row, time.perf_counter() - start


def reduced_density_error(cfg: SweepConfig) -> ScalingResult:
    """Trace distance between the one-body density of Psi_N(t) and |u(t)><u(t)|."""
    _require_1d(cfg, "reduced_density_error")
    out = _run_points(_rdm_point, cfg, list(cfg.N_list))
    rows = [r for r, _ in out]
    vals = [r["err_trace"] for r in rows]
    fit, degenerate = _fit_or_degenerate([r["N"] for r in rows], vals)
    passes = {
        "decreasing": bool(all(b < a for a, b in zip(vals, vals[1:]))),
        "trace_one": bool(all(abs(r["trace"] - 1) < 1e-10 for r in rows)),
        "psd": bool(all(r["min_eig"] > -1e-10 for r in rows)),
    }
    return ScalingResult("reduced_density_error", rows, "err_trace", fit, degenerate, passes, [t for _, t in out])


def _comparison_point(cfg: SweepConfig, N: int) -> tuple[dict, float]:
    start = time.perf_counter()
    model, u0 = build_mode_model(cfg, N)
    traj = model.solve_hartree(u0, cfg.t_final)
    M = cfg.M_for(N)
    full = FockSpace(model.L, N)
    phi0 = initial_fluctuation(cfg, full, u0)

    def run(space: FockSpace, full_gen: bool) -> np.ndarray:
        gen = FluctuationGenerator(space, model, N, traj, full=full_gen)
        start_vec = full.transfer(phi0, space)
        return space.transfer(evolve_fluctuation(start_vec, gen, cfg.t_final, cfg.dt), full)

    phi_N = run(full, True)
    phi_NM = run(FockSpace(model.L, M), True)
    phi_B = run(full, False)
    row = {"N": N, "M": M, "beta": cfg.beta, "t": cfg.t_final,
           "err_N_vs_NM": float(np.linalg.norm(phi_N - phi_NM) ** 2),
           "err_NM_vs_Bog": float(np.linalg.norm(phi_NM - phi_B) ** 2),
           "err_N_vs_Bog": float(np.linalg.norm(phi_N - phi_B) ** 2),
           "tail_mass": float(full.sector_norms(phi_B)[-1])}
    return row, time.perf_counter() - start


@dataclass
class ComparisonResult:
    N_vs_NM: ScalingResult
    NM_vs_Bog: ScalingResult

    def write(self, directory: str | Path):
        return self.N_vs_NM.write(directory) + self.NM_vs_Bog.write(directory)


def dynamics_comparison(cfg: SweepConfig) -> ComparisonResult:
    """Full generator (M = N) versus truncated generator (M per M_rule) versus quadratic generator."""
    _require_1d(cfg, "dynamics_comparison")
    out = _run_points(_comparison_point, cfg, list(cfg.N_list))
    rows = [r for r, _ in out]
    times = [t for _, t in out]
    results = []
    for key in ("err_N_vs_NM", "err_NM_vs_Bog"):
        vals = [r[key] for r in rows]
        fit, degenerate = _fit_or_degenerate([r["N"] for r in rows], vals)
        passes = {"decreasing": bool(all(b < a for a, b in zip(vals, vals[1:])))}
        if key == "err_NM_vs_Bog":
            # triangle inequality of norms
            passes["triangle"] = bool(all(
                math.sqrt(r["err_N_vs_Bog"]) <= math.sqrt(r["err_N_vs_NM"]) + math.sqrt(r["err_NM_vs_Bog"]) + 1e-12
                for r in rows))
        results.append(ScalingResult(f"dynamics_{key}", rows, key, fit, degenerate, passes, times))
    return ComparisonResult(*results)


# ---------------------------------------------------------------- kernel norms


def kernel_snapshot(cfg: SweepConfig) -> tuple[np.ndarray, PeriodicGrid]:
    """Frozen condensate: Gaussian datum evolved by the limiting cubic equation to t_final."""
    grid = PeriodicGrid(cfg.d, cfg.points, cfg.box_length)
    u0 = gaussian_datum(grid, cfg.initial.width, k0=[cfg.initial.k0] * cfg.d)
    if cfg.t_final == 0:
        return u0, grid
    u, _ = nls_evolve(u0, grid, cfg.potential.mass, cfg.t_final, min(cfg.dt, 1e-3), sample_every=None)
    return u, grid


def kernel_scaling_sweep(cfg: SweepConfig) -> ScalingResult:
    """||(1 - Delta_x)^{-1/2} K2||_HS^2 and ||K2||_HS^2 per N at a frozen condensate.

    In d = 2 the datum and the potential must be products over the axes (Gaussians
    centred at the origin, zero time)."""
    ps = cfg.potential
    u, grid = kernel_snapshot(cfg)
    rows = []
    timings = []
    for N in cfg.N_list:
        start = time.perf_counter()
        s = float(N) ** cfg.beta
        if ps.mass == 0:
            w_hs2 = r_hs2 = 0.0
        elif cfg.d == 1:
            form = make_form(ps.form, ps.mass, ps.width, 1)
            w_hs2, r_hs2 = pairing_kernel_norms_1d(u, grid, lambda k, f=form, s=s: f.fourier(np.asarray(k) / s))
        else:
            if ps.form != "gaussian":
                raise ConfigError("2D kernel sweeps need a Gaussian (product) potential")
            if cfg.t_final != 0:
                raise ConfigError("2D kernel sweeps use the t = 0 product datum")
            form1 = make_form("gaussian", math.sqrt(abs(ps.mass)), ps.width, 1)
            w_hs2, r_hs2 = pairing_kernel_norms_2d_separable(
                u, grid, lambda k, f=form1, s=s: f.fourier(np.asarray(k) / s), cap=20000)
        rows.append({"N": int(N), "beta": cfg.beta, "t": cfg.t_final, "sobolev_hs2": w_hs2, "raw_hs2": r_hs2})
        timings.append(time.perf_counter() - start)
    Ns = [r["N"] for r in rows]
    fit, degenerate = _fit_or_degenerate(Ns, [r["sobolev_hs2"] for r in rows])
    raw_fit, _ = _fit_or_degenerate(Ns, [r["raw_hs2"] for r in rows])
    passes = {}
    if fit is not None:
        passes["weighted_slope"] = fit.slope
        passes["raw_slope"] = raw_fit.slope if raw_fit else None
        if cfg.d == 1:
            passes["flat"] = bool(fit.slope < 0.05)
    return ScalingResult("kernel_scaling", rows, "sobolev_hs2", fit, degenerate, passes, timings)
