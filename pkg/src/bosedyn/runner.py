"""Command pipelines, the append-only run registry, and plot-data emission.

Each run writes into ``<output_dir>/<run_id>/``: ``config.json`` (canonical echo),
``summary.json``, ``outputs.json`` (series name -> file) and the result files.
Timestamps and runtimes go only to the registry, so reruns of one configuration
reproduce the run directory byte for byte.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import numpy as np
from filelock import FileLock

from . import bogoliubov as bog
from . import experiments as ex
from . import fock
from .config import RunConfig
from .errors import BosedynError, ConfigError
from .hartree import HartreeState, gaussian_datum, hartree_evolve, nls_evolve, write_snapshots
from .modes import ModeBasis, ModeModel
from .potentials import (
    Potential,
    make_form,
    read_profile_csv,
    scale_potential,
    townes_ground_state,
    townes_mass_shooting,
    write_profile_csv,
)
from .spectral import PeriodicGrid

log = logging.getLogger(__name__)

REGISTRY_ENV = "BOSEDYN_REGISTRY"

# columns emitted per plot series (None: every column of the source file)
PLOT_COLUMNS = {
    "norm_error_vs_N": ["N", "err_norm2"],
    "reduced_density_error": ["N", "err_trace"],
    "kernel_scaling": ["N", "sobolev_hs2", "raw_hs2"],
    "dynamics": ["N", "err_N_vs_NM", "err_NM_vs_Bog"],
    "trajectory": None,
    "dm_diagnostics": None,
    "kernel_norms": None,
    "exact": None,
    "townes_profile": None,
}


@dataclass
class RunRecord:
    run_id: str
    command: str
    run_dir: str
    config: dict
    outputs: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    passed: bool | None = None
    exit_code: int = 0
    error: str | None = None
    started: str = ""
    finished: str = ""
    runtime_s: float = 0.0

    @classmethod
    def load(cls, run_dir: str | Path) -> "RunRecord":
        """Rebuilds the deterministic part of a record from a run directory."""
        run_dir = Path(run_dir)
        cfg = json.loads((run_dir / "config.json").read_text())
        outputs = json.loads((run_dir / "outputs.json").read_text())
        summary = json.loads((run_dir / "summary.json").read_text())
        return cls(run_dir.name, cfg["command"], str(run_dir), cfg, outputs, summary.get("results", {}),
                   summary.get("passed"), summary.get("exit_code", 0), summary.get("error"))


# ---------------------------------------------------------------- builders


def build_grid(cfg: RunConfig) -> PeriodicGrid:
    g = cfg.section("grid")
    return PeriodicGrid(g["dimension"], g["points"], g["box_length"])


def build_potential(cfg: RunConfig, grid: PeriodicGrid) -> Potential:
    p = cfg.section("potential")
    if p["profile_csv"]:
        return read_profile_csv(p["profile_csv"], grid)
    if p["mass"] == 0:
        return Potential.zero(grid)
    return Potential.from_form(make_form(p["form"], p["mass"], p["width"], grid.dimension), grid)


def build_datum(cfg: RunConfig, grid: PeriodicGrid) -> np.ndarray:
    ini = cfg.section("initial")
    d = grid.dimension
    return gaussian_datum(grid, ini["width"], k0=[ini["k0"]] * d, center=[ini["center"]] * d)


def build_condensate(cfg: RunConfig, basis: ModeBasis) -> np.ndarray:
    ini = cfg.section("initial")
    if ini["coefficients"] is not None:
        c = np.zeros(basis.size, dtype=complex)
        vals = [complex(v) for v in ini["coefficients"]][: basis.size]
        c[: len(vals)] = vals
    else:
        c = basis.coefficients(build_datum(cfg, basis.grid))
    if not np.linalg.norm(c):
        raise ConfigError("initial condensate has no weight in the mode space")
    return c / np.linalg.norm(c)


def sweep_config(cfg: RunConfig) -> ex.SweepConfig:
    g, p, sw, ini = cfg.section("grid"), cfg.section("potential"), cfg.section("sweep"), cfg.section("initial")
    coeffs = None if ini["coefficients"] is None else tuple(complex(v) for v in ini["coefficients"])
    return ex.SweepConfig(
        d=g["dimension"], beta=cfg.section("scaling")["beta"], N_list=tuple(sw["N_list"]), M_rule=sw["M_rule"],
        M_fixed=sw["M_fixed"], delta=sw["delta"], t_final=sw["t_final"], dt=sw["dt"],
        potential=ex.PotentialSpec(p["form"], p["mass"], p["width"]),
        initial=ex.InitialSpec(coeffs, ini["width"], ini["k0"], sw["phi0"], sw["squeeze"]),
        points=g["points"], box_length=g["box_length"], L_modes=cfg.section("modes")["L_modes"],
        alpha_probe=sw["alpha_probe"], seed=cfg.seed, workers=sw["workers"],
    )


def _drift(traj, name: str) -> float:
    v = traj.column(name)
    return float(np.max(np.abs(v - v[0])) / max(abs(v[0]), 1e-300))


# ---------------------------------------------------------------- pipelines
# each returns (outputs: series -> file name, results: summary dict, passed: bool | None)


def run_hartree(cfg: RunConfig, out: Path):
    grid = build_grid(cfg)
    sc, tm = cfg.section("scaling"), cfg.section("time")
    wN = scale_potential(build_potential(cfg, grid), sc["N"], sc["beta"])
    state, traj = hartree_evolve(HartreeState(build_datum(cfg, grid), 0.0, wN), tm["t_final"], tm["dt"],
                                 sample_every=tm["sample_every"] or None, keep_snapshots=tm["keep_snapshots"])
    traj.to_csv(out / "trajectory.csv")
    write_snapshots(out / "final.snap", grid, [state.t], [state.u])
    outputs = {"trajectory": "trajectory.csv", "final": "final.snap"}
    if tm["keep_snapshots"]:
        write_snapshots(out / "snapshots.snap", grid, traj.times, traj.snapshots)
        outputs["snapshots"] = "snapshots.snap"
    results = {"t_final": state.t, "mass_drift": _drift(traj, "mass"), "energy_drift": _drift(traj, "energy"),
               "phase_integral": state.phase_integral, "resolution_warning": wN.resolution_warning}
    return outputs, results, None


def run_nls(cfg: RunConfig, out: Path):
    grid = build_grid(cfg)
    tm = cfg.section("time")
    a = cfg.section("nls")["a"]
    if a is None:
        a = build_potential(cfg, grid).total_integral
    phi, traj = nls_evolve(build_datum(cfg, grid), grid, float(a), tm["t_final"], tm["dt"],
                           sample_every=tm["sample_every"] or None, keep_snapshots=tm["keep_snapshots"])
    traj.to_csv(out / "trajectory.csv")
    write_snapshots(out / "final.snap", grid, [tm["t_final"]], [phi])
    results = {"a": float(a), "mass_drift": _drift(traj, "mass"), "energy_drift": _drift(traj, "energy")}
    return {"trajectory": "trajectory.csv", "final": "final.snap"}, results, None


def _mode_setup(cfg: RunConfig, N: int):
    grid = build_grid(cfg)
    basis = ModeBasis.lowest(grid, cfg.section("modes")["L_modes"])
    model = ModeModel(basis, scale_potential(build_potential(cfg, grid), N, cfg.section("scaling")["beta"]))
    return basis, model, build_condensate(cfg, basis)


def run_bogoliubov(cfg: RunConfig, out: Path):
    basis, model, u0 = _mode_setup(cfg, cfg.section("scaling")["N"])
    tm, bs = cfg.section("time"), cfg.section("bogoliubov")
    traj = model.solve_hartree(u0, tm["t_final"])
    source = bog.ModeKernelSource(model, traj)
    every = max(1, int(round((tm["sample_every"] or tm["t_final"] or 1.0) / bs["dt"])))
    pair, diag = bog.evolve_dm(bog.DensityPair.vacuum(basis.size), source, tm["t_final"], bs["dt"],
                               ksq=basis.ksq, sample_every=every)
    diag.to_csv(out / "dm_diagnostics.csv")
    bog.write_pair_csv(out / "final", pair)
    with open(out / "kernel_norms.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "sobolev_hs", "hs"])
        for t in diag.times:
            _, K2 = source(t)
            wr.writerow([repr(float(t)), repr(bog.kernel_sobolev_norm(K2, basis)), repr(bog.hs_norm(K2))])
    results = {"trace_gamma": diag.trace_gamma[-1], "kinetic": diag.kinetic[-1],
               "purity_defect": max(diag.purity_defect), "symmetry_defect": max(diag.symmetry_defect)}
    outputs = {"dm_diagnostics": "dm_diagnostics.csv", "kernel_norms": "kernel_norms.csv",
               "gamma": "final_gamma.csv", "alpha": "final_alpha.csv"}
    return outputs, results, None


def run_exact(cfg: RunConfig, out: Path):
    ec, tm = cfg.section("exact"), cfg.section("time")
    N = ec["N"]
    basis, model, u0 = _mode_setup(cfg, N)
    traj = model.solve_hartree(u0, tm["t_final"])
    H, sector = fock.build_HN(model, N)
    full = fock.FockSpace(model.L, N)
    psi = full.transfer(fock.excitation_unmap(full.vacuum(), u0, N, full), sector)
    step = tm["sample_every"] or tm["t_final"]
    times = [0.0]
    while times[-1] < tm["t_final"] - 1e-12:
        times.append(min(times[-1] + step, tm["t_final"]))
    rows, lines = [], []
    for k, t in enumerate(times):
        if k:
            psi = fock.exact_evolve(psi, H, t - times[k - 1], tm["dt"])
        u_t = traj(t)
        gamma = fock.one_body_rdm(sector, psi)
        phi = fock.excitation_map(sector.transfer(psi, full), u_t, N, full)
        lines.append(fock.sector_record(t, full, phi, basis.ksq))
        rows.append([t, float(np.linalg.norm(psi)), ex.trace_distance(gamma, np.outer(u_t, u_t.conj())),
                     float(np.real(np.vdot(u_t, gamma @ u_t)))])
    with open(out / "exact.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "norm", "err_trace", "condensate_fraction"])
        wr.writerows([[repr(float(x)) for x in r] for r in rows])
    (out / "sectors.jsonl").write_text("\n".join(lines) + "\n")
    results = {"N": N, "fock_dimension": sector.dim, "final_err_trace": rows[-1][2]}
    return {"exact": "exact.csv", "sectors": "sectors.jsonl"}, results, None


def run_sweep(cfg: RunConfig, out: Path):
    scfg = sweep_config(cfg)
    kind = cfg.section("sweep")["kind"]
    if kind == "dynamics":
        res = ex.dynamics_comparison(scfg)
        res.write(out)
        outputs = {"dynamics": f"{res.N_vs_NM.name}.csv", "dynamics_bog": f"{res.NM_vs_Bog.name}.csv"}
        passes = {**{f"N_vs_NM_{k}": v for k, v in res.N_vs_NM.passes.items()},
                  **{f"NM_vs_Bog_{k}": v for k, v in res.NM_vs_Bog.passes.items()}}
        results = {"passes": passes}
    else:
        fn: Callable = {"norm_error": ex.norm_error_vs_N, "reduced_density": ex.reduced_density_error,
                        "kernel_scaling": ex.kernel_scaling_sweep}[kind]
        res = fn(scfg)
        res.write(out)
        outputs = {res.name: f"{res.name}.csv"}
        passes = res.passes
        results = {"slope": None if res.fit is None else res.fit.slope, "degenerate": res.degenerate,
                   "passes": passes}
    flags = [v for v in passes.values() if isinstance(v, bool)]
    return outputs, results, (all(flags) if flags else None)


def run_gn(cfg: RunConfig, out: Path):
    gn = cfg.section("gn")
    grid = PeriodicGrid(2, gn["points"], gn["box_length"])
    sol = townes_ground_state(grid, tol=gn["tol"])
    write_profile_csv(out / "townes_profile.csv", grid, sol.Q)
    results = {"a_star": sol.a_star, "residual": sol.residual}
    passed = None
    if gn["shooting"]:
        q0, mass = townes_mass_shooting()
        rel = abs(sol.a_star - mass) / mass
        results.update({"a_star_shooting": mass, "Q0_shooting": q0, "relative_difference": rel})
        passed = bool(rel < 1e-4 and sol.residual < 1e-8)
    return {"townes_profile": "townes_profile.csv"}, results, passed


def run_check(cfg: RunConfig, out: Path):
    from .checks import run_invariant_suite

    results = run_invariant_suite(quick=cfg.section("check")["quick"])
    with open(out / "checks.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["check", "value", "tolerance", "passed"])
        for name, (value, tol, ok) in results.items():
            wr.writerow([name, repr(float(value)), repr(float(tol)), ok])
    passed = all(ok for _, _, ok in results.values())
    return {"checks": "checks.csv"}, {k: v[2] for k, v in results.items()}, passed


PIPELINES = {
    "hartree": run_hartree, "nls": run_nls, "bogoliubov": run_bogoliubov, "exact": run_exact,
    "sweep": run_sweep, "gn-constant": run_gn, "check": run_check,
}


# ---------------------------------------------------------------- dispatch and registry


def registry_path(output_dir: str | Path) -> Path:
    return Path(os.environ.get(REGISTRY_ENV) or Path(output_dir) / "registry.jsonl")


def append_registry(path: Path, record: RunRecord) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with FileLock(str(path) + ".lock"):
        with open(path, "a") as fh:
            fh.write(json.dumps(asdict(record), sort_keys=True, default=str) + "\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def dispatch(cfg: RunConfig) -> RunRecord:
    """Runs the command pipeline, writes the run directory and appends to the registry."""
    run_dir = Path(cfg.output_dir) / cfg.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    echo = json.loads(cfg.canonical())
    (run_dir / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")
    record = RunRecord(cfg.run_id, cfg.command, str(run_dir), echo, started=_now())
    start = time.perf_counter()
    try:
        outputs, results, passed = PIPELINES[cfg.command](cfg, run_dir)
        record.outputs, record.summary, record.passed = outputs, results, passed
        record.exit_code = 0 if passed in (None, True) else 1
    except BosedynError as exc:
        record.error = f"{type(exc).__name__}: {exc}"
        record.exit_code = exc.exit_code
        record.passed = False
        log.error("%s", record.error)
    record.runtime_s = time.perf_counter() - start
    record.finished = _now()
    summary = {"run_id": record.run_id, "command": record.command, "results": _jsonable(record.summary),
               "passed": record.passed, "exit_code": record.exit_code, "error": record.error}
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (run_dir / "outputs.json").write_text(json.dumps(record.outputs, indent=2, sort_keys=True) + "\n")
    append_registry(registry_path(cfg.output_dir), record)
    return record


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


def emit_plotdata(record: RunRecord, series: str, path: str | Path | None = None) -> Path:
    """Writes the columns of one output series as a plain CSV for external plotting."""
    if series not in record.outputs or series not in PLOT_COLUMNS:
        available = sorted(s for s in record.outputs if s in PLOT_COLUMNS)
        raise ConfigError(f"unknown series {series!r}; available: {', '.join(available) or 'none'}")
    src = Path(record.run_dir) / record.outputs[series]
    with open(src, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = PLOT_COLUMNS[series] or header
    idx = [header.index(c) for c in cols]
    dest = Path(path) if path else Path(record.run_dir) / f"plotdata_{series}.csv"
    with open(dest, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        wr.writerows([[r[i] for i in idx] for r in body])
    return dest
