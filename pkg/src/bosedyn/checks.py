"""Invariant suite behind the ``check`` command: small instances of every
cross-route identity the library relies on, each reported as (value, tolerance, pass)."""
from __future__ import annotations

import numpy as np

from . import bogoliubov as bog
from . import fock
from .hartree import gaussian_datum, nls_evolve
from .modes import ModeBasis, ModeModel
from .potentials import Potential, gn_inequality_check, make_form, scale_potential, townes_ground_state
from .spectral import PeriodicGrid


def _small_model(L: int = 4, N: int = 4, mass: float = -1.0):
    grid = PeriodicGrid(1, 32, 2 * np.pi)
    w = Potential.from_form(make_form("gaussian", mass, 0.4, 1), grid)
    model = ModeModel(ModeBasis.lowest(grid, L), scale_potential(w, N, 0.5))
    u0 = np.zeros(L, dtype=complex)
    u0[:3] = [1.0, 0.4, 0.3j]
    return model, u0 / np.linalg.norm(u0)


def dense_in_fock_order(model: ModeModel, space: fock.FockSpace) -> np.ndarray:
    """The first-quantized N = 2 matrix permuted into the occupation-basis order of ``space``."""
    L = model.L
    order = []
    for p in range(L):
        for q in range(p, L):
            occ = np.zeros(L, dtype=int)
            occ[p] += 1
            occ[q] += 1
            order.append(space.state_index(occ))
    P = np.zeros((space.dim, len(order)))
    P[order, np.arange(len(order))] = 1.0
    return P @ fock.dense_two_body_hamiltonian(model) @ P.T


def _case(value: float, tol: float, ok: bool | None = None) -> tuple[float, float, bool]:
    return float(value), float(tol), bool(value <= tol if ok is None else ok)


def run_invariant_suite(quick: bool = True) -> dict:
    out = {}
    N = 4
    model, u0 = _small_model(N=N)
    full = fock.FockSpace(model.L, N)
    rng = np.random.default_rng(7)

    # excitation map round trip on a random N-particle vector
    sector = full.sector_mask(N)
    psi = np.where(sector, rng.normal(size=full.dim) + 1j * rng.normal(size=full.dim), 0.0)
    psi /= np.linalg.norm(psi)
    back = fock.excitation_unmap(fock.excitation_map(psi, u0, N, full), u0, N, full)
    out["excitation_round_trip"] = _case(np.linalg.norm(back - psi), 1e-10)

    # N = 2 Hamiltonian: occupation-basis assembly against the first-quantized matrix
    m2, _ = _small_model(N=2)
    H2, s2 = fock.build_HN(m2, 2)
    out["two_body_assembly"] = _case(np.max(np.abs(H2.toarray() - dense_in_fock_order(m2, s2))), 1e-10)

    # conjugation identity: map(exact evolution) = fluctuation evolution of map
    T = 0.1 if quick else 0.3
    traj = model.solve_hartree(u0, T)
    H, sec = fock.build_HN(model, N)
    psi0 = full.transfer(psi, sec)
    psiT = sec.transfer(fock.exact_evolve(psi0, H, T, 0.01), full)
    gen = fock.FluctuationGenerator(full, model, N, traj)
    phiT = fock.evolve_fluctuation(fock.excitation_map(psi, u0, N, full), gen, T, 0.01)
    out["conjugation_identity"] = _case(np.linalg.norm(fock.excitation_map(psiT, traj(T), N, full) - phiT), 1e-6)

    # (gamma, alpha) equations against the quadratic Fock evolution from the vacuum
    space = fock.FockSpace(model.L, 8)
    phi = fock.evolve_fluctuation(space.vacuum(), fock.FluctuationGenerator(space, model, 8, traj, full=False), T, 0.01)
    g_f, a_f = fock.density_matrices(space, phi)
    pair, _ = bog.evolve_dm(bog.DensityPair.vacuum(model.L), bog.ModeKernelSource(model, traj), T, 1e-3)
    out["bogoliubov_equivalence"] = _case(max(np.linalg.norm(g_f - pair.gamma, 2), np.linalg.norm(a_f - pair.alpha, 2)),
                                          1e-6)

    # quadratic ground-state bound on random admissible instances, and the closed form
    worst = -np.inf
    for _ in range(10 if quick else 100):
        Hq, Kq = bog.random_admissible_instance(rng, 3 if quick else 4)
        res = bog.quadratic_lower_bound_check(Hq, Kq, 8 if quick else 12)
        worst = max(worst, res.bound - res.ground_energy)
    out["quadratic_lower_bound"] = _case(worst, 1e-8)
    omega, k = 1.3, 0.5
    e1 = bog.quadratic_lower_bound_check(np.array([[omega]]), np.array([[k]]), 80).ground_energy
    out["single_mode_closed_form"] = _case(abs(e1 - bog.single_mode_ground_energy(omega, k)), 1e-8)

    # cubic NLS conservation on a short window
    grid = PeriodicGrid(1, 256, 32.0)
    _, tr = nls_evolve(gaussian_datum(grid, 1.5), grid, -1.0, 0.2, 1e-3, sample_every=0.05)
    mass = tr.column("mass")
    out["nls_mass_drift"] = _case(np.max(np.abs(mass - mass[0])), 1e-9)

    # Gagliardo-Nirenberg tightness at the Townes profile
    g2 = PeriodicGrid(2, 128, 44.0)
    sol = townes_ground_state(g2)
    chk = gn_inequality_check(sol.Q, g2, sol.a_star)
    out["gn_tight_at_townes"] = _case(abs(chk.lhs / chk.rhs - 1), 1e-4)
    return out
