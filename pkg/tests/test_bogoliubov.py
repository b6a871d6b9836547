import numpy as np
import pytest

from bosedyn import bogoliubov as bog
from bosedyn import fock
from bosedyn.errors import ConfigError, CoverageError, PreconditionError
from bosedyn.hartree import gaussian_datum, hartree_evolve, HartreeState
from bosedyn.modes import ModeBasis, ModeModel
from bosedyn.potentials import Potential, make_form, scale_potential
from bosedyn.spectral import PeriodicGrid


def grid_setup(n=16, box=8.0, mass=1.2):
    g = PeriodicGrid(1, n, box)
    form = make_form("gaussian", mass, 1.0, 1)
    wN = scale_potential(Potential.from_form(form, g), 1, 0.0)
    return g, form, wN


def test_grid_kernels_match_mode_tensor_on_full_basis():
    g, _, wN = grid_setup()
    b = ModeBasis.lowest(g)
    u = gaussian_datum(g, 1.0, k0=[0.6])
    grid_k = bog.build_generator_kernels(u, wN, b)
    h, K2 = ModeModel(b, wN).bogoliubov_kernels(b.coefficients(u))
    assert np.allclose(grid_k.h, h, atol=1e-12)
    assert np.allclose(grid_k.K2, K2, atol=1e-12)


def test_dm_equations_match_fock_evolution():
    g = PeriodicGrid(1, 32, 2 * np.pi)
    w = Potential.from_form(make_form("gaussian", -1.0, 0.4, 1), g)
    model = ModeModel(ModeBasis.lowest(g, 3), scale_potential(w, 4, 0.5))
    u0 = np.array([1.0, 0.4, 0.3j]) / np.linalg.norm([1.0, 0.4, 0.3])
    traj = model.solve_hartree(u0, 0.2)
    space = fock.FockSpace(3, 10)
    phi = fock.evolve_fluctuation(space.vacuum(), fock.FluctuationGenerator(space, model, 10, traj, full=False),
                                  0.2, 0.01)
    g_f, a_f = fock.density_matrices(space, phi)
    pair, diag = bog.evolve_dm(bog.DensityPair.vacuum(3), bog.ModeKernelSource(model, traj), 0.2, 1e-3,
                               ksq=model.basis.ksq)
    assert np.linalg.norm(pair.gamma - g_f, 2) < 1e-8
    assert np.linalg.norm(pair.alpha - a_f, 2) < 1e-8
    assert max(diag.purity_defect) < 1e-10
    assert diag.kinetic[-1] == pytest.approx(bog.kinetic_expectation(pair, model.basis))


def test_free_condensate_keeps_vacuum():
    g = PeriodicGrid(1, 16, 2 * np.pi)
    model = ModeModel(ModeBasis.lowest(g, 4), scale_potential(Potential.zero(g), 1, 0.0))
    traj = model.solve_hartree(np.array([1.0, 0, 0, 0], dtype=complex), 0.5)
    pair, _ = bog.evolve_dm(bog.DensityPair.vacuum(4), bog.ModeKernelSource(model, traj), 0.5, 0.01)
    assert np.max(np.abs(pair.gamma)) == 0 and np.max(np.abs(pair.alpha)) == 0


def test_snapshot_source_coverage_and_cadence():
    g, _, wN = grid_setup()
    b = ModeBasis.lowest(g, 6)
    u0 = b.field(b.coefficients(gaussian_datum(g, 1.0)))
    u0 /= np.sqrt(g.cell * np.sum(np.abs(u0) ** 2))
    st, tr = hartree_evolve(HartreeState(u0, 0.0, wN), 0.2, 1e-3, sample_every=0.01, keep_snapshots=True)
    src = bog.SnapshotKernelSource(tr.times, tr.snapshots, wN, ModeBasis.lowest(g))
    bog.evolve_dm(bog.DensityPair.vacuum(g.size), src, 0.1, 2e-3)
    with pytest.raises(CoverageError):
        bog.evolve_dm(bog.DensityPair.vacuum(g.size), src, 0.5, 2e-3)
    with pytest.raises(ConfigError):
        bog.evolve_dm(bog.DensityPair.vacuum(g.size), src, 0.1, 1e-4)


def test_pair_csv_round_trip(tmp_path, rng):
    A = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    pair = bog.DensityPair(A + A.conj().T, A + A.T)
    bog.write_pair_csv(tmp_path / "x", pair)
    back = bog.read_pair_csv(tmp_path / "x")
    assert np.array_equal(back.gamma, pair.gamma) and np.array_equal(back.alpha, pair.alpha)


def test_sobolev_norm_weights_first_index():
    K = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert bog.kernel_sobolev_norm(K, np.array([0.0, 3.0])) ** 2 == pytest.approx(1 + 4 + (9 + 16) / 4)
    assert bog.hs_norm(K) ** 2 == pytest.approx(30.0)


def test_sobolev_constant_against_two_particle_spectrum():
    g, _, wN = grid_setup(n=8, box=4.0, mass=-2.0)
    c = bog.sobolev_constant(wN)
    assert c > 0
    assert bog.two_particle_sobolev_gap(wN, c) == pytest.approx(0.0, abs=1e-10)
    assert bog.two_particle_sobolev_gap(wN, 1.1 * c) > 0
    assert bog.two_particle_sobolev_gap(wN, 0.9 * c) < 0


def test_structured_norms_match_dense_kernel_1d():
    g = PeriodicGrid(1, 256, 16.0)
    form = make_form("gaussian", -1.0, 1.0, 1)
    wN = scale_potential(Potential.from_form(form, g), 4, 1.0)
    u = gaussian_datum(g, 1.0, k0=[0.7])
    b = ModeBasis.lowest(g)
    K2 = bog.build_generator_kernels(u, wN, b).K2
    weighted, raw = bog.pairing_kernel_norms_1d(u, g, lambda k: form.fourier(np.asarray(k) / 4))
    assert weighted == pytest.approx(bog.kernel_sobolev_norm(K2, b) ** 2, rel=1e-10)
    assert raw == pytest.approx(bog.hs_norm(K2) ** 2, rel=1e-10)


def test_structured_norms_match_dense_kernel_2d():
    g = PeriodicGrid(2, 32, 12.0)
    f1 = make_form("gaussian", 1.0, 1.0, 1)
    # unscaled w so that the 32^2 grid spectrum holds all of K2
    wN = scale_potential(Potential.from_form(make_form("gaussian", -1.0, 1.0, 2), g), 1, 0.5)
    u = gaussian_datum(g, 1.0)
    b = ModeBasis.lowest(g)
    K2 = bog.build_generator_kernels(u, wN, b).K2
    weighted, raw = bog.pairing_kernel_norms_2d_separable(u, g, lambda k: f1.fourier(np.asarray(k)))
    assert weighted == pytest.approx(bog.kernel_sobolev_norm(K2, b) ** 2, rel=1e-8)
    assert raw == pytest.approx(bog.hs_norm(K2) ** 2, rel=1e-8)
    with pytest.raises(ConfigError):
        entangled = gaussian_datum(g, 1.0) * np.exp(1j * g.coords[0] * g.coords[1] / 7)
        bog.pairing_kernel_norms_2d_separable(entangled, g, lambda k: f1.fourier(np.asarray(k)))


def test_lower_bound_preconditions():
    H = np.diag([1.0, 2.0])
    with pytest.raises(PreconditionError):
        bog.quadratic_lower_bound_check(np.array([[1.0, 1.0], [0.0, 1.0]]), np.zeros((2, 2)), 4)
    with pytest.raises(PreconditionError):
        bog.quadratic_lower_bound_check(-H, np.zeros((2, 2)), 4)
    with pytest.raises(PreconditionError):
        bog.quadratic_lower_bound_check(H, 3 * np.eye(2), 4)


def test_truncated_ground_energy_converges_to_closed_form(rng):
    H, K = bog.random_admissible_instance(rng, 2)
    exact = bog.bdg_ground_energy(H, K)
    e = [bog.quadratic_lower_bound_check(H, K, M).ground_energy for M in (4, 8, 16)]
    assert e[0] >= e[1] >= e[2] >= exact - 1e-12
    assert e[2] - exact < 1e-6


def test_kinetic_expectation_matches_fock_oracle():
    g = PeriodicGrid(1, 32, 2 * np.pi)
    w = Potential.from_form(make_form("gaussian", 2.0, 0.4, 1), g)
    model = ModeModel(ModeBasis.lowest(g, 4), scale_potential(w, 1, 0.0))
    u0 = np.array([1.0, 0.5, 0.3j, 0.2]) / np.linalg.norm([1.0, 0.5, 0.3, 0.2])
    traj = model.solve_hartree(u0, 1.0)
    space = fock.FockSpace(4, 8)
    phi = fock.evolve_fluctuation(space.vacuum(), fock.FluctuationGenerator(space, model, 8, traj, full=False),
                                  1.0, 0.01)
    pair, _ = bog.evolve_dm(bog.DensityPair.vacuum(4), bog.ModeKernelSource(model, traj), 1.0, 1e-3)
    ref = fock.fock_expectations(space, phi, "kinetic", model.basis.ksq)
    assert bog.kinetic_expectation(pair, model.basis) == pytest.approx(ref, rel=1e-5)
